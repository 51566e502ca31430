#
# Configuration file for the Sphinx documentation builder.
#
# http://www.sphinx-doc.org/en/master/config
import os
import shutil
import sys
from importlib.util import module_from_spec, spec_from_file_location

_PATH_HERE = os.path.abspath(os.path.dirname(__file__))
_PATH_ROOT = os.path.realpath(os.path.join(_PATH_HERE, "..", ".."))
_PATH_SOURCE = os.path.join(_PATH_ROOT, "src")
sys.path.insert(0, _PATH_SOURCE)

spec = spec_from_file_location("sacpkit/__about__.py", os.path.join(_PATH_SOURCE, "sacpkit", "__about__.py"))
about = module_from_spec(spec)
spec.loader.exec_module(about)

# -- Project information -----------------------------------------------------

project = "sacpkit"
copyright = about.__copyright__
author = about.__author__
version = about.__version__
release = about.__version__

# -- Project documents -------------------------------------------------------

for name in ("README.md", "CHANGELOG.md"):
    shutil.copy(os.path.join(_PATH_ROOT, name), os.path.join(_PATH_HERE, name.lower()))

# -- General configuration ---------------------------------------------------

needs_sphinx = "6.0"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.intersphinx",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx.ext.imgmath",
    "myst_parser",
    "sphinx_autodoc_typehints",
    "sphinx_copybutton",
]

templates_path = ["_templates"]
source_suffix = {".rst": "restructuredtext", ".md": "markdown"}
master_doc = "index"
language = "en"
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = None

# -- Options for HTML output -------------------------------------------------

html_theme = "alabaster"
html_theme_options = {"description": about.__docs__, "github_user": "sacpkit", "github_repo": project}
htmlhelp_basename = project + "-doc"

# -- Extension configuration -------------------------------------------------

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "pandas": ("https://pandas.pydata.org/docs/", None),
}

autodoc_member_order = "groupwise"
autoclass_content = "both"
autodoc_default_options = {"members": True, "show-inheritance": True}
autosummary_generate = True
