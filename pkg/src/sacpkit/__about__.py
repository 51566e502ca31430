__version__ = "0.1.0"
__author__ = "sacpkit developers"
__author_email__ = "sacpkit@users.noreply.github.com"
__license__ = "Apache-2.0"
__copyright__ = f"Copyright (c) 2025, {__author__}."
__homepage__ = "https://github.com/sacpkit/sacpkit"
__docs__ = "Symmetric aggregation of conformal nonconformity scores via e-values."

__all__ = [
    "__author__",
    "__author_email__",
    "__copyright__",
    "__docs__",
    "__homepage__",
    "__license__",
    "__version__",
]
