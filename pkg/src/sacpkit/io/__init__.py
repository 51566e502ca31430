"""Root package for input/output."""

from sacpkit.io.mixins import PickleMixin
from sacpkit.io.utils import dump_pickle, load_pickle

__all__ = ["PickleMixin", "dump_pickle", "load_pickle"]
