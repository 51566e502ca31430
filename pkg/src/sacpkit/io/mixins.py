from pathlib import Path
from typing import Union

from lightning_utilities.core.rank_zero import rank_zero_debug

from sacpkit.io.utils import dump_pickle, load_pickle


class PickleMixin:
    """Mixin adding joblib persistence to fitted, immutable objects."""

    def save(self, path: Union[str, Path]) -> Path:
        """Write the object to ``path``.

        Args:
            path: Destination file; a ``.pkl`` suffix is appended when none is given.

        Returns:
            The path actually written.
        """
        path = Path(path)
        if not path.suffix:
            path = path.with_suffix(".pkl")
        dump_pickle(obj=self, path=path)
        rank_zero_debug(f"Saved {type(self).__name__} to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> object:
        """Read an object saved with :meth:`save` and check its type.

        Args:
            path: Artifact written by :meth:`save`.
        """
        obj = load_pickle(path=path)
        if not isinstance(obj, cls):
            raise TypeError(f"Unpickled object is not of type {cls.__name__}: {type(obj)}")
        return obj
