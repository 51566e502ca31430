from pathlib import Path
from typing import Any, Union

import joblib


def dump_pickle(obj: Any, path: Union[str, Path]) -> None:
    """Serialize a fitted object to disk with joblib.

    Args:
        obj: The object to serialize.
        path: Destination file path; missing parent folders are created.

    Notes:
        - Uses joblib compression (level 3); numpy arrays are stored natively.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    joblib.dump(obj, filename=path, compress=3)


def load_pickle(path: Union[str, Path]) -> Any:
    """Load an object written by :func:`dump_pickle`.

    Args:
        path: Path to the serialized artifact.

    Returns:
        Any: The deserialized object.

    Warning:
        Loading pickle/joblib files can execute arbitrary code. Only open files from trusted sources.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"No such artifact: {path}")
    return joblib.load(path)
