"""
Matrix container shared by datasets, operators, dictionaries and checkpoints.

Layout: a NumPy ``.npz`` archive. Every array member is a ``.npy`` file whose
header states ``descr``, ``fortran_order`` and ``shape`` explicitly; float
arrays are stored as little-endian float64 in C (row-major) order. A member
named ``__header__`` holds a JSON string with the format name, version, kind
tag and scalar metadata (hyperparameters, dt, ids).
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from ..errors import InvalidInputError

logger = logging.getLogger(__name__)

FORMAT_NAME = "dk_rrt.container"
FORMAT_VERSION = 1
HEADER_KEY = "__header__"


def _as_stored(value: np.ndarray) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype.kind == "f":
        return np.ascontiguousarray(arr, dtype="<f8")
    if arr.dtype.kind in "iub":
        return np.ascontiguousarray(arr, dtype="<i8")
    raise InvalidInputError(f"Unsupported array dtype for container: {arr.dtype}")


def save_container(path: Union[str, Path], kind: str, meta: Dict[str, Any],
                   arrays: Dict[str, np.ndarray]) -> Path:
    """
    Write a container file

    Args:
        path: destination; parent directories are created
        kind: kind tag checked on load (e.g. "lifted_operator")
        meta: JSON-serializable scalar metadata
        arrays: named float or integer arrays

    Returns:
        Path written
    """
    if HEADER_KEY in arrays:
        raise InvalidInputError(f"Array name {HEADER_KEY!r} is reserved")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "kind": kind, "meta": meta}
    members = {name: _as_stored(value) for name, value in arrays.items()}
    members[HEADER_KEY] = np.array(json.dumps(header, sort_keys=True))
    # file handle keeps numpy from appending ".npz" to the name
    with open(path, "wb") as fh:
        np.savez(fh, **members)
    logger.debug(f"--> Saved {kind} container to {path}")
    return path


def load_container(path: Union[str, Path], expected_kind: str) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a container file written by save_container

    Returns:
        (meta, arrays)
    """
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        if HEADER_KEY not in data.files:
            raise InvalidInputError(f"{path}: missing container header")
        header = json.loads(str(data[HEADER_KEY]))
        arrays = {name: data[name] for name in data.files if name != HEADER_KEY}
    if header.get("format") != FORMAT_NAME:
        raise InvalidInputError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("version") != FORMAT_VERSION:
        raise InvalidInputError(f"{path}: unsupported container version {header.get('version')}")
    if header.get("kind") != expected_kind:
        raise InvalidInputError(f"{path}: expected kind {expected_kind!r}, found {header.get('kind')!r}")
    return header["meta"], arrays
