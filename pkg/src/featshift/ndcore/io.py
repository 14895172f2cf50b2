"""
Tensor export/import

A tensor is stored as a flat little-endian binary of its dtype plus a JSON
sidecar {"shape": [...], "dtype": "float32", "byte_order": "little"}.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from ..errors import ShapeMismatchError
from .tensor import SUPPORTED_DTYPES, Tensor

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_LITTLE_ENDIAN = {"float32": "<f4", "float64": "<f8"}


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def tensor_to_bytes(tensor: Tensor) -> bytes:
    return tensor.data.astype(_LITTLE_ENDIAN[tensor.dtype], copy=False).tobytes(order="C")


def tensor_from_bytes(payload: bytes, shape: Tuple[int, ...], dtype: str) -> Tensor:
    if dtype not in SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported dtype '{dtype}'")
    array = np.frombuffer(payload, dtype=_LITTLE_ENDIAN[dtype])
    expected = int(np.prod(shape)) if shape else 1
    if array.size != expected:
        raise ShapeMismatchError(
            f"Payload holds {array.size} values but shape needs {expected}", [tuple(shape)]
        )
    return Tensor(array.reshape(shape).astype(dtype))


def export_tensor(tensor: Tensor, path: PathLike) -> Path:
    """
    Write tensor binary and its JSON sidecar

    Args:
        tensor: Tensor to export
        path: Binary file path; the sidecar is written next to it as <path>.json

    Returns:
        Path of the binary file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(tensor_to_bytes(tensor))
    meta: Dict[str, Any] = {
        "shape": list(tensor.shape),
        "dtype": tensor.dtype,
        "byte_order": "little",
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2), encoding="utf-8")
    logger.debug(f"[Tensor IO] Exported {list(tensor.shape)} {tensor.dtype} to {path}")
    return path


def import_tensor(path: PathLike) -> Tensor:
    """Read a tensor written by export_tensor"""
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    if meta.get("byte_order") != "little":
        raise ValueError(f"Unsupported byte order {meta.get('byte_order')!r} in {path}")
    return tensor_from_bytes(path.read_bytes(), tuple(meta["shape"]), meta["dtype"])
