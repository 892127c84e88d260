# Copyright 2026, bilevel-gr authors. All rights reserved.

import os
import platform
import sys
import tempfile
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np

from .errors import ShapeMismatchError  # type:ignore
from .version import __version__  # type:ignore


def get_run_fingerprint(prefix: Optional[str] = None) -> Dict[str, str]:
    """Describe the package, Python, numpy and OS versions a run was produced with.
    Returns:
        A dict written into every benchmark summary.
        e.g. {'package': 'bilevel_gr/0.1.0', 'python': 'Python/3.11.4', ...}
    """
    python_version = "Python/{v.major}.{v.minor}.{v.micro}".format(v=sys.version_info)
    fingerprint = {
        "package": "{0}/{1}".format("bilevel_gr", __version__),
        "python": python_version,
        "numpy": "numpy/{0}".format(np.__version__),
        "system": "{0}/{1}".format(platform.system(), platform.release()),
    }
    if prefix:
        fingerprint["label"] = prefix
    return fingerprint


def as_param_vector(
    data: Union[Sequence[float], np.ndarray, float],
    length: Optional[int] = None,
    name: str = "vector",
) -> np.ndarray:
    """Converts data into a flat float64 vector (a copy), checking its length.
    Args:
        data: scalars, a sequence or an array
        length: the required length, if any
        name: used in the error message
    Returns:
        A one-dimensional float64 numpy array.
    """
    vector = np.array(data, dtype=np.float64).reshape(-1)
    if length is not None and vector.shape[0] != length:
        raise ShapeMismatchError(
            f"{name} must have length {length}, got {vector.shape[0]}"
        )
    return vector


def broadcast_vector(value: Any, length: int, name: str = "vector") -> np.ndarray:
    """Like as_param_vector but a single scalar is repeated to the given length."""
    vector = np.array(value, dtype=np.float64).reshape(-1)
    if vector.shape[0] == 1 and length != 1:
        return np.full(length, float(vector[0]))
    return as_param_vector(vector, length=length, name=name)


def is_all_finite(*arrays: Union[np.ndarray, float]) -> bool:
    return all(bool(np.all(np.isfinite(a))) for a in arrays)


def stable_sigmoid(x: Union[np.ndarray, float]) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def derive_seed(*parts: int) -> int:
    """Derives a 32-bit seed from integer parts (e.g. base seed, repeat, batch index)."""
    sequence = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(sequence.generate_state(1)[0])


def write_bytes_atomically(path: str, payload: bytes) -> None:
    """Writes the payload to a temporary file in the same directory, then replaces path."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as outfile:
            outfile.write(payload)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_text_atomically(path: str, text: str) -> None:
    write_bytes_atomically(path, text.encode("utf-8"))


def _build_non_finite_message(name: str, values: Union[np.ndarray, float]) -> str:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~np.isfinite(values))
    shown = ", ".join(f"[{i}]={values[i]}" for i in bad[:5])
    if len(bad) > 5:
        shown = shown + ", ..."
    return f"{name} produced {len(bad)} non-finite entries: {shown}"


def format_float(value: float) -> str:
    """Formats floats so that parsing the text gives back the identical double."""
    return repr(float(value))
