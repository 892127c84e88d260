# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Binary dump format shared by parameter checkpoints and dataset dumps.

Layout:
    4 bytes   magic b"BGR1"
    4 bytes   little-endian uint32 length of the JSON header
    N bytes   UTF-8 JSON header {"meta": {...}, "arrays": [{"name", "shape"}, ...]}
    rest      every array in header order, little-endian float64, C order

The header is written with sorted keys so identical content gives identical bytes.
"""
import json
import struct
from collections import OrderedDict
from typing import Any, Dict, Tuple

import numpy as np

from .errors import BilevelError  # type:ignore
from .internal_utils import write_bytes_atomically  # type:ignore

MAGIC = b"BGR1"
_LE_FLOAT64 = np.dtype("<f8")


def encode_blob(meta: Dict[str, Any], arrays: "OrderedDict[str, np.ndarray]") -> bytes:
    descriptors = []
    payloads = []
    for name, array in arrays.items():
        array = np.ascontiguousarray(array, dtype=_LE_FLOAT64)
        descriptors.append({"name": name, "shape": list(array.shape)})
        payloads.append(array.tobytes(order="C"))
    header = json.dumps(
        {"meta": meta, "arrays": descriptors}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + b"".join(payloads)


def decode_blob(payload: bytes) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    if len(payload) < 8 or payload[:4] != MAGIC:
        raise BilevelError("Not a bilevel_gr dump: bad magic bytes")
    (header_length,) = struct.unpack("<I", payload[4:8])
    header_end = 8 + header_length
    header = json.loads(payload[8:header_end].decode("utf-8"))
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    offset = header_end
    for descriptor in header["arrays"]:
        shape = tuple(descriptor["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * _LE_FLOAT64.itemsize
        if end > len(payload):
            raise BilevelError(f"Truncated dump while reading {descriptor['name']}")
        values = np.frombuffer(payload[offset:end], dtype=_LE_FLOAT64)
        arrays[descriptor["name"]] = values.astype(np.float64).reshape(shape)
        offset = end
    if offset != len(payload):
        raise BilevelError(f"Dump has {len(payload) - offset} trailing bytes")
    return header["meta"], arrays


def dump_to_file(path: str, meta: Dict[str, Any], arrays: "OrderedDict[str, np.ndarray]") -> None:
    write_bytes_atomically(path, encode_blob(meta, arrays))


def load_from_file(path: str) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    with open(path, "rb") as infile:
        return decode_blob(infile.read())
