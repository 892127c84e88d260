# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Dataset dumps so other implementations can replay identical runs.

Same container as parameter checkpoints: magic bytes, a JSON header, then the
arrays as little-endian float64 (integer labels and masks are stored as floats).
"""

from collections import OrderedDict
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from ..errors import ConfigurationError  # type:ignore
from ..serialization import dump_to_file, load_from_file  # type:ignore

DATASET_KIND = "dataset"


def dump_dataset(path: str, arrays: Mapping[str, np.ndarray], header: Dict[str, Any]) -> None:
    meta = dict(header)
    meta["kind"] = DATASET_KIND
    dump_to_file(path, meta, OrderedDict((name, np.asarray(a)) for name, a in arrays.items()))


def load_dataset(path: str) -> Tuple[Dict[str, Any], "OrderedDict[str, np.ndarray]"]:
    meta, arrays = load_from_file(path)
    if meta.get("kind") != DATASET_KIND:
        raise ConfigurationError(f"{path} is not a dataset dump")
    return meta, arrays
