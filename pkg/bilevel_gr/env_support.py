# Copyright 2026, bilevel-gr authors. All rights reserved.

"""Internal module for loading worker-pool related env variables"""
import logging
import os
from typing import Optional

THREADS_ENV_VARIABLE = "BILEVEL_GR_THREADS"

_default_logger = logging.getLogger(__name__)


def load_thread_cap_from_env(logger: logging.Logger = _default_logger) -> Optional[int]:
    raw_value = os.environ.get(THREADS_ENV_VARIABLE)
    if raw_value is None or len(raw_value.strip()) == 0:
        return None
    try:
        thread_cap = int(raw_value)
    except ValueError:
        logger.warning(
            f"Ignoring {THREADS_ENV_VARIABLE}={raw_value!r} as it is not an integer"
        )
        return None
    if thread_cap < 1:
        logger.warning(f"Ignoring {THREADS_ENV_VARIABLE}={thread_cap} (must be >= 1)")
        return None
    logger.debug(f"Worker pool cap has been loaded from an env variable: {thread_cap}")
    return thread_cap


def resolve_worker_count(
    requested: Optional[int] = None,
    logger: logging.Logger = _default_logger,
) -> int:
    """The number of benchmark workers: the env cap wins over the request; default 1."""
    cap = load_thread_cap_from_env(logger)
    count = requested if requested is not None and requested > 0 else 1
    if cap is not None:
        count = min(count, cap) if requested is not None else cap
    return max(1, count)
