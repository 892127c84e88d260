# Copyright 2026, bilevel-gr authors. All rights reserved.

from threading import Lock
from typing import Dict, Optional, Union

import numpy as np


class BufferTracker:
    # Solvers report the numeric buffers they keep alive (parameters, gradients,
    # unrolled trajectories, Krylov work vectors). Only these are counted, so the
    # peak is deterministic and comparable across machines, unlike process RSS.

    label: Optional[str]
    live_buffers: Dict[str, int]
    current_bytes: int
    peak_bytes: int
    allocation_counts: Dict[str, int]
    lock: Lock

    def __init__(self, *, label: Optional[str] = None):
        self.label = label
        self.live_buffers = {}
        self.current_bytes = 0
        self.peak_bytes = 0
        self.allocation_counts = {}
        self.lock = Lock()

    def allocate(self, name: str, buffer: Union[np.ndarray, int]) -> None:
        size = int(buffer) if isinstance(buffer, (int, np.integer)) else int(buffer.nbytes)
        with self.lock:
            previous = self.live_buffers.get(name, 0)
            self.live_buffers[name] = size
            self.current_bytes += size - previous
            if self.current_bytes > self.peak_bytes:
                self.peak_bytes = self.current_bytes
            self.allocation_counts[name] = self.allocation_counts.get(name, 0) + 1

    def release(self, name: str) -> None:
        with self.lock:
            size = self.live_buffers.pop(name, 0)
            self.current_bytes -= size

    def reset(self) -> None:
        with self.lock:
            self.live_buffers = {}
            self.current_bytes = 0
            self.peak_bytes = 0
            self.allocation_counts = {}

    def generate_metrics_report(self) -> Dict[str, Union[str, int, None, Dict[str, int]]]:
        with self.lock:
            return {
                "label": self.label,
                "current_bytes": self.current_bytes,
                "peak_bytes": self.peak_bytes,
                "live_buffers": dict(self.live_buffers),
                "allocation_counts": dict(self.allocation_counts),
            }
