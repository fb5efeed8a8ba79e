from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Waveform:
    """A sampled received signal on a uniform time grid."""

    samples: np.ndarray
    sample_interval: float = 1e-9

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("waveform samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise ValueError("waveform samples must be finite")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.sample_interval == other.sample_interval and np.array_equal(self.samples, other.samples)

    __hash__ = None
