"""Internal State Memory: per-video, per-second recurrent states with sample counters."""

from __future__ import annotations

import math

import numpy as np


class MemoryBank:
    """Stores ``s(t) = (h(t), c(t))`` for every registered video and second.

    ``read_prev(v, t)`` returns the zero vector when ``t == 0`` or slot
    ``t - 1`` has never been written, otherwise the latest write there.
    Fractional times floor to their second.
    """

    def __init__(self, width: int, dtype=np.float64):
        if width <= 0:
            raise ValueError(f"state width must be positive, got {width}")
        self.width = width
        self.dtype = np.dtype(dtype)
        self._states: dict[str, np.ndarray] = {}
        self._counts: dict[str, np.ndarray] = {}

    def register(self, video_id: str, duration: float) -> None:
        n = int(math.ceil(duration))
        if video_id in self._states:
            if self._states[video_id].shape[0] != n:
                raise ValueError(f"video {video_id} already registered with {self._states[video_id].shape[0]} seconds")
            return
        self._states[video_id] = np.zeros((n, self.width), dtype=self.dtype)
        self._counts[video_id] = np.zeros(n, dtype=np.int64)

    def register_all(self, videos) -> None:
        for v in videos:
            self.register(v.video_id, v.duration)

    def __contains__(self, video_id) -> bool:
        return video_id in self._states

    def videos(self) -> list[str]:
        return list(self._states)

    def length(self, video_id: str) -> int:
        return self._slot(video_id, 0)[0].shape[0]

    def _slot(self, video_id: str, t: float):
        try:
            states = self._states[video_id]
        except KeyError:
            raise KeyError(f"video {video_id!r} is not registered in the memory bank") from None
        sec = int(math.floor(t))
        if not 0 <= sec < states.shape[0]:
            raise IndexError(f"t={t} out of range [0, {states.shape[0]}) for video {video_id!r}")
        return states, sec

    def read_prev(self, video_id: str, t: float) -> np.ndarray:
        states, sec = self._slot(video_id, t)
        if sec == 0 or self._counts[video_id][sec - 1] == 0:
            return np.zeros(self.width, dtype=self.dtype)
        return states[sec - 1].copy()

    def write_state(self, video_id: str, t: float, s) -> None:
        s = np.asarray(s)
        if s.shape != (self.width,):
            raise ValueError(f"state width mismatch: expected ({self.width},), got {s.shape}")
        states, sec = self._slot(video_id, t)
        states[sec] = s
        self._counts[video_id][sec] += 1

    def count(self, video_id: str, t: float) -> int:
        _, sec = self._slot(video_id, t)
        return int(self._counts[video_id][sec])

    def counts(self, video_id: str) -> np.ndarray:
        self._slot(video_id, 0)
        return self._counts[video_id].copy()

    def sequential_cursor(self, video_id: str):
        """Seconds ``0, 1, ..., T-1`` in order; the caller reads, computes, writes, advances."""
        n = self.length(video_id)
        return iter(range(n))

    def reset(self) -> None:
        for v in self._states:
            self._states[v][:] = 0
            self._counts[v][:] = 0

    # -- persistence ----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for v in self._states:
            out[f"ism/{v}/states"] = self._states[v]
            out[f"ism/{v}/counts"] = self._counts[v]
        return out

    @classmethod
    def from_state_dict(cls, width: int, order: list[str], arrays, dtype=np.float64) -> "MemoryBank":
        bank = cls(width, dtype)
        for v in order:
            bank._states[v] = np.array(arrays[f"ism/{v}/states"], dtype=bank.dtype)
            bank._counts[v] = np.array(arrays[f"ism/{v}/counts"], dtype=np.int64)
        return bank

    def __eq__(self, other) -> bool:
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return (
            self.width == other.width
            and list(self._states) == list(other._states)
            and all(np.array_equal(self._states[v], other._states[v]) for v in self._states)
            and all(np.array_equal(self._counts[v], other._counts[v]) for v in self._counts)
        )
