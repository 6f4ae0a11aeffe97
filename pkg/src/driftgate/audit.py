"""Uniform audit sampling over a sliding certifiable window.

Every stream index gets a permanent uniform priority when it arrives. The
audit set of a window is the longest run of lowest-priority indices whose
labels are all known, so it is a simple random sample of the window no matter
how the request sizes were chosen. Requests always go to the lowest-priority
unlabeled indices, which keeps the run growing and reuses earlier labels as
the window slides.
"""

from __future__ import annotations

import numpy as np

from .simenv import DelayQueue


class AuditSampler:
    def __init__(self, n_indices: int, delay: int, rng: np.random.Generator):
        self.priority = rng.random(n_indices + 1)
        self.labeled = np.zeros(n_indices + 1, dtype=bool)
        self.delay = delay
        self.queue = DelayQueue()
        self._lo = 1
        self._hi = 0
        self._order = np.empty(0, dtype=np.int64)

    def set_window(self, lo: int, hi: int):
        """Certifiable window ``[lo, hi]`` of 1-based stream indices (empty if hi < lo)."""
        self._lo, self._hi = lo, hi
        if hi < lo:
            self._order = np.empty(0, dtype=np.int64)
        else:
            self._order = lo + np.argsort(self.priority[lo:hi + 1], kind="stable")

    @property
    def window_len(self) -> int:
        return max(0, self._hi - self._lo + 1)

    def window_indices(self) -> np.ndarray:
        return np.arange(self._lo, self._hi + 1)

    def audit_set(self) -> np.ndarray:
        lab = self.labeled[self._order]
        if lab.all():
            return self._order
        return self._order[: int(np.argmin(lab))]

    def request(self, k: int, labels: np.ndarray, t: int) -> int:
        """Request up to ``k`` labels; returns how many were newly requested."""
        if k <= 0 or self._order.size == 0:
            return 0
        todo = self._order[~self.labeled[self._order]][:k]
        for i in todo:
            self.queue.push(int(i), int(labels[i - 1]), float(i + self.delay))
        self.labeled[todo] = True
        return int(todo.size)

    def labeled_in(self, lo: int, hi: int, t: int) -> np.ndarray:
        """Indices in ``[lo, hi]`` whose labels are visible at time ``t``."""
        if hi < lo:
            return np.empty(0, dtype=np.int64)
        idx = np.arange(max(lo, 1), hi + 1)
        idx = idx[self.labeled[idx]]
        return idx[idx + self.delay <= t]
