"""Seeded, splittable randomness shared by every policy run on the same path.

A path owns two independent substreams keyed by ``(seed, path_index, kind)``:

* arrivals: exponential gaps with unit mean (rate-one time axis);
* channel: for each channel index ``n`` (an epoch, an arrival, or a renewal
  cycle, depending on the policy) the index of the first attempt that is not
  erased. This pins the full Bernoulli(p) erasure pattern of attempts
  ``1, 2, ...`` at that index, and every attempt a policy can actually make
  is covered: nobody transmits again at an index after it has got through.

Both streams are drawn in fixed-size blocks, so the n-th value never depends
on how far a consumer reads. Two policies run on the same ``(seed,
path_index)`` therefore see identical arrival instants and erasure patterns.
"""
from __future__ import annotations

import enum
from typing import Iterator

import numpy as np

BLOCK = 1 << 14


class StreamKind(enum.IntEnum):
    ARRIVALS = 0
    CHANNEL = 1


def substream(seed: int, path_index: int, kind: StreamKind) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path_index), int(kind)))
    return np.random.Generator(np.random.PCG64(ss))


class ChannelOracle:
    """Lazily extended table of first-success attempt indices (1-based channel index)."""

    def __init__(self, rng: np.random.Generator, p: float):
        self._rng = rng
        self.p = float(p)
        self._table = np.zeros(1, dtype=np.int64)  # slot 0 unused

    def _ensure(self, n: int) -> None:
        while self._table.shape[0] <= n:
            if self.p == 1.0:
                block = np.ones(BLOCK, dtype=np.int64)
            else:
                block = self._rng.geometric(self.p, size=BLOCK).astype(np.int64)
            self._table = np.concatenate([self._table, block])

    def first_success(self, n: int) -> int:
        if n < 1:
            raise IndexError("channel indices start at 1")
        self._ensure(n)
        return int(self._table[n])

    def success(self, n: int, attempt: int) -> bool:
        """Outcome of attempt ``attempt`` at channel index ``n``.

        Attempts past the first success are never made by any policy and are
        not part of the committed pattern.
        """
        if attempt < 1:
            raise IndexError("attempt indices start at 1")
        g = self.first_success(n)
        if attempt > g:
            raise ValueError(f"attempt {attempt} at index {n} follows a delivered update")
        return attempt == g

    def table(self, n: int) -> np.ndarray:
        """First-success indices for channel indices ``0..n`` (slot 0 is padding)."""
        self._ensure(n)
        return self._table[: n + 1]


class RandomStreams:
    def __init__(self, seed: int, path_index: int, p: float):
        self.seed = int(seed)
        self.path_index = int(path_index)
        self._arrival_rng = substream(seed, path_index, StreamKind.ARRIVALS)
        self._arrivals = np.zeros(0)
        self.channel = ChannelOracle(substream(seed, path_index, StreamKind.CHANNEL), p)

    def _extend_arrivals(self) -> None:
        gaps = self._arrival_rng.standard_exponential(BLOCK)
        start = self._arrivals[-1] if self._arrivals.size else 0.0
        self._arrivals = np.concatenate([self._arrivals, start + np.cumsum(gaps)])

    def arrival_times(self, horizon: float) -> np.ndarray:
        """All arrival instants in ``(0, horizon]``."""
        while not self._arrivals.size or self._arrivals[-1] <= horizon:
            self._extend_arrivals()
        return self._arrivals[: np.searchsorted(self._arrivals, horizon, side="right")].copy()

    def arrival_gaps(self) -> Iterator[float]:
        """Inter-arrival gaps as an endless iterator."""
        i = 0
        prev = 0.0
        while True:
            while i >= self._arrivals.size:
                self._extend_arrivals()
            t = float(self._arrivals[i])
            yield t - prev
            prev = t
            i += 1
