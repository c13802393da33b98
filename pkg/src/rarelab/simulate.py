"""Chunked, thread-parallel driver around the orbit kernels.

Samples are processed in fixed-size chunks whose random numbers depend only
on the global sample index, and chunk results are merged in chunk order, so
the outcome is identical for every thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .symbolic import IntervalUnion
from .systems import PiecewiseAffineMarkovMap, RngStream

CHUNK = 8192


def default_threads() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class OrbitSpec:
    """What to simulate and what to record.

    Attributes
    ----------
    start : IntervalUnion
        Initial points are uniform on this set.
    U : IntervalUnion
        Visit set, tested by membership when ``points`` is empty.
    points, rho : array, float
        Observable route: a visit is ``d(x, points) < rho``.
    horizon : int
        Orbit length ``H``; times ``0..H-1``.
    window : (int, int)
        Visits are counted for ``window[0] <= t < window[1]``.
    nfirst : int
        Number of earliest visit times to keep.
    """

    start: IntervalUnion
    U: IntervalUnion
    horizon: int
    window: tuple
    nfirst: int = 0
    points: Optional[np.ndarray] = None
    rho: float = 0.0

    def arrays(self, tmap: PiecewiseAffineMarkovMap):
        lefts, lens, slopes, rights = tmap.float_tables()
        ua = np.array([float(a) for a, _ in self.U], dtype=np.float64)
        ub = np.array([float(b) for _, b in self.U], dtype=np.float64)
        ja = np.array([float(a) for a, _ in self.start], dtype=np.float64)
        jb = np.array([float(b) for _, b in self.start], dtype=np.float64)
        pts = (np.zeros(0) if self.points is None
               else np.ascontiguousarray(self.points, dtype=np.float64))
        return (lefts, lens, slopes, rights, ua, ub, ja, jb, pts, float(self.rho))


def run(tmap: PiecewiseAffineMarkovMap, spec: OrbitSpec, samples: int,
        rng: RngStream, reduce: Callable, threads: Optional[int] = None,
        backend: Optional[str] = None) -> list:
    """Simulate ``samples`` orbits and return ``reduce(count, first, mind)`` per chunk.

    Chunk results come back in chunk order regardless of ``threads``.
    """
    if spec.start.measure == 0:
        raise ValueError("start set has zero measure")
    arrays = spec.arrays(tmap)
    base = rng.base
    lo, hi = spec.window
    starts = list(range(0, samples, CHUNK))

    def job(first):
        n = min(CHUNK, samples - first)
        out = _kernels.simulate_chunk(base, first, n, arrays, spec.horizon, lo, hi,
                                      spec.nfirst, use_backend=backend)
        return reduce(*out)

    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(starts) == 1:
        return [job(s) for s in starts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, starts))
