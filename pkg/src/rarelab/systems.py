"""Full-branch piecewise-affine Markov maps of the circle and their random streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

import numpy as np

from . import _kernels

Number = Union[Fraction, float, int]


def as_fraction(value) -> Fraction:
    """Parse ``value`` (int, Fraction or a string such as ``"1/3"``) exactly.

    Floats are rejected because the point of this package is exactness.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"expected an exact fraction, got {value!r}")


@dataclass(frozen=True)
class PiecewiseAffineMarkovMap:
    """Circle map with affine full branches on a partition of [0, 1).

    Branch ``i`` has domain ``[lefts[i], lefts[i] + lengths[i])`` and maps it
    affinely onto [0, 1) with slope ``1 / lengths[i]``. Lebesgue measure is
    invariant.

    Parameters
    ----------
    lengths : sequence of Fraction
        Branch domain lengths, in order; each in (0, 1) and summing to 1.
    """

    lengths: tuple
    lefts: tuple = field(init=False)

    def __post_init__(self):
        lengths = tuple(as_fraction(v) for v in self.lengths)
        if len(lengths) < 2:
            raise ValueError("need at least two branches")
        if any(not (0 < v < 1) for v in lengths):
            raise ValueError(f"branch lengths must lie in (0, 1): {lengths}")
        if sum(lengths) != 1:
            raise ValueError(f"branch lengths must sum to 1, got {sum(lengths)}")
        lefts = []
        acc = Fraction(0)
        for v in lengths:
            lefts.append(acc)
            acc += v
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "lefts", tuple(lefts))

    @classmethod
    def from_string(cls, text: str) -> "PiecewiseAffineMarkovMap":
        """Build from a comma-separated list such as ``"1/2,1/2"``."""
        return cls(tuple(Fraction(p.strip()) for p in text.split(",") if p.strip()))

    @classmethod
    def uniform(cls, m: int) -> "PiecewiseAffineMarkovMap":
        """The map ``x -> m x mod 1``."""
        return cls((Fraction(1, m),) * m)

    @property
    def m(self) -> int:
        """Alphabet size."""
        return len(self.lengths)

    @property
    def rights(self) -> tuple:
        return tuple(a + v for a, v in zip(self.lefts, self.lengths))

    @property
    def slopes(self) -> tuple:
        return tuple(1 / v for v in self.lengths)

    @property
    def max_length(self) -> Fraction:
        return max(self.lengths)

    def to_string(self) -> str:
        return ",".join(str(v) for v in self.lengths)

    def branch_index(self, x: Number) -> int:
        """Index of the branch whose domain contains ``x``."""
        if not 0 <= x < 1:
            raise ValueError(f"point {x!r} outside [0, 1)")
        for i, r in enumerate(self.rights):
            if x < r:
                return i
        return self.m - 1

    def apply(self, x: Number) -> Number:
        """Image of ``x``; exact for Fractions, rounded for floats."""
        i = self.branch_index(x)
        if isinstance(x, float):
            y = float(self.slopes[i]) * (x - float(self.lefts[i]))
            return min(y, np.nextafter(1.0, 0.0))
        return (x - self.lefts[i]) / self.lengths[i]

    def iterate(self, x: Number, n: int) -> Number:
        for _ in range(n):
            x = self.apply(x)
        return x

    def orbit_word(self, x: Number, n: int) -> tuple:
        """Branch indices of ``x, T x, ..., T^{n-1} x``."""
        if n < 1:
            raise ValueError("word length must be at least 1")
        word = []
        for _ in range(n):
            word.append(self.branch_index(x))
            x = self.apply(x)
        return tuple(word)

    def cylinder(self, word: Sequence[int]) -> tuple:
        """Exact ``(a, b)`` with ``[a, b)`` the cylinder of ``word``."""
        a = Fraction(0)
        size = Fraction(1)
        for s in word:
            a += size * self.lefts[s]
            size *= self.lengths[s]
        return a, a + size

    def cylinder_measure(self, word: Sequence[int]) -> Fraction:
        size = Fraction(1)
        for s in word:
            size *= self.lengths[s]
        return size

    def float_tables(self):
        """Branch tables ``(lefts, lengths, slopes, rights)`` as float arrays."""
        return (np.array([float(v) for v in self.lefts]),
                np.array([float(v) for v in self.lengths]),
                np.array([float(v) for v in self.slopes]),
                np.array([float(v) for v in self.rights[:-1]] + [1.0]))


def doubling_map() -> PiecewiseAffineMarkovMap:
    return PiecewiseAffineMarkovMap.uniform(2)


def ternary_map() -> PiecewiseAffineMarkovMap:
    return PiecewiseAffineMarkovMap.uniform(3)


@dataclass(frozen=True)
class MixingRate:
    """Exponential mixing rate ``phi(k) = C * eta**k``."""

    C: Fraction
    eta: Fraction

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")

    def phi(self, k) -> Fraction:
        """Rate at gap ``k``; exact for integer ``k``."""
        if isinstance(k, int) or (isinstance(k, Fraction) and k.denominator == 1):
            return self.C * self.eta ** int(k)
        return float(self.C) * float(self.eta) ** k

    def tail(self, k: int) -> Fraction:
        """``sum_{j >= k} phi(j) = C eta**k / (1 - eta)``."""
        return self.C * self.eta ** k / (1 - self.eta)

    def with_constant(self, C) -> "MixingRate":
        return MixingRate(Fraction(C), self.eta)


def phi_rate(tmap: PiecewiseAffineMarkovMap) -> MixingRate:
    """Certified mixing rate ``C = 2``, ``eta = max branch length``.

    Affine full-branch maps are Bernoulli for Lebesgue measure, so the true
    rate is zero beyond the cylinder depth; the constant is a conservative
    placeholder checked exhaustively by :func:`rarelab.symbolic.phi_mixing_sup`.
    """
    return MixingRate(Fraction(2), tmap.max_length)


@dataclass(frozen=True)
class RngStream:
    """Deterministic substream ``stream`` of generator ``seed``.

    Position ``t`` of the stream is ``splitmix64(base + t * gamma)`` scaled to
    [0, 1). Monte Carlo sample ``i`` owns positions ``[i * 2**32, (i+1) * 2**32)``.
    """

    seed: int
    stream: int = 0

    @property
    def base(self) -> int:
        return _kernels.stream_base(int(self.seed), int(self.stream))

    def uniform(self, size: int, start: int = 0) -> np.ndarray:
        pos = np.arange(start, start + size, dtype=np.uint64)
        return _kernels.uniforms_np(self.base, pos)

    def spawn(self, offset: int) -> "RngStream":
        """An independent stream derived from this one."""
        return RngStream(self.seed, self.stream * 1_000_003 + offset + 1)


def sample_uniform(rng: RngStream, size: int = 1, start: int = 0) -> np.ndarray:
    """Independent uniform draws on [0, 1) from ``rng``."""
    return rng.uniform(size, start)
