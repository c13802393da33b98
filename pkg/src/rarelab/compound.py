"""Compound Poisson and compound binomial laws on the nonnegative integers.

A compound law is the distribution of ``W = Z_1 + ... + Z_Q`` where the
cluster sizes ``Z_j`` are i.i.d. with ``P(Z = ℓ) = λ_ℓ`` and the number of
clusters ``Q`` is Poisson (compound Poisson) or binomial (compound binomial).
Masses are computed in double precision with compensated summation; the
exact-rational mode of :class:`DiscretePMF` is used by the symbolic oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

import numpy as np

SUM_TOL = 1e-12


@dataclass(frozen=True)
class ClusterSizeDist:
    """Cluster-size probabilities ``λ_1, ..., λ_L``.

    Exact (Fraction) inputs must sum to one exactly; float inputs within
    ``1e-12``.
    """

    lambdas: tuple

    def __post_init__(self):
        lam = tuple(self.lambdas)
        if len(lam) < 1:
            raise ValueError("cluster distribution needs at least one size")
        if any(v < 0 or v > 1 for v in lam):
            raise ValueError(f"cluster probabilities must lie in [0, 1]: {lam}")
        if all(isinstance(v, (Fraction, int)) for v in lam):
            if sum(lam) != 1:
                raise ValueError(f"cluster probabilities sum to {sum(lam)}, not 1")
        elif abs(math.fsum(float(v) for v in lam) - 1.0) > SUM_TOL:
            raise ValueError(
                f"cluster probabilities sum to {math.fsum(map(float, lam))!r}, not 1")
        object.__setattr__(self, "lambdas", lam)

    @property
    def L(self) -> int:
        return len(self.lambdas)

    def as_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.lambdas])

    def mean(self) -> float:
        return math.fsum(ell * float(v) for ell, v in enumerate(self.lambdas, 1))

    @classmethod
    def point(cls, ell: int = 1) -> "ClusterSizeDist":
        return cls(tuple(Fraction(int(i == ell)) for i in range(1, ell + 1)))


@dataclass(frozen=True)
class CompoundPoissonSpec:
    intensity: float
    cluster: ClusterSizeDist

    def __post_init__(self):
        if not self.intensity >= 0:
            raise ValueError("intensity must be nonnegative")


@dataclass(frozen=True)
class CompoundBinomialSpec:
    trials: int
    success: float
    cluster: ClusterSizeDist

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials must be a positive integer")
        if not 0 <= self.success <= 1:
            raise ValueError("success probability must lie in [0, 1]")


@dataclass(frozen=True)
class DiscretePMF:
    """Probability masses on ``0..k_max``.

    Attributes
    ----------
    masses : tuple
        ``P(k)`` for ``k = 0..k_max``; Fractions in exact mode.
    mode : {"exact", "float", "empirical"}
    ci : tuple or None
        Per-``k`` half-widths for empirical pmfs.
    """

    masses: tuple
    mode: str = "float"
    ci: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in ("exact", "float", "empirical"):
            raise ValueError(f"unknown pmf mode {self.mode!r}")
        if any(v < 0 for v in self.masses):
            raise ValueError("negative probability mass")
        if self.mode == "exact":
            if sum(self.masses) > 1:
                raise ValueError("masses exceed one")
        elif math.fsum(float(v) for v in self.masses) > 1 + 1e-9:
            raise ValueError("masses exceed one")

    @classmethod
    def exact(cls, masses: Iterable) -> "DiscretePMF":
        return cls(tuple(Fraction(v) for v in masses), "exact")

    @classmethod
    def from_array(cls, masses, ci=None, mode: str = "float") -> "DiscretePMF":
        return cls(tuple(float(v) for v in masses), mode,
                   None if ci is None else tuple(float(v) for v in ci))

    @property
    def k_max(self) -> int:
        return len(self.masses) - 1

    def mass(self, k: int):
        if 0 <= k < len(self.masses):
            return self.masses[k]
        return Fraction(0) if self.mode == "exact" else 0.0

    @property
    def deficit(self):
        """Mass beyond ``k_max``."""
        if self.mode == "exact":
            return 1 - sum(self.masses)
        return max(0.0, 1.0 - math.fsum(float(v) for v in self.masses))

    def as_array(self, k_max: Optional[int] = None) -> np.ndarray:
        k_max = self.k_max if k_max is None else k_max
        return np.array([float(self.mass(k)) for k in range(k_max + 1)])

    def mean(self):
        if self.mode == "exact":
            return sum(k * v for k, v in enumerate(self.masses))
        return math.fsum(k * float(v) for k, v in enumerate(self.masses))

    def to_records(self) -> list:
        """``[(k, mass), ..., ("deficit", d)]`` with masses as strings."""
        rows = [(k, _fmt(v)) for k, v in enumerate(self.masses)]
        rows.append(("deficit", _fmt(self.deficit)))
        return rows

    @classmethod
    def from_records(cls, rows: Sequence) -> "DiscretePMF":
        masses = [v for k, v in rows if str(k) != "deficit"]
        if any("/" in str(v) for v in masses) or all(
                str(v).lstrip("-").isdigit() for v in masses):
            return cls.exact(Fraction(str(v)) for v in masses)
        return cls.from_array([float(v) for v in masses])


def _fmt(v) -> str:
    return str(v) if isinstance(v, Fraction) else repr(float(v))


def cp_pmf(spec: CompoundPoissonSpec, k_max: int) -> DiscretePMF:
    """Compound Poisson masses by the recursion
    ``P(0) = e^{-s}``, ``P(k) = (s/k) Σ_ℓ ℓ λ_ℓ P(k−ℓ)``.

    Examples
    --------
    >>> spec = CompoundPoissonSpec(2.0, ClusterSizeDist.point(1))
    >>> round(cp_pmf(spec, 3).masses[3], 10)
    0.1804470443
    """
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    s = float(spec.intensity)
    lam = spec.cluster.as_array()
    L = lam.shape[0]
    p = [0.0] * (k_max + 1)
    p[0] = math.exp(-s)
    for k in range(1, k_max + 1):
        terms = [ell * lam[ell - 1] * p[k - ell] for ell in range(1, min(k, L) + 1)]
        p[k] = s / k * math.fsum(terms)
    return DiscretePMF.from_array(p)


def cp_pmf_convolution(spec: CompoundPoissonSpec, k_max: int) -> DiscretePMF:
    """Compound Poisson masses as a Poisson mixture of convolution powers.

    Independent of :func:`cp_pmf`; used as its oracle.
    """
    s = float(spec.intensity)
    lam = np.zeros(k_max + 1)
    src = spec.cluster.as_array()[: k_max]
    lam[1: 1 + src.shape[0]] = src
    out = np.zeros(k_max + 1)
    power = np.zeros(k_max + 1)
    power[0] = 1.0
    # j clusters contribute only to k >= j, so j <= k_max suffices
    weight = math.exp(-s)
    for j in range(0, k_max + 1):
        out += weight * power
        power = np.convolve(power, lam)[: k_max + 1]
        weight *= s / (j + 1)
    return DiscretePMF.from_array(out)


def _trunc_conv(a: np.ndarray, b: np.ndarray, k_max: int) -> np.ndarray:
    return np.convolve(a, b)[: k_max + 1]


def cb_pmf(spec: CompoundBinomialSpec, k_max: int) -> DiscretePMF:
    """Compound binomial masses: ``N′``-fold convolution of the per-trial law.

    The per-trial law puts ``1 − p`` at zero and ``p λ_ℓ`` at ``ℓ``; the
    power is taken by repeated squaring with truncation at ``k_max``.
    """
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    p = float(spec.success)
    lam = spec.cluster.as_array()
    trial = np.zeros(k_max + 1)
    trial[0] = 1.0 - p
    n = min(lam.shape[0], k_max)
    trial[1: n + 1] = p * lam[:n]
    result = np.zeros(k_max + 1)
    result[0] = 1.0
    base = trial
    e = int(spec.trials)
    while e:
        if e & 1:
            result = _trunc_conv(result, base, k_max)
        e >>= 1
        if e:
            base = _trunc_conv(base, base, k_max)
    return DiscretePMF.from_array(np.clip(result, 0.0, None))


def polya_aeppli(theta, s, L: Optional[int] = None) -> CompoundPoissonSpec:
    """Compound Poisson law with geometric clusters ``λ_ℓ = θ(1−θ)^{ℓ−1}``.

    The geometric tail is cut at the first ``L`` with ``(1−θ)^L < 1e-12``
    (unless given) and the kept masses are renormalized.
    """
    theta = float(theta)
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    q = 1.0 - theta
    if L is None:
        L = 1 if q == 0 else max(1, math.ceil(math.log(1e-12) / math.log(q)))
        while q ** L >= 1e-12:
            L += 1
    raw = [theta * q ** (ell - 1) for ell in range(1, L + 1)]
    total = math.fsum(raw)
    return CompoundPoissonSpec(float(s), ClusterSizeDist(tuple(v / total for v in raw)))


def tv_distance(a: DiscretePMF, b: DiscretePMF):
    """Total variation distance including the mass beyond truncation.

    ``(1/2) Σ_k |a(k) − b(k)| + (1/2)|deficit_a − deficit_b|``; exact when
    both inputs are exact.
    """
    k_max = max(a.k_max, b.k_max)
    if a.mode == "exact" and b.mode == "exact":
        body = sum(abs(a.mass(k) - b.mass(k)) for k in range(k_max + 1))
        return (body + abs(a.deficit - b.deficit)) / 2
    diff = [abs(float(a.mass(k)) - float(b.mass(k))) for k in range(k_max + 1)]
    return 0.5 * math.fsum(diff) + 0.5 * abs(float(a.deficit) - float(b.deficit))


def poisson_pmf(s: float, k_max: int) -> DiscretePMF:
    return cp_pmf(CompoundPoissonSpec(s, ClusterSizeDist.point(1)), k_max)
