"""Monte Carlo estimators of rare-event counts and short-return statistics.

Every estimator draws orbits through :mod:`rarelab.simulate`, so results are
deterministic per ``(seed, stream)`` and independent of the thread count.
Proportions carry 99% Wilson intervals.

Notation: ``U`` is the target set, ``τ_U`` the first entry time after time
zero, and for ``x`` uniform on ``U`` the ``(ℓ−1)``-th return time is
``τ^{ℓ−1}``. Then ``α̂_ℓ(K) = μ_U(τ^{ℓ−1} <= K)``, ``α_ℓ = α̂_ℓ − α̂_{ℓ+1}``,
``α₁ = 1 − α̂_2`` and ``λ_ℓ = (α_ℓ − α_{ℓ+1}) / α₁``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np

from . import simulate
from .compound import DiscretePMF
from .symbolic import IntervalUnion
from .systems import PiecewiseAffineMarkovMap, RngStream
from .targets import Observable, superlevel_set, threshold_radius

Z99 = NormalDist().inv_cdf(0.995)


def wilson(count, n, z: float = Z99):
    """Wilson score interval ``(low, high)`` for ``count`` successes in ``n``."""
    count = np.asarray(count, dtype=np.float64)
    if n <= 0:
        return np.zeros_like(count), np.ones_like(count)
    p = count / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = (p + z2 / (2 * n)) / denom
    hw = z / denom * np.sqrt(p * (1 - p) / n + z2 / (4 * n * n))
    lo = np.where(count <= 0, 0.0, np.maximum(center - hw, 0.0))
    hi = np.where(count >= n, 1.0, np.minimum(center + hw, 1.0))
    return lo, hi


def wilson_halfwidth(count, n, z: float = Z99):
    lo, hi = wilson(count, n, z)
    return 0.5 * (hi - lo)


@dataclass(frozen=True)
class EstimatorConfig:
    """Sampling budget and bookkeeping for one estimator call.

    Attributes
    ----------
    samples : int
        Number of sampled orbits ``N_s``.
    seed : int
        Generator seed; ``stream`` selects an independent substream.
    K : int
        Cluster cut-off.
    ell_max : int
        Largest cluster size / return index tracked.
    threads : int or None
        Worker threads (default: all cores). Does not affect results.
    """

    samples: int = 100_000
    seed: int = 0
    K: int = 20
    ell_max: int = 8
    stream: int = 0
    # execution settings: excluded from repr and equality so report digests
    # depend only on inputs that change results
    threads: Optional[int] = field(default=None, repr=False, compare=False)
    backend: Optional[str] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.ell_max < 2:
            raise ValueError("ell_max must be at least 2")

    @property
    def rng(self) -> RngStream:
        return RngStream(self.seed, self.stream)

    def with_stream(self, stream: int) -> "EstimatorConfig":
        return replace(self, stream=stream)


def _run(tmap, spec, cfg: EstimatorConfig, reduce, samples=None):
    return simulate.run(tmap, spec, cfg.samples if samples is None else samples,
                        cfg.rng, reduce, threads=cfg.threads, backend=cfg.backend)


@dataclass(frozen=True)
class EmpiricalPMF:
    """Counts of a nonnegative integer statistic over ``total`` samples."""

    counts: np.ndarray
    total: int
    seed: int = 0
    stream: int = 0

    @property
    def k_max(self) -> int:
        return len(self.counts) - 1

    @property
    def masses(self) -> np.ndarray:
        return self.counts / self.total

    def count(self, k: int) -> int:
        return int(self.counts[k]) if 0 <= k < len(self.counts) else 0

    def wilson(self):
        return wilson(self.counts, self.total)

    @property
    def halfwidths(self) -> np.ndarray:
        return wilson_halfwidth(self.counts, self.total)

    def mean(self) -> float:
        k = np.arange(len(self.counts))
        return float(np.dot(k, self.counts) / self.total)

    def std_error(self) -> float:
        k = np.arange(len(self.counts))
        m = self.mean()
        var = float(np.dot((k - m) ** 2, self.counts) / self.total)
        return math.sqrt(var / self.total)

    def to_pmf(self) -> DiscretePMF:
        return DiscretePMF.from_array(self.masses, self.halfwidths, mode="empirical")


def _hist_reduce(size: int):
    def reduce(count, first, mind):
        return np.bincount(np.minimum(count, size - 1), minlength=size)
    return reduce


def _empirical(tmap, spec, cfg, size) -> EmpiricalPMF:
    parts = _run(tmap, spec, cfg, _hist_reduce(size))
    counts = np.sum(parts, axis=0).astype(np.int64)
    return EmpiricalPMF(counts, cfg.samples, cfg.seed, cfg.stream)


def entry_horizon(U: IntervalUnion, tau) -> int:
    """``round(τ / μ(U))`` (ties to even)."""
    mu = U.measure
    if mu == 0:
        raise ValueError("U has zero measure")
    return round(Fraction(tau) / mu)


def mc_rare_event_pmf(tmap, obs: Observable, u, w: int,
                      cfg: EstimatorConfig) -> EmpiricalPMF:
    """Empirical law of ``ξ^w_u = #{0 <= k < w : φ(T^k x) > u}``, ``x`` uniform.

    Exceedances are evaluated through the observable, i.e. as circle distance
    below ``e^{-u}`` to the target points.
    """
    if w < 0:
        raise ValueError("w must be nonnegative")
    if w == 0:
        counts = np.zeros(1, dtype=np.int64)
        counts[0] = cfg.samples
        return EmpiricalPMF(counts, cfg.samples, cfg.seed, cfg.stream)
    U = superlevel_set(obs, u)
    spec = simulate.OrbitSpec(IntervalUnion.full(), U, w, (0, w),
                              points=obs.points_array(),
                              rho=float(threshold_radius(u)))
    return _empirical(tmap, spec, cfg, w + 1)


def mc_visit_pmf(tmap, U: IntervalUnion, w: int, cfg: EstimatorConfig) -> EmpiricalPMF:
    """Empirical law of ``#{0 <= k < w : T^k x ∈ U}`` by interval membership."""
    if w == 0:
        counts = np.zeros(1, dtype=np.int64)
        counts[0] = cfg.samples
        return EmpiricalPMF(counts, cfg.samples, cfg.seed, cfg.stream)
    spec = simulate.OrbitSpec(IntervalUnion.full(), U, w, (0, w))
    return _empirical(tmap, spec, cfg, w + 1)


def mc_entry_pmf(tmap, U: IntervalUnion, tau, cfg: EstimatorConfig) -> EmpiricalPMF:
    """Empirical law of the entry count ``ζ`` over ``round(τ/μ(U))`` steps."""
    N = entry_horizon(U, tau)
    if N < 1:
        raise ValueError("τ/μ(U) must be at least 1")
    return mc_visit_pmf(tmap, U, N, cfg)


@dataclass(frozen=True)
class MaxEstimate:
    """``P(max_{k<w} φ∘T^k <= u)`` with its Wilson interval."""

    p: float
    low: float
    high: float
    n: int

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.high - self.low)


def mc_max_cdf(tmap, obs: Observable, u, w: int, cfg: EstimatorConfig) -> MaxEstimate:
    """Empirical distribution function of the running maximum at ``u``."""
    rho = float(threshold_radius(u))
    spec = simulate.OrbitSpec(IntervalUnion.full(), superlevel_set(obs, u), w, (0, w),
                              points=obs.points_array(), rho=rho)
    # max φ <= u  <=>  min distance >= e^{-u}
    parts = _run(tmap, spec, cfg, lambda c, f, m: int(np.count_nonzero(m >= rho)))
    k = int(sum(parts))
    lo, hi = wilson(k, cfg.samples)
    return MaxEstimate(k / cfg.samples, float(lo), float(hi), cfg.samples)


# ---------------------------------------------------------------------------
# Short returns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerivedLambda:
    """Cluster sizes obtained from ``α̂`` by the telescoping identities."""

    alpha: tuple
    lambdas: tuple
    alpha1: object
    sum_l_lambda: object

    @property
    def inv_alpha1(self):
        return 1 / self.alpha1


def lambda_from_alpha(alpha_hat: Sequence) -> DerivedLambda:
    """``α_ℓ = α̂_ℓ − α̂_{ℓ+1}`` and ``λ_ℓ = (α_ℓ − α_{ℓ+1}) / α₁``.

    ``alpha_hat`` lists ``α̂_1, ..., α̂_L``. Exact inputs give exact outputs.
    ``λ_ℓ`` involves ``α̂_{ℓ+2}``, so only ``λ_1, ..., λ_{L−2}`` are returned;
    ``α`` is returned for ``ℓ <= L − 1``.

    Raises
    ------
    ValueError
        If ``α̂_1 != 1``, ``α̂`` increases somewhere, or ``α₁ = 0`` (every
        point of ``U`` returns: pure clustering, no finite cluster law).
    """
    a = list(alpha_hat)
    if not a or a[0] != 1:
        raise ValueError("alpha_hat must start with α̂_1 = 1")
    if any(y > x for x, y in zip(a, a[1:])):
        raise ValueError("alpha_hat must be nonincreasing")
    if len(a) < 3:
        raise ValueError("need α̂_1, α̂_2, α̂_3 at least")
    alpha = [a[i] - a[i + 1] for i in range(len(a) - 1)]
    alpha1 = alpha[0]
    if alpha1 == 0:
        raise ValueError("α₁ = 0: degenerate clustering, cluster sizes undefined")
    lambdas = [(alpha[i] - alpha[i + 1]) / alpha1 for i in range(len(a) - 2)]
    sum_l = sum((i + 1) * v for i, v in enumerate(lambdas))
    return DerivedLambda(tuple(alpha), tuple(lambdas), alpha1, sum_l)


@dataclass(frozen=True)
class ClusterStats:
    """Short-return statistics of ``U`` at cut-off ``K``.

    ``alpha_hat[ℓ−1]`` is ``α̂_ℓ(K)``; ``level_sets[ℓ, i]`` is
    ``p^ℓ_i = μ_U(τ^{ℓ−1} = i)`` (zero outside ``2 <= ℓ``, ``1 <= i <= K``).
    """

    K: int
    n_samples: int
    alpha_hat: np.ndarray
    level_sets: np.ndarray
    seed: int = 0
    beta: Optional[np.ndarray] = None

    @property
    def ell_max(self) -> int:
        return len(self.alpha_hat)

    @property
    def alpha(self) -> np.ndarray:
        ext = np.append(self.alpha_hat, 0.0)
        return ext[:-1] - ext[1:]

    @property
    def alpha1(self) -> float:
        return float(1.0 - self.alpha_hat[1])

    def alpha_hat_ci(self):
        counts = np.rint(self.alpha_hat * self.n_samples)
        return wilson(counts, self.n_samples)

    def derived(self) -> DerivedLambda:
        return lambda_from_alpha([float(v) for v in self.alpha_hat])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array(self.derived().lambdas)

    def derived_lambda_halfwidth(self, z: float = Z99) -> np.ndarray:
        """Delta-method half-widths of the derived ``λ_ℓ``.

        With ``q_r = P(R = r)`` for the return count ``R``, the derived value
        is ``(q_{ℓ−1} − q_ℓ)/q_0``; the multinomial covariance of ``q`` gives
        the variance.
        """
        a = np.append(self.alpha_hat, 0.0)
        q = a[:-1] - a[1:]  # q[r] = P(R = r), r = 0..ell_max-1 (last is R >= ell_max-1)
        n = self.n_samples
        L = len(q)
        cov = (np.diag(q) - np.outer(q, q)) / n
        out = np.zeros(L - 2)
        q0 = q[0]
        if q0 <= 0:
            return np.full(L - 2, np.inf)
        for ell in range(1, L - 1):
            g = np.zeros(L)
            num = q[ell - 1] - (q[ell] if ell < L else 0.0)
            g[ell - 1] += 1.0 / q0
            if ell < L:
                g[ell] -= 1.0 / q0
            g[0] -= num / q0 ** 2
            out[ell - 1] = z * math.sqrt(max(float(g @ cov @ g), 0.0))
        return out


def _return_time_reduce(H: int, ell_max: int):
    # first[:, j] is the (j+1)-th return time, i.e. τ^{ℓ−1} for ℓ = j + 2
    def reduce(count, first, mind):
        hist = np.zeros((ell_max + 1, H), dtype=np.int64)
        for ell in range(2, ell_max + 1):
            t = first[:, ell - 2]
            hist[ell] = np.bincount(t[t >= 0], minlength=H)[:H]
        return hist
    return reduce


def _return_time_hist(tmap, U, horizon: int, cfg: EstimatorConfig, samples=None):
    spec = simulate.OrbitSpec(U, U, horizon, (1, horizon), nfirst=cfg.ell_max - 1)
    parts = _run(tmap, spec, cfg, _return_time_reduce(horizon, cfg.ell_max), samples)
    return np.sum(parts, axis=0)


def _stats_from_hist(hist, K: int, n: int, seed: int) -> ClusterStats:
    ell_max = hist.shape[0] - 1
    level = np.zeros((ell_max + 1, K + 1))
    level[2:, 1:] = hist[2:, 1:K + 1] / n
    alpha_hat = np.ones(ell_max)
    for ell in range(2, ell_max + 1):
        alpha_hat[ell - 1] = hist[ell, 1:K + 1].sum() / n
    return ClusterStats(K, n, alpha_hat, level, seed)


def mc_alpha_hat(tmap, U: IntervalUnion, cfg: EstimatorConfig) -> ClusterStats:
    """``α̂_ℓ(K)`` and ``p^ℓ_i`` from orbits started uniformly inside ``U``.

    Start points are drawn by exact inversion of the distribution function of
    ``U`` (no rejection), so tiny sets cost nothing extra.
    """
    if not U:
        raise ValueError("U must be nonempty")
    hist = _return_time_hist(tmap, U, cfg.K + 1, cfg)
    return _stats_from_hist(hist, cfg.K, cfg.samples, cfg.seed)


def mc_alpha_hat_grid(tmap, U: IntervalUnion, cfg: EstimatorConfig,
                      K_grid: Sequence[int]) -> dict:
    """``{K: ClusterStats}`` for every ``K`` in the grid from one set of orbits."""
    K_max = max(K_grid)
    hist = _return_time_hist(tmap, U, K_max + 1, cfg)
    return {K: _stats_from_hist(hist, K, cfg.samples, cfg.seed) for K in K_grid}


@dataclass(frozen=True)
class LambdaEstimate:
    """Direct cluster-size estimate ``λ_ℓ(K, U)`` with Wilson intervals."""

    K: int
    lambdas: np.ndarray
    low: np.ndarray
    high: np.ndarray
    n_events: int
    n_samples: int
    mean_size: float
    mean_size_halfwidth: float
    counts: np.ndarray

    @property
    def flagged(self) -> bool:
        """No window contained a visit: the ratio is undefined."""
        return self.n_events == 0

    @property
    def halfwidths(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)


def mc_lambda(tmap, U: IntervalUnion, cfg: EstimatorConfig,
              samples: Optional[int] = None) -> LambdaEstimate:
    """``P(Σ_{i<=2K} 1_U∘T^i = ℓ) / P(Σ >= 1)`` from stationary orbits."""
    W = 2 * cfg.K + 1
    spec = simulate.OrbitSpec(IntervalUnion.full(), U, W, (0, W))
    n = cfg.samples if samples is None else samples
    parts = _run(tmap, spec, cfg, _hist_reduce(W + 1), n)
    counts = np.sum(parts, axis=0).astype(np.int64)
    events = int(counts[1:].sum())
    L = cfg.ell_max
    sizes = counts[1: L + 1].astype(np.float64)
    if events == 0:
        nan = np.full(L, np.nan)
        return LambdaEstimate(cfg.K, nan, nan, nan, 0, n, math.nan, math.nan, counts)
    lam = sizes / events
    lo, hi = wilson(sizes, events)
    k = np.arange(W + 1)
    mean = float(np.dot(k[1:], counts[1:]) / events)
    var = float(np.dot((k[1:] - mean) ** 2, counts[1:]) / events)
    hw = Z99 * math.sqrt(var / events)
    return LambdaEstimate(cfg.K, lam, lo, hi, events, n, mean, hw, counts)


@dataclass(frozen=True)
class ExtremalIndexEstimate:
    """Two estimates of ``α₁`` at cut-off ``K``.

    ``A = μ_U(τ_U > K)`` from orbits started in ``U``;
    ``B = P(τ_U <= K) / (K μ(U))`` from stationary orbits.
    """

    K: int
    A: float
    A_low: float
    A_high: float
    B: float
    B_low: float
    B_high: float
    n_A: int
    n_B: int

    @property
    def joint_halfwidth(self) -> float:
        return math.hypot(0.5 * (self.A_high - self.A_low), 0.5 * (self.B_high - self.B_low))

    @property
    def agree(self) -> bool:
        return abs(self.A - self.B) <= self.joint_halfwidth


def mc_extremal_index(tmap, U: IntervalUnion, cfg: EstimatorConfig,
                      samples_B: Optional[int] = None) -> ExtremalIndexEstimate:
    """Estimators A (conditional) and B (hitting-time ratio) of the extremal index.

    B uses ``cfg.stream + 1`` and, if given, its own sample count.
    """
    K = cfg.K
    mu = float(U.measure)
    spec_a = simulate.OrbitSpec(U, U, K + 1, (1, K + 1))
    kA = int(sum(_run(tmap, spec_a, cfg, lambda c, f, m: int(np.count_nonzero(c == 0)))))
    nA = cfg.samples
    a_lo, a_hi = wilson(kA, nA)
    cfg_b = cfg.with_stream(cfg.stream + 1)
    nB = cfg.samples if samples_B is None else samples_B
    spec_b = simulate.OrbitSpec(IntervalUnion.full(), U, K + 1, (1, K + 1))
    kB = int(sum(_run(tmap, spec_b, cfg_b, lambda c, f, m: int(np.count_nonzero(c > 0)), nB)))
    b_lo, b_hi = wilson(kB, nB)
    scale = 1.0 / (K * mu)
    return ExtremalIndexEstimate(K, kA / nA, float(a_lo), float(a_hi),
                                 kB / nB * scale, float(b_lo) * scale, float(b_hi) * scale,
                                 nA, nB)


@dataclass(frozen=True)
class BetaEstimate:
    """Synchronized ``β_ℓ(n)`` paired with ``α̂_ℓ(K)`` from the same orbits."""

    n: int
    s_n: int
    K: int
    beta: np.ndarray
    alpha_hat: np.ndarray
    n_samples: int

    def gap(self, ell: int = 2) -> float:
        return float(abs(self.beta[ell - 1] - self.alpha_hat[ell - 1]))

    def joint_halfwidth(self, ell: int = 2) -> float:
        n = self.n_samples
        h1 = wilson_halfwidth(round(self.beta[ell - 1] * n), n)
        h2 = wilson_halfwidth(round(self.alpha_hat[ell - 1] * n), n)
        return float(math.hypot(h1, h2))


def mc_beta(tmap, family: Sequence[IntervalUnion], s_n: Sequence[int],
            cfg: EstimatorConfig) -> list:
    """``β_ℓ(n) = μ_{U_n}(τ^{ℓ−1} <= s_n)`` for each set of the family.

    The same orbits also give ``α̂_ℓ(cfg.K)``, so differences between the two
    are paired. Scale ``n`` uses substream ``cfg.stream + n``.
    """
    if len(family) != len(s_n):
        raise ValueError("family and s_n must have equal length")
    out = []
    for n, (U, s) in enumerate(zip(family, s_n)):
        H = max(int(s), cfg.K) + 1
        hist = _return_time_hist(tmap, U, H, cfg.with_stream(cfg.stream + n))
        N = cfg.samples
        beta = np.ones(cfg.ell_max)
        ah = np.ones(cfg.ell_max)
        for ell in range(2, cfg.ell_max + 1):
            beta[ell - 1] = hist[ell, 1: int(s) + 1].sum() / N
            ah[ell - 1] = hist[ell, 1: cfg.K + 1].sum() / N
        out.append(BetaEstimate(n, int(s), cfg.K, beta, ah, N))
    return out


@dataclass(frozen=True)
class ProportionEstimate:
    p: float
    low: float
    high: float
    n: int


def mc_long_cluster_check(tmap, U: IntervalUnion, K: int, K_prime: int,
                          cfg: EstimatorConfig) -> ProportionEstimate:
    """``μ_U(some visit at a time in [K, K′])``: the long-cluster probability."""
    if K_prime <= K:
        raise ValueError("need K' > K")
    spec = simulate.OrbitSpec(U, U, K_prime + 1, (K, K_prime + 1))
    k = int(sum(_run(tmap, spec, cfg, lambda c, f, m: int(np.count_nonzero(c > 0)))))
    lo, hi = wilson(k, cfg.samples)
    return ProportionEstimate(k / cfg.samples, float(lo), float(hi), cfg.samples)
