"""Target sets, their distance observables, superlevel sets and threshold calibration.

The observable attached to a finite target ``Λ`` is ``φ(x) = −log d(x, Λ)``
with ``d`` the circle distance, so ``{φ > u}`` is the union of open balls of
radius ``e^{-u}`` around the points of ``Λ``. The measure of such a union is
``Σ_gaps min(g, 2r)`` over the circular gaps between consecutive points;
being piecewise linear in ``r`` it can be inverted exactly, which is how
:func:`calibrate_threshold` obtains an exact radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .symbolic import IntervalUnion, boundary_growth, inner_outer
from .systems import PiecewiseAffineMarkovMap, as_fraction

EPS_CAL = 1e-9


class CalibrationError(ValueError):
    """Raised when no threshold achieves the requested ``w μ(U) = τ``."""


@dataclass(frozen=True)
class TargetSet:
    """Finite approximation of the maximal set ``Λ`` of an observable.

    Attributes
    ----------
    kind : {"points", "periodic", "cantor"}
    points : tuple of Fraction
        Sorted distinct points of [0, 1).
    period : int or None
        Minimal period for periodic orbits.
    level : int or None
        Refinement level for Cantor targets.
    """

    kind: str
    points: tuple
    period: Optional[int] = None
    level: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("points", "periodic", "cantor"):
            raise ValueError(f"unknown target kind {self.kind!r}")
        pts = tuple(sorted({as_fraction(p) for p in self.points}))
        if not pts:
            raise ValueError("target set must contain at least one point")
        if any(not 0 <= p < 1 for p in pts):
            raise ValueError("target points must lie in [0, 1)")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: Iterable) -> "TargetSet":
        return cls("points", tuple(points))

    @classmethod
    def periodic_orbit(cls, tmap: PiecewiseAffineMarkovMap, point,
                       period: int) -> "TargetSet":
        """Orbit of ``point``, validated to have minimal period ``period``."""
        p = as_fraction(point)
        if period < 1:
            raise ValueError("period must be positive")
        orbit = [p]
        x = p
        for j in range(1, period + 1):
            x = tmap.apply(x)
            if j < period:
                if x == p:
                    raise ValueError(f"{p} has period {j}, not {period}")
                orbit.append(x)
        if x != p:
            raise ValueError(f"{p} is not periodic with period {period}")
        return cls("periodic", tuple(orbit), period=period)

    @classmethod
    def cantor(cls, level: int) -> "TargetSet":
        """Left endpoints of the ``2**level`` middle-third intervals of that level."""
        if level < 0:
            raise ValueError("Cantor level must be nonnegative")
        pts = [Fraction(0)]
        for i in range(1, level + 1):
            step = Fraction(2, 3 ** i)
            pts = pts + [p + step for p in pts]
        return cls("cantor", tuple(pts), level=level)

    def gaps(self) -> list:
        """Circular gaps between consecutive points (sum to one)."""
        pts = self.points
        gaps = [b - a for a, b in zip(pts, pts[1:])]
        gaps.append(1 + pts[0] - pts[-1])
        return gaps

    def ball_union(self, radius) -> IntervalUnion:
        """Union of the circle balls of radius ``radius`` around the points."""
        r = as_fraction(radius)
        if r <= 0:
            return IntervalUnion.empty()
        return IntervalUnion.from_arcs((p - r, p + r) for p in self.points)

    def ball_measure(self, radius) -> Fraction:
        r = as_fraction(radius)
        return sum((min(g, 2 * r) for g in self.gaps()), Fraction(0))

    def radius_for_measure(self, mass) -> Fraction:
        """Exact radius ``r`` with ``ball_measure(r) = mass`` for ``0 < mass < 1``."""
        mass = as_fraction(mass)
        if not 0 < mass < 1:
            raise CalibrationError(f"target measure {mass} outside (0, 1)")
        gaps = sorted(self.gaps())
        n = len(gaps)
        closed = Fraction(0)
        for k in range(n):
            # gaps[:k] fully covered, the remaining n - k gaps contribute 2r
            r = (mass - closed) / (2 * (n - k))
            lo = gaps[k - 1] if k else Fraction(0)
            if lo <= 2 * r <= gaps[k]:
                return r
            closed += gaps[k]
        raise CalibrationError(f"no radius gives measure {mass}")


@dataclass(frozen=True)
class Observable:
    """``φ(x) = −log d(x, Λ)`` for a target set ``Λ``."""

    target: TargetSet

    def distance(self, x):
        """Circle distance from ``x`` to the target (exact for Fractions)."""
        best = None
        for p in self.target.points:
            d = abs(x - p)
            d = min(d, 1 - d)
            if best is None or d < best:
                best = d
        return best

    def __call__(self, x) -> float:
        d = self.distance(x)
        return math.inf if d == 0 else -math.log(d)

    def points_array(self):
        import numpy as np
        return np.array([float(p) for p in self.target.points])


def threshold_radius(u) -> Fraction:
    """Exact radius ``e^{-u}`` of the superlevel set ``{φ > u}``.

    Floating ``u`` goes through ``exp``; a fraction with denominator below
    ``2**24`` within four ulps of the result is preferred, so that for
    instance ``u = log 4`` gives exactly ``1/4``.
    """
    if isinstance(u, Threshold):
        return u.radius
    if not math.isfinite(u):
        raise ValueError("threshold must be finite")
    r = math.exp(-u)
    simple = Fraction(r).limit_denominator(1 << 24)
    if simple > 0 and abs(float(simple) - r) <= 4 * math.ulp(r):
        return simple
    return Fraction(r)


def superlevel_set(obs: Observable, u) -> IntervalUnion:
    """``{x : φ(x) > u}`` as an exact interval union.

    ``u`` may be a float threshold or a calibrated :class:`Threshold`.
    """
    return obs.target.ball_union(threshold_radius(u))


@dataclass(frozen=True)
class Threshold:
    """Calibrated threshold with its exact superlevel set."""

    u: float
    radius: Fraction
    w: int
    tau: Fraction
    U: IntervalUnion = field(repr=False)
    mu: Fraction = Fraction(0)

    @property
    def calibration_error(self) -> Fraction:
        return abs(self.w * self.mu - self.tau)


def calibrate_threshold(obs: Observable, w: int, tau, method: str = "exact") -> Threshold:
    """Threshold ``u`` with ``w μ({φ > u}) = τ``.

    Parameters
    ----------
    method : {"exact", "bisect"}
        ``"exact"`` inverts the piecewise-linear ball measure in rationals
        (zero calibration error). ``"bisect"`` runs at most 60 monotone
        bisection steps on ``u`` with exactly computed measures and stops once
        ``|w μ − τ| <= 1e-9``.
    """
    if w < 1:
        raise CalibrationError("w must be at least 1")
    tau = as_fraction(tau) if not isinstance(tau, float) else Fraction(tau)
    if tau <= 0:
        raise CalibrationError("tau must be positive")
    target_mass = tau / w
    if target_mass >= 1:
        raise CalibrationError(
            f"tau/w = {target_mass} >= 1 exceeds the total measure reachable")
    tgt = obs.target
    if method == "exact":
        r = tgt.radius_for_measure(target_mass)
    elif method == "bisect":
        r = _bisect_radius(tgt, w, tau)
    else:
        raise ValueError(f"unknown calibration method {method!r}")
    U = tgt.ball_union(r)
    mu = U.measure
    if abs(w * mu - tau) > EPS_CAL * tau:
        raise CalibrationError(f"calibration missed: w μ = {float(w * mu)!r}, τ = {tau}")
    return Threshold(-math.log(r), r, w, tau, U, mu)


def _bisect_radius(tgt: TargetSet, w: int, tau: Fraction) -> Fraction:
    lo = -math.log(0.5)  # radius 1/2: at least the full measure of one gap
    hi = -math.log(float(tau / w) / (4 * len(tgt.points)))
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        r = Fraction(math.exp(-mid))
        err = w * tgt.ball_measure(r) - tau
        if abs(err) <= EPS_CAL * tau:
            return r
        if err > 0:
            lo = mid
        else:
            hi = mid
    raise CalibrationError("bisection did not reach the calibration tolerance")


@dataclass(frozen=True)
class Level:
    """One scale of a nested family with its regularity diagnostics."""

    n: int
    threshold: Threshold
    r_n: Fraction
    outer_inner_ratio: Fraction
    boundary_growth: Fraction
    n_components: int
    kappa: int

    @property
    def w(self) -> int:
        return self.threshold.w

    @property
    def U(self) -> IntervalUnion:
        return self.threshold.U

    @property
    def mu(self) -> Fraction:
        return self.threshold.mu

    @property
    def u(self) -> float:
        return self.threshold.u

    @property
    def kappa_mu(self) -> Fraction:
        return self.kappa * self.mu


@dataclass(frozen=True)
class ThresholdSchedule:
    tau: Fraction
    levels: tuple

    def __len__(self) -> int:
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i) -> Level:
        return self.levels[i]

    @property
    def final(self) -> Level:
        return self.levels[-1]

    def regularity_ok(self) -> bool:
        """Outer-inner ratio and ``κ_n μ(U_n)`` both strictly decreasing."""
        ratios = [lv.outer_inner_ratio for lv in self.levels]
        kmu = [lv.kappa_mu for lv in self.levels]
        return all(b < a for a, b in zip(ratios, ratios[1:])) and all(
            b < a for a, b in zip(kmu, kmu[1:]))


def cylinder_depth(tmap: PiecewiseAffineMarkovMap, r) -> int:
    """Smallest ``κ`` with every ``κ``-cylinder of diameter at most ``r``."""
    r = as_fraction(r)
    eta = tmap.max_length
    k = 0
    size = Fraction(1)
    while size > r:
        size *= eta
        k += 1
    return k


def nested_family(obs: Observable, tmap: PiecewiseAffineMarkovMap, tau, w0: int,
                  scales: int, growth: int = 2, r_exponent: int = 2,
                  method: str = "exact") -> ThresholdSchedule:
    """Calibrated nested sets ``U_n`` for ``w_n = w0 growth**n``.

    Each level carries the regularity diagnostics used downstream:
    ``r_n = μ(U_n)**r_exponent``, ``μ(U^o \\ U^i)/μ(U_n)``, ``F(r_n)``, the
    number of arcs and the cylinder depth ``κ_n``.
    """
    if scales < 1:
        raise ValueError("need at least one scale")
    if growth < 2:
        raise ValueError("growth must be at least 2 so that w_n increases")
    levels = []
    for n in range(scales):
        w = w0 * growth ** n
        try:
            th = calibrate_threshold(obs, w, tau, method)
        except CalibrationError as exc:
            raise CalibrationError(f"scale {n}: {exc}") from exc
        r_n = th.mu ** r_exponent
        Ui, Uo = inner_outer(th.U, r_n)
        levels.append(Level(
            n=n, threshold=th, r_n=r_n,
            outer_inner_ratio=(Uo - Ui).measure / th.mu,
            boundary_growth=boundary_growth(th.U, r_n),
            n_components=th.U.n_components(),
            kappa=cylinder_depth(tmap, r_n)))
    for a, b in zip(levels, levels[1:]):
        if not b.U <= a.U:
            raise CalibrationError(f"scale {b.n}: sets are not nested")
    return ThresholdSchedule(levels[0].threshold.tau, tuple(levels))
