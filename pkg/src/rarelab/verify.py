"""Quantitative checks of the limit theorems on concrete maps and target families.

Each check returns a :class:`CheckReport` whose status is ``"pass"``,
``"fail"`` or ``"inapplicable"`` (a hypothesis of the statement is not met
numerically, so its conclusion is not tested). Limits over finite families
are checked as trends: strictly decreasing errors across scales and a final
value under a declared threshold.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .compound import (ClusterSizeDist, CompoundBinomialSpec, CompoundPoissonSpec,
                       DiscretePMF, cb_pmf, cp_pmf, tv_distance)
from .estimators import (EstimatorConfig, Z99, lambda_from_alpha, mc_alpha_hat,
                         mc_beta, mc_entry_pmf, mc_extremal_index, mc_lambda,
                         mc_max_cdf, mc_rare_event_pmf, mc_visit_pmf, wilson,
                         wilson_halfwidth)
from .symbolic import (CylinderUnion, HorizonError, IntervalUnion,
                       check_phi_certificate, essential_period,
                       exact_hitting_prob, exact_rare_event_pmf,
                       exact_return_profile, inner_cylinder_approx,
                       joint_block_prob, period)
from .systems import MixingRate, PiecewiseAffineMarkovMap, phi_rate
from .targets import Observable, TargetSet, ThresholdSchedule, Threshold

PASS, FAIL, INAPPLICABLE = "pass", "fail", "inapplicable"


def digest(*parts) -> str:
    """Short stable hash of the textual form of the inputs."""
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass
class CheckReport:
    """Outcome of one check.

    ``measured`` and ``bound`` are dictionaries of named numbers;
    ``artifacts`` maps attachment names to ``(header, rows)`` tables.
    """

    name: str
    status: str
    measured: dict
    bound: dict
    tolerance: dict
    inputs_digest: str
    artifacts: dict = field(default_factory=dict)
    notes: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def record(self) -> dict:
        return {"name": self.name, "status": self.status,
                "measured": _plain(self.measured), "bound": _plain(self.bound),
                "tolerance": _plain(self.tolerance),
                "inputs_digest": self.inputs_digest, "notes": self.notes}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Fraction):
        return float(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _strictly_decreasing(xs) -> bool:
    return all(b < a for a, b in zip(xs, xs[1:]))


def _decreasing_to_zero(xs) -> bool:
    """Strictly decreasing until the sequence reaches zero, then zero."""
    return all(b < a or a == b == 0 for a, b in zip(xs, xs[1:]))


# ---------------------------------------------------------------------------
# Oracle predictions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Prediction:
    """Limit-law parameters from the exact return profile of a deep ball."""

    alpha_hat: tuple
    alpha1: Fraction
    lambdas: tuple
    K: int
    depth: int

    def cp_spec(self, tau) -> CompoundPoissonSpec:
        lam = tuple(float(v) for v in self.lambdas)
        total = math.fsum(lam)
        return CompoundPoissonSpec(float(tau) * float(self.alpha1),
                                   ClusterSizeDist(tuple(v / total for v in lam)))

    @property
    def kind(self) -> str:
        return "poisson" if self.alpha1 == 1 else "compound"


def oracle_prediction(tmap, target: TargetSet, K: int = 60, depth: Optional[int] = None,
                      ell_max: int = 48) -> Prediction:
    """Exact ``α̂_ℓ(K)`` on the ball of radius ``2**-depth`` around ``target``.

    The deep ball stands in for the limit of the family; the defaults put the
    truncation error of the cluster law below ``1e-12`` for dyadic periodic
    points of the doubling map.
    """
    depth = K + 12 if depth is None else depth
    U = target.ball_union(Fraction(1, 2 ** depth))
    prof = exact_return_profile(tmap, U, K, ell_max)
    der = lambda_from_alpha(prof["alpha_hat"])
    return Prediction(tuple(prof["alpha_hat"]), der.alpha1, der.lambdas, K, depth)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def check_equivalence(tmap, obs: Observable, level: Threshold, tau,
                      cfg: EstimatorConfig, w: Optional[int] = None,
                      mc_factor: float = 3.0) -> CheckReport:
    """``ξ^w`` (observable route) against ``ζ`` over ``round(τ/μ(U))`` steps.

    Asserts ``|P(ξ = k) − P(ζ = k)| <= |w μ(U) − τ| + μ(U) + mc_factor · h_k``
    for every ``k`` with ``h_k`` the pooled 99% Wilson half-width. ``w``
    defaults to the calibrated window.
    """
    w = level.w if w is None else w
    U = level.U
    mu = U.measure
    tau = Fraction(tau)
    xi = mc_rare_event_pmf(tmap, obs, level, w, cfg)
    zeta = mc_entry_pmf(tmap, U, tau, cfg.with_stream(cfg.stream + 1))
    size = max(len(xi.counts), len(zeta.counts))
    a = np.zeros(size)
    b = np.zeros(size)
    a[: len(xi.counts)] = xi.masses
    b[: len(zeta.counts)] = zeta.masses
    pooled = (a * xi.total + b * zeta.total) / (xi.total + zeta.total)
    n_eff = 1.0 / (1.0 / xi.total + 1.0 / zeta.total)
    hw = wilson_halfwidth(pooled * n_eff, n_eff)
    det = float(abs(w * mu - tau) + mu)
    gap = np.abs(a - b)
    allowed = det + mc_factor * hw
    ok = bool(np.all(gap <= allowed))
    rows = [(k, a[k], b[k], gap[k], allowed[k]) for k in range(size) if a[k] or b[k]]
    return CheckReport(
        "equivalence", _status(ok),
        {"max_gap": float(gap.max()), "worst_k": int(np.argmax(gap - allowed)),
         "gap_over_deterministic": float(gap.max()) / det},
        {"deterministic": det, "w": w, "N": int(round(tau / mu))},
        {"mc_factor": mc_factor, "max_halfwidth": float(hw.max())},
        digest("equivalence", tmap, level.U, w, tau, cfg),
        {"equivalence_pmfs": (("k", "p_xi", "p_zeta", "gap", "allowed"), rows)})


def check_t1(stats, lam, sum_tol: float = 0.02, ell_check: int = 5) -> CheckReport:
    """Direct cluster sizes against those derived from ``α̂`` by telescoping.

    ``stats`` is a :class:`~rarelab.estimators.ClusterStats` and ``lam`` a
    :class:`~rarelab.estimators.LambdaEstimate` for the same ``U`` and ``K``.
    Passes when every ``|λ̂_ℓ − λ_ℓ(α̂)|`` for ``ℓ <= ell_check`` lies within
    the joint 99% half-width and ``|Σ ℓ λ̂_ℓ · α̂₁ − 1| <= sum_tol`` (plus its
    own half-width).
    """
    try:
        der = stats.derived()
    except ValueError as exc:
        return CheckReport("t1", INAPPLICABLE, {}, {}, {}, digest("t1", stats.K),
                           notes=str(exc))
    derived = np.array(der.lambdas)
    d_hw = stats.derived_lambda_halfwidth()
    L = min(ell_check, len(derived), len(lam.lambdas))
    diffs = np.abs(lam.lambdas[:L] - derived[:L])
    joint = np.hypot(lam.halfwidths[:L], d_hw[:L])
    alpha1 = stats.alpha1
    prod = lam.mean_size * alpha1
    prod_err = abs(prod - 1.0)
    ok = bool(np.all(diffs <= joint)) and prod_err <= sum_tol
    rows = [(ell + 1, lam.lambdas[ell], derived[ell], diffs[ell], joint[ell])
            for ell in range(L)]
    partial = float(sum((i + 1) * v for i, v in enumerate(stats.alpha_hat)))
    return CheckReport(
        "t1", _status(ok),
        {"max_diff": float(diffs.max()), "sum_l_lambda_times_alpha1": prod,
         "alpha1": alpha1, "partial_sum_l_alpha_hat": partial,
         "last_increment": float(len(stats.alpha_hat) * stats.alpha_hat[-1])},
        {"sum_l_lambda_times_alpha1": 1.0},
        {"sum_tol": sum_tol, "max_joint_halfwidth": float(joint.max())},
        digest("t1", stats.K, stats.n_samples, stats.seed, lam.n_samples),
        {"t1_lambdas": (("ell", "lambda_direct", "lambda_derived", "diff", "joint_hw"), rows)})


def check_limit(tmap, obs: Observable, family: ThresholdSchedule, tau,
                cfg: EstimatorConfig, prediction: Prediction,
                tv_threshold: float = 0.03, k_max: int = 60) -> CheckReport:
    """Entry-count law across the family against the predicted compound Poisson law.

    Also runs the inner cylinder route: with ``V_n`` the inner approximation
    of ``U_n`` by ``κ_n``-cylinders, the per-``k`` gap between the entry laws
    of ``U_n`` and ``V_n`` must not exceed
    ``N_U μ(U_n △ V_n) + |N_V − N_U| μ(U_n)`` plus Monte Carlo error.
    """
    if not family.regularity_ok():
        return CheckReport("limit", INAPPLICABLE, {}, {}, {},
                           digest("limit", family.levels[0].U),
                           notes="regularity diagnostics not decreasing")
    tau = Fraction(tau)
    target = cp_pmf(prediction.cp_spec(tau), k_max)
    tvs = []
    rows = []
    cyl_rows = []
    cyl_ok = True
    for lv in family:
        c = cfg.with_stream(cfg.stream + 10 * lv.n)
        emp = mc_entry_pmf(tmap, lv.U, tau, c)
        tv = tv_distance(emp.to_pmf(), target)
        tvs.append(tv)
        rows.append((lv.n, lv.w, str(lv.mu), len(emp.counts) - 1, tv))
        V = inner_cylinder_approx(tmap, lv.U, lv.kappa).to_interval_union()
        N_U = round(tau / lv.mu)
        N_V = round(tau / V.measure)
        bound = float(N_U * (lv.U ^ V).measure + abs(N_V - N_U) * lv.mu)
        if V == lv.U:
            gap = 0.0
            mc = 0.0
        else:
            emp_v = mc_entry_pmf(tmap, V, tau, c)
            size = max(len(emp.counts), len(emp_v.counts))
            a = np.zeros(size)
            b = np.zeros(size)
            a[: len(emp.counts)] = emp.masses
            b[: len(emp_v.counts)] = emp_v.masses
            gap = float(np.max(np.abs(a - b)))
            ha = np.zeros(size)
            hb = np.zeros(size)
            ha[: len(emp.counts)] = emp.halfwidths
            hb[: len(emp_v.counts)] = emp_v.halfwidths
            mc = float(np.max(np.hypot(ha, hb)))
        cyl_ok = cyl_ok and gap <= bound + mc
        cyl_rows.append((lv.n, lv.kappa, str(V.measure), bound, gap, mc))
    ok = _strictly_decreasing(tvs) and tvs[-1] < tv_threshold and cyl_ok
    return CheckReport(
        "limit", _status(ok),
        {"tv": tvs, "final_tv": tvs[-1], "cylinder_route_ok": cyl_ok},
        {"prediction": prediction.kind, "intensity": float(tau * prediction.alpha1),
         "lambda_1": float(prediction.lambdas[0])},
        {"tv_threshold": tv_threshold},
        digest("limit", [lv.U for lv in family], tau, cfg, prediction.alpha_hat[:8]),
        {"limit_tv": (("n", "w", "mu", "k_seen", "tv"), rows),
         "limit_cylinder_route": (("n", "kappa", "mu_V", "bound", "gap", "mc"), cyl_rows),
         "limit_prediction": (("k", "mass"), target.to_records())})


def check_cb_bound(tmap, U, K: int, Delta: int, tau, C: Fraction = Fraction(1),
                   rate: Optional[MixingRate] = None, k_max: int = 40) -> CheckReport:
    """Exact compound binomial approximation error against its mixing bound.

    ``U`` is a :class:`CylinderUnion` of level ``n``. With ``N′ =
    round(τ/((2K+1)μ(U)))`` and ``N = N′(2K+1)`` the exact law of the entry
    count over ``N`` steps is compared with the compound binomial law of
    ``N′`` trials of success ``p = P(Z ≥ 1)`` and cluster law ``λ_ℓ(K, U)``.
    The right-hand side is
    ``C φ(Δ/2) + (2K+2) Δ μ(U) + φ¹(K) + N′ Σ_{j=1}^{j₀} P(Z_0 ≥ 1, Z_j ≥ 1)``
    with ``j₀ = ⌊n/(2K+1)⌋ + 2`` and ``(φ, φ¹)`` from :func:`phi_rate`.
    """
    rate = phi_rate(tmap) if rate is None else rate
    if isinstance(U, CylinderUnion):
        n = U.level
        Uset = U.to_interval_union()
    else:
        raise TypeError("U must be a CylinderUnion")
    mu = Uset.measure
    size = 2 * K + 1
    n_trials = max(1, round(Fraction(tau) / (size * mu)))
    N = n_trials * size
    j0 = n // size + 2
    terms = rate_terms(rate, K, Delta, mu, C)
    joint = [joint_block_prob(tmap, Uset, K, j, max_atoms=None) for j in range(1, j0 + 1)]
    terms["block_overlap"] = n_trials * sum(joint, Fraction(0))
    rhs = sum(terms.values(), Fraction(0))
    digest_ = digest("cb_bound", tmap, Uset, K, Delta, tau, C)
    if Delta * size >= Fraction(tau) / mu:
        return CheckReport("cb_bound", INAPPLICABLE, {}, _plain(terms), {}, digest_,
                           notes="Delta (2K+1) must be below tau / mu(U)")
    try:
        window = exact_rare_event_pmf(tmap, Uset, size, max_atoms=None)
        exact = exact_rare_event_pmf(tmap, Uset, N, k_max=k_max, max_atoms=None)
    except HorizonError as exc:
        return CheckReport("cb_bound", INAPPLICABLE, {"rhs": rhs}, _plain(terms), {},
                           digest_, notes=f"comparison skipped: {exc}")
    p = 1 - window.masses[0]
    lam = tuple(window.mass(l) / p for l in range(1, size + 1))
    cb = cb_pmf(CompoundBinomialSpec(n_trials, float(p), ClusterSizeDist(lam)), k_max)
    errors = [abs(float(exact.mass(k)) - float(cb.mass(k))) for k in range(k_max + 1)]
    measured = max(errors)
    ratio = measured / float(rhs)
    rows = [(k, float(exact.mass(k)), float(cb.mass(k)), errors[k]) for k in range(k_max + 1)]
    return CheckReport(
        "cb_bound", _status(ratio <= 1),
        {"max_error": measured, "ratio": ratio, "N": N, "N_prime": n_trials,
         "p": float(p)},
        {"rhs": float(rhs), **{k: float(v) for k, v in terms.items()}},
        {"C": float(C)}, digest_,
        {"cb_bound_pmfs": (("k", "exact", "compound_binomial", "error"), rows)})


def rate_terms(rate: MixingRate, K: int, Delta: int, mu, C=Fraction(1)) -> dict:
    """The first three terms of the compound binomial error bound."""
    half = Fraction(Delta, 2)
    phi_half = rate.phi(int(half)) if half.denominator == 1 else Fraction(
        rate.C) * Fraction(float(rate.eta) ** float(half))
    return {"mixing": Fraction(C) * phi_half,
            "short_window": (2 * K + 2) * Delta * Fraction(mu),
            "mixing_tail": rate.tail(K)}


def check_evl(tmap, obs: Observable, level: Threshold, tau, cfg: EstimatorConfig,
              alpha1, allowance: float = 0.01) -> CheckReport:
    """``P(max_{k<w} φ∘T^k <= u)`` against ``exp(−α₁ τ)``.

    Passes when the difference is below ``allowance`` plus the Wilson
    half-width.
    """
    est = mc_max_cdf(tmap, obs, level, level.w, cfg)
    pred = math.exp(-float(alpha1) * float(tau))
    diff = abs(est.p - pred)
    return CheckReport(
        "evl", _status(diff <= allowance + est.halfwidth),
        {"p_max_le_u": est.p, "diff": diff, "ci_low": est.low, "ci_high": est.high},
        {"exp_minus_alpha1_tau": pred},
        {"allowance": allowance, "halfwidth": est.halfwidth},
        digest("evl", level.U, level.w, tau, cfg, float(alpha1)))


def check_beta(tmap, family: ThresholdSchedule, s_n: Sequence[int],
               cfg: EstimatorConfig, ell: int = 2) -> CheckReport:
    """Synchronized ``β_ℓ(n)`` against ``α̂_ℓ(K)`` from paired orbits.

    Requires ``s_n μ(U_n)`` to decrease with its last value below 0.05;
    passes when ``|β̂_ℓ − α̂_ℓ|`` strictly decreases along the family (a gap
    that has reached zero may stay there) and the final gap lies within the
    joint 99% half-width.
    """
    smu = [s * float(lv.mu) for s, lv in zip(s_n, family)]
    if not (_strictly_decreasing(smu) and smu[-1] < 0.05):
        return CheckReport("beta", INAPPLICABLE, {"s_mu": smu}, {}, {},
                           digest("beta", s_n), notes="s_n mu(U_n) not small")
    est = mc_beta(tmap, [lv.U for lv in family], s_n, cfg)
    gaps = [e.gap(ell) for e in est]
    hws = [e.joint_halfwidth(ell) for e in est]
    ok = _decreasing_to_zero(gaps) and gaps[-1] <= hws[-1]
    rows = [(e.n, e.s_n, e.beta[ell - 1], e.alpha_hat[ell - 1], g, h)
            for e, g, h in zip(est, gaps, hws)]
    return CheckReport(
        "beta", _status(ok),
        {"gaps": gaps, "final_gap": gaps[-1], "beta_final": float(est[-1].beta[ell - 1])},
        {"alpha_hat_K": float(est[-1].alpha_hat[ell - 1])},
        {"final_joint_halfwidth": hws[-1]},
        digest("beta", [lv.U for lv in family], list(s_n), cfg),
        {"beta": (("n", "s_n", "beta", "alpha_hat_K", "gap", "joint_hw"), rows)})


def check_period_criterion(tmap, family: ThresholdSchedule, target: Optional[TargetSet] = None,
                           k_max: int = 64) -> CheckReport:
    """Periods of the family decide between the Poisson and compound predictions.

    Bounded (constant) periods select the compound prediction, strictly
    increasing periods the Poisson one. For point targets the choice is
    cross-checked: a periodic target bounds the period by its own period,
    a non-periodic target must give strictly increasing periods.
    """
    pers = [period(tmap, lv.U, k_max) for lv in family]
    ess = [essential_period(tmap, lv.U, k_max) for lv in family]
    big = k_max + 1
    vals = [big if p is None else p for p in pers]
    if _strictly_decreasing([-v for v in vals]):
        selected = "poisson"
    elif len(set(vals[1:])) == 1:
        selected = "compound"
    else:
        selected = "undecided"
    consistent = all(p == e for p, e in zip(pers, ess))
    cross = True
    expected = None
    if target is not None:
        own = _target_period(tmap, target, k_max)
        if own is not None:
            expected = "compound"
            cross = all(v <= own for v in vals)
        else:
            expected = "poisson"
        cross = cross and selected == expected
    ok = consistent and selected != "undecided" and cross
    rows = [(lv.n, str(lv.mu), p, e) for lv, p, e in zip(family, pers, ess)]
    return CheckReport(
        "period_criterion", _status(ok),
        {"periods": pers, "essential_periods": ess, "selected": selected},
        {"expected": expected}, {"k_max": k_max},
        digest("period", [lv.U for lv in family], k_max),
        {"periods": (("n", "mu", "period", "essential_period"), rows)})


def _target_period(tmap, target: TargetSet, k_max: int) -> Optional[int]:
    """Least common period of the target points if all are periodic (exact)."""
    if target.kind == "periodic":
        return target.period
    best = None
    for p in target.points:
        x = p
        found = None
        for k in range(1, k_max + 1):
            x = tmap.apply(x)
            if x == p:
                found = k
                break
        if found is None:
            return None
        best = found if best is None else math.lcm(best, found)
    return best


def check_extremal_ratio(tmap, U: IntervalUnion, cfg: EstimatorConfig, alpha1,
                         tol: float = 0.02, samples_B: Optional[int] = None,
                         exact_K: Optional[int] = None) -> CheckReport:
    """``P(τ_U <= K)/(K μ(U))`` against ``α₁`` by the exact and Monte Carlo routes.

    Passes when the exact ratio (support chain at ``exact_K``, default
    ``cfg.K``) and estimator B are within ``tol`` of ``α₁`` and estimators A
    and B agree within their joint 99% half-width.
    """
    K_ex = cfg.K if exact_K is None else exact_K
    exact = exact_hitting_prob(tmap, U, K_ex) / (K_ex * U.measure)
    est = mc_extremal_index(tmap, U, cfg, samples_B=samples_B)
    a1 = float(alpha1)
    ok = (abs(float(exact) - a1) < tol and abs(est.B - a1) < tol and est.agree)
    return CheckReport(
        "extremal_ratio", _status(ok),
        {"exact_ratio": float(exact), "exact_K": K_ex, "A": est.A, "B": est.B,
         "A_minus_B": est.A - est.B},
        {"alpha1": a1},
        {"tol": tol, "joint_halfwidth": est.joint_halfwidth},
        digest("extremal_ratio", U, cfg, samples_B, K_ex))


def check_phi_mixing(tmap, rate: Optional[MixingRate] = None, n_max: int = 6,
                     j_max: int = 6, gap_max: int = 12) -> CheckReport:
    """Exact mixing deviation over cylinder unions against ``φ(k) μ(A)``."""
    rate = phi_rate(tmap) if rate is None else rate
    res = check_phi_certificate(tmap, rate, n_max, j_max, gap_max)
    return CheckReport(
        "phi_mixing", _status(bool(res["holds"])),
        {"worst_ratio": float(res["worst_ratio"]), "cases": res["cases"]},
        {"C": float(rate.C), "eta": float(rate.eta)},
        {"n_max": n_max, "j_max": j_max, "gap_max": gap_max},
        digest("phi", tmap, rate, n_max, j_max, gap_max))
