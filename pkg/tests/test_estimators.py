import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rarelab.estimators import (Z99, EstimatorConfig, entry_horizon, lambda_from_alpha,
                                mc_alpha_hat, mc_alpha_hat_grid, mc_beta, mc_entry_pmf,
                                mc_extremal_index, mc_lambda, mc_long_cluster_check,
                                mc_max_cdf, mc_rare_event_pmf, mc_visit_pmf, wilson)
from rarelab.symbolic import (IntervalUnion, exact_hitting_prob, exact_rare_event_pmf,
                              exact_return_profile)
from rarelab.systems import doubling_map
from rarelab.targets import Observable, TargetSet, calibrate_threshold

F = Fraction
T2 = doubling_map()
BALL10 = IntervalUnion.from_arcs([(F(-1, 2 ** 11), F(1, 2 ** 11))])   # μ = 2^-10


def test_z99():
    assert Z99 == pytest.approx(2.5758293035489, rel=1e-12)


def test_wilson_by_hand():
    # n = 100, k = 50: center 0.5, half-width z/(1+z²/n) · sqrt(0.0025 + z²/40000)
    lo, hi = wilson(50, 100)
    z = Z99
    hw = z / (1 + z * z / 100) * math.sqrt(0.0025 + z * z / 40000)
    assert lo == pytest.approx(0.5 - hw, abs=1e-15)
    assert hi == pytest.approx(0.5 + hw, abs=1e-15)
    lo, hi = wilson(0, 100)
    assert lo == 0 and hi > 0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10_000), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_lambda_from_alpha_geometric():
    alpha_hat = [F(1), F(1, 2), F(1, 4), F(1, 8), F(1, 16)]
    der = lambda_from_alpha(alpha_hat)
    assert der.alpha1 == F(1, 2)
    assert der.lambdas[:3] == (F(1, 2), F(1, 4), F(1, 8))


@pytest.mark.parametrize("bad", [[F(1, 2), F(1, 4)], [F(1), F(1, 4), F(1, 2)], [F(1), F(1)]])
def test_lambda_from_alpha_rejects(bad):
    with pytest.raises(ValueError):
        lambda_from_alpha(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        EstimatorConfig(samples=0)
    assert EstimatorConfig().with_stream(3).stream == 3


def test_entry_horizon():
    assert entry_horizon(BALL10, 1) == 1024
    assert entry_horizon(BALL10, F(1, 2)) == 512


def test_visit_pmf_matches_exact():
    U = IntervalUnion([(F(0), F(1, 4))])
    emp = mc_visit_pmf(T2, U, 2, EstimatorConfig(samples=100_000, seed=4))
    exact = exact_rare_event_pmf(T2, U, 2)
    lo, hi = emp.wilson()
    for k in range(3):
        assert lo[k] <= float(exact.mass(k)) <= hi[k]
    assert emp.to_pmf().deficit == 0


def test_alpha_hat_matches_exact_profile():
    cfg = EstimatorConfig(samples=100_000, seed=1, K=12, ell_max=5)
    stats = mc_alpha_hat(T2, BALL10, cfg)
    exact = exact_return_profile(T2, BALL10, 12, 5)["alpha_hat"]
    lo, hi = stats.alpha_hat_ci()
    for ell in range(5):
        assert lo[ell] <= float(exact[ell]) <= hi[ell]
    assert stats.alpha1 == pytest.approx(0.5, abs=0.01)


def test_alpha_hat_grid_is_monotone_in_K():
    cfg = EstimatorConfig(samples=20_000, seed=2, K=40, ell_max=4)
    grid = mc_alpha_hat_grid(T2, BALL10, cfg, [5, 10, 40])
    assert set(grid) == {5, 10, 40}
    for ell in range(4):
        assert grid[5].alpha_hat[ell] <= grid[10].alpha_hat[ell] <= grid[40].alpha_hat[ell]


def test_lambda_direct_geometric():
    cfg = EstimatorConfig(samples=400_000, seed=3, K=20, ell_max=4)
    lam = mc_lambda(T2, BALL10, cfg)
    assert not lam.flagged
    for ell, v in enumerate(lam.lambdas[:3], start=1):
        assert abs(v - 2.0 ** -ell) <= 0.5 * (lam.high[ell - 1] - lam.low[ell - 1]) + 0.02


def test_lambda_flagged_when_no_visits():
    tiny = IntervalUnion.from_arcs([(F(-1, 2 ** 40), F(1, 2 ** 40))])
    lam = mc_lambda(T2, tiny, EstimatorConfig(samples=1000, seed=0, K=2))
    assert lam.flagged
    assert np.all(np.isnan(lam.lambdas))


def test_extremal_index_routes():
    # A estimates μ_U(τ_U > K) = 1/2; B estimates P(τ_U <= K)/(K μ), whose exact value at
    # finite K carries a 1/(2K) bias for this set
    cfg = EstimatorConfig(samples=100_000, seed=5, K=10)
    est = mc_extremal_index(T2, BALL10, cfg, samples_B=400_000)
    lo, hi = est.A_low, est.A_high
    assert lo <= 0.5 <= hi
    exact_b = float(exact_hitting_prob(T2, BALL10, 10) / (10 * BALL10.measure))
    assert exact_b == pytest.approx(0.55, abs=1e-3)
    assert est.B_low <= exact_b <= est.B_high


def test_entry_and_observable_routes():
    obs = Observable(TargetSet.from_points([F(0)]))
    th = calibrate_threshold(obs, 256, 1)
    cfg = EstimatorConfig(samples=20_000, seed=6)
    zeta = mc_entry_pmf(T2, th.U, 1, cfg)
    xi = mc_rare_event_pmf(T2, obs, th, th.w, cfg)
    # same seed and stream, same sets: the observable route reproduces the membership counts
    n = min(len(zeta.counts), len(xi.counts))
    assert np.abs(zeta.masses[:n] - xi.masses[:n]).max() < 0.01
    mx = mc_max_cdf(T2, obs, th, th.w, cfg)
    assert mx.p == pytest.approx(xi.masses[0], abs=1e-12)


def test_beta_pairs_with_alpha_hat():
    fam = [IntervalUnion.from_arcs([(F(-1, 2 ** k), F(1, 2 ** k))]) for k in (9, 11)]
    cfg = EstimatorConfig(samples=20_000, seed=7, K=30, ell_max=3)
    est = mc_beta(T2, fam, [8, 10], cfg)
    for e in est:
        # β counts returns up to s_n <= K, so it cannot exceed α̂(K) on the same orbits
        assert e.beta[1] <= e.alpha_hat[1]
    assert est[1].gap() < est[0].gap() + 0.01


def test_long_cluster_probability_small():
    est = mc_long_cluster_check(T2, BALL10, 20, 60, EstimatorConfig(samples=20_000, seed=8))
    assert est.p < 0.05
    with pytest.raises(ValueError):
        mc_long_cluster_check(T2, BALL10, 20, 10, EstimatorConfig())


def test_execution_settings_do_not_enter_identity():
    a = EstimatorConfig(seed=1, threads=1, backend="numpy")
    b = EstimatorConfig(seed=1, threads=8)
    assert a == b and repr(a) == repr(b)
