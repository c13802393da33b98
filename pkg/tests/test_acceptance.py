"""The twelve acceptance criteria at their stated tolerances.

Each ``test_criterion_NN`` maps to one criterion; the terminal summary prints
one PASS/FAIL line per criterion (see ``conftest.py``). The two presets are
run once per session through the same code path as ``rarelab verify``.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from rarelab import cli
from rarelab.compound import (ClusterSizeDist, CompoundBinomialSpec, CompoundPoissonSpec,
                              cb_pmf, cp_pmf, cp_pmf_convolution, polya_aeppli, tv_distance)
from rarelab.config import load_preset
from rarelab.symbolic import exact_hitting_prob
from rarelab.systems import doubling_map, phi_rate
from rarelab.targets import Observable
from rarelab.verify import oracle_prediction

pytestmark = pytest.mark.slow

F = Fraction
FIXED = "polya-aeppli-fixed-point"
POISSON = "poisson-irrational"


def _run(name):
    cfg = load_preset(name)
    t0 = time.perf_counter()
    results = cli.run_checks(cfg, threads=None)
    total = time.perf_counter() - t0
    by_name = {rep.name: (rep, secs) for rep, secs in results}
    tmap = cli.build_map(cfg)
    family = cli.build_family(cfg, tmap, Observable(cli.build_target(cfg, tmap)))
    return {"cfg": cfg, "checks": by_name, "family": family, "total": total}


@pytest.fixture(scope="session")
def fixed_point():
    return _run(FIXED)


@pytest.fixture(scope="session")
def poisson():
    return _run(POISSON)


def geometric(theta, L=200):
    lam = [theta * (1 - theta) ** (ell - 1) for ell in range(1, L + 1)]
    total = sum(lam)
    return ClusterSizeDist(tuple(v / total for v in lam))


# ---------------------------------------------------------------------------
# 1. recursion against Poisson-mixture convolution
# ---------------------------------------------------------------------------


def test_criterion_01_cp_engine_exactness(record):
    t0 = time.perf_counter()
    worst = 0.0
    for s in (0.5, 1.0, 2.0, 5.0):
        for theta in (1.0, 0.5, 0.25):
            spec = CompoundPoissonSpec(s, geometric(theta))
            a = cp_pmf(spec, 50).as_array()
            b = cp_pmf_convolution(spec, 50).as_array()
            worst = max(worst, float(np.abs(a - b).max()))
    elapsed = time.perf_counter() - t0
    record(f"max |diff| = {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-12
    assert elapsed < 1.0


# ---------------------------------------------------------------------------
# 2. compound binomial to compound Poisson
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("theta", [1.0, 0.5])
def test_criterion_02_cb_to_cp(theta, record):
    t0 = time.perf_counter()
    s = 1.0
    lam = geometric(theta)
    target = cp_pmf(CompoundPoissonSpec(s, lam), 80)
    tvs = [tv_distance(cb_pmf(CompoundBinomialSpec(n, s / n, lam), 80), target)
           for n in (10 ** 2, 10 ** 3, 10 ** 4, 10 ** 5)]
    elapsed = time.perf_counter() - t0
    record(f"theta={theta}: TV(1e5) = {tvs[-1]:.1e}, {elapsed:.2f} s")
    assert tvs[-1] < 1e-3
    assert all(b < a for a, b in zip(tvs, tvs[1:]))
    assert elapsed < 10.0


# ---------------------------------------------------------------------------
# 3. rare event process against entry times
# ---------------------------------------------------------------------------


def test_criterion_03_equivalence(fixed_point, record):
    cfg = fixed_point["cfg"]
    rep, secs = fixed_point["checks"]["equivalence"]
    level = fixed_point["family"][cfg.checks.equivalence_scale]
    err = level.threshold.calibration_error
    record(f"max gap {rep.measured['max_gap']:.4f}, calibration error {float(err):.1e}, "
           f"{secs:.1f} s")
    assert cfg.estimators.equivalence_samples == 10 ** 5
    assert err <= F(1, 10 ** 9)
    assert rep.tolerance["mc_factor"] == 3.0
    assert rep.status == "pass", rep.measured
    assert secs < 60.0


# ---------------------------------------------------------------------------
# 4. Polya-Aeppli limit at the fixed point
# ---------------------------------------------------------------------------


def test_criterion_04_polya_aeppli_limit(fixed_point, record):
    cfg = fixed_point["cfg"]
    rep, secs = fixed_point["checks"]["limit"]
    mus = [lv.mu for lv in fixed_point["family"]]
    tvs = rep.measured["tv"]
    record("TV " + ", ".join(f"{v:.4f}" for v in tvs) + f", {secs:.0f} s")
    assert mus == [F(1, 2 ** k) for k in (8, 10, 12, 14)]
    assert cfg.estimators.samples == 2 * 10 ** 5
    assert F(cfg.schedule.tau) == 1
    # the prediction is the oracle's exact profile, not a fit
    tmap = doubling_map()
    pred = oracle_prediction(tmap, cli.build_target(cfg, tmap), K=cfg.oracle.K,
                             ell_max=cfg.oracle.ell_max)
    assert pred.alpha1 == F(1, 2)
    assert pred.lambdas[:10] == tuple(F(1, 2 ** ell) for ell in range(1, 11))
    pa = cp_pmf(polya_aeppli(0.5, 0.5), 60).as_array()
    assert np.abs(cp_pmf(pred.cp_spec(1), 60).as_array() - pa).max() < 1e-12
    assert all(b < a for a, b in zip(tvs, tvs[1:]))
    assert tvs[-1] < 0.03
    assert rep.status == "pass", rep.measured
    assert secs < 600.0


# ---------------------------------------------------------------------------
# 5. Poisson criterion at a non-periodic point
# ---------------------------------------------------------------------------


def test_criterion_05_poisson_criterion(poisson, record):
    cfg = poisson["cfg"]
    per, _ = poisson["checks"]["period_criterion"]
    lim, secs = poisson["checks"]["limit"]
    periods = per.measured["periods"]
    record(f"periods {periods}, final TV {lim.measured['final_tv']:.4f}, {secs:.0f} s")
    assert all(b > a for a, b in zip(periods, periods[1:]))
    assert periods[-1] > 2 * cfg.estimators.K
    assert per.measured["selected"] == "poisson"
    assert lim.bound["prediction"] == "poisson" and lim.bound["intensity"] == 1.0
    assert lim.measured["final_tv"] < 0.03
    assert lim.status == "pass", lim.measured
    assert secs < 600.0


# ---------------------------------------------------------------------------
# 6. extreme value law
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("preset, alpha1", [("fixed_point", 0.5), ("poisson", 1.0)])
def test_criterion_06_extreme_value_law(preset, alpha1, request, record):
    run = request.getfixturevalue(preset)
    rep, _ = run["checks"]["evl"]
    record(f"{preset}: diff {rep.measured['diff']:.4f}")
    assert run["cfg"].estimators.samples == 2 * 10 ** 5
    assert rep.bound["exp_minus_alpha1_tau"] == pytest.approx(np.exp(-alpha1))
    assert rep.measured["diff"] < 0.01
    assert rep.status == "pass", rep.measured


# ---------------------------------------------------------------------------
# 7. direct against derived cluster sizes
# ---------------------------------------------------------------------------


def test_criterion_07_cluster_identities(fixed_point, record):
    rep, _ = fixed_point["checks"]["t1"]
    prod = rep.measured["sum_l_lambda_times_alpha1"]
    record(f"max diff {rep.measured['max_diff']:.4f}, |sum - 1| = {abs(prod - 1):.4f}")
    header, rows = rep.artifacts["t1_lambdas"]
    assert [r[0] for r in rows] == [1, 2, 3, 4, 5]
    for _, _, _, diff, joint in rows:
        assert diff <= joint
    assert abs(prod - 1) < 0.02
    assert rep.status == "pass", rep.measured


# ---------------------------------------------------------------------------
# 8. hitting ratio and extremal index
# ---------------------------------------------------------------------------


def test_criterion_08_extremal_ratio(fixed_point, record):
    rep, _ = fixed_point["checks"]["extremal_ratio"]
    m = rep.measured
    U = fixed_point["family"].final.U
    at12 = float(exact_hitting_prob(doubling_map(), U, 12) / (12 * U.measure))
    record(f"exact(K=12) {at12:.4f} (outside tolerance, see strict xfail)")
    record(f"exact(K={m['exact_K']}) {m['exact_ratio']:.5f}, B {m['B']:.4f}, "
           f"A-B {m['A_minus_B']:+.4f} (joint hw {rep.tolerance['joint_halfwidth']:.4f})")
    assert m["exact_K"] == 80
    assert fixed_point["family"].final.mu == F(1, 2 ** 14)
    assert abs(m["exact_ratio"] - 0.5) < 0.02
    assert abs(m["B"] - 0.5) < 0.02
    assert abs(m["A_minus_B"]) <= rep.tolerance["joint_halfwidth"]
    assert rep.status == "pass", m


@pytest.mark.parametrize("K", [4, 8, 12])
def test_exact_hitting_ratio_at_small_K(K, fixed_point):
    # on the ball around the fixed point the exact ratio is (K+1)/(2K) while 2^-K
    # is far above mu(U), so the symbolic route meets the 0.02 tolerance only
    # from K = 26 on
    U = fixed_point["family"].final.U
    ratio = exact_hitting_prob(doubling_map(), U, K) / (K * U.measure)
    assert ratio == F(K + 1, 2 * K)


@pytest.mark.xfail(strict=True, reason="(K+1)/(2K) >= 13/24 for every K <= 12")
def test_exact_hitting_ratio_within_tolerance_at_K12(fixed_point):
    U = fixed_point["family"].final.U
    ratio = exact_hitting_prob(doubling_map(), U, 12) / (12 * U.measure)
    assert abs(float(ratio) - 0.5) < 0.02


# ---------------------------------------------------------------------------
# 9. compound binomial error bound
# ---------------------------------------------------------------------------


def test_criterion_09_cb_bound(fixed_point, record):
    cfg = fixed_point["cfg"]
    rep, _ = fixed_point["checks"]["cb_bound"]
    record(f"measured/bound = {rep.measured['ratio']:.3e}")
    assert len(cfg.checks.cb_word) == 6
    assert (cfg.checks.cb_K, cfg.checks.cb_Delta) == (3, 12)
    assert rep.tolerance["C"] == 1.0
    assert rep.measured["ratio"] <= 1
    assert rep.status == "pass", rep.measured


# ---------------------------------------------------------------------------
# 10. synchronized returns against the return profile
# ---------------------------------------------------------------------------


def test_criterion_10_beta(fixed_point, record):
    rep, _ = fixed_point["checks"]["beta"]
    gaps = rep.measured["gaps"]
    record("gaps " + ", ".join(f"{g:.4f}" for g in gaps)
           + f"; final hw {rep.tolerance['final_joint_halfwidth']:.4f}")
    assert gaps[-1] <= rep.tolerance["final_joint_halfwidth"]
    assert rep.status == "pass", rep.measured


# ---------------------------------------------------------------------------
# 11. exhaustive mixing certificate
# ---------------------------------------------------------------------------


def test_criterion_11_phi_mixing(fixed_point, record):
    rep, secs = fixed_point["checks"]["phi_mixing"]
    rate = phi_rate(doubling_map())
    record(f"{rep.measured['cases']} cases, worst ratio {rep.measured['worst_ratio']:.3g}, "
           f"{secs:.1f} s")
    assert (rate.C, rate.eta) == (2, F(1, 2))
    assert rep.tolerance == {"n_max": 6, "j_max": 6, "gap_max": 12}
    assert rep.status == "pass", rep.measured
    assert secs < 60.0


# ---------------------------------------------------------------------------
# 12. determinism across thread counts
# ---------------------------------------------------------------------------


def _tree(path):
    return {p.relative_to(path).as_posix(): p.read_bytes()
            for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("command", ["verify", "estimate"])
def test_criterion_12_thread_determinism(command, tmp_path, record):
    trees = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        code = cli.main(["-q", command, "--preset", "broken", "--threads", str(threads),
                         "--out", str(out)])
        assert code == 0
        trees.append(_tree(out))
    same = trees[0] == trees[1]
    record(f"{command}: {len(trees[0])} files, identical={same}")
    assert same
