import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rarelab.compound import (ClusterSizeDist, CompoundBinomialSpec, CompoundPoissonSpec,
                              DiscretePMF, cb_pmf, cp_pmf, cp_pmf_convolution,
                              poisson_pmf, polya_aeppli, tv_distance)


def polya_aeppli_closed_form(theta, s, k):
    """Independent oracle: sum over the number j of clusters."""
    if k == 0:
        return math.exp(-s)
    return math.exp(-s) * math.fsum(
        s ** j / math.factorial(j) * math.comb(k - 1, j - 1)
        * theta ** j * (1 - theta) ** (k - j) for j in range(1, k + 1))


def test_cp_known_values():
    # s = 1, λ = (1/2, 1/4, 1/8, ...): P(0) = e^-1, P(1) = e^-1/2, P(2) = 3 e^-1/8
    pmf = cp_pmf(polya_aeppli(0.5, 1.0), 2)
    e = math.exp(-1)
    assert pmf.mass(0) == pytest.approx(e, abs=1e-12)
    assert pmf.mass(1) == pytest.approx(e / 2, abs=1e-12)
    assert pmf.mass(2) == pytest.approx(3 * e / 8, abs=1e-12)


@pytest.mark.parametrize("theta", [1.0, 0.5, 0.25])
@pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 5.0])
def test_polya_aeppli_matches_closed_form(theta, s):
    pmf = cp_pmf(polya_aeppli(theta, s), 30)
    for k in range(31):
        assert pmf.mass(k) == pytest.approx(polya_aeppli_closed_form(theta, s, k), abs=1e-12)


def test_point_cluster_is_poisson():
    spec = CompoundPoissonSpec(2.0, ClusterSizeDist.point(1))
    a = cp_pmf(spec, 40)
    b = poisson_pmf(2.0, 40)
    assert np.allclose(a.as_array(), b.as_array(), atol=1e-14)


def test_cluster_dist_validation():
    with pytest.raises(ValueError):
        ClusterSizeDist((Fraction(1, 2), Fraction(1, 3)))
    with pytest.raises(ValueError):
        ClusterSizeDist((0.5, 0.4))
    assert ClusterSizeDist((Fraction(1, 2), Fraction(1, 2))).mean() == pytest.approx(1.5)


def test_polya_aeppli_rejects_zero_theta():
    with pytest.raises(ValueError):
        polya_aeppli(0.0, 1.0)


def test_cb_single_trial():
    # one trial: P(0) = 1 - p, P(ℓ) = p λ_ℓ
    lam = ClusterSizeDist((0.5, 0.3, 0.2))
    pmf = cb_pmf(CompoundBinomialSpec(1, 0.4, lam), 5)
    assert np.allclose(pmf.as_array(5), [0.6, 0.2, 0.12, 0.08, 0, 0], atol=1e-15)


def test_cb_two_trials_by_hand():
    lam = ClusterSizeDist((0.5, 0.5))
    pmf = cb_pmf(CompoundBinomialSpec(2, 0.5, lam), 4)
    # each trial: 0 w.p. 1/2, 1 and 2 w.p. 1/4; convolve twice
    single = np.array([0.5, 0.25, 0.25])
    assert np.allclose(pmf.as_array(4), np.convolve(single, single), atol=1e-15)


def test_cb_to_cp_convergence():
    lam = polya_aeppli(0.5, 1.0).cluster
    cp = cp_pmf(CompoundPoissonSpec(1.0, lam), 50)
    tvs = [tv_distance(cb_pmf(CompoundBinomialSpec(n, 1.0 / n, lam), 50), cp)
           for n in (10, 100, 1000)]
    assert tvs[0] > tvs[1] > tvs[2]


def test_tv_exact_and_deficit():
    a = DiscretePMF.exact([Fraction(1, 2), Fraction(1, 2)])
    b = DiscretePMF.exact([Fraction(1, 4), Fraction(1, 4)])
    # per-k: 1/4 + 1/4, deficit of b is 1/2
    assert tv_distance(a, b) == Fraction(1, 2)
    assert tv_distance(a, a) == 0


def test_records_round_trip():
    pmf = DiscretePMF.exact([Fraction(5, 8), Fraction(1, 4), Fraction(1, 8)])
    rows = pmf.to_records()
    assert rows[-1] == ("deficit", "0")
    back = DiscretePMF.from_records(rows)
    assert back.masses == pmf.masses
    f = cp_pmf(polya_aeppli(0.5, 1.0), 10)
    back = DiscretePMF.from_records(f.to_records())
    assert np.array_equal(back.as_array(), f.as_array())


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.05, 6.0),
       weights=st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
def test_recursion_equals_convolution(s, weights):
    total = math.fsum(weights)
    lam = ClusterSizeDist(tuple(w / total for w in weights))
    spec = CompoundPoissonSpec(s, lam)
    a = cp_pmf(spec, 40).as_array()
    b = cp_pmf_convolution(spec, 40).as_array()
    assert np.max(np.abs(a - b)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(s=st.floats(0.05, 4.0), theta=st.floats(0.2, 1.0))
def test_pmf_properties(s, theta):
    pmf = cp_pmf(polya_aeppli(theta, s), 200)
    arr = pmf.as_array()
    assert np.all(arr >= 0)
    assert math.fsum(arr) + float(pmf.deficit) == pytest.approx(1.0, abs=1e-10)
    # mean of the compound law is s · E[cluster size] = s / θ
    assert pmf.mean() == pytest.approx(s / theta, rel=1e-6)
