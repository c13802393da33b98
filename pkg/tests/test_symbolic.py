import itertools
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rarelab.symbolic import (CylinderUnion, HorizonError, IntervalUnion, boundary_growth,
                              check_phi_certificate, essential_period, exact_hitting_prob,
                              exact_rare_event_pmf, exact_return_profile, image,
                              inner_cylinder_approx, inner_outer, joint_block_prob,
                              outer_hull, period, period_by_preimages, preimage, preimage_n,
                              phi_mixing_sup)
from rarelab.systems import doubling_map, phi_rate, ternary_map

F = Fraction
T2 = doubling_map()
T3 = ternary_map()


def iu(*pairs):
    return IntervalUnion([(F(a), F(b)) for a, b in pairs])


# ---------------------------------------------------------------------------
# Interval algebra
# ---------------------------------------------------------------------------


def test_normalization():
    U = iu(("1/2", "3/4"), ("0", "1/4"), ("1/4", "1/3"), ("1/8", "1/8"))
    assert U.intervals == ((F(0), F(1, 3)), (F(1, 2), F(3, 4)))
    assert U.measure == F(7, 12)
    assert U.n_components() == 2


def test_string_round_trip_and_errors():
    U = IntervalUnion.from_strings(["0,1/3", "1/2,2/3"])
    assert IntervalUnion.from_strings(U.to_strings()) == U
    with pytest.raises(ValueError):
        IntervalUnion.from_strings(["1/2"])
    with pytest.raises(ValueError):
        iu(("1/2", "3/2"))


def test_arcs_wrap():
    U = IntervalUnion.from_arcs([(F(-1, 8), F(1, 8))])
    assert U == iu(("0", "1/8"), ("7/8", "1"))
    assert U.arcs() == [(F(7, 8), F(9, 8))]
    assert U.n_components() == 1
    assert IntervalUnion.from_arcs([(F(0), F(1))]).is_full


def test_classify_and_contains():
    U = iu(("1/4", "1/2"))
    assert U.classify(F(1, 4), F(1, 2)) == 1
    assert U.classify(F(1, 2), F(1)) == 0
    assert U.classify(F(0), F(3, 8)) == -1
    assert F(1, 4) in U and F(1, 2) not in U


def test_grow_shrink():
    U = iu(("1/4", "1/2"))
    assert U.grow(F(1, 16)) == iu(("3/16", "9/16"))
    assert U.shrink(F(1, 16)) == iu(("5/16", "7/16"))
    assert U.shrink(F(1, 4)) == IntervalUnion.empty()


intervals = st.lists(st.tuples(st.integers(0, 32), st.integers(0, 32)), max_size=5).map(
    lambda pairs: IntervalUnion([(F(min(a, b), 32), F(max(a, b), 32)) for a, b in pairs]))


def cells(U):
    """Membership of the 64 half-cells: an independent oracle for unions on the 1/32 grid."""
    return frozenset(i for i in range(64) if F(2 * i + 1, 128) in U)


@settings(max_examples=200, deadline=None)
@given(intervals, intervals)
def test_set_algebra_against_grid(A, B):
    assert cells(A & B) == cells(A) & cells(B)
    assert cells(A | B) == cells(A) | cells(B)
    assert cells(A - B) == cells(A) - cells(B)
    assert cells(A ^ B) == cells(A) ^ cells(B)
    assert cells(~A) == frozenset(range(64)) - cells(A)
    assert (A & B).measure + (A | B).measure == A.measure + B.measure
    assert (A & B) <= A
    assert hash(A | B) == hash(B | A)


# ---------------------------------------------------------------------------
# Map operations
# ---------------------------------------------------------------------------


def test_preimage_doubling():
    assert preimage(T2, iu(("0", "1/2"))) == iu(("0", "1/4"), ("1/2", "3/4"))
    assert preimage_n(T2, iu(("0", "1/2")), 2).measure == F(1, 2)


@settings(max_examples=100, deadline=None)
@given(intervals)
def test_preimage_preserves_measure(U):
    assert preimage(T2, U).measure == U.measure
    assert preimage(T3, U).measure == U.measure


def test_image():
    assert image(T2, iu(("0", "1/8"))) == iu(("0", "1/4"))
    assert image(T2, iu(("3/8", "5/8"))) == iu(("0", "1/4"), ("3/4", "1"))


@pytest.mark.parametrize("U, expected", [
    (IntervalUnion.from_arcs([(F(-1, 64), F(1, 64))]), 1),      # around the fixed point 0
    (IntervalUnion.from_arcs([(F(1, 3) - F(1, 100), F(1, 3) + F(1, 100))]), 2),
    (iu(("1/2", "3/4")), 2),
])
def test_period(U, expected):
    assert period(T2, U, 20) == expected
    assert essential_period(T2, U, 20) == expected
    assert period_by_preimages(T2, U, 10) == expected


@settings(max_examples=40, deadline=None)
@given(intervals.filter(bool))
def test_period_definitions_agree(U):
    assert period(T2, U, 6) == period_by_preimages(T2, U, 6)


# ---------------------------------------------------------------------------
# Cylinders
# ---------------------------------------------------------------------------


def test_cylinder_union_blocks():
    C = CylinderUnion.from_words(T2, 3, [(0, 1, 1), (0, 1, 0)])
    assert C.to_interval_union() == iu(("1/4", "1/2"))
    assert C.measure == F(1, 4)
    assert len(C) == 2


def test_inner_and_outer_approximation():
    U = iu(("0", "1/3"))
    V = inner_cylinder_approx(T2, U, 4)
    assert V.measure == F(5, 16)
    assert V.to_interval_union() <= U
    assert outer_hull(T2, U, 2).words == frozenset({(0, 0), (0, 1)})
    assert U <= outer_hull(T2, U, 2).to_interval_union()


def test_inner_outer_and_boundary_growth():
    Ui, Uo = inner_outer(iu(("0", "1/2")), F(1, 16))
    assert Ui == iu(("1/16", "7/16"))
    assert Uo == iu(("0", "9/16"), ("15/16", "1"))
    assert boundary_growth(iu(("1/4", "1/2")), F(1, 8)) == F(1, 4)
    assert boundary_growth(IntervalUnion.full(), F(1, 8)) == 0
    Ui, Uo = inner_outer(iu(("1/4", "1/2")), F(1, 8))
    assert Ui == IntervalUnion.empty()
    assert Uo == iu(("1/8", "5/8"))


@settings(max_examples=100, deadline=None)
@given(intervals, st.integers(1, 64), st.integers(1, 64))
def test_boundary_growth_properties(U, a, b):
    r1, r2 = F(min(a, b), 512), F(max(a, b), 512)
    f1, f2 = boundary_growth(U, r1), boundary_growth(U, r2)
    assert 0 <= f1 <= f2
    assert f1 <= 2 * r1 * U.n_components()
    Ui, Uo = inner_outer(U, r1)
    assert Ui <= U <= Uo


# ---------------------------------------------------------------------------
# Exact rare-event laws
# ---------------------------------------------------------------------------


def brute_force_counts(U, level, w):
    """Oracle: the visit count over w steps is a function of the first level + w - 1 bits."""
    n = level + w - 1
    out = Counter()
    for bits in itertools.product((0, 1), repeat=n):
        x = F(sum(b << (n - 1 - i) for i, b in enumerate(bits)), 2 ** n)
        x += F(1, 2 ** (n + 1))  # interior point of the cylinder
        k = 0
        for _ in range(w):
            k += x in U
            x = T2.apply(x)
        out[k] += F(1, 2 ** n)
    return out


def test_exact_pmf_quarter_interval():
    # derived by enumeration of 2-bit words: P(0) = 5/8, P(1) = 1/4, P(2) = 1/8
    pmf = exact_rare_event_pmf(T2, iu(("0", "1/4")), 2)
    assert list(pmf.masses) == [F(5, 8), F(1, 4), F(1, 8)]
    assert pmf.deficit == 0


dyadic = st.lists(st.integers(0, 15), min_size=1, max_size=6).map(
    lambda ks: IntervalUnion([(F(k, 16), F(k + 1, 16)) for k in ks]))


@settings(max_examples=40, deadline=None)
@given(dyadic, st.integers(1, 4))
def test_exact_pmf_against_enumeration(U, w):
    pmf = exact_rare_event_pmf(T2, U, w)
    oracle = brute_force_counts(U, 4, w)
    for k in range(w + 1):
        assert pmf.mass(k) == oracle.get(k, 0)


def test_exact_pmf_guard():
    U = IntervalUnion.from_arcs([(F(-1, 2 ** 30), F(1, 2 ** 30))])
    with pytest.raises(HorizonError):
        exact_rare_event_pmf(T3, U, 40, max_atoms=1000)


def test_joint_block_prob():
    assert joint_block_prob(T2, iu(("0", "1/2")), 0, 1) == F(1, 4)


def test_return_profile_fixed_point():
    # ball of radius 2^-20 around 0: τ^{ℓ-1} <= K has probability 2^-(ℓ-1)
    U = IntervalUnion.from_arcs([(F(-1, 2 ** 20), F(1, 2 ** 20))])
    prof = exact_return_profile(T2, U, 8, 5)
    assert prof["alpha_hat"] == [F(1), F(1, 2), F(1, 4), F(1, 8), F(1, 16)]


def test_return_profile_period_two():
    # the orbit {1/3, 2/3}: half of U returns after two steps
    U = IntervalUnion.from_arcs([(F(1, 3) - F(1, 2 ** 20), F(1, 3) + F(1, 2 ** 20)),
                                 (F(2, 3) - F(1, 2 ** 20), F(2, 3) + F(1, 2 ** 20))])
    prof = exact_return_profile(T2, U, 8, 3)
    assert prof["alpha_hat"][1] == F(1, 2)


def test_hitting_prob_union_bound():
    U = iu(("0", "1/64"))
    p = exact_hitting_prob(T2, U, 5)
    assert 0 < p <= 5 * U.measure


# ---------------------------------------------------------------------------
# Mixing certificate
# ---------------------------------------------------------------------------


def test_phi_mixing_sup_vanishes_beyond_depth():
    # for the doubling map, events at gap k >= 0 beyond the cylinder depth are independent
    assert phi_mixing_sup(T2, 2, 2, 0) == 0
    assert phi_mixing_sup(T2, 3, 2, 1) == 0


def test_phi_certificate_small():
    res = check_phi_certificate(T2, phi_rate(T2), n_max=3, j_max=3, gap_max=4)
    assert res["holds"]
    assert res["cases"] > 0
