"""Exact rational interval and cylinder algebra on the circle [0, 1).

Everything here works on :class:`fractions.Fraction` endpoints and never
touches floating point, so the functions serve as ground truth for the
Monte Carlo estimators.

Exact distributions over long horizons are computed by a conditional-support
chain: the law of ``T^t x`` for ``x`` uniform on a start set is a finite
mixture of uniform laws on interval unions ``J``. Splitting ``J`` by ``U`` and
by the branch domains and pushing each piece through its branch keeps the
mixture exact, and identical supports merge, so the number of states stays
small for the sets used in practice.
"""

from __future__ import annotations

import itertools
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence

from .compound import DiscretePMF
from .systems import MixingRate, PiecewiseAffineMarkovMap, as_fraction

ZERO = Fraction(0)
ONE = Fraction(1)

# Horizon guard for the join-partition based exact pmfs: m**w atoms.
MAX_ATOMS = 2 ** 24


class HorizonError(ValueError):
    """Raised when an exact computation would exceed its size guard."""


class IntervalUnion:
    """Finite union of half-open intervals ``[a, b)`` inside [0, 1).

    The representation is normalized: intervals are sorted, nonempty,
    pairwise disjoint and never adjacent. Endpoints are exact fractions.

    Parameters
    ----------
    intervals : iterable of (a, b)
        Endpoints as Fractions, ints or strings like ``"1/3"``.
    """

    __slots__ = ("_iv", "_hash")

    def __init__(self, intervals: Iterable = ()):
        pieces = []
        for a, b in intervals:
            a = as_fraction(a)
            b = as_fraction(b)
            if not (0 <= a <= b <= 1):
                raise ValueError(f"interval [{a}, {b}) not inside [0, 1]")
            if a < b:
                pieces.append((a, b))
        self._iv = _merge(sorted(pieces))
        self._hash = None

    @classmethod
    def _from_normalized(cls, iv: tuple) -> "IntervalUnion":
        obj = cls.__new__(cls)
        obj._iv = iv
        obj._hash = None
        return obj

    @classmethod
    def full(cls) -> "IntervalUnion":
        return cls._from_normalized(((ZERO, ONE),))

    @classmethod
    def empty(cls) -> "IntervalUnion":
        return cls._from_normalized(())

    @classmethod
    def from_strings(cls, items: Iterable[str]) -> "IntervalUnion":
        """Parse ``["a/b,c/d", ...]``."""
        out = []
        for item in items:
            parts = [p for p in str(item).split(",")]
            if len(parts) != 2:
                raise ValueError(f"interval must be 'a,b', got {item!r}")
            out.append((Fraction(parts[0].strip()), Fraction(parts[1].strip())))
        return cls(out)

    @classmethod
    def from_arcs(cls, arcs: Iterable) -> "IntervalUnion":
        """Union of circle arcs ``[s, e)`` given with ``s < e``, any real ``s``.

        Arcs of length at least one cover the circle.
        """
        pieces = []
        for s, e in arcs:
            s = as_fraction(s)
            e = as_fraction(e)
            if e <= s:
                continue
            if e - s >= 1:
                return cls.full()
            shift = Fraction(s.numerator // s.denominator)
            s, e = s - shift, e - shift
            if e <= 1:
                pieces.append((s, e))
            else:
                pieces.append((s, ONE))
                pieces.append((ZERO, e - 1))
        return cls(pieces)

    # -- basic protocol -------------------------------------------------
    @property
    def intervals(self) -> tuple:
        return self._iv

    def __iter__(self):
        return iter(self._iv)

    def __len__(self) -> int:
        return len(self._iv)

    def __bool__(self) -> bool:
        return bool(self._iv)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalUnion) and self._iv == other._iv

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash(self._iv)
        return self._hash

    def __repr__(self) -> str:
        body = ", ".join(f"[{a}, {b})" for a, b in self._iv)
        return f"IntervalUnion({body or 'empty'})"

    def to_strings(self) -> list:
        return [f"{a},{b}" for a, b in self._iv]

    @property
    def measure(self) -> Fraction:
        return sum((b - a for a, b in self._iv), ZERO)

    def is_full(self) -> bool:
        return self._iv == ((ZERO, ONE),)

    def __contains__(self, x) -> bool:
        i = bisect_right(self._iv, (x, float("inf"))) - 1
        return i >= 0 and self._iv[i][0] <= x < self._iv[i][1]

    def classify(self, a: Fraction, b: Fraction) -> int:
        """Relation of ``[a, b)`` to the union: 1 inside, 0 disjoint, -1 partial."""
        iv = self._iv
        i = bisect_right(iv, (a, float("inf"))) - 1
        if i >= 0 and iv[i][1] > a:
            return 1 if iv[i][1] >= b else -1
        j = i + 1
        if j < len(iv) and iv[j][0] < b:
            return -1
        return 0

    # -- set algebra ----------------------------------------------------
    def __and__(self, other: "IntervalUnion") -> "IntervalUnion":
        out = []
        A, B = self._iv, other._iv
        i = j = 0
        while i < len(A) and j < len(B):
            a0, a1 = A[i]
            b0, b1 = B[j]
            lo = a0 if a0 > b0 else b0
            hi = a1 if a1 < b1 else b1
            if lo < hi:
                out.append((lo, hi))
            if a1 < b1:
                i += 1
            else:
                j += 1
        return IntervalUnion._from_normalized(tuple(out))

    def __or__(self, other: "IntervalUnion") -> "IntervalUnion":
        return IntervalUnion._from_normalized(_merge(sorted(self._iv + other._iv)))

    def complement(self) -> "IntervalUnion":
        out = []
        prev = ZERO
        for a, b in self._iv:
            if a > prev:
                out.append((prev, a))
            prev = b
        if prev < 1:
            out.append((prev, ONE))
        return IntervalUnion._from_normalized(tuple(out))

    __invert__ = complement

    def __sub__(self, other: "IntervalUnion") -> "IntervalUnion":
        return self & other.complement()

    def __xor__(self, other: "IntervalUnion") -> "IntervalUnion":
        return (self - other) | (other - self)

    def issubset(self, other: "IntervalUnion") -> bool:
        return (self - other).measure == 0

    __le__ = issubset

    # -- circle geometry ------------------------------------------------
    def arcs(self) -> list:
        """Maximal circle arcs ``(s, e)``; an arc through 0 has ``e > 1``."""
        iv = list(self._iv)
        if not iv:
            return []
        if self.is_full():
            return [(ZERO, ONE)]
        if len(iv) > 1 and iv[0][0] == 0 and iv[-1][1] == 1:
            first = iv.pop(0)
            last = iv.pop()
            iv.append((last[0], 1 + first[1]))
        return iv

    def n_components(self) -> int:
        return len(self.arcs())

    def grow(self, r) -> "IntervalUnion":
        """Open ``r``-neighbourhood ``B_r(U)`` on the circle (half-open form)."""
        r = as_fraction(r)
        if r <= 0:
            raise ValueError("radius must be positive")
        if self.is_full() or not self:
            return self
        return IntervalUnion.from_arcs((s - r, e + r) for s, e in self.arcs())

    def shrink(self, r) -> "IntervalUnion":
        """Points of the union at circle distance more than ``r`` from its boundary."""
        r = as_fraction(r)
        if r <= 0:
            raise ValueError("radius must be positive")
        if self.is_full() or not self:
            return self
        return IntervalUnion.from_arcs(
            (s + r, e - r) for s, e in self.arcs() if e - s > 2 * r)


def _merge(pieces: list) -> tuple:
    out = []
    for a, b in pieces:
        if out and a <= out[-1][1]:
            if b > out[-1][1]:
                out[-1] = (out[-1][0], b)
        else:
            out.append((a, b))
    return tuple(out)


def measure(U: IntervalUnion) -> Fraction:
    """Exact Lebesgue measure."""
    return U.measure


def branch_domains(tmap: PiecewiseAffineMarkovMap) -> list:
    return [IntervalUnion._from_normalized(((a, b),))
            for a, b in zip(tmap.lefts, tmap.rights)]


def preimage(tmap: PiecewiseAffineMarkovMap, U: IntervalUnion) -> IntervalUnion:
    """Exact ``T^{-1} U``."""
    pieces = []
    for left, length in zip(tmap.lefts, tmap.lengths):
        pieces.extend((left + length * a, left + length * b) for a, b in U)
    return IntervalUnion._from_normalized(_merge(pieces))


def preimage_n(tmap, U: IntervalUnion, n: int) -> IntervalUnion:
    for _ in range(n):
        U = preimage(tmap, U)
    return U


def branch_image(tmap, S: IntervalUnion, i: int) -> IntervalUnion:
    """``T_i(S ∩ B_i)`` for the branch ``i``."""
    lo, hi, length = tmap.lefts[i], tmap.rights[i], tmap.lengths[i]
    pieces = []
    for a, b in S:
        a2 = a if a > lo else lo
        b2 = b if b < hi else hi
        if a2 < b2:
            pieces.append(((a2 - lo) / length, (b2 - lo) / length))
    return IntervalUnion._from_normalized(_merge(pieces))


def image(tmap, S: IntervalUnion) -> IntervalUnion:
    """Exact forward image ``T(S)``."""
    out = IntervalUnion.empty()
    for i in range(tmap.m):
        out = out | branch_image(tmap, S, i)
    return out


def period(tmap, U: IntervalUnion, k_max: int) -> Optional[int]:
    """Least ``k <= k_max`` with ``T^{-k} U ∩ U`` nonempty, else ``None``.

    Uses forward images: ``T^{-k}U ∩ U ≠ ∅`` iff ``T^k(U) ∩ U ≠ ∅``, which
    keeps the number of pieces bounded instead of growing like ``m**k``.
    """
    if not U:
        raise ValueError("period of an empty set is undefined")
    S = U
    for k in range(1, k_max + 1):
        S = image(tmap, S)
        if S & U:
            return k
    return None


def essential_period(tmap, U: IntervalUnion, k_max: int) -> Optional[int]:
    """Least ``k <= k_max`` with ``μ(T^{-k} U ∩ U) > 0``, else ``None``.

    Affine branches map positive-measure sets to positive-measure sets, so
    the forward-image test is equivalent. For normalized half-open unions a
    nonempty intersection always has positive measure, hence this agrees with
    :func:`period`; the two are kept separate to mirror the definitions.
    """
    if U.measure == 0:
        raise ValueError("essential period needs a set of positive measure")
    S = U
    for k in range(1, k_max + 1):
        S = image(tmap, S)
        if (S & U).measure > 0:
            return k
    return None


def period_by_preimages(tmap, U: IntervalUnion, k_max: int) -> Optional[int]:
    """Literal definition of the period via iterated preimages (small ``k``)."""
    P = U
    for k in range(1, k_max + 1):
        P = preimage(tmap, P)
        if P & U:
            return k
    return None


# ---------------------------------------------------------------------------
# Cylinders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderUnion:
    """Union of level-``level`` cylinders of a map.

    ``blocks`` holds disjoint words of length at most ``level``; a block
    stands for all of its extensions to length ``level``. This keeps unions
    such as the inner approximation of a ball compact at deep levels.
    """

    tmap: PiecewiseAffineMarkovMap
    level: int
    blocks: tuple

    def __post_init__(self):
        for w in self.blocks:
            if len(w) > self.level:
                raise ValueError("block longer than the cylinder level")
            if any(not 0 <= s < self.tmap.m for s in w):
                raise ValueError(f"symbol out of range in {w}")

    @classmethod
    def from_words(cls, tmap, level: int, words: Iterable) -> "CylinderUnion":
        words = tuple(sorted({tuple(w) for w in words}))
        if any(len(w) != level for w in words):
            raise ValueError("all words must have length equal to the level")
        return cls(tmap, level, words)

    @property
    def words(self) -> frozenset:
        out = set()
        for w in self.blocks:
            for tail in itertools.product(range(self.tmap.m), repeat=self.level - len(w)):
                out.add(w + tail)
        return frozenset(out)

    def __len__(self) -> int:
        return sum(self.tmap.m ** (self.level - len(w)) for w in self.blocks)

    @property
    def measure(self) -> Fraction:
        return sum((self.tmap.cylinder_measure(w) for w in self.blocks), ZERO)

    def to_interval_union(self) -> IntervalUnion:
        return IntervalUnion(self.tmap.cylinder(w) for w in self.blocks)


def _cylinder_search(tmap, U: IntervalUnion, n: int, keep_partial: bool) -> CylinderUnion:
    blocks = []
    stack = [()]
    while stack:
        w = stack.pop()
        a, b = tmap.cylinder(w)
        rel = U.classify(a, b)
        if rel == 0:
            continue
        if rel == 1:
            blocks.append(w)
        elif len(w) == n:
            if keep_partial:
                blocks.append(w)
        else:
            stack.extend(w + (s,) for s in range(tmap.m - 1, -1, -1))
    return CylinderUnion(tmap, n, tuple(sorted(blocks)))


def inner_cylinder_approx(tmap, U: IntervalUnion, n: int) -> CylinderUnion:
    """Union of the level-``n`` cylinders contained in ``U``."""
    if n < 1:
        raise ValueError("cylinder level must be at least 1")
    return _cylinder_search(tmap, U, n, keep_partial=False)


def outer_hull(tmap, U: IntervalUnion, j: int) -> CylinderUnion:
    """Union of the level-``j`` cylinders that meet ``U``."""
    if j < 1:
        raise ValueError("cylinder level must be at least 1")
    return _cylinder_search(tmap, U, j, keep_partial=True)


def inner_outer(U: IntervalUnion, r) -> tuple:
    """``(U^i, U^o)``: the ``r``-shrink and ``r``-grow of ``U`` on the circle."""
    return U.shrink(r), U.grow(r)


def boundary_growth(U: IntervalUnion, r) -> Fraction:
    """``F(r) = μ(B_r(U)) − μ(U)``."""
    return U.grow(r).measure - U.measure


# ---------------------------------------------------------------------------
# Exact distributions via the conditional-support chain
# ---------------------------------------------------------------------------


class _Splitter:
    """Caches, per support ``J``, its split by ``U`` and the branch pushes."""

    def __init__(self, tmap, U: IntervalUnion):
        self.tmap = tmap
        self.U = U
        self._split = {}
        self._push = {}

    def split(self, J: IntervalUnion):
        """``[(inside, probability, part), ...]`` for the two halves of ``J``."""
        res = self._split.get(J)
        if res is None:
            total = J.measure
            res = []
            for inside, part in ((True, J & self.U), (False, J - self.U)):
                mu = part.measure
                if mu > 0:
                    res.append((inside, mu / total, part))
            self._split[J] = res
        return res

    def push(self, P: IntervalUnion):
        """``[(probability, T_i(P ∩ B_i)), ...]`` over branches meeting ``P``."""
        res = self._push.get(P)
        if res is None:
            total = P.measure
            res = []
            for i in range(self.tmap.m):
                img = branch_image(self.tmap, P, i)
                if img:
                    # |P ∩ B_i| = length_i * |image|
                    res.append((self.tmap.lengths[i] * img.measure / total, img))
            self._push[P] = res
        return res


def support_chain(tmap, U: IntervalUnion, start: IntervalUnion, horizon: int,
                  update: Callable, init, *, record: Optional[Callable] = None,
                  max_states: int = 500_000) -> dict:
    """Exact law of an additive functional of ``1_U(T^t x)``, ``t < horizon``.

    ``x`` is uniform on ``start``. ``update(acc, t, inside)`` returns
    ``(new_acc, done)``; finished mass leaves the chain. ``record(t, acc,
    new_acc, mass)`` is called for every transition with positive mass.
    Returns the final law of ``acc`` as ``{acc: Fraction}``.
    """
    if start.measure == 0:
        raise ValueError("start set must have positive measure")
    sp = _Splitter(tmap, U)
    final = defaultdict(Fraction)
    states = {(start, init): ONE}
    for t in range(horizon):
        nxt = defaultdict(Fraction)
        for (J, acc), mass in states.items():
            for inside, prob, part in sp.split(J):
                pm = mass * prob
                acc2, done = update(acc, t, inside)
                if record is not None:
                    record(t, acc, acc2, pm)
                if done or t == horizon - 1:
                    final[acc2] += pm
                    continue
                for q, img in sp.push(part):
                    nxt[(img, acc2)] += pm * q
        if len(nxt) > max_states:
            raise HorizonError(
                f"exact chain exceeded {max_states} states at step {t}")
        states = nxt
    return dict(final)


def exact_rare_event_pmf(tmap, U: IntervalUnion, w: int, k_max: Optional[int] = None,
                         max_atoms: Optional[int] = MAX_ATOMS) -> DiscretePMF:
    """Exact law of ``ξ = #{0 <= t < w : T^t x ∈ U}`` for ``x`` uniform.

    Parameters
    ----------
    max_atoms : int or None
        Refuse when the join partition would have more than this many atoms
        (``m**w``). ``None`` lifts the guard; the support chain then bounds
        the work by its own state count.
    """
    if w < 0:
        raise ValueError("horizon must be nonnegative")
    if max_atoms is not None and tmap.m ** w > max_atoms:
        raise HorizonError(
            f"horizon w={w} gives {tmap.m}**{w} atoms > {max_atoms}; use Monte Carlo")
    k_max = w if k_max is None else k_max
    if w == 0:
        return DiscretePMF.exact([ONE] + [ZERO] * k_max)
    law = support_chain(tmap, U, IntervalUnion.full(), w,
                        lambda acc, t, inside: (acc + inside, False), 0)
    masses = [law.get(k, ZERO) for k in range(k_max + 1)]
    return DiscretePMF.exact(masses)


def joint_block_prob(tmap, U: IntervalUnion, K: int, j: int,
                     max_atoms: Optional[int] = MAX_ATOMS) -> Fraction:
    """``P(Z_0 >= 1 and Z_j >= 1)`` for the block sums ``Z_i`` of length ``2K+1``."""
    if K < 0 or j < 1:
        raise ValueError("need K >= 0 and j >= 1")
    size = 2 * K + 1
    horizon = (j + 1) * size
    if max_atoms is not None and tmap.m ** horizon > max_atoms:
        raise HorizonError(
            f"horizon {horizon} gives {tmap.m}**{horizon} atoms > {max_atoms}")
    if not U:
        return ZERO

    def update(acc, t, inside):
        z0, zj = acc
        if t < size:
            z0 = z0 or inside
            if t == size - 1 and not z0:
                return (False, False), True
            return (z0, False), False
        if t >= j * size:
            zj = zj or inside
            if zj:
                return (True, True), True
        return (z0, zj), False

    law = support_chain(tmap, U, IntervalUnion.full(), horizon, update, (False, False))
    return law.get((True, True), ZERO)


def exact_return_profile(tmap, U: IntervalUnion, K: int, ell_max: int) -> dict:
    """Exact short-return quantities of ``U`` for ``x`` uniform on ``U``.

    Returns a dict with ``alpha_hat`` (``α̂_ℓ(K)``, ``ℓ = 1..ell_max``, as a
    list indexed from ``ℓ = 1``) and ``level_sets`` mapping ``(ℓ, i)`` to
    ``p^ℓ_i = μ_U(τ^{ℓ-1} = i)`` for ``ℓ >= 2``.
    """
    if not U:
        raise ValueError("U must be nonempty")
    p = defaultdict(Fraction)

    def update(acc, t, inside):
        if t == 0 or not inside:
            return acc, False
        acc += 1
        return acc, acc >= ell_max - 1

    def record(t, acc, acc2, mass):
        if acc2 > acc:
            p[(acc2 + 1, t)] += mass

    if ell_max >= 2:
        support_chain(tmap, U, U, K + 1, update, 0, record=record)
    alpha_hat = [ONE] + [sum((v for (l, i), v in p.items() if l == ell), ZERO)
                         for ell in range(2, ell_max + 1)]
    return {"alpha_hat": alpha_hat, "level_sets": dict(p)}


def exact_hitting_prob(tmap, U: IntervalUnion, K: int,
                       start: Optional[IntervalUnion] = None) -> Fraction:
    """``P(τ_U <= K)`` with ``τ_U = min{k >= 1 : T^k x ∈ U}``, ``x`` uniform on ``start``."""
    if K < 1:
        raise ValueError("K must be at least 1")
    start = IntervalUnion.full() if start is None else start

    def update(acc, t, inside):
        if t >= 1 and inside:
            return True, True
        return False, False

    law = support_chain(tmap, U, start, K + 1, update, False)
    return law.get(True, ZERO)


def exact_cluster_sizes(tmap, U: IntervalUnion, K: int, ell_max: int,
                        max_atoms: Optional[int] = None) -> list:
    """``λ_ℓ(K, U)``, ``ℓ = 1..ell_max``: law of visits in ``2K+1`` steps given one."""
    pmf = exact_rare_event_pmf(tmap, U, 2 * K + 1, max_atoms=max_atoms)
    p0 = pmf.masses[0]
    if p0 == 1:
        raise ValueError("U is never visited; cluster sizes undefined")
    return [pmf.mass(ell) / (1 - p0) for ell in range(1, ell_max + 1)]


# ---------------------------------------------------------------------------
# Mixing
# ---------------------------------------------------------------------------


def cylinder_words(tmap, n: int) -> list:
    return list(itertools.product(range(tmap.m), repeat=n))


@lru_cache(maxsize=None)
def _preimage_measures(tmap, j: int, gap_max: int) -> tuple:
    """``μ(T^{-k} b)`` for every ``j``-cylinder ``b`` and ``k = 0..gap_max``."""
    table = []
    for b in cylinder_words(tmap, j):
        S = IntervalUnion([tmap.cylinder(b)])
        row = [S.measure]
        for _ in range(gap_max):
            S = preimage(tmap, S)
            row.append(S.measure)
        table.append((tmap.cylinder_measure(b), tuple(row)))
    return tuple(table)


def phi_mixing_sup(tmap, n: int, j: int, k: int) -> Fraction:
    """Exact ``sup |μ(A ∩ T^{-n-k}B) − μ(A)μ(B)| / μ(A)`` over cylinder unions.

    ``A`` ranges over unions of ``n``-cylinders and ``B`` over unions of
    ``j``-cylinders. With ``d(a, b)`` the deviation for single cylinders the
    supremum equals ``max_a max(Σ_b d(a,b)^+, Σ_b d(a,b)^-) / μ(a)``: for a
    fixed ``A`` the best ``B`` collects one sign, and a ratio of sums is at
    most the largest single ratio.
    """
    # μ(a ∩ T^{-n}E) = μ(a) μ(E): T^n maps the cylinder a affinely onto [0, 1).
    pre_b = _preimage_measures(tmap, j, max(k, 12))
    best = ZERO
    for a in cylinder_words(tmap, n):
        mu_a = tmap.cylinder_measure(a)
        pos = neg = ZERO
        for mu_b, row in pre_b:
            d = mu_a * row[k] - mu_a * mu_b
            if d > 0:
                pos += d
            else:
                neg -= d
        best = max(best, max(pos, neg) / mu_a)
    return best


def check_phi_certificate(tmap, rate: MixingRate, n_max: int = 6, j_max: int = 6,
                          gap_max: int = 12) -> dict:
    """Worst ratio of the exact mixing deviation to ``rate.phi(k) μ(A)``."""
    worst = ZERO
    cases = 0
    for n in range(1, n_max + 1):
        for j in range(1, j_max + 1):
            for k in range(0, gap_max + 1):
                sup = phi_mixing_sup(tmap, n, j, k)
                worst = max(worst, sup / rate.phi(k))
                cases += 1
    return {"worst_ratio": worst, "cases": cases, "holds": worst <= 1}
