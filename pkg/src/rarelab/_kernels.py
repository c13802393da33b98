"""Orbit-sampling kernels with a numba backend and a pure-numpy fallback.

Both backends consume the same counter-based random numbers and perform the
same floating-point operations in the same order, so their outputs are
bit-identical. The backend is chosen once at import time from the
``RARELAB_BACKEND`` environment variable (``numba`` or ``numpy``); when numba
is requested but cannot be imported the numpy path is used.

Orbit construction
------------------
Forward iteration of an expanding map in floating point loses one bit per
step and collapses onto a dyadic orbit after about fifty steps. The kernels
therefore never iterate forward. A sample orbit ``x_0, ..., x_{H-1}`` is
built from its symbolic itinerary: the symbols ``s_0, ..., s_{H-2}`` and the
final point ``x_{H-1}`` are drawn first and the orbit is recovered backwards
through the inverse branches ``x_k = left[s_k] + length[s_k] * x_{k+1}``,
which contract rounding errors instead of amplifying them.

For a start distribution that is uniform on a set ``J_0`` (the whole circle
for stationary sampling, a target set for conditional sampling) the symbols
are drawn by pushing the conditional support forward:
``s_k`` has probability ``|J_k ∩ B_s| / |J_k|`` and
``J_{k+1} = T_s(J_k ∩ B_s)``. Once ``J_k`` is the whole circle it stays so
and the remaining symbols are independent with probabilities equal to the
branch lengths. The result is an exact draw of the orbit of a uniform point
of ``J_0`` up to rounding in the last place.

Random numbers
--------------
Draw ``k`` of sample ``i`` is position ``(i << 32) | k`` of a SplitMix64
stream keyed by ``base``, so results do not depend on how samples are split
across chunks or threads.
"""

from __future__ import annotations

import os

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = (1 << 64) - 1
_INV53 = 1.0 / 9007199254740992.0

U_GOLDEN = np.uint64(GOLDEN)
U_MIX1 = np.uint64(_MIX1)
U_MIX2 = np.uint64(_MIX2)
U30 = np.uint64(30)
U27 = np.uint64(27)
U31 = np.uint64(31)
U11 = np.uint64(11)
U32 = np.uint64(32)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python integer."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def stream_base(seed: int, stream: int) -> int:
    """Key of the substream ``stream`` of generator ``seed``."""
    return mix64(mix64(seed & _MASK) ^ mix64((stream + 1) * GOLDEN))


def _mix_np(z):
    z = (z ^ (z >> U30)) * U_MIX1
    z = (z ^ (z >> U27)) * U_MIX2
    return z ^ (z >> U31)


def uniforms_np(base: int, positions: np.ndarray) -> np.ndarray:
    """Uniform doubles in [0, 1) at the given stream positions."""
    z = np.uint64(base) + positions.astype(np.uint64) * U_GOLDEN
    return (_mix_np(z) >> U11).astype(np.float64) * _INV53


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _invcdf_np(A, B, u):
    """Point of the union of rows ``[A, B)`` at relative mass ``u``."""
    L = B - A
    cum = np.cumsum(L, axis=1)
    tot = cum[:, -1]
    t = u * tot
    above = cum > t[:, None]
    found = above.any(axis=1)
    q = np.argmax(above, axis=1)
    rows = np.arange(A.shape[0])
    cprev = np.where(q > 0, cum[rows, np.maximum(q - 1, 0)], 0.0)
    y = A[rows, q] + (t - cprev)
    if not found.all():
        # u * tot rounded up to tot: fall back to the left end of the last
        # nonempty piece (probability of order 2**-53).
        nonempty = L > 0.0
        last = L.shape[1] - 1 - np.argmax(nonempty[:, ::-1], axis=1)
        y = np.where(found, y, A[rows, last])
    return y


def _branch_np(y, rights):
    s = np.searchsorted(rights, y, side="right")
    return np.minimum(s, rights.shape[0] - 1)


def _simulate_np(base, first, n, lefts, lens, slopes, rights, ua, ub,
                 ja, jb, pts, rho, horizon, win_lo, win_hi, nfirst,
                 out_count, out_first, out_mind):
    npts = pts.shape[0]
    idx = np.arange(first, first + n, dtype=np.uint64)
    row = idx << U32

    def draw(k):
        z = np.uint64(base) + (row | np.uint64(k)) * U_GOLDEN
        return (_mix_np(z) >> U11).astype(np.float64) * _INV53

    A = np.tile(ja, (n, 1))
    B = np.tile(jb, (n, 1))
    full = ((A == 0.0) & (B == 1.0)).any(axis=1)
    depth = np.zeros(n, dtype=np.int64)
    prefix = []
    k = 0
    while k < horizon - 1 and not full.all():
        act = np.nonzero(~full)[0]
        u = draw(k)[act]
        Aa = A[act]
        Ba = B[act]
        s = _branch_np(_invcdf_np(Aa, Ba, u), rights)
        lo = lefts[s][:, None]
        hi = rights[s][:, None]
        sl = slopes[s][:, None]
        a2 = np.maximum(Aa, lo)
        b2 = np.minimum(Ba, hi)
        keep = b2 > a2
        na = np.where(a2 == lo, 0.0, sl * (a2 - lo))
        nbnd = np.where(b2 == hi, 1.0, sl * (b2 - lo))
        A[act] = np.where(keep, na, 0.0)
        B[act] = np.where(keep, nbnd, 0.0)
        sym = np.full(n, -1, dtype=np.int64)
        sym[act] = s
        prefix.append(sym)
        depth[act] += 1
        full = ((A == 0.0) & (B == 1.0)).any(axis=1)
        k += 1

    u = draw(horizon - 1)
    if full.all():
        x = u
    else:
        x = np.where(full, u, _invcdf_np(A, B, u))

    count = np.zeros(n, dtype=np.int64)
    ring = np.full((n, max(nfirst, 1)), -1, dtype=np.int64)
    mind = np.full(n, np.inf)
    for k in range(horizon - 1, -1, -1):
        if k < horizon - 1:
            s = _branch_np(draw(k), rights)
            if k < len(prefix):
                s = np.where(k < depth, prefix[k], s)
            x = lefts[s] + lens[s] * x
        if npts > 0:
            q = np.searchsorted(pts, x, side="right") - 1
            lower = np.where(q >= 0, pts[np.maximum(q, 0)], pts[npts - 1] - 1.0)
            upper = np.where(q + 1 < npts, pts[np.minimum(q + 1, npts - 1)],
                             pts[0] + 1.0)
            d = np.minimum(x - lower, upper - x)
            if win_lo <= k < win_hi:
                mind = np.minimum(mind, d)
            hit = d < rho
        else:
            q = np.searchsorted(ua, x, side="right") - 1
            hit = (q >= 0) & (x < ub[np.maximum(q, 0)])
        if not win_lo <= k < win_hi:
            continue
        count += hit
        if nfirst > 0 and hit.any():
            h = np.nonzero(hit)[0]
            # visits arrive in decreasing time order; keep the earliest ones
            ring[h, 1:] = ring[h, :-1]
            ring[h, 0] = k
    out_count[:] = count
    out_mind[:n] = mind
    if nfirst > 0:
        out_first[:n] = ring[:, :nfirst]


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

_BACKEND = os.environ.get("RARELAB_BACKEND", "numba").strip().lower()
if _BACKEND not in ("numba", "numpy"):
    raise ValueError(
        f"RARELAB_BACKEND must be 'numba' or 'numpy', got {_BACKEND!r}")

_simulate_nb = None
if _BACKEND == "numba":
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - exercised only without numba
        _BACKEND = "numpy"

if _BACKEND == "numba":

    @njit(inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> U30)) * U_MIX1
        z = (z ^ (z >> U27)) * U_MIX2
        return z ^ (z >> U31)

    @njit(inline="always")
    def _draw_nb(base, row, k):
        z = base + (row | np.uint64(k)) * U_GOLDEN
        return np.float64(_mix_nb(z) >> U11) * _INV53

    @njit(inline="always")
    def _branch_nb(y, rights):
        nb = rights.shape[0]
        s = 0
        while s < nb - 1 and y >= rights[s]:
            s += 1
        return s

    @njit(inline="always")
    def _invcdf_nb(A, B, u):
        m = A.shape[0]
        tot = 0.0
        for q in range(m):
            tot += B[q] - A[q]
        t = u * tot
        c = 0.0
        for q in range(m):
            c2 = c + (B[q] - A[q])
            if c2 > t:
                return A[q] + (t - c)
            c = c2
        for q in range(m - 1, -1, -1):
            if B[q] - A[q] > 0.0:
                return A[q]
        return 0.0

    @njit(nogil=True, cache=True)
    def _simulate_nb(base, first, n, lefts, lens, slopes, rights, ua, ub,
                     ja, jb, pts, rho, horizon, win_lo, win_hi, nfirst,
                     out_count, out_first, out_mind):
        m = ja.shape[0]
        nu = ua.shape[0]
        npts = pts.shape[0]
        A = np.empty(m)
        B = np.empty(m)
        prefix = np.empty(max(horizon, 1), dtype=np.int64)
        ring = np.empty(max(nfirst, 1), dtype=np.int64)
        ubase = np.uint64(base)
        for r in range(n):
            row = np.uint64(first + r) << U32
            full = False
            for q in range(m):
                A[q] = ja[q]
                B[q] = jb[q]
                if A[q] == 0.0 and B[q] == 1.0:
                    full = True
            depth = 0
            while (not full) and depth < horizon - 1:
                u = _draw_nb(ubase, row, depth)
                s = _branch_nb(_invcdf_nb(A, B, u), rights)
                lo = lefts[s]
                hi = rights[s]
                sl = slopes[s]
                for q in range(m):
                    a2 = max(A[q], lo)
                    b2 = min(B[q], hi)
                    if b2 > a2:
                        A[q] = 0.0 if a2 == lo else sl * (a2 - lo)
                        B[q] = 1.0 if b2 == hi else sl * (b2 - lo)
                    else:
                        A[q] = 0.0
                        B[q] = 0.0
                prefix[depth] = s
                depth += 1
                for q in range(m):
                    if A[q] == 0.0 and B[q] == 1.0:
                        full = True
            u = _draw_nb(ubase, row, horizon - 1)
            x = u if full else _invcdf_nb(A, B, u)

            count = 0
            for q in range(nfirst):
                ring[q] = -1
            mind = np.inf
            for k in range(horizon - 1, -1, -1):
                if k < horizon - 1:
                    if k < depth:
                        s = prefix[k]
                    else:
                        s = _branch_nb(_draw_nb(ubase, row, k), rights)
                    x = lefts[s] + lens[s] * x
                inwin = win_lo <= k and k < win_hi
                if npts > 0:
                    lo_i = 0
                    hi_i = npts
                    while lo_i < hi_i:
                        mid = (lo_i + hi_i) >> 1
                        if pts[mid] <= x:
                            lo_i = mid + 1
                        else:
                            hi_i = mid
                    q = lo_i - 1
                    lower = pts[q] if q >= 0 else pts[npts - 1] - 1.0
                    upper = pts[q + 1] if q + 1 < npts else pts[0] + 1.0
                    d = min(x - lower, upper - x)
                    if inwin and d < mind:
                        mind = d
                    hit = d < rho
                else:
                    lo_i = 0
                    hi_i = nu
                    while lo_i < hi_i:
                        mid = (lo_i + hi_i) >> 1
                        if ua[mid] <= x:
                            lo_i = mid + 1
                        else:
                            hi_i = mid
                    q = lo_i - 1
                    hit = q >= 0 and x < ub[q]
                if hit and inwin:
                    count += 1
                    if nfirst > 0:
                        for q in range(nfirst - 1, 0, -1):
                            ring[q] = ring[q - 1]
                        ring[0] = k
            out_count[r] = count
            out_mind[r] = mind
            for q in range(nfirst):
                out_first[r, q] = ring[q]


def backend() -> str:
    """Name of the active backend."""
    return _BACKEND


def simulate_chunk(base, first, n, arrays, horizon, win_lo, win_hi, nfirst,
                   use_backend=None):
    """Simulate samples ``first .. first + n - 1`` and return their records.

    Returns ``(count, first_visits, min_dist)``: the number of visits inside
    ``[win_lo, win_hi)``, the earliest ``nfirst`` of those visit times in
    increasing order padded with ``-1``, and the minimum circle distance to
    the target points over the window (``inf`` without points).
    """
    (lefts, lens, slopes, rights, ua, ub, ja, jb, pts, rho) = arrays
    out_count = np.zeros(n, dtype=np.int64)
    out_first = np.full((n, max(nfirst, 0)), -1, dtype=np.int64)
    out_mind = np.full(n, np.inf)
    if n == 0 or horizon == 0:
        return out_count, out_first, out_mind
    which = use_backend or _BACKEND
    if which == "numba" and _simulate_nb is not None:
        _simulate_nb(np.uint64(base), first, n, lefts, lens, slopes, rights,
                     ua, ub, ja, jb, pts, rho, horizon, win_lo, win_hi,
                     nfirst, out_count, out_first, out_mind)
    else:
        _simulate_np(base, first, n, lefts, lens, slopes, rights, ua, ub,
                     ja, jb, pts, rho, horizon, win_lo, win_hi, nfirst,
                     out_count, out_first, out_mind)
    return out_count, out_first, out_mind
