"""Compiled twins of the calibration hot loops.

The pure-NumPy implementations in :mod:`.homotopy` and :mod:`.calibrate` stay
authoritative; this module reproduces the per-hypothesis admission integrals
and the surrounding decision arrays as nopython kernels so that simulation
sweeps and refined-integral grids run at native speed on a single core.

Equivalence contract (enforced by the test suite, not just intended):

* callers pass in the same marginal p-values the reference uses, so ranks,
  q-values, candidate sets, and baseline counts are *bitwise* identical;
* every quantile the integrals depend on -- integration-window edges and the
  statistic-scale location of each rejection threshold -- is computed on the
  Python side with the reference's own inverse-cdf functions, so knot
  positions (threshold crossings) are *bitwise* identical too; a coordinate
  whose value cannot move by half an ulp anywhere in the window is frozen at
  float resolution and compares the reference's SciPy tail of its slide
  offset verbatim, because frozen coordinates routinely tie a threshold
  exactly (candidate levels are rescaled order statistics) and the tie must
  resolve the same way on both paths;
* only interval masses and the moving coordinates' from-scratch counts at
  the sweep's starting points evaluate compiled tail functions (erfc and a
  continued-fraction regularized incomplete beta) in place of SciPy's; these
  agree to ~1e-13 relative, so integrals differ by at most a few ulps of
  accumulated mass; if a moving coordinate's tail lands within a few ulps of
  a rejection threshold at a starting point, its below-threshold count is a
  coin flip between the two tail implementations, so the kernel declines and
  that one candidate is integrated on the reference path instead --
  admission decisions therefore never drift;
* a failed integral yields NaN, which never admits, exactly like the
  reference's exception-to-NaN policy (the reference additionally warns on
  degenerate threshold coincidences; kernels skip them silently -- they
  contribute no knots either way).

Everything here is an internal detail behind the ``engine`` switches in
:func:`depfdr.calibrate.dsu_calibrate` and :class:`depfdr.refine.RefineConfig`.
"""

from __future__ import annotations

import math
import weakref

import numpy as np

try:  # pragma: no cover - exercised implicitly by import
    from numba import njit as _numba_njit

    _HAVE_NUMBA = True

    def _jit(fn):
        return _numba_njit(cache=True, nogil=True)(fn)

except Exception:  # pragma: no cover - numba genuinely absent
    _HAVE_NUMBA = False

    def _jit(fn):
        return fn

from .models import MvtProblem, MvzProblem, _as_t_problem, marginal_pvalues

__all__ = [
    "kernel_available",
    "eligible",
    "dense_correlation",
    "decision_arrays",
    "nested_admitted_count",
    "warmup",
]

#: largest dimension routed to the kernels; beyond this the dense correlation
#: copy dominates and the vectorized reference is the better tool
MAX_KERNEL_M = 2048

_INV_SQRT2 = math.sqrt(0.5)


# ======================================================================
# scalar special functions


@_jit
def _norm_sf(x):
    return 0.5 * math.erfc(x * _INV_SQRT2)


@_jit
def _betainc_cf(a, b, x):
    # modified Lentz continued fraction for the incomplete beta integral
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1.0e-300:
        d = 1.0e-300
    d = 1.0 / d
    h = d
    for mm in range(1, 301):
        m2 = 2 * mm
        aa = mm * (b - mm) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1.0e-300:
            d = 1.0e-300
        c = 1.0 + aa / c
        if abs(c) < 1.0e-300:
            c = 1.0e-300
        d = 1.0 / d
        h *= d * c
        aa = -(a + mm) * (qab + mm) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1.0e-300:
            d = 1.0e-300
        c = 1.0 + aa / c
        if abs(c) < 1.0e-300:
            c = 1.0e-300
        d = 1.0 / d
        dele = d * c
        h *= dele
        if abs(dele - 1.0) < 3.0e-16:
            break
    return h


@_jit
def _betainc_reg(a, b, x, lnbeta):
    # regularized incomplete beta I_x(a, b); lnbeta = ln B(a, b) precomputed
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(a * math.log(x) + b * math.log(1.0 - x) - lnbeta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betainc_cf(a, b, x) / a
    return 1.0 - front * _betainc_cf(b, a, 1.0 - x) / b


@_jit
def _t_sf(x, dfq, lnbeta):
    # sf(|x|) = 0.5 * I_{df/(df+x^2)}(df/2, 1/2), reflected for x < 0
    if x != x:
        return np.nan
    ax = abs(x)
    xb = dfq / (dfq + ax * ax)
    val = 0.5 * _betainc_reg(0.5 * dfq, 0.5, xb, lnbeta)
    return val if x >= 0.0 else 1.0 - val


# tpar packs the per-run t parameters: (df, ln B(df/2, 1/2)); zeros (unused)
# in the z-case.  No inverse cdf lives here: every statistic-scale threshold
# location is computed by the caller with the reference's own quantile
# functions and passed in, so knot positions are bitwise those of the
# reference


@_jit
def _sf_k(x, is_t, tpar):
    if is_t:
        return _t_sf(x, tpar[0], tpar[1])
    return _norm_sf(x)


@_jit
def _cdf_k(x, is_t, tpar):
    if is_t:
        return _t_sf(-x, tpar[0], tpar[1])
    return _norm_sf(-x)


# ======================================================================
# threshold-family helpers (block arrays: values ascending, lo/hi ranks)


@_jit
def _block_of(blo, r):
    # index of the block whose rank range contains r (r >= blo[0])
    lo = 0
    hi = blo.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if blo[mid] <= r:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


@_jit
def _count_le(arr, x):
    # number of entries of a sorted array that are <= x
    lo = 0
    hi = arr.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@_jit
def _q_values(p, bval, blo):
    m = p.size
    order = np.argsort(p, kind="mergesort")
    ratios = np.empty(m)
    b = 0
    for k in range(m):
        rank = k + 1
        while b + 1 < blo.size and blo[b + 1] <= rank:
            b += 1
        bv = bval[b]
        ratios[k] = m * p[order[k]] / bv if bv > 0.0 else np.inf
    q = np.empty(m)
    run = np.inf
    for k in range(m - 1, -1, -1):
        if ratios[k] < run:
            run = ratios[k]
        q[order[k]] = run
    return q


@_jit
def _stepup_count(p_sorted, bval, blo, bhi, level):
    # largest rank whose sorted p-value clears its threshold; blocks share
    # a threshold, so the first feasible block from the top attains the max
    m = p_sorted.size
    for b in range(bval.size - 1, -1, -1):
        v = level * bval[b] / m
        n = _count_le(p_sorted, v)
        if n >= blo[b]:
            return n if n < bhi[b] else bhi[b]
    return 0


@_jit
def _full_count(nb, blo, bhi):
    best = 0
    for b in range(nb.size):
        n = nb[b]
        if n >= blo[b]:
            c = n if n < bhi[b] else bhi[b]
            if c > best:
                best = c
    return best


@_jit
def _apply_knots(nb, blo, bhi, kb, kd, k0, k1, r_cur):
    # apply the same-location knot group [k0, k1); returns the updated count
    # or -1 when the below-threshold bookkeeping leaves [0, m]
    m_total = bhi[bhi.size - 1]
    for k in range(k0, k1):
        b = kb[k]
        nb[b] += kd[k]
        if nb[b] < 0 or nb[b] > m_total:
            return -1
    if k1 - k0 > 1:
        return _full_count(nb, blo, bhi)
    b = kb[k0]
    if kd[k0] > 0:
        n = nb[b]
        cand = (n if n < bhi[b] else bhi[b]) if n >= blo[b] else 0
        return cand if cand > r_cur else r_cur
    if r_cur > 0:
        gb0 = _block_of(blo, r_cur)
        if nb[gb0] < r_cur:
            best = 0
            for gb in range(gb0, -1, -1):
                n = nb[gb]
                cand = (n if n < bhi[gb] else bhi[gb]) if n >= blo[gb] else 0
                if cand > best:
                    best = cand
                if gb > 0 and best >= bhi[gb - 1]:
                    break
            return best
    return r_cur


# ======================================================================
# per-level statistic-scale targets (supplied by the caller; +inf marks
# thresholds at p-value <= 0, never crossed or counted, -inf marks
# thresholds at p-value >= 1, always counted)


@_jit
def _finite_asc(tv):
    # finite targets ascending with their block ids (tv descends in block)
    B = tv.size
    n = 0
    for bb in range(B):
        if math.isfinite(tv[bb]):
            n += 1
    tgt = np.empty(n)
    tblk = np.empty(n, np.int64)
    k = 0
    for bb in range(B - 1, -1, -1):
        if math.isfinite(tv[bb]):
            tgt[k] = tv[bb]
            tblk[k] = bb
            k += 1
    return tgt, tblk


@_jit
def _finite_desc_scaled(tv, scale):
    # finite targets descending, divided by scale, with their block ids
    B = tv.size
    n = 0
    for bb in range(B):
        if math.isfinite(tv[bb]):
            n += 1
    tgt = np.empty(n)
    tblk = np.empty(n, np.int64)
    k = 0
    for bb in range(B):
        if math.isfinite(tv[bb]):
            tgt[k] = tv[bb] / scale
            tblk[k] = bb
            k += 1
    return tgt, tblk


# ======================================================================
# knot enumeration


@_jit
def _z_knots(offset, slope, tgt, tblk, w_lo, w_hi, two_sided):
    # crossings of offset_j + slope_j * t with all targets (and their
    # mirrors when two-sided) strictly inside the window, sorted by t
    m = offset.size
    nt = tgt.size
    total = 0
    if nt > 0:
        for j in range(m):
            s = slope[j]
            if s == 0.0:
                continue
            e0 = offset[j] + s * w_lo
            e1 = offset[j] + s * w_hi
            zlo = e0 if e0 < e1 else e1
            zhi = e1 if e0 < e1 else e0
            k0 = _count_le(tgt, zlo)
            k1 = _lower_bound(tgt, zhi)
            if k1 > k0:
                total += k1 - k0
            if two_sided:
                k0n = _count_le(tgt, -zhi)
                k1n = _lower_bound(tgt, -zlo)
                if k1n > k0n:
                    total += k1n - k0n
    kt = np.empty(total)
    kb = np.empty(total, np.int64)
    kd = np.empty(total, np.int64)
    idx = 0
    if nt > 0:
        for j in range(m):
            s = slope[j]
            if s == 0.0:
                continue
            e0 = offset[j] + s * w_lo
            e1 = offset[j] + s * w_hi
            zlo = e0 if e0 < e1 else e1
            zhi = e1 if e0 < e1 else e0
            dirpos = 1 if s > 0.0 else -1
            k0 = _count_le(tgt, zlo)
            k1 = _lower_bound(tgt, zhi)
            for k in range(k0, k1):
                t = (tgt[k] - offset[j]) / s
                if w_lo < t < w_hi:
                    kt[idx] = t
                    kb[idx] = tblk[k]
                    kd[idx] = dirpos
                    idx += 1
            if two_sided:
                k0n = _count_le(tgt, -zhi)
                k1n = _lower_bound(tgt, -zlo)
                for k in range(k0n, k1n):
                    t = (-tgt[k] - offset[j]) / s
                    if w_lo < t < w_hi:
                        kt[idx] = t
                        kb[idx] = tblk[k]
                        kd[idx] = -dirpos
                        idx += 1
    kt = kt[:idx]
    kb = kb[:idx]
    kd = kd[:idx]
    order = np.argsort(kt, kind="mergesort")
    return kt[order], kb[order], kd[order]


@_jit
def _lower_bound(arr, x):
    # number of entries of a sorted array that are < x
    lo = 0
    hi = arr.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@_jit
def _desc_first_lt(tgt, x):
    # first index of a descending array with value < x
    lo = 0
    hi = tgt.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if tgt[mid] >= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@_jit
def _desc_first_le(tgt, x):
    # first index of a descending array with value <= x
    lo = 0
    hi = tgt.size
    while lo < hi:
        mid = (lo + hi) >> 1
        if tgt[mid] > x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@_jit
def _roots_qq(a, b, c):
    # positive roots of a*sqrt(1+t^2) + b*t = c (c > 0) with the sign of the
    # map's derivative at each; cancellation-safe quadratic after squaring,
    # spurious roots removed by requiring a*(c - b*t) > 0
    if a == 0.0:
        if b > 0.0:
            return 1, c / b, 1, 0.0, 0
        return 0, 0.0, 0, 0.0, 0
    disc = b * b + c * c - a * a
    if disc <= 0.0:
        return 0, 0.0, 0, 0.0, 0
    quad_a = a * a - b * b
    quad_b = 2.0 * b * c
    quad_c = a * a - c * c
    if quad_a == 0.0:
        c0 = -quad_c / quad_b
        c1 = 0.0
        has1 = False
    else:
        root_disc = 2.0 * abs(a) * math.sqrt(disc)
        qq = -0.5 * (quad_b + math.copysign(root_disc, quad_b))
        c0 = qq / quad_a
        c1 = quad_c / qq
        has1 = True
    n = 0
    r0 = 0.0
    d0 = 0
    r1 = 0.0
    d1 = 0
    if c0 > 0.0 and a * (c - b * c0) > 0.0:
        sl = 1 if a * c0 / math.sqrt(1.0 + c0 * c0) + b > 0.0 else -1
        r0 = c0
        d0 = sl
        n = 1
    if has1 and c1 > 0.0 and a * (c - b * c1) > 0.0:
        sl = 1 if a * c1 / math.sqrt(1.0 + c1 * c1) + b > 0.0 else -1
        if n == 0:
            r0 = c1
            d0 = sl
        else:
            r1 = c1
            d1 = sl
        n += 1
    if n == 2 and r1 < r0:
        tmp = r0
        r0 = r1
        r1 = tmp
        tmpd = d0
        d0 = d1
        d1 = tmpd
    return n, r0, d0, r1, d1


@_jit
def _screen(a, b, s_lo, s_hi):
    # exact range of a*sqrt(1+s^2) + b*s over (s_lo, s_hi), 0 < s_lo < s_hi
    v_lo = a * math.sqrt(1.0 + s_lo * s_lo) + b * s_lo
    v_hi = a * math.sqrt(1.0 + s_hi * s_hi) + b * s_hi
    lo = v_lo if v_lo <= v_hi else v_hi
    hi = v_hi if v_lo <= v_hi else v_lo
    if abs(a) > abs(b) and a * b < 0.0:
        t_star = math.sqrt(b * b / (a * a - b * b))
        if s_lo < t_star < s_hi:
            m_star = math.copysign(math.sqrt(a * a - b * b), a)
            if m_star < lo:
                lo = m_star
            if m_star > hi:
                hi = m_star
    return lo, hi


@_jit
def _t_knots(rad, slp, tgt_desc, tblk_desc, w_lo, w_hi, dfq, two_sided):
    # crossings of rad_j*sqrt(df+t^2) + slp_j*t with all targets strictly
    # inside a window lying on one side of 0, via the s = t/sqrt(df)
    # substitution; per-coordinate range screening prunes unreachable targets
    m = rad.size
    df_sqrt = math.sqrt(dfq)
    reflected = w_hi < 0.0
    if reflected:
        s_lo = -w_hi / df_sqrt
        s_hi = -w_lo / df_sqrt
        dir_mult = -1
        b_sign = -1.0
    else:
        s_lo = w_lo / df_sqrt
        s_hi = w_hi / df_sqrt
        dir_mult = 1
        b_sign = 1.0
    n_maps = 2 if two_sided else 1
    total = 0
    for mi in range(n_maps):
        msign = 1.0 if mi == 0 else -1.0
        for j in range(m):
            a_j = msign * rad[j]
            b_j = msign * b_sign * slp[j]
            if a_j == 0.0 and b_j == 0.0:
                continue
            lo_v, hi_v = _screen(a_j, b_j, s_lo, s_hi)
            k0 = _desc_first_lt(tgt_desc, hi_v)
            k1 = _desc_first_le(tgt_desc, lo_v)
            if k1 > k0:
                total += 2 * (k1 - k0)
    kt = np.empty(total)
    kb = np.empty(total, np.int64)
    kd = np.empty(total, np.int64)
    idx = 0
    for mi in range(n_maps):
        msign = 1.0 if mi == 0 else -1.0
        for j in range(m):
            a_j = msign * rad[j]
            b_j = msign * b_sign * slp[j]
            if a_j == 0.0 and b_j == 0.0:
                continue
            lo_v, hi_v = _screen(a_j, b_j, s_lo, s_hi)
            k0 = _desc_first_lt(tgt_desc, hi_v)
            k1 = _desc_first_le(tgt_desc, lo_v)
            for k in range(k0, k1):
                cv = tgt_desc[k]
                if cv > 0.0:
                    nr, r0, d0, r1, d1 = _roots_qq(a_j, b_j, cv)
                    flip = 1
                elif cv < 0.0:
                    nr, r0, d0, r1, d1 = _roots_qq(-a_j, -b_j, -cv)
                    flip = -1
                else:
                    continue
                for which in range(nr):
                    s_root = r0 if which == 0 else r1
                    d_root = d0 if which == 0 else d1
                    if s_lo < s_root < s_hi:
                        t = s_root * df_sqrt * (-1.0 if reflected else 1.0)
                        if w_lo < t < w_hi:
                            kt[idx] = t
                            kb[idx] = tblk_desc[k]
                            kd[idx] = flip * d_root * dir_mult
                            idx += 1
    kt = kt[:idx]
    kb = kb[:idx]
    kd = kd[:idx]
    order = np.argsort(kt, kind="mergesort")
    return kt[order], kb[order], kd[order]


# ======================================================================
# the merged two-level sweep over one window


@_jit
def _init_counts(a, b, is_t, tpar, two_sided, t0, tmax, vraw, B, pp):
    # from-scratch below-threshold count of every block at t0, with two
    # protections that keep ties resolved bitwise like the reference:
    #
    # * a z-case coordinate whose slope cannot move its value by even half an
    #   ulp anywhere in the window (|b| * tmax < |a| * 2^-54) is frozen at
    #   float resolution; the reference then evaluates its tail at exactly
    #   ``a``, and the caller supplies that SciPy value in ``pp`` -- such
    #   coordinates routinely tie a threshold *exactly*, because candidate
    #   levels are rescaled order statistics;
    # * a moving coordinate whose tail lands within a few ulps of a threshold
    #   is a genuine coin flip between the compiled and SciPy tails, so the
    #   whole integral is declared ambiguous (flag 1) and the caller reruns
    #   that candidate on the reference path
    m = a.size
    p = np.empty(m)
    nb = np.zeros(B, np.int64)
    moving = np.empty(m, np.bool_)
    if is_t:
        root = math.sqrt(tpar[0] + t0 * t0)
        for j in range(m):
            x = a[j] * root + b[j] * t0
            if two_sided:
                p[j] = 2.0 * _t_sf(abs(x), tpar[0], tpar[1])
            else:
                p[j] = _t_sf(x, tpar[0], tpar[1])
            moving[j] = True
    else:
        for j in range(m):
            # strict half-ulp bound: |b * t| < |a| * 2^-54 for all |t| <= tmax
            # means a + b*t rounds back to a throughout the window
            if abs(b[j]) * tmax < abs(a[j]) * 5.551115123125783e-17:
                p[j] = pp[j]
                moving[j] = False
            else:
                x = a[j] + b[j] * t0
                if two_sided:
                    p[j] = 2.0 * _norm_sf(abs(x))
                else:
                    p[j] = _norm_sf(x)
                moving[j] = True
    for j in range(m):
        if not moving[j]:
            continue
        idx = np.searchsorted(vraw, p[j])
        if idx > 0 and abs(p[j] - vraw[idx - 1]) <= 1.7763568394002505e-15 * vraw[idx - 1]:
            return nb, True
        if idx < B and abs(p[j] - vraw[idx]) <= 1.7763568394002505e-15 * vraw[idx]:
            return nb, True
    p.sort()
    for bb in range(B):
        nb[bb] = _count_le(p, vraw[bb])
    return nb, False


@_jit
def _run_mass(start, end, negative, is_t, tpar):
    if negative:
        mass = _cdf_k(end, is_t, tpar) - _cdf_k(start, is_t, tpar)
    else:
        mass = _sf_k(start, is_t, tpar) - _sf_k(end, is_t, tpar)
    return mass if mass > 0.0 else 0.0


@_jit
def _window_g(a, b, pp, is_t, tpar, two_sided, negative, w_lo, w_hi,
              vc_raw, vg_raw, tvc, tvg, blo, bhi,
              ktc, kbc, kdc, ktg, kbg, kdg):
    # integrate 1{level-c rejects i} / (count at level gamma*alpha, i
    # adjoined) over one window; both counts are piecewise constant between
    # knots, and consecutive accepted intervals sharing a denominator are
    # coalesced so tail masses are evaluated only at change points.
    # Returns -1.0 when an initial count is ambiguous at float resolution
    B = blo.size
    nc = ktc.size
    ng = ktg.size
    tmax = abs(w_lo) if abs(w_lo) > abs(w_hi) else abs(w_hi)
    t0c = 0.5 * (w_lo + (ktc[0] if nc > 0 else w_hi))
    nbc, ambc = _init_counts(a, b, is_t, tpar, two_sided, t0c, tmax,
                             vc_raw, B, pp)
    if ambc:
        return -1.0
    rc = _full_count(nbc, blo, bhi)
    t0g = 0.5 * (w_lo + (ktg[0] if ng > 0 else w_hi))
    nbg, ambg = _init_counts(a, b, is_t, tpar, two_sided, t0g, tmax,
                             vg_raw, B, pp)
    if ambg:
        return -1.0
    rg = _full_count(nbg, blo, bhi)
    g_sum = 0.0
    ic = 0
    ig = 0
    e_prev = w_lo
    run_active = False
    run_start = 0.0
    run_denom = 1
    while True:
        tc_next = ktc[ic] if ic < nc else np.inf
        tg_next = ktg[ig] if ig < ng else np.inf
        t_next = tc_next if tc_next < tg_next else tg_next
        e_next = t_next if t_next < w_hi else w_hi
        if e_next > e_prev:
            mid = 0.5 * (e_prev + e_next)
            if rc >= 1:
                tb = tvc[_block_of(blo, rc)]
                acc = (mid >= tb) if not negative else (mid <= -tb)
            else:
                acc = False
            if acc:
                if rg >= 1:
                    tg_b = tvg[_block_of(blo, rg)]
                    bump = (mid < tg_b) if not negative else (mid > -tg_b)
                else:
                    bump = True
                den = rg + (1 if bump else 0)
                if run_active:
                    if den != run_denom:
                        g_sum += _run_mass(run_start, e_prev, negative,
                                           is_t, tpar) / run_denom
                        run_start = e_prev
                        run_denom = den
                else:
                    run_active = True
                    run_start = e_prev
                    run_denom = den
            else:
                if run_active:
                    g_sum += _run_mass(run_start, e_prev, negative,
                                       is_t, tpar) / run_denom
                    run_active = False
            e_prev = e_next
        if t_next >= w_hi:
            break
        jc = ic
        while jc < nc and ktc[jc] == t_next:
            jc += 1
        jg = ig
        while jg < ng and ktg[jg] == t_next:
            jg += 1
        if jc > ic:
            rc = _apply_knots(nbc, blo, bhi, kbc, kdc, ic, jc, rc)
            if rc < 0:
                return np.nan
            ic = jc
        if jg > ig:
            rg = _apply_knots(nbg, blo, bhi, kbg, kdg, ig, jg, rg)
            if rg < 0:
                return np.nan
            ig = jg
    if run_active:
        g_sum += _run_mass(run_start, e_prev, negative, is_t, tpar) / run_denom
    return g_sum


@_jit
def _exact_g_kernel(a, b, pp, is_t, tpar, two_sided, c, tvc, tvg, vg_raw,
                    bval, blo, bhi, teps_in, w_lo, w_hi1, w_hi2):
    # admission integral of one candidate at level c; NaN on any failure,
    # -1.0 when a tie makes the integral ambiguous at float resolution.
    # Windows and statistic-scale targets arrive precomputed with the
    # reference's quantile functions; w_hi2 is the once-widened far edge
    m = bhi[bhi.size - 1]
    if is_t and (not two_sided) and c >= 0.5:
        return np.nan
    teps = teps_in
    if teps <= 0.0:
        teps = min(1.0e-14, c / 10.0)
    if math.isfinite(w_lo) and math.isfinite(w_hi1) and w_lo < w_hi1:
        w_hi = w_hi1
    else:
        teps = max(teps, 1.0e-12)
        if math.isfinite(w_lo) and math.isfinite(w_hi2) and w_lo < w_hi2:
            w_hi = w_hi2
        else:
            return np.nan
    if is_t and w_lo <= 0.0:
        return np.nan
    B = bval.size
    vc_raw = np.empty(B)
    for bb in range(B):
        vc_raw[bb] = c * bval[bb] / m
    if is_t:
        df_sqrt = math.sqrt(tpar[0])
        tgc, tbc = _finite_desc_scaled(tvc, df_sqrt)
        tgg, tbg = _finite_desc_scaled(tvg, df_sqrt)
        ktc, kbc, kdc = _t_knots(a, b, tgc, tbc, w_lo, w_hi, tpar[0],
                                 two_sided)
        ktg, kbg, kdg = _t_knots(a, b, tgg, tbg, w_lo, w_hi, tpar[0],
                                 two_sided)
    else:
        tgc, tbc = _finite_asc(tvc)
        tgg, tbg = _finite_asc(tvg)
        ktc, kbc, kdc = _z_knots(a, b, tgc, tbc, w_lo, w_hi, two_sided)
        ktg, kbg, kdg = _z_knots(a, b, tgg, tbg, w_lo, w_hi, two_sided)
    total = _window_g(a, b, pp, is_t, tpar, two_sided, False, w_lo, w_hi,
                      vc_raw, vg_raw, tvc, tvg, blo, bhi,
                      ktc, kbc, kdc, ktg, kbg, kdg)
    if total == -1.0:
        return -1.0
    if not math.isfinite(total):
        return np.nan
    if two_sided:
        if is_t:
            ktc2, kbc2, kdc2 = _t_knots(a, b, tgc, tbc, -w_hi, -w_lo,
                                        tpar[0], two_sided)
            ktg2, kbg2, kdg2 = _t_knots(a, b, tgg, tbg, -w_hi, -w_lo,
                                        tpar[0], two_sided)
        else:
            ktc2, kbc2, kdc2 = _z_knots(a, b, tgc, tbc, -w_hi, -w_lo,
                                        two_sided)
            ktg2, kbg2, kdg2 = _z_knots(a, b, tgg, tbg, -w_hi, -w_lo,
                                        two_sided)
        neg = _window_g(a, b, pp, is_t, tpar, two_sided, True,
                        -w_hi, -w_lo, vc_raw, vg_raw, tvc, tvg, blo, bhi,
                        ktc2, kbc2, kdc2, ktg2, kbg2, kdg2)
        if neg == -1.0:
            return -1.0
        if not math.isfinite(neg):
            return np.nan
        total += neg
    return total + teps


# ======================================================================
# the full decision-array kernel


@_jit
def _dsu_arrays(z, p, corr, is_t, dfq, sig2, two_sided, alpha, gamma,
                bval, blo, bhi, teps_in, cand, w_lo_arr, w_hi1_arr,
                w_hi2_arr, tvc_all, tvg, pp_all):
    m = p.size
    tpar = np.zeros(2)
    if is_t:
        tpar[0] = dfq
        tpar[1] = (math.lgamma(0.5 * dfq) + math.lgamma(0.5)
                   - math.lgamma(0.5 * dfq + 0.5))
    q = _q_values(p, bval, blo)
    p_sorted = np.sort(p)
    glev = gamma * alpha
    r0 = _stepup_count(p_sorted, bval, blo, bhi, glev)
    thr0 = glev * bval[_block_of(blo, r0)] / m if r0 > 0 else 0.0
    r_hat = np.empty(m, np.int64)
    for i in range(m):
        if r0 > 0 and p[i] <= thr0:
            r_hat[i] = r0
        else:
            r_hat[i] = r0 + 1
    g = np.full(m, np.nan)
    in_plus = np.zeros(m, np.bool_)
    bound = alpha / m
    B = bval.size
    vg_raw = np.empty(B)
    for bb in range(B):
        vg_raw[bb] = glev * bval[bb] / m
    a = np.empty(m)
    b = np.empty(m)
    for k in range(cand.size):
        i = cand[k]
        c = q[i]
        if c == 0.0:
            g[i] = 0.0
            in_plus[i] = True
            continue
        zi = z[i]
        if is_t:
            v = dfq * sig2 + zi * zi
            sq = math.sqrt(v)
            for j in range(m):
                b[j] = corr[j, i]
                a[j] = (z[j] - b[j] * zi) / sq
            a[i] = 0.0
        else:
            for j in range(m):
                b[j] = corr[j, i]
                a[j] = z[j] - b[j] * zi
            a[i] = 0.0
        gi = _exact_g_kernel(a, b, pp_all[k], is_t, tpar, two_sided, c,
                             tvc_all[k], tvg, vg_raw, bval, blo, bhi,
                             teps_in, w_lo_arr[k], w_hi1_arr[k],
                             w_hi2_arr[k])
        g[i] = gi
        in_plus[i] = (gi >= 0.0) and (gi <= bound)
    return q, g, r_hat, in_plus


# ======================================================================
# python-side API


def kernel_available() -> bool:
    """True when the compiled kernels can run (numba imported)."""
    return _HAVE_NUMBA


def eligible(problem) -> bool:
    """True when this problem's decision arrays can come from the kernels."""
    if not _HAVE_NUMBA:
        return False
    problem = _as_t_problem(problem)
    if not isinstance(problem, (MvzProblem, MvtProblem)):
        return False
    return problem.m <= MAX_KERNEL_M


_DENSE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def dense_correlation(cov) -> np.ndarray:
    """Dense copy of a correlation, built column-by-column so each column is
    bitwise the array the reference reads, cached per covariance object."""
    got = _DENSE_CACHE.get(cov)
    if got is None:
        m = cov.m
        got = np.empty((m, m))
        for i in range(m):
            got[:, i] = cov.column(i)
        _DENSE_CACHE[cov] = got
    return got


def _family_arrays(fam):
    return (np.ascontiguousarray(fam.block_values, dtype=np.float64),
            np.ascontiguousarray(fam.block_lo, dtype=np.int64),
            np.ascontiguousarray(fam.block_hi, dtype=np.int64))


def _statistic_targets(problem, v):
    """Statistic-scale threshold locations via the reference's quantiles.

    Mirrors the reference's filters bitwise: +inf where the p-value
    threshold is <= 0 (never crossed, never counted), -inf where it is
    >= 1 (always counted); in between, ``isf(v)`` (``isf(v/2)`` two-sided).
    """
    out = np.full(v.shape, -np.inf)
    out[v <= 0.0] = np.inf
    valid = (v > 0.0) & (v < 1.0)
    if np.any(valid):
        arg = v[valid]
        if problem.side == "two":
            arg = arg / 2.0
        out[valid] = problem.isf(arg)
    return out


def decision_arrays(problem, fam, alpha, gamma, tail_eps=None, p=None):
    """Kernel twin of the reference per-run decision arrays.

    Returns ``(q, g, r_hat, in_plus)`` for the unpruned calibrated step-up:
    q-values, admission integrals (NaN off-candidate or on failure),
    leave-one-out baseline counts, and the admitted mask.  ``p`` should be
    the problem's marginal p-values; passing them in (rather than recomputing)
    keeps ranks and counts bitwise equal to the caller's.
    """
    from .stepup import q_values

    problem = _as_t_problem(problem)
    if p is None:
        p = marginal_pvalues(problem).values
    p = np.ascontiguousarray(p, dtype=np.float64)
    bval, blo, bhi = _family_arrays(fam)
    m = fam.m
    teps = -1.0 if tail_eps is None else float(tail_eps)
    two = problem.side == "two"
    z = np.ascontiguousarray(problem.z, dtype=np.float64)

    q = q_values(p, fam)
    cand = np.flatnonzero(q <= 2.0 * alpha).astype(np.int64)
    cq = q[cand]
    # per-candidate thresholds c * beta / m on the statistic scale; the
    # broadcast reproduces the reference's elementwise float operations
    v_rows = cq[:, None] * bval[None, :] / m
    tvc_all = np.full(v_rows.shape, -np.inf)
    tvc_all[v_rows <= 0.0] = np.inf
    valid = (v_rows > 0.0) & (v_rows < 1.0)
    if valid.any():
        arg = v_rows[valid]
        if two:
            arg = arg / 2.0
        tvc_all[valid] = problem.isf(arg)
    tvc_all = np.ascontiguousarray(tvc_all)
    tvg = np.ascontiguousarray(
        _statistic_targets(problem, fam.distinct_thresholds(gamma * alpha)))
    # integration windows: near edge at the candidate level, far edge at the
    # truncation mass and at its once-widened fallback
    with np.errstate(divide="ignore"):
        if tail_eps is None:
            teps1 = np.minimum(1.0e-14, cq / 10.0)
        else:
            teps1 = np.full(cand.size, float(tail_eps))
        teps2 = np.maximum(teps1, 1.0e-12)
        if two:
            w_lo = problem.isf(cq / 2.0)
            w_hi1 = problem.isf(teps1 / 2.0)
            w_hi2 = problem.isf(teps2 / 2.0)
        else:
            w_lo = problem.isf(cq)
            w_hi1 = problem.isf(teps1)
            w_hi2 = problem.isf(teps2)
    w_lo = np.ascontiguousarray(w_lo, dtype=np.float64)
    w_hi1 = np.ascontiguousarray(w_hi1, dtype=np.float64)
    w_hi2 = np.ascontiguousarray(w_hi2, dtype=np.float64)

    if isinstance(problem, MvzProblem):
        corr = dense_correlation(problem.cov)
        # slide offsets z_j - corr[j, i] * z_i for every candidate i; a
        # coordinate frozen at float resolution compares the reference's
        # SciPy tail of its offset instead of the compiled tail
        off = z[None, :] - corr[:, cand].T * z[cand][:, None]
        off[np.arange(cand.size), cand] = 0.0
        pp_all = np.ascontiguousarray(problem.tail_p(off), dtype=np.float64)
        out = _dsu_arrays(z, p, corr, False, 0.0, 0.0, two,
                          float(alpha), float(gamma), bval, blo, bhi, teps,
                          cand, w_lo, w_hi1, w_hi2, tvc_all, tvg, pp_all)
    else:
        corr = dense_correlation(problem.psi)
        pp_all = np.zeros((cand.size, m))
        out = _dsu_arrays(z, p, corr, True, float(problem.df),
                          float(problem.sigma_hat_sq), two,
                          float(alpha), float(gamma), bval, blo, bhi, teps,
                          cand, w_lo, w_hi1, w_hi2, tvc_all, tvg, pp_all)
    q_out, g, r_hat, in_plus = out
    if not np.array_equal(q_out, q):
        raise RuntimeError(
            "kernel q-values diverged from the reference ranking; the "
            "compiled path cannot be trusted for this input")
    amb = np.flatnonzero(g == -1.0)
    if amb.size:
        # a moving coordinate tied a threshold at float resolution, so the
        # compiled tails cannot resolve the count; integrate those candidates
        # on the reference path, mirroring its exception-to-NaN policy
        from .homotopy import exact_g
        from .models import conditioning_statistic
        from .stepup import NumericError

        level = float(gamma) * float(alpha)
        for raw in amb:
            i = int(raw)
            try:
                cond = conditioning_statistic(problem, i)
                gi = exact_g(problem, i, cond, float(q[i]), level, fam,
                             tail_eps=tail_eps)
            except (NumericError, ValueError, ArithmeticError):
                gi = float("nan")
            g[i] = gi
        with np.errstate(invalid="ignore"):
            in_plus[amb] = g[amb] <= alpha / m
    return q_out, g, r_hat, in_plus


def nested_admitted_count(problem, fam, alpha, gamma, tail_eps, i) -> int:
    """Admitted count of an unpruned run on ``problem`` with ``i`` adjoined."""
    q, g, r_hat, in_plus = decision_arrays(problem, fam, alpha, gamma,
                                           tail_eps)
    count = int(np.count_nonzero(in_plus))
    return count if bool(in_plus[i]) else count + 1


def warmup() -> bool:
    """Force kernel compilation on tiny problems; returns availability."""
    if not _HAVE_NUMBA:
        return False
    from .stepup import ThresholdFamily

    rng = np.random.default_rng(0)
    fam = ThresholdFamily.dense(4)
    zp = MvzProblem(rng.standard_normal(4), _warm_cov(), "two")
    decision_arrays(zp, fam, 0.1, 0.9)
    tp = MvtProblem(rng.standard_normal(4), _warm_cov(), 8, 1.1, "two")
    decision_arrays(tp, fam, 0.1, 0.9)
    return True


def _warm_cov():
    from .models import ArCovariance

    return ArCovariance(4, 0.3)
