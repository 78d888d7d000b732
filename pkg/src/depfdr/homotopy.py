"""Exact piecewise-constant rejection-count paths and conditional integrals.

Sliding one statistic while holding its conditioning statistic fixed moves the
whole statistic vector along a one-parameter curve.  The step-up rejection
count along that curve is piecewise constant, changing only at *knots* where
some coordinate's marginal p-value crosses a rejection threshold.  This module
enumerates those knots in closed form (affine crossings for the z-case,
quasi-quadratic roots for the t-case), sweeps them to build the exact count
path, and integrates indicator/count functionals of the path against the
sliding statistic's marginal null distribution with no sampling error beyond
an explicit, conservatively added tail-mass bound.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from .models import MvzProblem, _as_t_problem, reconstruct, slide_coefficients
from .stepup import NumericError, ThresholdFamily

__all__ = [
    "Knot",
    "KnotArray",
    "KnotPath",
    "roots_quasi_quadratic",
    "screen_extrema",
    "knots_gaussian",
    "path",
    "exact_g",
    "acceptance_intervals",
    "dump_knots_csv",
]


# ======================================================================
# knot containers


@dataclass(frozen=True)
class Knot:
    """One threshold crossing.

    ``t``: location on the sliding axis; ``j``: which coordinate crosses;
    ``r``: the smallest rank whose threshold is crossed (for families whose
    ranks share threshold values, the whole block switches together);
    ``direction``: +1 when coordinate j's p-value crosses downward through
    the threshold as t increases (the below-threshold count gains one),
    -1 when upward.
    """

    t: float
    j: int
    r: int
    direction: int


class KnotArray:
    """Columnar array of knots sorted by (t, j, r)."""

    __slots__ = ("t", "j", "r", "direction", "block")

    def __init__(self, t, j, r, direction, block):
        self.t = np.asarray(t, dtype=float)
        self.j = np.asarray(j, dtype=np.int64)
        self.r = np.asarray(r, dtype=np.int64)
        self.direction = np.asarray(direction, dtype=np.int64)
        # index into the family's distinct-threshold blocks; same information
        # as r but positional
        self.block = np.asarray(block, dtype=np.int64)

    def __len__(self):
        return self.t.size

    def __getitem__(self, k) -> Knot:
        return Knot(float(self.t[k]), int(self.j[k]), int(self.r[k]),
                    int(self.direction[k]))

    def __iter__(self):
        return (self[k] for k in range(len(self)))


@dataclass(frozen=True, eq=False)
class KnotPath:
    """Piecewise-constant rejection count along the sliding axis.

    ``counts[k]`` is the step-up count on the open interval between knot
    ``k-1`` and knot ``k`` (``counts[0]``: left of the first knot,
    ``counts[-1]``: right of the last), within ``window``.
    """

    knots: KnotArray
    counts: np.ndarray
    window: tuple[float, float]

    def __post_init__(self):
        if self.counts.size != len(self.knots) + 1:
            raise ValueError("counts must have one more entry than knots")

    def value_at(self, t):
        """Count at ``t`` (scalar or array); at a knot, the right limit."""
        idx = np.searchsorted(self.knots.t, t, side="right")
        out = self.counts[idx]
        return int(out) if np.isscalar(t) else out


# ======================================================================
# closed-form roots of a*sqrt(1+t^2) + b*t = c, t > 0


def roots_quasi_quadratic(a: float, b: float, c: float):
    """Positive roots of ``a*sqrt(1+t**2) + b*t = c`` with slope signs.

    Returns a list of ``(root, slope)`` pairs sorted by root, ``slope`` being
    the sign of the map's derivative at the crossing; at most two roots
    (descending-then-ascending when a > 0 > b > -a and the dip reaches c).
    Tangencies (discriminant zero) return nothing: the map touches without
    crossing.  Requires ``c > 0``; when a < 0 and b <= |a| the map is
    negative everywhere and the result is empty.

    Squaring the equation gives ``(a^2-b^2) t^2 + 2bc t + (a^2-c^2) = 0``;
    candidates are computed with the cancellation-safe quadratic formula and
    spurious squaring roots are removed by requiring ``a*(c - b*t) > 0``
    (the unsquared equation forces ``c - b*t`` to carry the sign of a).
    """
    if not c > 0.0:
        raise ValueError(f"threshold target must be positive, got {c!r}")
    out = []
    if a == 0.0:
        if b > 0.0:
            out.append((c / b, 1))
        return out
    disc = b * b + c * c - a * a
    if disc <= 0.0:
        return out
    quad_a = a * a - b * b
    quad_b = 2.0 * b * c
    quad_c = a * a - c * c
    if quad_a == 0.0:
        cands = (-quad_c / quad_b,)
    else:
        root_disc = 2.0 * abs(a) * math.sqrt(disc)
        qq = -0.5 * (quad_b + math.copysign(root_disc, quad_b))
        cands = (qq / quad_a, quad_c / qq)
    for t in cands:
        if t > 0.0 and a * (c - b * t) > 0.0:
            slope = 1 if a * t / math.sqrt(1.0 + t * t) + b > 0.0 else -1
            out.append((float(t), slope))
    out.sort()
    return out


def screen_extrema(a: float, b: float, window) -> tuple[float, float]:
    """Exact range of ``a*sqrt(1+t**2) + b*t`` over ``window``.

    The map is monotone unless ``|a| > |b|`` with opposite signs, in which
    case it has one stationary point ``t* = sqrt(b^2/(a^2-b^2))`` of value
    ``sign(a)*sqrt(a^2-b^2)`` (a minimum for a > 0, maximum for a < 0);
    otherwise extrema sit on the boundary.  Requires ``0 < t_lo < t_hi``.
    """
    t_lo, t_hi = window
    if not 0.0 < t_lo < t_hi:
        raise ValueError(f"window must satisfy 0 < lo < hi, got {window!r}")
    v_lo = a * math.sqrt(1.0 + t_lo * t_lo) + b * t_lo
    v_hi = a * math.sqrt(1.0 + t_hi * t_hi) + b * t_hi
    lo, hi = (v_lo, v_hi) if v_lo <= v_hi else (v_hi, v_lo)
    if abs(a) > abs(b) and a * b < 0.0:
        t_star = math.sqrt(b * b / (a * a - b * b))
        if t_lo < t_star < t_hi:
            m_star = math.copysign(math.sqrt(a * a - b * b), a)
            lo = min(lo, m_star)
            hi = max(hi, m_star)
    return lo, hi


# ======================================================================
# knot enumeration


def _family_or_dense(family, m):
    if family is None:
        return ThresholdFamily.dense(m)
    if family.m != m:
        raise ValueError(f"family has m={family.m}, problem has m={m}")
    return family


def _affine_crossings(offset, slope, targets_asc, blocks_asc, window, dir_mult):
    """All solutions of offset_j + slope_j * t = target inside the open
    window, vectorized over coordinates j and targets."""
    t_lo, t_hi = window
    e0 = offset + slope * t_lo
    e1 = offset + slope * t_hi
    z_lo = np.minimum(e0, e1)
    z_hi = np.maximum(e0, e1)
    k0 = np.searchsorted(targets_asc, z_lo, side="right")
    k1 = np.searchsorted(targets_asc, z_hi, side="left")
    counts = np.maximum(k1 - k0, 0)
    counts[slope == 0.0] = 0
    total = int(counts.sum())
    if total == 0:
        return (np.empty(0), np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0, np.int64))
    flat_j = np.repeat(np.arange(offset.size), counts)
    starts = np.repeat(k0, counts)
    flat_k = starts + np.arange(total) - np.repeat(np.cumsum(counts) - counts,
                                                   counts)
    t = (targets_asc[flat_k] - offset[flat_j]) / slope[flat_j]
    direction = (dir_mult * np.sign(slope[flat_j])).astype(np.int64)
    inside = (t > t_lo) & (t < t_hi)
    return t[inside], flat_j[inside], blocks_asc[flat_k[inside]], direction[inside]


def _warn_degenerate(n, what):
    if n:
        warnings.warn(
            f"{n} degenerate threshold coincidence(s) ({what}): the crossing "
            "set is a full line on a measure-zero event; these contribute no "
            "knots", RuntimeWarning, stacklevel=3)


def _z_case_knots(offset, slope, v, blocks, window, two_sided):
    parts = []
    if two_sided:
        usable = v < 1.0
        zq = dist.norm_isf(v[usable] / 2.0)  # descending, > 0
        zq_asc, blk_asc = zq[::-1], blocks[usable][::-1]
        parts.append(_affine_crossings(offset, slope, zq_asc, blk_asc,
                                       window, +1))
        neg_asc = -zq  # ascending
        parts.append(_affine_crossings(offset, slope, neg_asc, blk_asc[::-1],
                                       window, -1))
        probe = zq_asc
    else:
        usable = v < 1.0
        zq = dist.norm_isf(v[usable])  # descending, any sign
        zq_asc, blk_asc = zq[::-1], blocks[usable][::-1]
        parts.append(_affine_crossings(offset, slope, zq_asc, blk_asc,
                                       window, +1))
        probe = zq_asc
    flat = np.flatnonzero(slope == 0.0)
    if flat.size and probe.size:
        pos = np.searchsorted(probe, offset[flat])
        pos = np.minimum(pos, probe.size - 1)
        n_degen = int(np.sum(probe[pos] == offset[flat]))
        _warn_degenerate(n_degen, "constant coordinate at a threshold")
    ts = np.concatenate([p[0] for p in parts])
    js = np.concatenate([p[1] for p in parts])
    bs = np.concatenate([p[2] for p in parts])
    ds = np.concatenate([p[3] for p in parts])
    return ts, js, bs, ds


def _t_case_map_knots(rad, slp, targets_desc, blocks_desc, s_window, dir_mult,
                      out):
    """Crossings of ``rad_j*sqrt(1+s^2) + slp_j*s = target`` for every
    coordinate and target, screened per coordinate; appends to ``out``."""
    s_lo, s_hi = s_window
    n_degen = 0
    for j in range(rad.size):
        a_j, b_j = float(rad[j]), float(slp[j])
        if a_j == 0.0 and b_j == 0.0:
            if np.any(targets_desc == 0.0):
                n_degen += 1
            continue
        lo_v, hi_v = screen_extrema(a_j, b_j, s_window)
        # descending targets: crossed block is a contiguous index range
        k0 = np.searchsorted(-targets_desc, -hi_v, side="right")
        k1 = np.searchsorted(-targets_desc, -lo_v, side="left")
        for k in range(k0, k1):
            cv = float(targets_desc[k])
            if cv > 0.0:
                pairs = roots_quasi_quadratic(a_j, b_j, cv)
                flip = 1
            elif cv < 0.0:
                pairs = roots_quasi_quadratic(-a_j, -b_j, -cv)
                flip = -1
            else:
                n_degen += 1
                continue
            for s_root, slope_sign in pairs:
                if s_lo < s_root < s_hi:
                    out.append((s_root, j, int(blocks_desc[k]),
                                flip * slope_sign * dir_mult))
    _warn_degenerate(n_degen, "threshold target exactly at the map's value")


def knots_gaussian(problem, i: int, cond, c: float, window,
                   family: ThresholdFamily | None = None) -> KnotArray:
    """All threshold crossings of the level-``c`` step-up inside ``window``.

    Enumerates, for every coordinate j (including j = i, whose statistic is
    the sliding variable itself), the points where its marginal p-value under
    the reconstruction map crosses one of the distinct thresholds
    ``c * beta / m``; thresholds at or above p-value 1 can never be crossed
    and are skipped.  The z-case solves affine equations; the t-case
    normalizes by sqrt(df) and solves quasi-quadratic equations per the
    screened threshold range.  t-case windows must not straddle 0 (two-sided
    use mirrors a positive window).  Returns knots sorted by (t, j, r).
    """
    if not 0.0 < c <= 1.0:
        raise ValueError(f"level c must be in (0, 1], got {c!r}")
    problem = _as_t_problem(problem)
    t_lo, t_hi = float(window[0]), float(window[1])
    if not t_lo < t_hi:
        raise ValueError(f"window must be increasing, got {window!r}")
    m = problem.m
    fam = _family_or_dense(family, m)
    v_all = fam.distinct_thresholds(c)
    usable = v_all > 0.0
    v = v_all[usable]
    blocks = np.flatnonzero(usable)
    two_sided = problem.side == "two"
    a_coef, b_coef = slide_coefficients(problem, i, cond)

    if isinstance(problem, MvzProblem):
        ts, js, bs, ds = _z_case_knots(a_coef, b_coef, v, blocks,
                                       (t_lo, t_hi), two_sided)
    else:
        if t_lo < 0.0 < t_hi or t_lo == 0.0 or t_hi == 0.0:
            raise ValueError(
                "t-case windows must lie strictly on one side of 0; split "
                "two-sided integrals into mirrored windows")
        tprob = problem
        df_sqrt = math.sqrt(tprob.df)
        reflected = t_hi < 0.0
        if reflected:
            s_window = (-t_hi / df_sqrt, -t_lo / df_sqrt)
            maps = [(a_coef, -b_coef)]
        else:
            s_window = (t_lo / df_sqrt, t_hi / df_sqrt)
            maps = [(a_coef, b_coef)]
        keep = v < 1.0
        vv, bb = v[keep], blocks[keep]
        if two_sided:
            targets = tprob.isf(vv / 2.0) / df_sqrt  # descending, > 0
            maps.append((-maps[0][0], -maps[0][1]))
        else:
            targets = tprob.isf(vv) / df_sqrt  # descending, any sign
        dir_mult = -1 if reflected else 1
        found: list[tuple] = []
        for rad, slp in maps:
            _t_case_map_knots(rad, slp, targets, bb, s_window, dir_mult, found)
        if found:
            s_arr = np.array([f[0] for f in found])
            ts = s_arr * df_sqrt * (-1.0 if reflected else 1.0)
            js = np.array([f[1] for f in found], dtype=np.int64)
            bs = np.array([f[2] for f in found], dtype=np.int64)
            ds = np.array([f[3] for f in found], dtype=np.int64)
            inside = (ts > t_lo) & (ts < t_hi)
            ts, js, bs, ds = ts[inside], js[inside], bs[inside], ds[inside]
        else:
            ts = np.empty(0)
            js = bs = ds = np.empty(0, np.int64)

    order = np.lexsort((fam.block_lo[bs] if bs.size else bs, js, ts))
    ts, js, bs, ds = ts[order], js[order], bs[order], ds[order]
    return KnotArray(ts, js, fam.block_lo[bs] if bs.size else bs, ds, bs)


# ======================================================================
# the sweep


def _counts_from_scratch(problem, i, cond, t_eval, v_all):
    stats = reconstruct(problem, i, cond, t_eval)
    p_sorted = np.sort(problem.tail_p(stats))
    return np.searchsorted(p_sorted, v_all, side="right").astype(np.int64)


def _rejection_count(n_per_block, lo, hi):
    cand = np.where(n_per_block >= lo, np.minimum(n_per_block, hi), 0)
    return int(cand.max()) if cand.size else 0


def path(problem, i: int, cond, c: float, window,
         family: ThresholdFamily | None = None) -> KnotPath:
    """Exact rejection-count path of the level-``c`` step-up over ``window``.

    Initializes per-threshold below-counts by a from-scratch evaluation at
    the midpoint of the first inter-knot interval (immune to crossings that
    sit exactly on the window edge), then sweeps the knots left to right.
    Each knot moves one threshold's count by its direction; the rejection
    count R is maintained incrementally: an increase at a block can only
    raise R to that block's feasible count, a decrease only matters when it
    breaks the block currently attaining R, triggering a downward search
    with early exit.  Knots sharing one t (measure zero, but constructible)
    are applied together before R updates.
    """
    problem = _as_t_problem(problem)
    t_lo, t_hi = float(window[0]), float(window[1])
    if not (np.isfinite(t_lo) and np.isfinite(t_hi)):
        raise ValueError(f"window must be finite, got {window!r}")
    m = problem.m
    fam = _family_or_dense(family, m)
    knots = knots_gaussian(problem, i, cond, c, window, fam)
    v_all = fam.distinct_thresholds(c)
    lo, hi = fam.block_lo, fam.block_hi
    first_stop = knots.t[0] if len(knots) else t_hi
    n_blocks = _counts_from_scratch(problem, i, cond, (t_lo + first_stop) / 2.0,
                                    v_all)
    r_cur = _rejection_count(n_blocks, lo, hi)
    counts = np.empty(len(knots) + 1, dtype=np.int64)
    counts[0] = r_cur

    k = 0
    n_knots = len(knots)
    while k < n_knots:
        k_end = k + 1
        while k_end < n_knots and knots.t[k_end] == knots.t[k]:
            k_end += 1
        for kk in range(k, k_end):
            b = knots.block[kk]
            n_blocks[b] += knots.direction[kk]
            if n_blocks[b] < 0 or n_blocks[b] > m:
                raise NumericError(
                    "inconsistent knot directions: below-threshold count left "
                    f"[0, m] at t={knots.t[kk]!r}")
        if k_end - k > 1:
            r_cur = _rejection_count(n_blocks, lo, hi)
        else:
            b = knots.block[k]
            if knots.direction[k] > 0:
                n_b = n_blocks[b]
                cand = min(n_b, hi[b]) if n_b >= lo[b] else 0
                if cand > r_cur:
                    r_cur = cand
            elif r_cur > 0:
                g = fam.blocks_of(r_cur)
                if n_blocks[g] < r_cur:
                    best = 0
                    for gb in range(g, -1, -1):
                        n_g = n_blocks[gb]
                        cand = min(n_g, hi[gb]) if n_g >= lo[gb] else 0
                        if cand > best:
                            best = cand
                        if gb > 0 and best >= hi[gb - 1]:
                            break
                    r_cur = best
        counts[k + 1:k_end + 1] = r_cur
        k = k_end
    return KnotPath(knots, counts, (t_lo, t_hi))


# ======================================================================
# the exact conditional integral


def _tail_quantile(problem, q, side):
    x = problem.isf(q / 2.0) if side == "two" else problem.isf(q)
    return float(x)


def _interval_data(problem, i, cond, c, gamma_alpha, family, window, negative):
    """Per-interval midpoints, masses, and both path values on a window."""
    path_c = path(problem, i, cond, c, window, family)
    path_g = path(problem, i, cond, gamma_alpha, window, family)
    edges = np.concatenate([[window[0]],
                            np.sort(np.concatenate([path_c.knots.t,
                                                    path_g.knots.t])),
                            [window[1]]])
    mids = (edges[:-1] + edges[1:]) / 2.0
    r_c = path_c.value_at(mids)
    r_g = path_g.value_at(mids)
    if negative:
        masses = problem.cdf(edges[1:]) - problem.cdf(edges[:-1])
    else:
        masses = problem.sf(edges[:-1]) - problem.sf(edges[1:])
    return edges, mids, np.maximum(masses, 0.0), r_c, r_g


def _acceptance_and_g(problem, i, cond, c, gamma_alpha, family, window,
                      negative):
    m = problem.m
    edges, mids, masses, r_c, r_g = _interval_data(
        problem, i, cond, c, gamma_alpha, family, window, negative)
    eta = problem.tail_p(mids)
    accept = eta <= c * family.beta(r_c) / m
    denom = r_g + (eta > gamma_alpha * family.beta(r_g) / m)
    g_val = float(np.sum(masses[accept] / denom[accept]))
    return g_val, edges, accept


def exact_g(problem, i: int, cond, c: float, gamma_alpha: float,
            family: ThresholdFamily | None = None,
            tail_eps: float | None = None) -> float:
    """Exact conditional admission integral for hypothesis ``i`` at level c.

    Integrates, over the sliding statistic's marginal null distribution, the
    indicator that the reconstructed vector's level-``c`` step-up rejects
    coordinate ``i``, divided by one more than needed to count ``i`` in the
    level-``gamma_alpha`` step-up (i.e. by the size of that rejection set
    with ``i`` adjoined).  Both counts are piecewise constant between knots,
    so each interval contributes an exact cdf increment over its denominator.

    The integration window drops statistics whose marginal p-value exceeds
    ``c`` (the indicator is provably zero there) and truncates the far tail
    at mass ``tail_eps`` (default ``min(1e-14, c/10)``), which is *added* to
    the result, making truncation strictly conservative.  Deterministic; no
    sampling.
    """
    if c == 0.0:
        return 0.0
    if not 0.0 < c < 1.0:
        raise ValueError(f"level c must be in [0, 1), got {c!r}")
    if not 0.0 < gamma_alpha <= 1.0:
        raise ValueError(f"gamma_alpha must be in (0, 1], got {gamma_alpha!r}")
    problem = _as_t_problem(problem)
    fam = _family_or_dense(family, problem.m)
    if tail_eps is None:
        tail_eps = min(1e-14, c / 10.0)
    side = problem.side
    is_z = isinstance(problem, MvzProblem)
    if not is_z and side == "one" and c >= 0.5:
        raise ValueError(
            "one-sided t-case integrals need c < 0.5 so the window stays "
            "positive")

    def windows_for(eps):
        t_left = _tail_quantile(problem, c, side)
        t_right = _tail_quantile(problem, eps, side)
        if side == "one":
            return [((t_left, t_right), False)]
        return [((t_left, t_right), False), ((-t_right, -t_left), True)]

    wins = windows_for(tail_eps)
    if not all(np.isfinite(w[0][0]) and np.isfinite(w[0][1]) and
               w[0][0] < w[0][1] for w in wins):
        tail_eps = max(tail_eps, 1e-12)  # widen once, then give up
        wins = windows_for(tail_eps)
        if not all(np.isfinite(w[0][0]) and np.isfinite(w[0][1]) and
                   w[0][0] < w[0][1] for w in wins):
            raise NumericError(
                f"could not build a finite integration window for c={c!r}")
    total = 0.0
    for window, negative in wins:
        g_val, _, _ = _acceptance_and_g(problem, i, cond, c, gamma_alpha,
                                        fam, window, negative)
        total += g_val
    return total + tail_eps


def acceptance_intervals(problem, i: int, cond, c: float,
                         family: ThresholdFamily | None = None,
                         tail_eps: float = 1e-14):
    """Sub-intervals of the truncated support where the level-``c`` step-up
    rejects coordinate ``i``, as an array of (start, end) rows sorted by
    start.  The region need not be contiguous."""
    if c <= 0.0:
        return np.empty((0, 2))
    problem = _as_t_problem(problem)
    fam = _family_or_dense(family, problem.m)
    side = problem.side
    out = []
    t_left = _tail_quantile(problem, c, side)
    t_right = _tail_quantile(problem, tail_eps, side)
    windows = [((t_left, t_right), False)]
    if side == "two":
        windows.append(((-t_right, -t_left), True))
    for window, negative in windows:
        _, edges, accept = _acceptance_and_g(problem, i, cond, c, c, fam,
                                             window, negative)
        for k in np.flatnonzero(accept):
            a_k, b_k = edges[k], edges[k + 1]
            if out and out[-1][1] == a_k:
                out[-1][1] = b_k
            else:
                out.append([a_k, b_k])
    rows = np.array(out) if out else np.empty((0, 2))
    return rows[np.argsort(rows[:, 0])] if rows.size else rows


def dump_knots_csv(knot_path: KnotPath, fileobj) -> None:
    """Write a path's knots as CSV (t, j, r, direction, R-after)."""
    import csv

    writer = csv.writer(fileobj)
    writer.writerow(["t", "j", "r", "direction", "r_after"])
    for k in range(len(knot_path.knots)):
        writer.writerow([repr(float(knot_path.knots.t[k])),
                         int(knot_path.knots.j[k]),
                         int(knot_path.knots.r[k]),
                         int(knot_path.knots.direction[k]),
                         int(knot_path.counts[k + 1])])
