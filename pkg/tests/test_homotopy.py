"""Knot enumeration, count paths, and exact conditional integrals vs. oracles.

Oracles here never use the closed-form knot machinery: they reconstruct the
statistic vector on dense grids, run from-scratch step-ups, bracket crossings
or state changes, and refine by bisection.
"""

import io
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from conftest import (oracle_count_at, random_family, random_mvt, random_mvz,
                      rows_stepup_count)
from depfdr.distributions import norm_isf
from depfdr.homotopy import (acceptance_intervals, dump_knots_csv, exact_g,
                             knots_gaussian, path)
from depfdr.models import (ArCovariance, IdentityCovariance, MvtProblem,
                           MvzProblem, conditioning_statistic, reconstruct)
from depfdr.stepup import ThresholdFamily


def _prepare(problem, i):
    return conditioning_statistic(problem, i)


# ======================================================================
# knot enumeration: frozen examples


def test_diagonal_pair_has_only_self_knots():
    problem = MvzProblem(np.array([1.0, 0.2]), IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    knots = knots_gaussian(problem, 0, cond, 0.05, (0.0, 10.0))
    assert len(knots) == 2
    assert list(knots.j) == [0, 0]
    assert knots.t[0] == pytest.approx(1.64485, abs=1e-5)
    assert knots.t[1] == pytest.approx(1.95996, abs=1e-5)
    assert list(knots.r) == [2, 1]
    assert list(knots.direction) == [1, 1]


def test_correlated_pair_cross_knot_location():
    cov = ArCovariance(2, 0.5)
    problem = MvzProblem(np.array([1.0, 0.5]), cov, "one")  # z2 = 0.5*z1
    cond = _prepare(problem, 0)
    assert cond.s[0] == pytest.approx(0.0, abs=1e-15)
    knots = knots_gaussian(problem, 0, cond, 0.05, (0.0, 10.0))
    cross = [(t, r) for t, j, r in zip(knots.t, knots.j, knots.r) if j == 1]
    assert any(abs(t - 3.91993) < 1e-5 and r == 1 for t, r in cross)
    assert any(abs(t - 2.0 * norm_isf(0.05)) < 1e-9 and r == 2 for t, r in cross)


def test_window_excluding_all_candidates_is_empty():
    problem = MvzProblem(np.array([1.0, 0.2]), IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    assert len(knots_gaussian(problem, 0, cond, 0.05, (100.0, 101.0))) == 0


def test_constant_coordinate_at_threshold_warns():
    z1 = norm_isf(0.025)  # second coordinate sits exactly on a threshold
    problem = MvzProblem(np.array([0.0, z1]), IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    with pytest.warns(RuntimeWarning, match="degenerate"):
        knots_gaussian(problem, 0, cond, 0.05, (0.0, 10.0))


def test_t_window_must_not_straddle_zero():
    problem = MvtProblem(np.array([1.0, 0.5]), IdentityCovariance(2), 7, 1.1,
                         "one")
    cond = _prepare(problem, 0)
    with pytest.raises(ValueError, match="one side of 0"):
        knots_gaussian(problem, 0, cond, 0.05, (-1.0, 1.0))


# ======================================================================
# knot enumeration: unscreened dense-grid oracle


def _oracle_knots(problem, i, cond, c, fam, window, n_grid):
    ts = np.linspace(window[0], window[1], n_grid)
    a, b = _slide(problem, i, cond)
    stats = _reconstruct_many(problem, a, b, ts)
    p = problem.tail_p(stats)  # (n_grid, m)
    v_all = fam.distinct_thresholds(c)
    found = []
    for j in range(problem.m):
        for k, v in enumerate(v_all):
            if not 0.0 < v < 1.0:
                continue
            diff = p[:, j] - v
            flips = np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)
            for f in flips:
                def crossing(t, j=j, v=v):
                    st = reconstruct(problem, i, cond, t)
                    return float(problem.tail_p(st[j]) - v)
                root = brentq(crossing, ts[f], ts[f + 1], xtol=1e-13)
                direction = 1 if diff[f] > 0 else -1
                found.append((root, j, k, direction))
    found.sort()
    return found


def _slide(problem, i, cond):
    from depfdr.models import slide_coefficients

    return slide_coefficients(problem, i, cond)


def _reconstruct_many(problem, a, b, ts):
    if isinstance(problem, MvzProblem):
        return a[None, :] + b[None, :] * ts[:, None]
    return (a[None, :] * np.sqrt(problem.df + ts[:, None] ** 2)
            + b[None, :] * ts[:, None])


def _assert_knots_match(knots, oracle, atol=1e-8):
    assert len(knots) == len(oracle), (len(knots), len(oracle))
    for k, (t_o, j_o, blk_o, dir_o) in enumerate(oracle):
        assert abs(knots.t[k] - t_o) <= atol * max(1.0, abs(t_o))
        assert knots.j[k] == j_o
        assert knots.block[k] == blk_o
        assert knots.direction[k] == dir_o


def test_z_knots_match_unscreened_oracle():
    rng = np.random.default_rng(31)
    for trial in range(14):
        m = int(rng.integers(2, 9))
        side = "one" if trial % 2 == 0 else "two"
        problem = random_mvz(rng, m, side)
        fam = random_family(rng, m)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        window = (float(rng.uniform(-4.5, -2.0)), float(rng.uniform(2.0, 4.5)))
        c = float(rng.uniform(0.02, 0.6))
        knots = knots_gaussian(problem, i, cond, c, window, fam)
        oracle = _oracle_knots(problem, i, cond, c, fam, window, 60_001)
        _assert_knots_match(knots, oracle)


def test_t_knots_match_unscreened_oracle():
    rng = np.random.default_rng(32)
    for trial in range(12):
        m = int(rng.integers(2, 7))
        side = "one" if trial % 2 == 0 else "two"
        problem = random_mvt(rng, m, side)
        fam = random_family(rng, m)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        if trial % 3 == 2:
            window = (float(rng.uniform(-14.0, -8.0)),
                      float(rng.uniform(-0.4, -0.05)))
        else:
            window = (float(rng.uniform(0.05, 0.4)),
                      float(rng.uniform(8.0, 14.0)))
        c = float(rng.uniform(0.02, 0.6))
        knots = knots_gaussian(problem, i, cond, c, window, fam)
        oracle = _oracle_knots(problem, i, cond, c, fam, window, 150_001)
        _assert_knots_match(knots, oracle)


# ======================================================================
# path: frozen examples and brute-force equivalence


def test_single_hypothesis_path_one_sided():
    problem = MvzProblem(np.array([0.3]), IdentityCovariance(1), "one")
    cond = _prepare(problem, 0)
    p = path(problem, 0, cond, 0.05, (0.0, 4.0))
    assert len(p.knots) == 1
    assert p.knots.t[0] == pytest.approx(norm_isf(0.05), rel=1e-14)
    # p_1(t) = sf(t) <= c holds right of the knot: count 0 then 1
    assert list(p.counts) == [0, 1]
    assert p.value_at(1.0) == 0
    assert p.value_at(2.0) == 1
    assert p.value_at(float(p.knots.t[0])) == 1  # right limit at the knot


def test_single_hypothesis_path_two_sided():
    problem = MvzProblem(np.array([0.3]), IdentityCovariance(1), "two")
    cond = _prepare(problem, 0)
    p = path(problem, 0, cond, 0.05, (-5.0, 5.0))
    edge = norm_isf(0.025)
    assert len(p.knots) == 2
    assert p.knots.t[0] == pytest.approx(-edge, rel=1e-14)
    assert p.knots.t[1] == pytest.approx(edge, rel=1e-14)
    assert list(p.knots.direction) == [-1, 1]
    assert list(p.counts) == [1, 0, 1]


def test_diagonal_one_sided_path_is_monotone():
    rng = np.random.default_rng(5)
    for _ in range(6):
        m = int(rng.integers(2, 12))
        problem = MvzProblem(rng.normal(size=m), IdentityCovariance(m), "one")
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        p = path(problem, i, cond, float(rng.uniform(0.02, 0.4)), (-4.0, 4.0))
        assert np.all(np.diff(p.counts) >= 0)


@pytest.mark.parametrize("model", ["z", "t"])
def test_path_matches_brute_force_everywhere(model):
    rng = np.random.default_rng(91 if model == "z" else 92)
    for trial in range(10):
        m = int(rng.integers(2, 11))
        side = "one" if trial % 2 == 0 else "two"
        if model == "z":
            problem = random_mvz(rng, m, side)
            window = (-4.5, 4.5)
        else:
            problem = random_mvt(rng, m, side)
            window = (0.05, 12.0) if trial % 3 else (-12.0, -0.05)
        fam = random_family(rng, m)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        c = float(rng.uniform(0.02, 0.5))
        kp = path(problem, i, cond, c, window, fam)
        edges = np.concatenate([[window[0]], kp.knots.t, [window[1]]])
        mids = (edges[:-1] + edges[1:]) / 2.0
        for t, want in zip(mids, kp.counts):
            assert oracle_count_at(problem, i, cond, c, fam, t) == want
        for t in rng.uniform(window[0], window[1], size=200):
            assert kp.value_at(t) == oracle_count_at(problem, i, cond, c,
                                                     fam, t)


def test_ar_path_spot_check():
    rng = np.random.default_rng(404)
    problem = MvzProblem(rng.normal(size=10), ArCovariance(10, 0.8), "one")
    cond = _prepare(problem, 3)
    fam = ThresholdFamily.dense(10)
    kp = path(problem, 3, cond, 0.1, (-4.0, 4.0), fam)
    for t in np.linspace(-3.9, 3.9, 200):
        assert kp.value_at(t) == oracle_count_at(problem, 3, cond, 0.1, fam, t)


# ======================================================================
# exact_g: frozen examples


@pytest.mark.parametrize("side", ["one", "two"])
@pytest.mark.parametrize("c", [0.004, 0.05, 0.3])
def test_single_hypothesis_integral_equals_level(side, c):
    problem = MvzProblem(np.array([0.3]), IdentityCovariance(1), side)
    cond = _prepare(problem, 0)
    assert exact_g(problem, 0, cond, c, 0.05) == pytest.approx(c, abs=1e-12)


def test_pair_with_null_partner_integral():
    # second p-value pinned at 0.5: acceptance region is {p_1 <= c/2}
    problem = MvzProblem(np.array([1.0, 0.0]), IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    got = exact_g(problem, 0, cond, 0.05, 0.05)
    assert got == pytest.approx(0.025, abs=1e-12)


def test_pair_with_small_partner_integral():
    # second p-value pinned at 0.03 < c: both reject together, denominator 2
    problem = MvzProblem(np.array([1.0, norm_isf(0.03)]),
                         IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    got = exact_g(problem, 0, cond, 0.05, 0.05)
    assert got == pytest.approx(0.025, abs=1e-12)


def test_zero_level_integral_is_zero():
    problem = MvzProblem(np.array([1.0, 0.0]), IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    assert exact_g(problem, 0, cond, 0.0, 0.05) == 0.0


def test_exact_g_validation():
    problem = MvzProblem(np.array([1.0, 0.0]), IdentityCovariance(2), "one")
    cond = _prepare(problem, 0)
    with pytest.raises(ValueError):
        exact_g(problem, 0, cond, 1.0, 0.05)
    with pytest.raises(ValueError):
        exact_g(problem, 0, cond, 0.05, 0.0)
    tproblem = MvtProblem(np.array([1.0, 0.0]), IdentityCovariance(2), 5, 1.0,
                          "one")
    tcond = _prepare(tproblem, 0)
    with pytest.raises(ValueError, match="c < 0.5"):
        exact_g(tproblem, 0, tcond, 0.6, 0.6)


# ======================================================================
# exact_g: independence identity, monotonicity, quadrature and MC oracles


def test_independence_identity_dense_family():
    rng = np.random.default_rng(55)
    for m in [1, 2, 3, 5, 8, 10]:
        for alpha in [0.05, 0.2]:
            problem = MvzProblem(rng.normal(size=m), IdentityCovariance(m),
                                 "one")
            for i in range(min(m, 3)):
                cond = _prepare(problem, i)
                got = exact_g(problem, i, cond, alpha, alpha)
                assert got == pytest.approx(alpha / m, abs=1e-10)


def test_integral_monotone_in_level():
    rng = np.random.default_rng(66)
    for trial in range(6):
        m = int(rng.integers(2, 7))
        side = "one" if trial % 2 == 0 else "two"
        problem = random_mvz(rng, m, side)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        fam = random_family(rng, m)
        levels = np.geomspace(1e-4, 0.45, 10)
        vals = [exact_g(problem, i, cond, float(c), 0.05, fam)
                for c in levels]
        assert np.all(np.diff(vals) >= -1e-12)


def _oracle_state(problem, i, cond, c, ga, fam, t):
    stats = reconstruct(problem, i, cond, float(t))
    p = problem.tail_p(stats)
    from depfdr.stepup import step_up

    r_c = step_up(p, fam, c).count
    ind = bool(p[i] <= c * fam.beta(r_c) / fam.m)
    r_g = step_up(p, fam, ga).count
    d = int(r_g) + int(p[i] > ga * fam.beta(r_g) / fam.m)
    return ind, d


def _oracle_g(problem, i, cond, c, ga, fam, teps, n_grid=3001):
    side = problem.side
    t_left = problem.isf(c / 2.0 if side == "two" else c)
    t_right = problem.isf(teps / 2.0 if side == "two" else teps)
    windows = [(t_left, t_right)]
    if side == "two":
        windows.append((-t_right, -t_left))
    total = 0.0
    for w_lo, w_hi in windows:
        ts = np.linspace(w_lo, w_hi, n_grid)
        states = [_oracle_state(problem, i, cond, c, ga, fam, t) for t in ts]
        edges = [w_lo]
        piece_states = [states[0]]
        for k in range(n_grid - 1):
            if states[k + 1] != states[k]:
                lo_t, hi_t = ts[k], ts[k + 1]
                for _ in range(60):
                    mid = 0.5 * (lo_t + hi_t)
                    if _oracle_state(problem, i, cond, c, ga, fam,
                                     mid) == states[k]:
                        lo_t = mid
                    else:
                        hi_t = mid
                edges.append(0.5 * (lo_t + hi_t))
                piece_states.append(states[k + 1])
        edges.append(w_hi)
        for k, (ind, d) in enumerate(piece_states):
            if ind:
                mass = float(problem.sf(edges[k]) - problem.sf(edges[k + 1]))
                total += mass / d
    return total + teps


@pytest.mark.parametrize("model", ["z", "t"])
def test_integral_matches_bisection_oracle(model):
    rng = np.random.default_rng(77 if model == "z" else 78)
    for trial in range(6):
        m = int(rng.integers(2, 6))
        side = "one" if trial % 2 == 0 else "two"
        problem = (random_mvz if model == "z" else random_mvt)(rng, m, side)
        fam = random_family(rng, m)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        c = float(rng.uniform(0.02, 0.4))
        ga = float(rng.uniform(0.5, 1.0)) * c
        teps = min(1e-14, c / 10.0)
        got = exact_g(problem, i, cond, c, ga, fam)
        want = _oracle_g(problem, i, cond, c, ga, fam, teps)
        assert got == pytest.approx(want, abs=1e-8)


@pytest.mark.parametrize("model", ["z", "t"])
def test_integral_matches_monte_carlo(model):
    rng = np.random.default_rng(88 if model == "z" else 89)
    n_draws = 200_000
    for trial in range(4):
        m = int(rng.integers(2, 6))
        side = "one" if trial % 2 == 0 else "two"
        problem = (random_mvz(rng, m, side) if model == "z"
                   else random_mvt(rng, m, side))
        fam = random_family(rng, m)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        c = float(rng.uniform(0.05, 0.4))
        ga = float(rng.uniform(0.5, 1.0)) * c
        if model == "z":
            draws = rng.standard_normal(n_draws)
        else:
            draws = rng.standard_t(problem.df, size=n_draws)
        a, b = _slide(problem, i, cond)
        stats = _reconstruct_many(problem, a, b, draws)
        p = problem.tail_p(stats)
        r_c = rows_stepup_count(p, fam, c)
        ind = p[:, i] <= c * fam.beta(r_c) / m
        r_g = rows_stepup_count(p, fam, ga)
        d = r_g + (p[:, i] > ga * fam.beta(r_g) / m)
        vals = np.where(ind, 1.0 / np.maximum(d, 1), 0.0)
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n_draws))
        got = exact_g(problem, i, cond, c, ga, fam)
        assert abs(got - est) <= 4.0 * se + 1e-12, (trial, got, est, se)


# ======================================================================
# acceptance intervals and diagnostics


def test_acceptance_intervals_cover_acceptance_region():
    rng = np.random.default_rng(99)
    for trial in range(5):
        m = int(rng.integers(2, 6))
        side = "one" if trial % 2 == 0 else "two"
        problem = random_mvz(rng, m, side)
        fam = random_family(rng, m)
        i = int(rng.integers(m))
        cond = _prepare(problem, i)
        c = float(rng.uniform(0.05, 0.4))
        rows = acceptance_intervals(problem, i, cond, c, fam)
        for t in rng.uniform(-5.0, 5.0, size=300):
            inside = bool(np.any((rows[:, 0] <= t) & (t <= rows[:, 1]))) \
                if rows.size else False
            ind, _ = _oracle_state(problem, i, cond, c, c, fam, t)
            p_t = problem.tail_p(reconstruct(problem, i, cond, float(t)))[i]
            if p_t > c or p_t < 2e-14:  # outside the truncated support
                continue
            assert ind == inside, (trial, t)


def test_knot_csv_dump():
    problem = MvzProblem(np.array([1.0, 0.5]), ArCovariance(2, 0.5), "one")
    cond = _prepare(problem, 0)
    kp = path(problem, 0, cond, 0.05, (0.0, 10.0))
    buf = io.StringIO()
    dump_knots_csv(kp, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "t,j,r,direction,r_after"
    assert len(lines) == len(kp.knots) + 1
    last = lines[-1].split(",")
    assert int(last[4]) == kp.counts[-1]
