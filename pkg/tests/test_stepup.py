"""Step-up procedures and threshold families."""

import numpy as np
import pytest

from depfdr.stepup import (
    PValueVector,
    ThresholdFamily,
    effective_threshold,
    geometric_thresholds,
    harmonic_number,
    leave_one_rejections,
    q_values,
    step_up,
)

# ----------------------------------------------------------------------
# brute-force oracles, written against the definitions only


def oracle_beta(family, r):
    if r == 0:
        return 0.0
    idx = np.searchsorted(family.block_lo, r, side="right") - 1
    return float(family.block_values[idx])


def oracle_stepup_count(p, family, alpha):
    """Largest r with p_(r) <= alpha * beta(r) / m, by explicit enumeration."""
    ps = np.sort(np.asarray(p, dtype=float))
    m = len(ps)
    best = 0
    for r in range(1, m + 1):
        if ps[r - 1] <= alpha * oracle_beta(family, r) / m:
            best = r
    return best


def oracle_reject_set(p, family, alpha):
    r = oracle_stepup_count(p, family, alpha)
    thr = alpha * oracle_beta(family, r) / len(p)
    return set(np.flatnonzero(np.asarray(p) <= thr)) if r else set()


def oracle_q(p, family):
    """min over r >= rank of m * p_(r) / beta(r), by explicit enumeration."""
    p = np.asarray(p, dtype=float)
    m = len(p)
    order = np.argsort(p, kind="stable")
    q = np.empty(m)
    for pos, idx in enumerate(order):
        best = np.inf
        for r in range(pos + 1, m + 1):
            b = oracle_beta(family, r)
            if b > 0.0:
                best = min(best, m * p[order[r - 1]] / b)
        q[idx] = best
    return q


def random_family(rng, m):
    kind = rng.integers(3)
    if kind == 0:
        return ThresholdFamily.dense(m)
    if kind == 1:
        nu = rng.random(m) * (rng.random(m) < 0.6)
        if nu.sum() == 0.0:
            nu[rng.integers(m)] = 1.0
        return ThresholdFamily.from_shape(m, nu / nu.sum())
    n_knots = int(rng.integers(1, m + 1))
    a = np.sort(rng.choice(np.arange(1, m + 1), size=n_knots, replace=False))
    a[0] = 1
    a = np.unique(a)
    return ThresholdFamily.from_knots(m, a)


# ----------------------------------------------------------------------
# step_up


def test_stepup_single_rejection_example():
    res = step_up([0.01, 0.04, 0.5], ThresholdFamily.dense(3), 0.05)
    assert res.count == 1
    assert set(res.indices) == {0}


def test_stepup_all_zero_rejects_all():
    for fam in (ThresholdFamily.dense(4), ThresholdFamily.by(4),
                geometric_thresholds(4, 2.0)):
        res = step_up(np.zeros(4), fam, 1e-9)
        assert res.count == 4
        assert res.rejected.all()


def test_stepup_boundary_pass_example():
    # p_(2) = 0.03 <= 0.05 * 2 / 3
    res = step_up([0.01, 0.03, 0.5], ThresholdFamily.dense(3), 0.05)
    assert res.count == 2
    assert set(res.indices) == {0, 1}


def test_stepup_monotone_in_alpha():
    rng = np.random.default_rng(20240811)
    for _ in range(200):
        m = int(rng.integers(1, 30))
        fam = random_family(rng, m)
        p = rng.random(m) ** 2
        alphas = np.sort(rng.random(4))
        prev = set()
        for a in alphas:
            cur = set(step_up(p, fam, a).indices)
            assert prev <= cur
            prev = cur


def test_stepup_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(300):
        m = int(rng.integers(1, 25))
        fam = random_family(rng, m)
        p = np.round(rng.random(m), 3)  # rounding provokes ties
        alpha = float(rng.choice([0.01, 0.05, 0.2, 0.5, 1.0]))
        res = step_up(p, fam, alpha)
        assert res.count == oracle_stepup_count(p, fam, alpha)
        assert set(res.indices) == oracle_reject_set(p, fam, alpha)
        assert res.rejected.sum() == res.count


def test_stepup_tie_boundary_rejects_together():
    res = step_up([0.02, 0.02, 0.9], ThresholdFamily.dense(3), 0.05)
    # 0.02 <= 0.05*2/3; both tied values rejected together
    assert res.count == 2
    assert set(res.indices) == {0, 1}


def test_stepup_validation():
    fam = ThresholdFamily.dense(3)
    with pytest.raises(ValueError):
        step_up([0.1, 0.2], fam, 0.05)
    with pytest.raises(ValueError):
        step_up([0.1, 0.2, 0.3], fam, -0.01)
    with pytest.raises(ValueError):
        step_up([0.1, 0.2, 0.3], fam, 1.01)
    with pytest.raises(ValueError):
        PValueVector(np.array([0.1, 1.2]))


def test_stepup_tie_tol_flag():
    fam = ThresholdFamily.dense(2)
    thr = 0.05 / 2
    p = [np.nextafter(thr, 1.0), 0.9]
    assert step_up(p, fam, 0.05).count == 0
    assert step_up(p, fam, 0.05, tie_tol=1e-12).count == 1


# ----------------------------------------------------------------------
# q_values


def test_q_values_dense_example():
    q = q_values([0.01, 0.04, 0.5], ThresholdFamily.dense(3))
    assert np.allclose(q, [0.03, 0.06, 0.5], rtol=0, atol=1e-15)


def test_q_values_all_equal():
    u = 0.37
    q = q_values(np.full(5, u), ThresholdFamily.dense(5))
    assert np.allclose(q, u, rtol=0, atol=1e-15)


def test_q_values_knots_example():
    fam = ThresholdFamily.from_knots(2, [1, 2])
    q = q_values([0.001, 0.9], fam)
    assert q[0] == pytest.approx(0.002, abs=1e-15)


def test_q_values_match_oracle():
    rng = np.random.default_rng(11)
    for _ in range(200):
        m = int(rng.integers(1, 20))
        fam = random_family(rng, m)
        p = np.round(rng.random(m), 3)
        assert np.allclose(q_values(p, fam), oracle_q(p, fam),
                           rtol=1e-12, atol=0, equal_nan=True)


def test_q_value_consistency_with_stepup():
    rng = np.random.default_rng(13)
    for _ in range(300):
        m = int(rng.integers(1, 25))
        fam = random_family(rng, m)
        p = rng.random(m)
        q = q_values(p, fam)
        for alpha in rng.random(4):
            rej = step_up(p, fam, alpha).rejected
            assert np.array_equal(q <= alpha, rej)


def test_q_values_can_exceed_one_for_knots():
    fam = ThresholdFamily.from_knots(4, [1, 2])  # beta(4) = 2
    q = q_values([0.9, 0.91, 0.92, 0.93], fam)
    assert q.max() > 1.0
    assert not step_up([0.9, 0.91, 0.92, 0.93], fam, 1.0).rejected.any()


# ----------------------------------------------------------------------
# effective_threshold


def test_effective_threshold_examples():
    fam = ThresholdFamily.dense(3)
    assert effective_threshold([0.01, 0.04, 0.5], fam, 0.05) == pytest.approx(
        0.05 * 1 / 3, abs=1e-16)
    assert effective_threshold([0.01, 0.04, 0.5], fam, 0.0) == 0.0
    assert effective_threshold([0.01, 0.03, 0.5], fam, 0.05) == pytest.approx(
        0.05 * 2 / 3, abs=1e-16)


def test_effective_threshold_equivalence():
    rng = np.random.default_rng(17)
    for _ in range(200):
        m = int(rng.integers(1, 20))
        fam = random_family(rng, m)
        p = rng.random(m)
        q = q_values(p, fam)
        for c in rng.random(3) * 1.5:
            tau = effective_threshold(p, fam, c)
            assert np.array_equal(p <= tau, q <= c)


# ----------------------------------------------------------------------
# geometric_thresholds


def test_geometric_m8_base2():
    fam = geometric_thresholds(8, 2.0)
    assert fam.block_lo.tolist() == [1, 2, 4]
    assert fam.correction == pytest.approx(2.0, abs=1e-15)


def test_geometric_m1_bonferroni():
    fam = geometric_thresholds(1, 2.0)
    assert fam.block_lo.tolist() == [1]
    assert fam.correction == pytest.approx(1.0, abs=1e-15)
    fam = geometric_thresholds(1, 7.5)
    assert fam.block_lo.tolist() == [1]


def test_geometric_m5_base2_beta_table():
    fam = geometric_thresholds(5, 2.0)
    assert fam.beta_table().tolist() == [1.0, 2.0, 2.0, 4.0, 4.0]


def test_geometric_base2_power_identity():
    # beta(r) = 2^floor(log2 r) except possibly at r = m for m a power of two
    for m in (3, 5, 8, 17, 64, 100):
        fam = geometric_thresholds(m, 2.0)
        beta = fam.beta_table()
        for r in range(1, m + 1):
            expect = float(2 ** int(np.floor(np.log2(r))))
            if r == m and m & (m - 1) == 0 and m > 1:
                assert beta[r - 1] == expect / 2
            else:
                assert beta[r - 1] == expect


def test_geometric_validation():
    with pytest.raises(ValueError):
        geometric_thresholds(5, 1.0)
    with pytest.raises(ValueError):
        geometric_thresholds(0, 2.0)


def test_geometric_breakpoints_well_formed():
    rng = np.random.default_rng(23)
    for _ in range(100):
        m = int(rng.integers(1, 300))
        base = float(1.0 + rng.random() * 4.0 + 1e-6)
        fam = geometric_thresholds(m, base)
        a = fam.block_lo
        assert a[0] == 1 and a[-1] <= m
        assert np.all(np.diff(a) > 0)


# ----------------------------------------------------------------------
# leave_one_rejections and the rejection equivalences


def test_leave_one_examples():
    fam = ThresholdFamily.dense(2)
    p = [0.04, 0.5]
    r0 = leave_one_rejections(p, fam, 0.05, 0)
    assert r0 == 1
    assert not (0.04 <= 0.05 * 1 / 2)
    assert step_up(p, fam, 0.05).count == 0 != r0

    p = [0.02, 0.5]
    r0 = leave_one_rejections(p, fam, 0.05, 0)
    assert r0 == 1
    assert 0.02 <= 0.05 * 1 / 2
    assert step_up(p, fam, 0.05).count == 1 == r0


def test_leave_one_zero_is_identity():
    fam = ThresholdFamily.dense(4)
    p = [0.0, 0.3, 0.6, 0.9]
    assert leave_one_rejections(p, fam, 0.2, 0) == step_up(p, fam, 0.2).count


def test_leave_one_equivalence_sweep():
    rng = np.random.default_rng(29)
    checks = 0
    while checks < 10_000:
        m = int(rng.integers(1, 30))
        fam = random_family(rng, m)
        p = rng.random(m) ** 2
        alpha = float(rng.random())
        res = step_up(p, fam, alpha)
        for i in rng.integers(0, m, size=min(m, 4)):
            r0 = leave_one_rejections(p, fam, alpha, int(i))
            in_r = bool(res.rejected[i])
            assert in_r == (p[i] <= alpha * fam.beta(r0) / m)
            assert in_r == (res.count == r0)
            checks += 1


def test_leave_one_validation():
    fam = ThresholdFamily.dense(3)
    with pytest.raises(ValueError):
        leave_one_rejections([0.1, 0.2, 0.3], fam, 0.05, 3)


# ----------------------------------------------------------------------
# family structure


def test_shape_normalization_enforced():
    with pytest.raises(ValueError):
        ThresholdFamily.from_shape(3, [0.5, 0.4, 0.2])
    with pytest.raises(ValueError):
        ThresholdFamily.from_shape(3, [-0.1, 0.6, 0.5])


def test_beta_at_most_rank():
    rng = np.random.default_rng(31)
    for _ in range(100):
        m = int(rng.integers(1, 40))
        fam = random_family(rng, m)
        beta = fam.beta_table()
        assert np.all(beta <= np.arange(1, m + 1) * (1 + 1e-9))
        assert np.all(np.diff(beta) >= 0)


def test_by_family_equals_scaled_dense():
    m = 23
    by = ThresholdFamily.by(m)
    h = harmonic_number(m)
    assert np.allclose(by.beta_table(), np.arange(1, m + 1) / h, rtol=1e-12)
    rng = np.random.default_rng(37)
    for _ in range(50):
        p = rng.random(m) ** 3
        alpha = float(rng.random())
        # independent enumeration of the harmonic-corrected linear step-up
        ps = np.sort(p)
        r_oracle = max((r for r in range(1, m + 1)
                        if ps[r - 1] <= alpha * r / (m * h)), default=0)
        res = step_up(p, by, alpha)
        assert res.count == r_oracle
        if r_oracle:
            assert set(res.indices) == set(
                np.flatnonzero(p <= alpha * r_oracle / (m * h)))


def test_by_matches_oracle_rejections():
    rng = np.random.default_rng(41)
    m = 12
    by = ThresholdFamily.by(m)
    for _ in range(100):
        p = rng.random(m) ** 2
        alpha = float(rng.random())
        assert set(step_up(p, by, alpha).indices) == oracle_reject_set(p, by, alpha)


def test_knots_correction_value():
    fam = ThresholdFamily.from_knots(8, [1, 2, 4])
    assert fam.correction == pytest.approx(1 / 1 + 1 / 2 + 2 / 4, abs=1e-15)


def test_dense_correction_is_harmonic():
    assert ThresholdFamily.dense(4).correction == pytest.approx(
        1 + 0.5 + 1 / 3 + 0.25, abs=1e-15)


def test_shape_with_zero_head_mass():
    # nu concentrated on rank 3: beta = (0, 0, 3, 3) and q handles the zeros
    fam = ThresholdFamily.from_shape(4, [0.0, 0.0, 1.0, 0.0])
    assert fam.beta_table().tolist() == [0.0, 0.0, 3.0, 3.0]
    q = q_values([0.0, 0.2, 0.5, 0.9], fam)
    assert np.isfinite(q).all()
    res = step_up([0.0, 0.01, 0.02, 0.9], fam, 0.1)
    assert res.count == oracle_stepup_count([0.0, 0.01, 0.02, 0.9], fam, 0.1)
