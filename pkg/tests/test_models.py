"""Models: covariances, problems, conditioning, reconstruction, OLS."""

import numpy as np
import pytest

from depfdr import distributions as dist
from depfdr.models import (
    ArCovariance,
    BlockCovariance,
    ConditioningStatistic,
    DenseCovariance,
    IdentityCovariance,
    LinearModelProblem,
    MvtProblem,
    MvzProblem,
    conditioning_statistic,
    covariance_from_json,
    default_gamma,
    marginal_pvalues,
    ols_reduce,
    problem_from_json,
    problem_to_json,
    reconstruct,
)


def dense_of(cov):
    return np.column_stack([cov.column(i) for i in range(cov.m)])


# ----------------------------------------------------------------------
# covariance representations


def test_ar_entries_and_columns():
    cov = ArCovariance(5, 0.8)
    mat = dense_of(cov)
    expect = 0.8 ** np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    assert np.allclose(mat, expect, rtol=0, atol=1e-15)
    assert cov.entry(0, 4) == pytest.approx(0.8 ** 4)
    assert not cov.is_diagonal and cov.all_nonnegative
    assert not ArCovariance(5, -0.8).all_nonnegative


def test_block_entries_partial_last_block():
    cov = BlockCovariance(7, 3, 0.5)
    mat = dense_of(cov)
    for i in range(7):
        for j in range(7):
            if i == j:
                assert mat[i, j] == 1.0
            elif i // 3 == j // 3:
                assert mat[i, j] == 0.5
            else:
                assert mat[i, j] == 0.0
    np.linalg.cholesky(mat)  # positive definite


def test_block_negative_rho_bounds():
    BlockCovariance(6, 3, -0.45)  # > -1/2, fine
    with pytest.raises(ValueError):
        BlockCovariance(6, 3, -0.5)
    with pytest.raises(ValueError):
        BlockCovariance(6, 3, 1.0)


def test_dense_validation():
    with pytest.raises(ValueError):
        DenseCovariance([[1.0, 0.2], [0.3, 1.0]])  # asymmetric
    with pytest.raises(ValueError):
        DenseCovariance([[1.0, 0.2], [0.2, 0.9]])  # diagonal not 1
    with pytest.raises(ValueError):
        DenseCovariance([[1.0, 1.0], [1.0, 1.0]])  # singular
    cov = DenseCovariance([[1.0, -0.3], [-0.3, 1.0]])
    assert cov.entry(1, 0) == -0.3


def test_sampling_covariances_match():
    rng = np.random.default_rng(101)
    n = 60_000
    tol = 4.0 / np.sqrt(n) * 2.0
    for cov in (ArCovariance(6, 0.8), ArCovariance(6, -0.6),
                BlockCovariance(6, 3, 0.5), IdentityCovariance(4),
                DenseCovariance(np.eye(3) * 0.7 + 0.3)):
        x = cov.sample(rng, n)
        emp = x.T @ x / n
        assert np.max(np.abs(emp - dense_of(cov))) < tol


def test_covariance_json_roundtrip():
    for cov in (ArCovariance(4, 0.8), BlockCovariance(9, 4, 0.2),
                IdentityCovariance(3),
                DenseCovariance([[1.0, 0.1], [0.1, 1.0]])):
        back = covariance_from_json(cov.to_json(), m=cov.m)
        assert np.allclose(dense_of(back), dense_of(cov), rtol=0, atol=0)


# ----------------------------------------------------------------------
# marginal p-values


def test_pvalue_z_zero_one_sided():
    prob = MvzProblem(np.zeros(3), IdentityCovariance(3), "one")
    assert np.allclose(marginal_pvalues(prob).values, 0.5, rtol=0, atol=0)


def test_pvalue_z_quantile():
    prob = MvzProblem(np.array([1.6449]), IdentityCovariance(1), "one")
    assert marginal_pvalues(prob).values[0] == pytest.approx(0.05, abs=5e-5)


def test_pvalue_t_zero_two_sided():
    prob = MvtProblem(np.zeros(2), IdentityCovariance(2), 5, 1.0, "two")
    assert np.allclose(marginal_pvalues(prob).values, 1.0, rtol=0, atol=0)


def test_two_sided_combination_exact():
    rng = np.random.default_rng(7)
    z = rng.standard_normal(50) * 2
    prob = MvzProblem(z, IdentityCovariance(50), "two")
    res = marginal_pvalues(prob)
    assert np.array_equal(res.values, 2.0 * np.minimum(res.plus, res.minus))
    assert res.values.max() <= 1.0
    prob_t = MvtProblem(z, IdentityCovariance(50), 7, 1.3, "two")
    res_t = marginal_pvalues(prob_t)
    assert np.array_equal(res_t.values, 2.0 * np.minimum(res_t.plus, res_t.minus))


def test_t_statistics_scaling():
    z = np.array([1.0, -2.0])
    prob = MvtProblem(z, IdentityCovariance(2), 5, 4.0, "one")
    assert np.allclose(prob.statistics, z / 2.0, rtol=0, atol=0)
    assert np.allclose(marginal_pvalues(prob).values, dist.t_sf(z / 2.0, 5),
                       rtol=0, atol=0)


def test_problem_validation():
    with pytest.raises(ValueError):
        MvzProblem(np.array([np.nan]), IdentityCovariance(1), "one")
    with pytest.raises(ValueError):
        MvzProblem(np.zeros(2), IdentityCovariance(3), "one")
    with pytest.raises(ValueError):
        MvzProblem(np.zeros(2), IdentityCovariance(2), "both")
    with pytest.raises(ValueError):
        MvtProblem(np.zeros(2), IdentityCovariance(2), 0, 1.0, "one")
    with pytest.raises(ValueError):
        MvtProblem(np.zeros(2), IdentityCovariance(2), 5, 0.0, "one")


# ----------------------------------------------------------------------
# conditioning statistics


def test_conditioning_identity_cov():
    z = np.array([0.3, -1.2, 2.5])
    prob = MvzProblem(z, IdentityCovariance(3), "one")
    cond = conditioning_statistic(prob, 1)
    assert np.allclose(cond.s, [0.3, 2.5], rtol=0, atol=0)


def test_conditioning_z_example():
    cov = DenseCovariance([[1.0, 0.5], [0.5, 1.0]])
    prob = MvzProblem(np.array([1.0, 2.0]), cov, "one")
    cond = conditioning_statistic(prob, 0)
    assert cond.s[0] == pytest.approx(1.5, abs=1e-15)


def test_conditioning_t_example():
    prob = MvtProblem(np.array([1.0, 0.7]), IdentityCovariance(2), 5, 2.0, "one")
    cond = conditioning_statistic(prob, 0)
    assert cond.v == pytest.approx(11.0, abs=1e-12)
    assert cond.u[0] == pytest.approx(0.7, abs=1e-15)


def test_conditioning_independence_mc():
    # sample correlation between Z_i and each coordinate of the conditioning
    # statistic vanishes under the null
    rng = np.random.default_rng(42)
    reps = 100_000
    cov = ArCovariance(4, 0.6)
    zs = cov.sample(rng, reps)
    i = 1
    col = np.delete(cov.column(i), i)
    s = np.delete(zs, i, axis=1) - np.outer(zs[:, i], col)
    corr = s.T @ zs[:, i] / reps
    assert np.max(np.abs(corr)) < 4.0 / np.sqrt(reps)


def test_conditioning_t_identity_exact():
    rng = np.random.default_rng(3)
    df = 7
    z = rng.standard_normal(4)
    sig_sq = float(rng.chisquare(df)) / df
    prob = MvtProblem(z, ArCovariance(4, 0.5), df, sig_sq, "two")
    for i in range(4):
        cond = conditioning_statistic(prob, i)
        w_sq = df * sig_sq
        t_i = prob.statistics[i]
        assert cond.v == pytest.approx(w_sq * (1.0 + t_i ** 2 / df), rel=1e-14)


# ----------------------------------------------------------------------
# reconstruction


def test_reconstruct_z_example():
    cov = DenseCovariance([[1.0, 0.5], [0.5, 1.0]])
    prob = MvzProblem(np.array([1.0, 2.0]), cov, "one")
    cond = conditioning_statistic(prob, 0)
    out = reconstruct(prob, 0, cond, 0.0)
    assert np.allclose(out, [0.0, 1.5], rtol=0, atol=1e-15)


def test_reconstruct_roundtrip_exact():
    rng = np.random.default_rng(11)
    for side in ("one", "two"):
        z = rng.standard_normal(5)
        prob = MvzProblem(z, ArCovariance(5, -0.7), side)
        for i in range(5):
            cond = conditioning_statistic(prob, i)
            out = reconstruct(prob, i, cond, z[i])
            assert np.allclose(out, z, rtol=1e-10, atol=0)
        tprob = MvtProblem(z, BlockCovariance(5, 2, 0.4), 9, 1.7, side)
        tstats = tprob.statistics
        for i in range(5):
            cond = conditioning_statistic(tprob, i)
            out = reconstruct(tprob, i, cond, tstats[i])
            assert np.allclose(out, tstats, rtol=1e-10, atol=0)


def test_reconstruct_t_diagonal_monotone():
    prob = MvtProblem(np.array([0.5, 1.0, -0.8]), IdentityCovariance(3), 6,
                      1.2, "one")
    cond = conditioning_statistic(prob, 0)
    ts = np.linspace(-4, 4, 41)
    vals = np.array([reconstruct(prob, 0, cond, t) for t in ts])
    radial = np.delete(vals, 0, axis=1)
    # |T_j(t)| = |U_j| sqrt((df+t^2)/V): increasing in |t|
    mags = np.abs(radial)
    half = mags[ts >= 0]
    assert np.all(np.diff(half, axis=0) >= -1e-12)
    # finite differences match d/dt U_j sqrt((df+t^2)/V) = U_j t / sqrt(V(df+t^2))
    u = cond.u
    t0 = 1.3
    h = 1e-6
    fd = (reconstruct(prob, 0, cond, t0 + h)[1:]
          - reconstruct(prob, 0, cond, t0 - h)[1:]) / (2 * h)
    grad = u / np.sqrt(cond.v) * t0 / np.sqrt(prob.df + t0 ** 2)
    assert np.allclose(fd, grad, rtol=1e-6, atol=1e-9)


def test_reconstruct_index_mismatch():
    prob = MvzProblem(np.zeros(3), IdentityCovariance(3), "one")
    cond = conditioning_statistic(prob, 1)
    with pytest.raises(ValueError):
        reconstruct(prob, 0, cond, 0.5)


# ----------------------------------------------------------------------
# OLS reduction


def fwl_t_oracle(X, y, k):
    """Classical per-coefficient t-stat via residualized 1-d regression."""
    n, d = X.shape
    others = np.delete(np.arange(d), k)
    proj = X[:, others] @ np.linalg.lstsq(X[:, others], X[:, k], rcond=None)[0]
    xk = X[:, k] - proj
    beta_k = float(xk @ y) / float(xk @ xk)
    resid = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
    sigma = np.sqrt(float(resid @ resid) / (n - d))
    return beta_k / (sigma / np.sqrt(float(xk @ xk)))


def test_ols_no_residual_df_error():
    X = np.eye(3)
    with pytest.raises(ValueError):
        LinearModelProblem(X, np.ones(3), [0, 1, 2], "two")


def test_ols_zero_rss_error():
    rng = np.random.default_rng(5)
    X, _ = np.linalg.qr(rng.standard_normal((8, 3)))
    y = X[:, 0].copy()
    lm = LinearModelProblem(X, y, [0, 1, 2], "two")
    with pytest.raises(ValueError, match="degenerate"):
        ols_reduce(lm)


def test_ols_rank_deficient_error():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((10, 4))
    X[:, 3] = X[:, 1] * 2.0 - X[:, 0]
    lm = LinearModelProblem(X, rng.standard_normal(10), [0, 1], "two")
    with pytest.raises(ValueError, match="column"):
        ols_reduce(lm)


def test_ols_matches_classical_t():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((12, 3))
    beta = np.array([1.0, 0.0, -2.0])
    y = X @ beta + rng.standard_normal(12) * 0.7
    lm = LinearModelProblem(X, y, [0, 1, 2], "two")
    red = ols_reduce(lm)
    tstats = red.statistics
    for k in range(3):
        assert tstats[k] == pytest.approx(fwl_t_oracle(X, y, k), rel=1e-10)
    assert red.df == 9
    # p-values equal direct per-coefficient t-test p-values
    pv = marginal_pvalues(lm).values
    for k in range(3):
        ref = 2.0 * dist.t_sf(abs(fwl_t_oracle(X, y, k)), 9)
        assert pv[k] == pytest.approx(ref, rel=1e-9)


def test_ols_target_subset():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((30, 6))
    y = X @ np.array([2.0, 0, 0, 0, 1.0, 0]) + rng.standard_normal(30)
    lm = LinearModelProblem(X, y, [1, 4, 5], "two")
    red = ols_reduce(lm)
    assert red.m == 3
    assert red.psi.kind == "dense"
    assert np.allclose(np.diag(red.psi.matrix), 1.0, rtol=0, atol=1e-14)
    for pos, k in enumerate((1, 4, 5)):
        assert red.statistics[pos] == pytest.approx(fwl_t_oracle(X, y, k),
                                                    rel=1e-10)


# ----------------------------------------------------------------------
# default gamma


def test_default_gamma_cases():
    one_ar = MvzProblem(np.zeros(4), ArCovariance(4, 0.8), "one")
    assert default_gamma(one_ar) == 1.0
    two_ar = MvzProblem(np.zeros(4), ArCovariance(4, 0.8), "two")
    assert default_gamma(two_ar) == 0.9
    one_neg = MvzProblem(np.zeros(4), ArCovariance(4, -0.8), "one")
    assert default_gamma(one_neg) == 0.9
    ident_two = MvzProblem(np.zeros(4), IdentityCovariance(4), "two")
    assert default_gamma(ident_two) == 1.0
    for side in ("one", "two"):
        t_diag = MvtProblem(np.zeros(4), IdentityCovariance(4), 5, 1.0, side)
        assert default_gamma(t_diag) == 1.0
        t_corr = MvtProblem(np.zeros(4), ArCovariance(4, 0.8), 5, 1.0, side)
        assert default_gamma(t_corr) == 0.9


# ----------------------------------------------------------------------
# JSON


def test_problem_json_roundtrip(tmp_path):
    z = np.array([0.2, -1.1, 3.0])
    prob = MvzProblem(z, ArCovariance(3, 0.8), "two")
    back = problem_from_json(problem_to_json(prob))
    assert isinstance(back, MvzProblem)
    assert np.allclose(back.z, z, rtol=0, atol=0)
    assert back.cov.rho == 0.8 and back.side == "two"

    tprob = MvtProblem(z, BlockCovariance(3, 2, 0.3), 8, 2.5, "one")
    back = problem_from_json(problem_to_json(tprob))
    assert back.df == 8 and back.sigma_hat_sq == 2.5

    np.savetxt(tmp_path / "X.csv", np.random.default_rng(1).standard_normal((9, 2)),
               delimiter=",")
    np.savetxt(tmp_path / "y.csv", np.arange(9.0), delimiter=",")
    lm = problem_from_json(
        {"model": "lm", "side": "two", "X": "X.csv", "y": "y.csv",
         "targets": [0, 1]},
        base_dir=str(tmp_path))
    assert isinstance(lm, LinearModelProblem)
    assert lm.X.shape == (9, 2)


def test_problem_json_validation():
    with pytest.raises(ValueError):
        problem_from_json({"model": "mvz", "statistics": [0.0],
                           "cov": {"type": "identity"}})  # no side
    with pytest.raises(ValueError):
        problem_from_json({"model": "mvt", "side": "one", "statistics": [0.0],
                           "cov": {"type": "identity"}})  # no df
    with pytest.raises(ValueError):
        problem_from_json({"model": "what", "side": "one"})
    with pytest.raises(ValueError):
        covariance_from_json({"type": "ar", "rho": 0.5})  # missing m
