"""Shared randomized-problem builders and brute-force oracles."""

import numpy as np

from depfdr.models import (ArCovariance, BlockCovariance, DenseCovariance,
                           IdentityCovariance, MvtProblem, MvzProblem,
                           reconstruct)
from depfdr.stepup import ThresholdFamily, step_up


def random_covariance(rng, m):
    kind = rng.integers(0, 4)
    if kind == 0 or m == 1:
        return IdentityCovariance(m)
    if kind == 1:
        return ArCovariance(m, float(rng.uniform(-0.9, 0.9)))
    if kind == 2:
        size = int(rng.integers(2, m + 1))
        return BlockCovariance(m, size, float(rng.uniform(0.0, 0.8)))
    raw = rng.normal(size=(m, m + 3))
    gram = raw @ raw.T + 0.3 * np.eye(m)
    scale = np.sqrt(np.diag(gram))
    return DenseCovariance(gram / np.outer(scale, scale))


def random_family(rng, m):
    kind = rng.integers(0, 3)
    if kind == 0:
        return ThresholdFamily.dense(m)
    if kind == 1:
        w = rng.uniform(0.0, 1.0, size=m)
        w[rng.random(m) < 0.3] = 0.0
        if w.sum() == 0.0:
            w[-1] = 1.0
        return ThresholdFamily.from_shape(m, w / w.sum())
    knots = [1]
    while knots[-1] < m:
        step = int(rng.integers(1, max(2, m // 2)))
        if knots[-1] + step > m:
            break
        knots.append(knots[-1] + step)
    return ThresholdFamily.from_knots(m, np.array(knots))


def random_mvz(rng, m, side):
    cov = random_covariance(rng, m)
    z = rng.normal(scale=1.5, size=m)
    return MvzProblem(z, cov, side)


def random_mvt(rng, m, side):
    cov = random_covariance(rng, m)
    z = rng.normal(scale=1.5, size=m)
    df = int(rng.integers(3, 40))
    sig = float(rng.chisquare(df) / df)
    return MvtProblem(z, cov, df, sig, side)


def oracle_count_at(problem, i, cond, level, fam, t):
    """From-scratch step-up count on the reconstructed vector at t."""
    stats = reconstruct(problem, i, cond, float(t))
    return step_up(problem.tail_p(stats), fam, level).count


def rows_stepup_count(p_rows, fam, level):
    """Vectorized step-up count per row of a (n, m) p-value matrix."""
    thresholds = level * fam.beta_table() / fam.m
    p_sorted = np.sort(p_rows, axis=1)
    ranks = np.arange(1, fam.m + 1)
    feasible = p_sorted <= thresholds[None, :]
    return np.where(feasible, ranks[None, :], 0).max(axis=1)
