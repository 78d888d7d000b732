"""Test-statistic models: multivariate z, multivariate t, and linear models.

Each problem couples a statistic vector with a known correlation structure and
a sidedness.  The key operations are the marginal p-values, the per-hypothesis
conditioning statistic (everything about the data that stays fixed while one
statistic slides), and the reconstruction map that rebuilds the full statistic
vector as a function of the sliding value.  Linear models reduce to the
multivariate-t case through their OLS fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import distributions as dist
from .stepup import PValueVector

__all__ = [
    "Covariance",
    "IdentityCovariance",
    "ArCovariance",
    "BlockCovariance",
    "DenseCovariance",
    "covariance_from_json",
    "MvzProblem",
    "MvtProblem",
    "LinearModelProblem",
    "MarginalPValues",
    "ConditioningStatistic",
    "marginal_pvalues",
    "conditioning_statistic",
    "reconstruct",
    "ols_reduce",
    "default_gamma",
    "problem_from_json",
    "problem_to_json",
]


# ======================================================================
# covariance representations


class Covariance:
    """Correlation matrix with unit diagonal, stored by structure.

    Subclasses keep parameters only where possible (AR, block, identity), so
    single-entry and single-column lookups are O(1)/O(m) without ever
    materializing an m x m array; the dense kind stores the full matrix.
    """

    m: int
    kind: str

    def entry(self, j: int, i: int) -> float:
        raise NotImplementedError

    def column(self, i: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` rows from N(0, Sigma)."""
        raise NotImplementedError

    @property
    def is_diagonal(self) -> bool:
        raise NotImplementedError

    @property
    def all_nonnegative(self) -> bool:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.m:
            raise ValueError(f"index {i} out of range for m={self.m}")


class IdentityCovariance(Covariance):
    """Independent statistics."""

    kind = "identity"

    def __init__(self, m: int):
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        self.m = int(m)

    def entry(self, j, i):
        self._check_index(i)
        self._check_index(j)
        return 1.0 if i == j else 0.0

    def column(self, i):
        self._check_index(i)
        col = np.zeros(self.m)
        col[i] = 1.0
        return col

    def sample(self, rng, n):
        return rng.standard_normal((n, self.m))

    @property
    def is_diagonal(self):
        return True

    @property
    def all_nonnegative(self):
        return True

    def to_json(self):
        return {"type": "identity"}


class ArCovariance(Covariance):
    """First-order autoregressive correlation: ``Sigma[j, i] = rho**|j - i|``."""

    kind = "ar"

    def __init__(self, m: int, rho: float):
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        if not -1.0 < rho < 1.0:
            raise ValueError(f"AR parameter must be in (-1, 1), got {rho!r}")
        self.m = int(m)
        self.rho = float(rho)

    def entry(self, j, i):
        self._check_index(i)
        self._check_index(j)
        return self.rho ** abs(j - i)

    def column(self, i):
        self._check_index(i)
        return self.rho ** np.abs(np.arange(self.m) - i).astype(float)

    def sample(self, rng, n):
        from scipy.signal import lfilter

        eps = rng.standard_normal((n, self.m))
        if self.m > 1:
            eps[:, 1:] *= np.sqrt(1.0 - self.rho ** 2)
        return lfilter([1.0], [1.0, -self.rho], eps, axis=1)

    @property
    def is_diagonal(self):
        return self.rho == 0.0

    @property
    def all_nonnegative(self):
        return self.rho >= 0.0

    def to_json(self):
        return {"type": "ar", "rho": self.rho}


class BlockCovariance(Covariance):
    """Equicorrelated blocks of consecutive indices.

    ``Sigma[j, i] = rho`` when ``j != i`` fall in the same length-``size``
    block (the last block may be shorter), 0 across blocks.
    """

    kind = "block"

    def __init__(self, m: int, size: int, rho: float):
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        if size < 1:
            raise ValueError(f"block size must be >= 1, got {size}")
        k = min(size, m)
        lo = -1.0 / (k - 1) if k > 1 else -np.inf
        if not lo < rho < 1.0:
            raise ValueError(
                f"within-block correlation must be in ({lo:.4g}, 1) for "
                f"positive definiteness with block size {k}, got {rho!r}")
        self.m = int(m)
        self.size = int(size)
        self.rho = float(rho)

    def entry(self, j, i):
        self._check_index(i)
        self._check_index(j)
        if i == j:
            return 1.0
        return self.rho if j // self.size == i // self.size else 0.0

    def column(self, i):
        self._check_index(i)
        col = np.zeros(self.m)
        b = i // self.size
        col[b * self.size: (b + 1) * self.size] = self.rho
        col[i] = 1.0
        return col

    @cached_property
    def _chol(self) -> np.ndarray:
        k = min(self.size, self.m)
        block = np.full((k, k), self.rho)
        np.fill_diagonal(block, 1.0)
        return np.linalg.cholesky(block)

    def sample(self, rng, n):
        out = np.empty((n, self.m))
        chol_t = self._chol.T
        for start in range(0, self.m, self.size):
            stop = min(start + self.size, self.m)
            w = stop - start
            eps = rng.standard_normal((n, w))
            # leading sub-block of a lower Cholesky factor is the factor of
            # the leading principal submatrix
            out[:, start:stop] = eps @ chol_t[:w, :w]
        return out

    @property
    def is_diagonal(self):
        return self.rho == 0.0 or self.size == 1

    @property
    def all_nonnegative(self):
        return self.rho >= 0.0 or self.size == 1

    def to_json(self):
        return {"type": "block", "size": self.size, "rho": self.rho}


class DenseCovariance(Covariance):
    """Explicit correlation matrix; validated by Cholesky factorization."""

    kind = "dense"

    def __init__(self, matrix):
        mat = np.asarray(matrix, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
            raise ValueError("covariance must be a square matrix")
        if not np.allclose(mat, mat.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.max(np.abs(np.diag(mat) - 1.0)) > 1e-12:
            raise ValueError("covariance must have unit diagonal")
        try:
            chol = np.linalg.cholesky(mat)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        self.m = mat.shape[0]
        self.matrix = mat
        self._chol = chol

    def entry(self, j, i):
        self._check_index(i)
        self._check_index(j)
        return float(self.matrix[j, i])

    def column(self, i):
        self._check_index(i)
        return self.matrix[:, i].copy()

    def sample(self, rng, n):
        return rng.standard_normal((n, self.m)) @ self._chol.T

    @property
    def is_diagonal(self):
        off = self.matrix - np.diag(np.diag(self.matrix))
        return not np.any(off)

    @property
    def all_nonnegative(self):
        return bool(self.matrix.min() >= 0.0)

    def to_json(self):
        return {"type": "dense", "values": self.matrix.tolist()}


def covariance_from_json(obj: dict, m: int | None = None) -> Covariance:
    """Build a covariance from its JSON form; ``m`` supplies the dimension
    for parameter-only kinds."""
    kind = obj.get("type")
    if kind == "identity":
        return IdentityCovariance(_need_m(m))
    if kind == "ar":
        return ArCovariance(_need_m(m), float(obj["rho"]))
    if kind == "block":
        return BlockCovariance(_need_m(m), int(obj["size"]), float(obj["rho"]))
    if kind == "dense":
        cov = DenseCovariance(np.asarray(obj["values"], dtype=float))
        if m is not None and cov.m != m:
            raise ValueError(f"covariance is {cov.m}x{cov.m}, expected m={m}")
        return cov
    raise ValueError(f"unknown covariance type {kind!r}")


def _need_m(m):
    if m is None:
        raise ValueError("dimension m is required for this covariance type")
    return m


# ======================================================================
# problems


def _check_side(side: str) -> str:
    if side not in ("one", "two"):
        raise ValueError(f"side must be 'one' or 'two', got {side!r}")
    return side


def _check_stats(z, m: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (m,):
        raise ValueError(f"statistics must have shape ({m},), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("statistics must be finite")
    return z


@dataclass(frozen=True, eq=False)
class MvzProblem:
    """Jointly Gaussian z-statistics with known correlation.

    Attributes
    ----------
    z : array of float, shape (m,)
    cov : Covariance with unit diagonal
    side : {"one", "two"}
    """

    z: np.ndarray
    cov: Covariance
    side: str

    def __post_init__(self):
        _check_side(self.side)
        object.__setattr__(self, "z", _check_stats(self.z, self.cov.m))

    @property
    def m(self) -> int:
        return self.cov.m

    @property
    def statistics(self) -> np.ndarray:
        """The statistics on their native test scale (here: the z-scale)."""
        return self.z

    # marginal null distribution of each statistic
    def sf(self, x):
        return dist.norm_sf(x)

    def cdf(self, x):
        return dist.norm_cdf(x)

    def isf(self, q):
        return dist.norm_isf(q)

    def tail_p(self, t):
        """Marginal p-value of a statistic value ``t`` under this sidedness."""
        return dist.norm_sf(t) if self.side == "one" else 2.0 * dist.norm_sf(np.abs(t))


@dataclass(frozen=True, eq=False)
class MvtProblem:
    """Multivariate t: Gaussian numerators sharing one chi-squared scale.

    ``z`` are the Gaussian numerator statistics with correlation ``psi``
    (unit diagonal required); the t-statistics are ``z / sigma_hat`` with
    ``sigma_hat_sq`` an independent estimate on ``df`` degrees of freedom,
    so the squared scale norm is ``df * sigma_hat_sq``.
    """

    z: np.ndarray
    psi: Covariance
    df: int
    sigma_hat_sq: float
    side: str

    def __post_init__(self):
        _check_side(self.side)
        object.__setattr__(self, "z", _check_stats(self.z, self.psi.m))
        if int(self.df) != self.df or self.df < 1:
            raise ValueError(f"df must be a positive integer, got {self.df!r}")
        object.__setattr__(self, "df", int(self.df))
        if not (np.isfinite(self.sigma_hat_sq) and self.sigma_hat_sq > 0.0):
            raise ValueError(f"sigma_hat_sq must be positive, got {self.sigma_hat_sq!r}")

    @property
    def m(self) -> int:
        return self.psi.m

    @property
    def cov(self) -> Covariance:
        return self.psi

    @property
    def statistics(self) -> np.ndarray:
        """The t-statistics ``z / sigma_hat`` (psi has unit diagonal)."""
        return self.z / np.sqrt(self.sigma_hat_sq)

    def sf(self, x):
        return dist.t_sf(x, self.df)

    def cdf(self, x):
        return dist.t_cdf(x, self.df)

    def isf(self, q):
        return dist.t_isf(q, self.df)

    def tail_p(self, t):
        if self.side == "one":
            return dist.t_sf(t, self.df)
        return 2.0 * dist.t_sf(np.abs(t), self.df)


@dataclass(frozen=True, eq=False)
class LinearModelProblem:
    """Gaussian linear model ``y = X beta + noise`` testing some coefficients.

    ``targets`` lists the tested coefficient indices (columns of X).  All
    inference goes through the OLS reduction to an :class:`MvtProblem`,
    computed once and cached.
    """

    X: np.ndarray
    y: np.ndarray
    targets: np.ndarray
    side: str

    def __post_init__(self):
        _check_side(self.side)
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, d = X.shape
        if y.shape != (n,):
            raise ValueError(f"y must have shape ({n},), got {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("X and y must be finite")
        if n < d + 1:
            raise ValueError(f"need n >= d + 1 rows, got n={n}, d={d}")
        targets = np.asarray(self.targets, dtype=np.int64)
        if targets.ndim != 1 or targets.size == 0:
            raise ValueError("targets must be a non-empty 1-d index array")
        if np.unique(targets).size != targets.size:
            raise ValueError("targets must be distinct")
        if targets.min() < 0 or targets.max() >= d:
            raise ValueError("targets out of range")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "targets", targets)

    @property
    def m(self) -> int:
        return self.targets.size

    @cached_property
    def reduced(self) -> MvtProblem:
        return ols_reduce(self)

    @property
    def statistics(self) -> np.ndarray:
        return self.reduced.statistics

def _as_t_problem(problem) -> MvtProblem:
    return problem.reduced if isinstance(problem, LinearModelProblem) else problem


# ======================================================================
# marginal p-values


@dataclass(frozen=True, eq=False)
class MarginalPValues:
    """Marginal p-values plus their one-sided halves.

    ``p`` follows the problem's sidedness; ``plus[i]`` and ``minus[i]`` are
    the upper- and lower-tail one-sided p-values of statistic ``i``, with
    ``p = 2 * min(plus, minus)`` in the two-sided case.
    """

    p: PValueVector
    plus: np.ndarray
    minus: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.p.values


def marginal_pvalues(problem) -> MarginalPValues:
    """Marginal p-values of every statistic under its null.

    z-case: normal tails of ``z``; t-case: t tails of the t-statistics;
    linear model: tails of the OLS reduction.
    """
    problem = _as_t_problem(problem)
    stats = problem.statistics
    plus = problem.sf(stats)
    minus = problem.cdf(stats)
    if problem.side == "one":
        values = plus
    else:
        values = 2.0 * np.minimum(plus, minus)
    return MarginalPValues(PValueVector(values, problem.side), plus, minus)


# ======================================================================
# conditioning and reconstruction


@dataclass(frozen=True, eq=False)
class ConditioningStatistic:
    """Everything held fixed while statistic ``i`` slides.

    z-case: ``s`` has length m-1 and holds ``Z_others - Sigma_others_i * Z_i``
    in original order with index i removed.  t-case: ``u`` has length m-1 and
    holds ``Z_others - Psi_others_i * Z_i`` (unit diagonal), and ``v`` is the
    squared length of the whole standardized data vector,
    ``df * sigma_hat_sq + Z_i**2``.
    """

    kind: str  # "z" or "t"
    i: int
    s: np.ndarray | None = None
    u: np.ndarray | None = None
    v: float | None = None


def conditioning_statistic(problem, i: int) -> ConditioningStatistic:
    """Compute the conditioning statistic of hypothesis ``i``.

    The result, together with a value ``t`` for statistic ``i``, determines
    the full statistic vector via :func:`reconstruct`; under the null of
    hypothesis ``i`` it is independent of statistic ``i``.
    """
    if isinstance(problem, MvzProblem):
        if not 0 <= i < problem.m:
            raise ValueError(f"index {i} out of range for m={problem.m}")
        col = problem.cov.column(i)
        s_full = problem.z - col * problem.z[i]
        return ConditioningStatistic("z", i, s=np.delete(s_full, i))
    problem = _as_t_problem(problem)
    if not 0 <= i < problem.m:
        raise ValueError(f"index {i} out of range for m={problem.m}")
    col = problem.psi.column(i)
    u_full = problem.z - col * problem.z[i]
    v = problem.df * problem.sigma_hat_sq + problem.z[i] ** 2
    return ConditioningStatistic("t", i, u=np.delete(u_full, i), v=float(v))


def slide_coefficients(problem, i: int, cond: ConditioningStatistic):
    """Full-length coefficient arrays of the reconstruction map.

    z-case: returns ``(offset, slope)`` with statistic ``j`` equal to
    ``offset[j] + slope[j] * t`` (offset[i] = 0, slope[i] = 1).  t-case:
    returns ``(radial, slope)`` with t-statistic ``j`` equal to
    ``radial[j] * sqrt(df + t**2) + slope[j] * t`` (radial[i] = 0,
    slope[i] = 1).
    """
    if cond.kind == "z":
        offset = np.insert(cond.s, i, 0.0)
        slope = problem.cov.column(i)
        return offset, slope
    problem = _as_t_problem(problem)
    radial = np.insert(cond.u, i, 0.0) / np.sqrt(cond.v)
    slope = problem.psi.column(i)
    return radial, slope


def reconstruct(problem, i: int, cond: ConditioningStatistic, t: float) -> np.ndarray:
    """Statistic vector with statistic ``i`` slid to ``t``, all else fixed.

    At the observed value of statistic ``i`` this returns the observed
    statistics (z-scale for the z-case, t-scale for the t-case) to 1e-10
    relative accuracy.
    """
    if cond.i != i:
        raise ValueError(f"conditioning statistic belongs to index {cond.i}, not {i}")
    a, b = slide_coefficients(problem, i, cond)
    if cond.kind == "z":
        return a + b * t
    df = _as_t_problem(problem).df
    return a * np.sqrt(df + t ** 2) + b * t


# ======================================================================
# linear-model reduction


def ols_reduce(lm: LinearModelProblem) -> MvtProblem:
    """Reduce a linear model to a multivariate-t problem over its targets.

    Fits OLS once; the reduced statistics are the standardized coefficient
    estimates ``beta_hat_k / sqrt([(X'X)^-1]_kk)`` for the target columns,
    their correlation is the target sub-block of ``(X'X)^-1`` rescaled to
    unit diagonal, ``df = n - d`` and ``sigma_hat_sq = RSS / df``.  The
    t-statistics of the reduction are the classical OLS t-statistics.
    """
    X, y = lm.X, lm.y
    n, d = X.shape
    if n - d < 1:
        raise ValueError(f"no residual degrees of freedom: n={n}, d={d}")
    q_mat, r_mat = np.linalg.qr(X)
    diag = np.abs(np.diag(r_mat))
    tol = max(n, d) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        raise ValueError(f"design matrix is rank deficient at column {bad[0]}")
    beta = np.linalg.solve(r_mat, q_mat.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    scale = float(y @ y)
    if rss <= 1e-12 * max(scale, 1.0):
        raise ValueError("degenerate fit: residual sum of squares is zero")
    r_inv = np.linalg.solve(r_mat, np.eye(d))
    xtx_inv = r_inv @ r_inv.T
    sub = xtx_inv[np.ix_(lm.targets, lm.targets)]
    scales = np.sqrt(np.diag(sub))
    psi = sub / np.outer(scales, scales)
    np.fill_diagonal(psi, 1.0)
    psi = (psi + psi.T) / 2.0
    z = beta[lm.targets] / scales
    df = n - d
    return MvtProblem(z, DenseCovariance(psi), df, rss / df, lm.side)


# ======================================================================
# calibration default


def monotone_structure(problem) -> bool:
    """Whether the joint law makes every conditional rejection-count curve
    stochastically monotone the right way: one-sided z with all correlations
    non-negative, any z problem with diagonal covariance, or any t problem
    with diagonal correlation.  Under these structures an uncorrected run
    (``gamma = 1``) provably dominates its uncorrected step-up baseline."""
    if isinstance(problem, MvzProblem):
        return problem.cov.is_diagonal or (
            problem.side == "one" and problem.cov.all_nonnegative)
    return _as_t_problem(problem).psi.is_diagonal


def default_gamma(problem) -> float:
    """Conservative calibration parameter with structural exceptions.

    Returns 1 when :func:`monotone_structure` holds, otherwise 0.9.  Callers
    may always override.
    """
    return 1.0 if monotone_structure(problem) else 0.9


# ======================================================================
# JSON interface


def problem_to_json(problem) -> dict:
    """JSON form of a problem (linear models serialize their reduction)."""
    if isinstance(problem, MvzProblem):
        return {
            "model": "mvz",
            "side": problem.side,
            "statistics": problem.z.tolist(),
            "cov": problem.cov.to_json(),
        }
    problem = _as_t_problem(problem)
    return {
        "model": "mvt",
        "side": problem.side,
        "statistics": problem.z.tolist(),
        "cov": problem.psi.to_json(),
        "df": problem.df,
        "sigma_hat_sq": problem.sigma_hat_sq,
    }


def problem_from_json(obj: dict, base_dir: str | None = None):
    """Parse a problem from its JSON form.

    ``{"model": "mvz"|"mvt", "side": ..., "statistics": [...], "cov": {...},
    "df": ..., "sigma_hat_sq": ...}`` or
    ``{"model": "lm", "side": ..., "X": csv-path, "y": csv-path,
    "targets": [...]}`` with paths resolved against ``base_dir``.
    """
    import os

    model = obj.get("model")
    if model not in ("mvz", "mvt", "lm"):
        raise ValueError(f"unknown model {obj.get('model')!r}")
    side = obj.get("side")
    if side is None:
        raise ValueError("problem JSON requires a 'side' field")
    if model == "lm":
        def resolve(path):
            return path if base_dir is None else os.path.join(base_dir, path)

        X = np.loadtxt(resolve(obj["X"]), delimiter=",", ndmin=2)
        y = np.loadtxt(resolve(obj["y"]), delimiter=",")
        return LinearModelProblem(X, y, np.asarray(obj["targets"]), side)
    stats = np.asarray(obj["statistics"], dtype=float)
    cov = covariance_from_json(obj.get("cov", {"type": "identity"}), m=stats.size)
    if model == "mvz":
        return MvzProblem(stats, cov, side)
    if "df" not in obj or "sigma_hat_sq" not in obj:
        raise ValueError("mvt problems require 'df' and 'sigma_hat_sq'")
    return MvtProblem(stats, cov, int(obj["df"]), float(obj["sigma_hat_sq"]), side)
