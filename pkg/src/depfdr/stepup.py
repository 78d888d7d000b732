"""Step-up multiple testing procedures and rejection-threshold families.

A threshold family assigns each candidate rejection count ``r`` a value
``beta(r) <= r``; running a step-up procedure at level ``alpha`` rejects the
``R`` smallest p-values where ``R`` is the largest ``r`` such that the r-th
smallest p-value is at most ``alpha * beta(r) / m``.  Three families are
supported:

* dense: ``beta(r) = r`` (the classical linear step-up thresholds),
* shape: ``beta(r) = sum_{i<=r} i * nu[i]`` for a probability vector ``nu``,
* knots: ``beta(r)`` piecewise constant on integer breakpoints
  ``a_1 < ... < a_L``, i.e. ``beta(r) = a_l`` for ``a_l <= r < a_{l+1}``.

All procedures here operate on plain p-value arrays; they know nothing about
how the p-values were produced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericError",
    "PValueVector",
    "ThresholdFamily",
    "StepUpResult",
    "step_up",
    "q_values",
    "effective_threshold",
    "geometric_thresholds",
    "leave_one_rejections",
    "harmonic_number",
]


class NumericError(RuntimeError):
    """A numerical routine failed to reach its documented accuracy."""


def harmonic_number(m: int) -> float:
    """Return ``1 + 1/2 + ... + 1/m``, summed small-to-large."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return float(np.sum(1.0 / np.arange(m, 0, -1)))


@dataclass(frozen=True, eq=False)
class PValueVector:
    """A vector of p-values together with the sidedness that produced it.

    Parameters
    ----------
    values : array of float, shape (m,)
        P-values, each in [0, 1].
    side : {"one", "two"}
        Whether the p-values came from one- or two-sided tests.  The step-up
        machinery itself never uses this; downstream directional code does.
    """

    values: np.ndarray
    side: str = "one"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("p-values must form a 1-d array")
        if vals.size == 0:
            raise ValueError("p-value vector must be non-empty")
        if np.any(np.isnan(vals)) or vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("p-values must lie in [0, 1]")
        if self.side not in ("one", "two"):
            raise ValueError(f"side must be 'one' or 'two', got {self.side!r}")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size


def _as_pvalues(p, m: int | None = None) -> np.ndarray:
    vals = p.values if isinstance(p, PValueVector) else np.asarray(p, dtype=float)
    if vals.ndim != 1:
        raise ValueError("p-values must form a 1-d array")
    if m is not None and vals.size != m:
        raise ValueError(f"expected {m} p-values, got {vals.size}")
    return vals


@dataclass(frozen=True, eq=False)
class ThresholdFamily:
    """Rejection-count thresholds ``beta(r)`` for a step-up procedure.

    Instances are built with :meth:`dense`, :meth:`from_shape`,
    :meth:`from_knots`, :meth:`by`, or :func:`geometric_thresholds`.  Ranks
    sharing one threshold value are stored as blocks, so knots families keep
    only their breakpoints and rank lookups cost O(log L).

    Attributes
    ----------
    m : int
        Number of hypotheses.
    kind : {"dense", "shape", "knots"}
    correction : float
        Divisor that makes the family safe under arbitrary dependence when the
        calibration parameter gamma is at most ``1 / correction``: the harmonic
        sum ``1 + 1/2 + ... + 1/m`` for dense, ``sum_l (a_l - a_{l-1}) / a_l``
        for knots, and 1 for shape families (already self-normalized).
    block_values : array of float, shape (B,)
        Distinct ``beta`` values, strictly increasing (the first may be 0).
    block_lo, block_hi : arrays of int, shape (B,)
        1-based inclusive rank range sharing each value; the ranges partition
        ``{1..m}``.
    """

    m: int
    kind: str
    correction: float
    block_values: np.ndarray
    block_lo: np.ndarray
    block_hi: np.ndarray

    def __post_init__(self):
        bv = np.asarray(self.block_values, dtype=float)
        lo = np.asarray(self.block_lo, dtype=np.int64)
        hi = np.asarray(self.block_hi, dtype=np.int64)
        if not (bv.size == lo.size == hi.size >= 1):
            raise ValueError("inconsistent block arrays")
        if lo[0] != 1 or hi[-1] != self.m or np.any(lo[1:] != hi[:-1] + 1):
            raise ValueError("blocks must partition 1..m")
        if bv[0] < 0.0 or np.any(np.diff(bv) <= 0.0):
            raise ValueError("block values must be non-negative and strictly increasing")
        if np.any(bv > lo * (1.0 + 1e-9)):
            raise ValueError("beta(r) <= r must hold for every rank r")
        object.__setattr__(self, "block_values", bv)
        object.__setattr__(self, "block_lo", lo)
        object.__setattr__(self, "block_hi", hi)

    # ------------------------------------------------------------------
    # constructors

    @classmethod
    def dense(cls, m: int) -> "ThresholdFamily":
        """The linear family ``beta(r) = r``."""
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        r = np.arange(1, m + 1)
        return cls(m, "dense", harmonic_number(m), r.astype(float), r, r)

    @classmethod
    def from_shape(cls, m: int, nu) -> "ThresholdFamily":
        """Family from a probability vector ``nu`` over ranks ``1..m``.

        ``beta(r) = sum_{i<=r} i * nu[i-1]``.  ``nu`` must be non-negative
        with total mass 1 (within 1e-12); zero entries produce ranks that
        share a threshold value.
        """
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        nu = np.asarray(nu, dtype=float)
        if nu.shape != (m,):
            raise ValueError(f"nu must have shape ({m},), got {nu.shape}")
        if np.any(np.isnan(nu)) or np.any(nu < 0.0):
            raise ValueError("nu must be non-negative")
        total = float(nu.sum())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"nu must sum to 1 (within 1e-12), got {total!r}")
        beta = np.cumsum(np.arange(1, m + 1) * nu)
        # group consecutive equal values (ties arise only where nu mass is 0
        # or below float resolution)
        starts = np.flatnonzero(np.r_[True, np.diff(beta) != 0.0])
        lo = starts + 1
        hi = np.r_[starts[1:], m]
        return cls(m, "shape", 1.0, beta[starts], lo, hi)

    @classmethod
    def from_knots(cls, m: int, knots) -> "ThresholdFamily":
        """Piecewise-constant family with integer breakpoints.

        ``beta(r) = knots[l]`` for ``knots[l] <= r < knots[l+1]``, with
        ``knots[0] == 1`` required so beta is defined at r = 1.
        """
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        a = np.asarray(knots, dtype=np.int64)
        if a.ndim != 1 or a.size == 0:
            raise ValueError("knots must be a non-empty 1-d integer array")
        if a[0] != 1:
            raise ValueError("first breakpoint must be 1")
        if np.any(np.diff(a) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if a[-1] > m:
            raise ValueError("breakpoints must not exceed m")
        prev = np.r_[0, a[:-1]]
        correction = float(np.sum((a - prev) / a))
        lo = a.copy()
        hi = np.r_[a[1:] - 1, m]
        return cls(m, "knots", correction, a.astype(float), lo, hi)

    @classmethod
    def by(cls, m: int) -> "ThresholdFamily":
        """Shape family with ``nu[i-1] = 1 / (i * H_m)``: thresholds equal to
        the dense family's divided by the harmonic sum ``H_m``."""
        h = harmonic_number(m)
        return cls.from_shape(m, 1.0 / (np.arange(1, m + 1) * h))

    # ------------------------------------------------------------------
    # lookups

    def blocks_of(self, r) -> np.ndarray:
        """Block index for scalar or array ranks ``r`` in ``{1..m}``."""
        return np.searchsorted(self.block_lo, r, side="right") - 1

    def beta(self, r) -> np.ndarray | float:
        """``beta(r)`` for scalar or array ``r`` in ``{0..m}``; beta(0) = 0."""
        r_arr = np.asarray(r, dtype=np.int64)
        if np.any(r_arr < 0) or np.any(r_arr > self.m):
            raise ValueError("rank out of range")
        out = np.where(
            r_arr > 0,
            self.block_values[self.blocks_of(np.maximum(r_arr, 1))],
            0.0,
        )
        return float(out) if r_arr.ndim == 0 else out

    def beta_table(self) -> np.ndarray:
        """``beta(r)`` for r = 1..m as a dense array (computed on demand)."""
        return np.repeat(self.block_values, self.block_hi - self.block_lo + 1)

    def thresholds(self, alpha: float) -> np.ndarray:
        """Per-rank p-value thresholds ``alpha * beta(r) / m`` for r = 1..m."""
        return alpha * self.beta_table() / self.m

    def distinct_thresholds(self, alpha: float) -> np.ndarray:
        """Distinct threshold values ``alpha * block_values / m``, increasing."""
        return alpha * self.block_values / self.m


@dataclass(frozen=True, eq=False)
class StepUpResult:
    """Outcome of one step-up run.

    Attributes
    ----------
    count : int
        The rejection count R.
    rejected : array of bool, shape (m,)
        Mask of rejected hypotheses: ``p <= threshold``.  Always has exactly
        ``count`` True entries.
    threshold : float
        The realized p-value cutoff ``alpha * beta(R) / m`` (0 when R = 0).
    """

    count: int
    rejected: np.ndarray
    threshold: float

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.rejected)


def _stepup_count(p_sorted: np.ndarray, family: ThresholdFamily, alpha: float,
                  tie_tol: float = 0.0) -> int:
    thr = family.thresholds(alpha)
    ok = np.flatnonzero(p_sorted <= thr + tie_tol)
    return int(ok[-1] + 1) if ok.size else 0


def step_up(p, family: ThresholdFamily, alpha: float, *,
            tie_tol: float = 0.0) -> StepUpResult:
    """Run the step-up procedure at level ``alpha``.

    Finds the largest ``r`` such that the r-th smallest p-value is at most
    ``alpha * beta(r) / m`` (closed inequality, exact float comparison) and
    rejects every hypothesis with ``p <= alpha * beta(R) / m``.

    Parameters
    ----------
    p : array or PValueVector
    family : ThresholdFamily
    alpha : float in [0, 1]
    tie_tol : float, optional
        Absolute slack added to every comparison.  Zero (the default) gives
        exact comparisons; pass e.g. 1e-12 in adversarial regression tests
        where thresholds were reconstructed through lossy text round-trips.

    Returns
    -------
    StepUpResult
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha!r}")
    vals = _as_pvalues(p, family.m)
    r = _stepup_count(np.sort(vals), family, alpha, tie_tol)
    if r == 0:
        return StepUpResult(0, np.zeros(family.m, dtype=bool), 0.0)
    thr = alpha * family.beta(r) / family.m
    return StepUpResult(r, vals <= thr + tie_tol, thr)


def q_values(p, family: ThresholdFamily) -> np.ndarray:
    """Smallest level at which each hypothesis is rejected.

    ``q[i] = min over r >= rank(p[i]) of m * p_(r) / beta(r)``.  Satisfies
    ``q[i] <= alpha`` iff ``i`` is rejected by :func:`step_up` at ``alpha``.
    Values may exceed 1 for knots families (``beta(m) < m``); such hypotheses
    are never rejected at any level in [0, 1].  Ranks with ``beta(r) = 0``
    contribute ``inf`` (``0/0`` counts as ``inf`` too: a zero p-value is only
    ever rejected through a later rank with a positive threshold).
    """
    vals = _as_pvalues(p, family.m)
    order = np.argsort(vals, kind="stable")
    beta = family.beta_table()
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(beta > 0.0, family.m * vals[order] / beta, np.inf)
    tail_min = np.minimum.accumulate(ratios[::-1])[::-1]
    q = np.empty(family.m)
    q[order] = tail_min
    return q


def effective_threshold(p, family: ThresholdFamily, c: float, *,
                        tie_tol: float = 0.0) -> float:
    """Realized p-value cutoff of the step-up run at level ``c``.

    Returns ``c * beta(R) / m`` where R is the step-up count at level ``c``,
    and 0 when R = 0 (the natural zero-level convention).  Satisfies
    ``p[i] <= effective_threshold(p, family, c)`` iff
    ``q_values(p, family)[i] <= c``.  Unlike :func:`step_up`, levels above 1
    are allowed; they matter for q-value caps like 2 * alpha.
    """
    if not c >= 0.0:
        raise ValueError(f"c must be >= 0, got {c!r}")
    vals = _as_pvalues(p, family.m)
    r = _stepup_count(np.sort(vals), family, c, tie_tol)
    return c * family.beta(r) / family.m if r else 0.0


def geometric_thresholds(m: int, base: float) -> ThresholdFamily:
    """Knots family with geometrically growing breakpoints.

    Breakpoints are ``a_l = ceil((base**(l-1) - 1) / (base - 1) + 1)`` for
    ``l = 1..L`` where L is the smallest integer with
    ``base**L >= (base - 1) * (m - 1) + 1`` (at least 1).  For base 2 this
    gives ``beta(r) = 2**floor(log2(r))`` at every rank except r = m when m is
    an exact power of two (breakpoints never exceed m, so beta(m) = m/2
    there).

    Parameters
    ----------
    m : int >= 1
    base : float > 1

    Returns
    -------
    ThresholdFamily of kind "knots".
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if not base > 1.0:
        raise ValueError(f"base must be > 1, got {base!r}")
    reach = (base - 1.0) * (m - 1) + 1.0
    n_levels = max(1, int(np.ceil(np.log(reach) / np.log(base) - 1e-12)))
    # guard the ceil against float error in the logs
    while n_levels > 1 and base ** (n_levels - 1) >= reach:
        n_levels -= 1
    while base ** n_levels < reach:
        n_levels += 1
    levels = np.arange(1, n_levels + 1)
    raw = (base ** (levels - 1.0) - 1.0) / (base - 1.0) + 1.0
    a = np.ceil(raw - 1e-12 * np.maximum(raw, 1.0)).astype(np.int64)
    return ThresholdFamily.from_knots(m, a)


def leave_one_rejections(p, family: ThresholdFamily, alpha: float, i: int, *,
                         tie_tol: float = 0.0) -> int:
    """Step-up count after replacing ``p[i]`` by zero.

    Equivalent characterizations, each exact: hypothesis ``i`` is rejected by
    :func:`step_up` at ``alpha`` iff ``p[i] <= alpha * beta(R0) / m`` for the
    returned count R0, iff R0 equals the unmodified step-up count.
    """
    vals = _as_pvalues(p, family.m)
    if not 0 <= i < family.m:
        raise ValueError(f"index {i} out of range for m={family.m}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha!r}")
    mod = vals.copy()
    mod[i] = 0.0
    return _stepup_count(np.sort(mod), family, alpha, tie_tol)
