"""Recursive refinement of the calibrated step-up procedure.

The base procedure estimates each hypothesis's final rejection count from a
plain step-up run; refinement replaces that estimate with the base
procedure's own admitted count (with the hypothesis itself adjoined) and
re-calibrates.  The admission integral then has no closed-form path: its
denominator at each slid statistic value is the admitted-set size of a full
nested calibration run on the reconstructed data.  We truncate the integral
to a finite window, locate the acceptance region exactly with the homotopy
path, approximate the denominator as piecewise constant on an equispaced
grid per acceptance interval, and add the truncated tail mass to the
estimate so the approximation errs on the conservative side.

Two shortcuts avoid most integrals.  When the base run is structurally safe,
every base-admitted hypothesis is provably admitted again, so only the
remaining cap-passing hypotheses need integration.  Otherwise the base
integral is used as a proxy: hypotheses whose base integral is below a
fraction ``proxy_constant`` of the admission bound are admitted without
integration and flagged, since the two integrals are empirically close;
``strict`` mode disables this heuristic and ``audit_proxy`` evaluates the
skipped integrals anyway so the flag's error rate can be measured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibrate import (CalibrationRecord, MethodDescriptor, RejectionReport,
                        _calibrate_core, _kernel_module, _signs_for,
                        _validate_levels, prune)
from .homotopy import acceptance_intervals
from .models import (MvtProblem, MvzProblem, _as_t_problem,
                     conditioning_statistic, default_gamma, marginal_pvalues,
                     reconstruct)
from .stepup import NumericError, ThresholdFamily

__all__ = [
    "RefineConfig",
    "RefinedRecord",
    "refined_calibrate",
    "refine_shortcuts",
]


@dataclass(frozen=True)
class RefineConfig:
    """Tuning knobs of the refinement integrator.

    ``eps`` is the tail budget: the integral is truncated where the sliding
    statistic's remaining tail mass is ``alpha * eps / m``, and that bound is
    added back to the estimate.  ``grid_points`` is the number of equispaced
    midpoint-rule cells per acceptance interval; ``None`` resolves to 20 for
    one-sided problems and 40 for two-sided ones.  ``proxy_constant`` is the
    fraction of the admission bound below which the base integral admits
    without integration (non-safe runs only); ``strict`` disables that
    shortcut, and ``audit_proxy`` evaluates the skipped integrals anyway
    (admission is unchanged) so proxy errors can be counted.  ``max_depth``
    is the refinement order: 2 re-estimates counts from the base run once;
    each extra level nests another full (and much slower) refinement inside
    every denominator evaluation.  ``engine`` selects how the nested
    calibration runs are evaluated (``"auto"``, the default, uses the
    compiled kernels whenever the problem is eligible; the engines produce
    identical rejection sets).
    """

    eps: float = 0.01
    grid_points: int | None = None
    proxy_constant: float = 0.9
    max_depth: int = 2
    strict: bool = False
    audit_proxy: bool = False
    engine: str = "auto"

    def __post_init__(self):
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must be in (0, 1), got {self.eps!r}")
        if self.grid_points is not None and self.grid_points < 1:
            raise ValueError(
                f"grid_points must be >= 1, got {self.grid_points!r}")
        if not 0.0 < self.proxy_constant < 1.0:
            raise ValueError(
                f"proxy_constant must be in (0, 1), got "
                f"{self.proxy_constant!r}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 2:
            raise ValueError(
                f"max_depth must be an integer >= 2, got {self.max_depth!r}")
        if self.engine not in ("auto", "reference", "kernel"):
            raise ValueError(
                f"engine must be 'auto', 'reference', or 'kernel', got "
                f"{self.engine!r}")

    def resolved_grid_points(self, side: str) -> int:
        if self.grid_points is not None:
            return int(self.grid_points)
        return 20 if side == "one" else 40


@dataclass(frozen=True)
class RefinedRecord(CalibrationRecord):
    """Calibration record with the refinement extras.

    ``g_at_q`` keeps the base run's exact integral; ``g2_at_q`` is the
    refined grid estimate (tail budget included), NaN when the hypothesis
    was admitted by a shortcut or skipped/failed.  ``r_hat`` is the refined
    count estimate: the base admitted count with this hypothesis adjoined.
    ``integrals_evaluated`` counts nested calibration runs performed for
    this hypothesis.
    """

    g2_at_q: float = float("nan")
    proxy_admitted: bool = False
    integrals_evaluated: int = 0


@dataclass(frozen=True)
class _ShortcutPlan:
    safe: bool
    auto_admitted: np.ndarray
    proxy_admitted: np.ndarray
    candidates: np.ndarray


def _proxy_value(rec: CalibrationRecord) -> float:
    """Best available integral estimate from a base record (NaN if none)."""
    g2 = getattr(rec, "g2_at_q", float("nan"))
    return g2 if not math.isnan(g2) else rec.g_at_q


def _shortcut_plan(base_report: RejectionReport, alpha: float,
                   config: RefineConfig) -> _ShortcutPlan:
    m = len(base_report.records)
    bound = alpha / m
    safe = base_report.descriptor.safe
    auto, proxied, cands = [], [], []
    for rec in base_report.records:
        if not rec.accepted_by_cap:
            continue
        if safe and rec.in_r_plus:
            auto.append(rec.i)
        elif (not safe and not config.strict
              and _proxy_value(rec) <= config.proxy_constant * bound):
            auto.append(rec.i)
            proxied.append(rec.i)
        else:
            cands.append(rec.i)
    return _ShortcutPlan(safe,
                         np.asarray(auto, dtype=np.int64),
                         np.asarray(proxied, dtype=np.int64),
                         np.asarray(cands, dtype=np.int64))


def refine_shortcuts(base_report: RejectionReport, alpha: float,
                     config: RefineConfig | None = None) -> np.ndarray:
    """Hypotheses that still need the refined integral after shortcuts.

    Safe base runs auto-admit everything they already admitted; non-safe
    runs auto-admit hypotheses whose base integral is below
    ``proxy_constant`` times the admission bound (unless ``strict``).  The
    remaining cap-passing hypotheses are returned for full integration.
    """
    config = RefineConfig() if config is None else config
    return _shortcut_plan(base_report, alpha, config).candidates


def _shifted_problem(problem, i: int, cond, t: float):
    """The reconstructed problem with statistic ``i`` slid to ``t``.

    The conditioning statistic of hypothesis ``i`` is preserved exactly, so
    sliding commutes with nesting.
    """
    if isinstance(problem, MvzProblem):
        return MvzProblem(reconstruct(problem, i, cond, t), problem.cov,
                          problem.side)
    tp = _as_t_problem(problem)
    stats = reconstruct(tp, i, cond, t)  # native t-scale
    sig2 = cond.v / (tp.df + t * t)
    return MvtProblem(stats * math.sqrt(sig2), tp.psi, tp.df, sig2, tp.side)


def _report_at_depth(problem, fam, alpha, gamma, config, depth,
                     tail_eps) -> RejectionReport:
    """Unpruned report of the depth-``depth`` procedure (1 = base run)."""
    if depth <= 1:
        return _calibrate_core(problem, fam, alpha, gamma, None, tail_eps,
                               skip_prune=True, engine=config.engine)
    return _refined_report(problem, fam, alpha, gamma, config, depth,
                           tail_eps, prune_seed=None, skip_prune=True)


def _nested_count(problem, fam, alpha, gamma, config, depth, tail_eps,
                  i: int, cond, t: float) -> int:
    """Denominator value at grid point ``t``: the admitted count of a full
    depth-``depth - 1`` run on the reconstructed data, with ``i`` adjoined."""
    shifted = _shifted_problem(problem, i, cond, t)
    if depth - 1 <= 1:
        kern = _kernel_module(config.engine, shifted)
        if kern is not None:
            # same decision arrays as the report below, minus its packaging
            return kern.nested_admitted_count(shifted, fam, alpha, gamma,
                                              tail_eps, i)
    rep = _report_at_depth(shifted, fam, alpha, gamma, config, depth - 1,
                           tail_eps)
    count = int(rep.rejected.size)
    return count if rep.records[i].in_r_plus else count + 1


def _refined_integral(problem, fam, alpha, gamma, config, depth, tail_eps,
                      i: int, c: float):
    """Grid estimate of the refined admission integral at level ``c``.

    Returns ``(estimate, evaluations)``; the estimate includes the truncated
    tail budget ``alpha * eps / m``, so truncation errs conservative.
    """
    m = fam.m
    trunc = alpha * config.eps / m
    if c <= trunc:
        # the acceptance region has mass at most c, the denominator is at
        # least 1, so c + trunc already bounds the integral — and admits
        return c + trunc, 0
    cond = conditioning_statistic(problem, i)
    intervals = acceptance_intervals(problem, i, cond, c, fam,
                                     tail_eps=trunc)
    n_cells = config.resolved_grid_points(problem.side)
    total = 0.0
    evaluated = 0
    for start, end in intervals:
        edges = np.linspace(start, end, n_cells + 1)
        mids = (edges[:-1] + edges[1:]) / 2.0
        if end <= 0.0:  # mirrored negative window: cdf increments
            masses = problem.cdf(edges[1:]) - problem.cdf(edges[:-1])
        else:
            masses = problem.sf(edges[:-1]) - problem.sf(edges[1:])
        masses = np.maximum(masses, 0.0)
        for t_k, mass_k in zip(mids, masses):
            denom = _nested_count(problem, fam, alpha, gamma, config, depth,
                                  tail_eps, i, cond, float(t_k))
            total += mass_k / denom
            evaluated += 1
    return total + trunc, evaluated


def _refined_report(problem, fam, alpha, gamma, config, depth, tail_eps,
                    prune_seed, skip_prune: bool) -> RejectionReport:
    base = _report_at_depth(problem, fam, alpha, gamma, config, depth - 1,
                            tail_eps)
    plan = _shortcut_plan(base, alpha, config)
    m = fam.m
    bound = alpha / m

    g2 = np.full(m, np.nan)
    evals = np.zeros(m, dtype=np.int64)
    admitted = np.zeros(m, dtype=bool)
    admitted[plan.auto_admitted] = True
    to_integrate = list(plan.candidates)
    if config.audit_proxy:
        to_integrate += list(plan.proxy_admitted)
    for i in to_integrate:
        i = int(i)
        c = base.records[i].q
        try:
            val, n_eval = _refined_integral(problem, fam, alpha, gamma,
                                            config, depth, tail_eps, i, c)
        except (NumericError, ValueError, ArithmeticError):
            continue  # failed integrals never reject
        g2[i] = val
        evals[i] = n_eval
        if not admitted[i]:  # audited proxy admissions stay admitted
            admitted[i] = val <= bound

    base_in_plus = np.array([rec.in_r_plus for rec in base.records])
    r_hat = int(np.count_nonzero(base_in_plus)) + (~base_in_plus).astype(
        np.int64)
    r_plus = np.flatnonzero(admitted)
    pruning_needed = (not skip_prune) and bool(r_plus.size) and bool(
        np.any(r_hat[r_plus] > r_plus.size))
    if pruning_needed:
        if prune_seed is None:
            raise ValueError(
                "pruning is required for this input; pass an explicit "
                "prune_seed to own the randomization")
        rejected = prune(r_plus, r_hat[r_plus], prune_seed)
        seed_used: int | None = int(prune_seed)
    else:
        rejected = r_plus
        seed_used = None

    rejected_mask = np.zeros(m, dtype=bool)
    rejected_mask[rejected] = True
    mp = marginal_pvalues(problem)
    signs = _signs_for(problem, mp, rejected_mask)
    proxy_mask = np.zeros(m, dtype=bool)
    proxy_mask[plan.proxy_admitted] = True
    records = tuple(
        RefinedRecord(
            i=rec.i, p=rec.p, q=rec.q, g_at_q=rec.g_at_q,
            r_hat=int(r_hat[rec.i]), accepted_by_cap=rec.accepted_by_cap,
            in_r_plus=bool(admitted[rec.i]),
            pruned=bool(admitted[rec.i] and not rejected_mask[rec.i]),
            sign=signs[rec.i], g2_at_q=float(g2[rec.i]),
            proxy_admitted=bool(proxy_mask[rec.i]),
            integrals_evaluated=int(evals[rec.i]))
        for rec in base.records)
    descriptor = MethodDescriptor(
        "refined-dsu", float(alpha), float(gamma), fam.kind, problem.side,
        depth=depth, safe=plan.safe)
    return RejectionReport(np.asarray(rejected, dtype=np.int64), records,
                           pruning_needed, seed_used, descriptor)


def refined_calibrate(problem, family: ThresholdFamily | None = None,
                      alpha: float = 0.05, gamma: float | None = None,
                      config: RefineConfig | None = None, *,
                      prune_seed: int | None = None,
                      tail_eps: float | None = None) -> RejectionReport:
    """Recursively refined calibration at level ``alpha``.

    Runs the base calibration, replaces each hypothesis's count estimate
    with the base admitted count (plus itself), and re-admits by the refined
    integral — evaluated by nesting a full calibration run at every grid
    point of the truncated acceptance region, except where the shortcuts in
    :func:`refine_shortcuts` make the outcome known.  Always at least as
    powerful as the base run when the base run is structurally safe.
    ``config.max_depth`` levels of nesting are applied (default 2; each
    additional level multiplies cost by roughly the whole grid size).
    ``prune_seed`` is consulted only if the refined admitted set needs
    pruning, which provably cannot happen for safe base runs.
    """
    problem = _as_t_problem(problem)  # linear models run on their reduction
    m = problem.m
    fam = ThresholdFamily.dense(m) if family is None else family
    if fam.m != m:
        raise ValueError(f"family has m={fam.m}, problem has m={m}")
    if gamma is None:
        gamma = default_gamma(problem)
    _validate_levels(alpha, gamma)
    config = RefineConfig() if config is None else config
    # resolve engine eligibility now: inside the integrator a misconfigured
    # engine would be absorbed by per-hypothesis error handling and silently
    # reject nothing; nested problems share this problem's type and size, so
    # the check is equivalent there
    _kernel_module(config.engine, problem)
    return _refined_report(problem, fam, alpha, gamma, config,
                           config.max_depth, tail_eps, prune_seed,
                           skip_prune=False)
