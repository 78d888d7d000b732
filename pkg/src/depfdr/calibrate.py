"""Dependence-adjusted step-up calibration with randomized pruning.

The procedure: compute step-up q-values, discard hypotheses whose q-value
exceeds twice the target rate (the cap that makes boundary nulls least
favorable), and admit each survivor whose exact conditional integral at its
own q-value is at most ``alpha / m``.  If every admitted hypothesis's
augmented baseline count is covered by the admitted set's size, the admitted
set is final; otherwise a seeded randomized pruning step (equivalent to a
level-1 step-up on rescaled uniforms) trims it.  Two-sided runs can then be
signed per hypothesis by comparing the two one-sided p-values.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .homotopy import exact_g
from .models import (conditioning_statistic, default_gamma, marginal_pvalues,
                     monotone_structure)
from .stepup import NumericError, ThresholdFamily, q_values, step_up

__all__ = [
    "CalibrationRecord",
    "MethodDescriptor",
    "RejectionReport",
    "dsu_calibrate",
    "structurally_safe",
    "prune",
    "directional_decisions",
    "report_to_json",
    "report_to_json_bytes",
    "write_report_csv",
]

ALPHA_MAX = 0.25


@dataclass(frozen=True)
class CalibrationRecord:
    """Per-hypothesis calibration outcome.

    ``g_at_q`` is NaN when the hypothesis was skipped (q-value above the cap,
    or a per-hypothesis numeric failure — failures never reject).  ``pruned``
    marks members of the admitted set removed by the pruning step.  ``sign``
    is ``"+"``/``"-"`` only for finally rejected hypotheses of two-sided
    problems once signs have been assigned, else ``"none"``.
    """

    i: int
    p: float
    q: float
    g_at_q: float
    r_hat: int
    accepted_by_cap: bool
    in_r_plus: bool
    pruned: bool
    sign: str = "none"


@dataclass(frozen=True)
class MethodDescriptor:
    """Identifies a run: procedure name, levels, family kind, sidedness,
    refinement depth, and whether the run is structurally safe (pruning
    provably never fires: a monotone-structure problem at ``gamma = 1``, or
    ``gamma <= 1 / family.correction`` under arbitrary dependence)."""

    procedure: str  # "dsu" or "refined-dsu"
    alpha: float
    gamma: float
    family: str
    side: str
    depth: int = 1
    safe: bool = False

    def to_json(self) -> dict:
        return {"procedure": self.procedure, "alpha": self.alpha,
                "gamma": self.gamma, "family": self.family,
                "side": self.side, "depth": self.depth, "safe": self.safe}


@dataclass(frozen=True, eq=False)
class RejectionReport:
    rejected: np.ndarray
    records: tuple
    pruning_invoked: bool
    rng_seed: int | None
    descriptor: MethodDescriptor

    def rejected_mask(self, m: int | None = None) -> np.ndarray:
        m = len(self.records) if m is None else m
        mask = np.zeros(m, dtype=bool)
        mask[self.rejected] = True
        return mask

    @property
    def admitted(self) -> np.ndarray:
        return np.array([r.i for r in self.records if r.in_r_plus],
                        dtype=np.int64)


def _validate_levels(alpha: float, gamma: float) -> None:
    if not 0.0 < alpha <= ALPHA_MAX:
        raise ValueError(
            f"alpha must be in (0, {ALPHA_MAX}] so the q-value cap stays "
            f"conservative, got {alpha!r}")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma!r}")


def _admission_values(problem, fam, alpha, gamma, q, candidates,
                      tail_eps=None):
    """exact conditional integral at each candidate's q-value (NaN: failed)."""
    m = fam.m
    g = np.full(m, np.nan)
    level = gamma * alpha
    for i in candidates:
        c = float(q[i])
        try:
            if c == 0.0:
                g[i] = 0.0
            else:
                cond = conditioning_statistic(problem, int(i))
                g[i] = exact_g(problem, int(i), cond, c, level, fam,
                               tail_eps=tail_eps)
        except (NumericError, ValueError, ArithmeticError):
            g[i] = np.nan
    return g


def dsu_calibrate(problem, family: ThresholdFamily | None = None,
                  alpha: float = 0.05, gamma: float | None = None, *,
                  prune_seed: int | None = None,
                  tail_eps: float | None = None,
                  engine: str = "reference") -> RejectionReport:
    """Dependence-adjusted step-up at level ``alpha`` with tuning ``gamma``.

    ``gamma=None`` resolves to the structural default for the problem (1
    where one-sided/diagonal structure makes that safe, else 0.9); the
    harmonically corrected variant passes ``gamma = 1 / family.correction``.
    ``prune_seed`` is only consulted when pruning is actually required;
    requiring it then, rather than drawing silently, keeps randomized runs
    reproducible by construction.

    ``engine`` selects how the admission integrals are evaluated:
    ``"reference"`` (default) uses the pure-NumPy path, ``"kernel"`` requires
    the compiled path (raising if the problem is not eligible for it), and
    ``"auto"`` uses the compiled path whenever eligible.  The engines produce
    identical rejection sets; the compiled one is much faster in simulation
    loops.
    """
    m = problem.m
    fam = ThresholdFamily.dense(m) if family is None else family
    if fam.m != m:
        raise ValueError(f"family has m={fam.m}, problem has m={m}")
    if gamma is None:
        gamma = default_gamma(problem)
    _validate_levels(alpha, gamma)
    return _calibrate_core(problem, fam, alpha, gamma, prune_seed, tail_eps,
                           engine=engine)


def _kernel_module(engine: str, problem):
    """Resolve an engine name to the compiled-kernel module, or ``None``.

    ``"reference"`` always resolves to ``None``; ``"kernel"`` demands the
    compiled path and raises a loud error when the problem cannot run on it
    (rather than letting per-hypothesis error handling silently absorb the
    misconfiguration); ``"auto"`` resolves to the compiled path exactly when
    the problem is eligible.
    """
    if engine == "reference":
        return None
    if engine not in ("auto", "kernel"):
        raise ValueError(
            f"unknown engine {engine!r}; choose 'auto', 'reference', or "
            "'kernel'")
    from . import _kernels

    if _kernels.eligible(problem):
        return _kernels
    if engine == "kernel":
        raise ValueError(
            "engine='kernel' requires the compiled path: numba must be "
            "importable, the problem must reduce to Gaussian or t "
            f"statistics, and m must be at most {_kernels.MAX_KERNEL_M}")
    return None


def structurally_safe(problem, fam: ThresholdFamily, gamma: float) -> bool:
    """Whether pruning provably never fires for this problem/family/gamma."""
    return (gamma == 1.0 and monotone_structure(problem)) or (
        gamma <= 1.0 / fam.correction)


def _calibrate_core(problem, fam, alpha, gamma, prune_seed, tail_eps,
                    skip_prune: bool = False,
                    engine: str = "reference") -> RejectionReport:
    """Resolved-argument body of :func:`dsu_calibrate`.

    ``skip_prune`` returns the admitted set unpruned (used by nested runs of
    the refinement machinery, where the count is an integrand denominator
    rather than a decision)."""
    m = fam.m
    mp = marginal_pvalues(problem)
    p = mp.values
    cap = 2.0 * alpha
    kern = _kernel_module(engine, problem)
    if kern is not None:
        q, g, r_hat, in_plus = kern.decision_arrays(problem, fam, alpha,
                                                    gamma, tail_eps, p=p)
    else:
        q = q_values(p, fam)
        candidates = np.flatnonzero(q <= cap)

        base = step_up(p, fam, gamma * alpha)
        r_hat = base.count + (~base.rejected).astype(np.int64)

        g = _admission_values(problem, fam, alpha, gamma, q, candidates,
                              tail_eps)
        with np.errstate(invalid="ignore"):
            in_plus = g <= alpha / m  # NaN (skipped/failed) never admits
    r_plus = np.flatnonzero(in_plus)

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
    signs = _signs_for(problem, mp, rejected_mask)
    records = tuple(
        CalibrationRecord(
            i=int(i), p=float(p[i]), q=float(q[i]), g_at_q=float(g[i]),
            r_hat=int(r_hat[i]), accepted_by_cap=bool(q[i] <= cap),
            in_r_plus=bool(in_plus[i]),
            pruned=bool(in_plus[i] and not rejected_mask[i]),
            sign=signs[i])
        for i in range(m))
    descriptor = MethodDescriptor("dsu", float(alpha), float(gamma), fam.kind,
                                  problem.side,
                                  safe=structurally_safe(problem, fam, gamma))
    return RejectionReport(np.asarray(rejected, dtype=np.int64), records,
                           pruning_needed, seed_used, descriptor)


def _signs_for(problem, mp, rejected_mask):
    if problem.side != "two":
        return ["none"] * len(rejected_mask)
    return [("+" if mp.plus[i] < mp.minus[i] else "-") if rejected_mask[i]
            else "none" for i in range(len(rejected_mask))]


def prune(r_plus, r_hats, rng_seed: int | None = None, *,
          uniforms=None) -> np.ndarray:
    """Randomized pruning of an admitted set whose baseline counts overshoot.

    Draws one uniform per admitted hypothesis (in ascending index order, from
    a counter-based generator keyed by ``rng_seed``), finds the largest r
    such that at least r members satisfy ``u_i <= r / r_hat_i``, and keeps
    exactly those members at that r.  Equivalent to a level-1 dense step-up
    on the rescaled values ``u_i * r_hat_i / |admitted|``.  ``uniforms``
    (aligned with ``r_plus``) substitutes for the draw in diagnostics/tests.
    """
    r_plus = np.asarray(r_plus, dtype=np.int64)
    r_hats = np.asarray(r_hats, dtype=np.int64)
    if r_plus.size != r_hats.size:
        raise ValueError("r_plus and r_hats must be aligned")
    if r_plus.size == 0:
        return r_plus
    if np.any(r_hats < 1):
        raise ValueError("every augmented baseline count must be >= 1")
    if uniforms is None:
        if rng_seed is None:
            raise ValueError(
                "pruning requires an explicit rng_seed (or uniforms); "
                "non-reproducible randomized rejections are not allowed")
        order = np.argsort(r_plus)
        gen = np.random.Generator(np.random.Philox(key=int(rng_seed)))
        u = np.empty(r_plus.size)
        u[order] = gen.uniform(size=r_plus.size)
    else:
        u = np.asarray(uniforms, dtype=float)
        if u.shape != r_plus.shape:
            raise ValueError("uniforms must be aligned with r_plus")
    n = r_plus.size
    kept_count = 0
    for r in range(n, 0, -1):
        if int(np.count_nonzero(u <= r / r_hats)) >= r:
            kept_count = r
            break
    if kept_count == 0:
        return np.empty(0, dtype=np.int64)
    return np.sort(r_plus[u <= kept_count / r_hats])


def directional_decisions(problem, report: RejectionReport) -> RejectionReport:
    """Attach a direction to every finally rejected hypothesis.

    The sign is ``"+"`` when the upper-tail one-sided p-value is smaller
    than the lower-tail one (the statistic sits above its conditional
    center), else ``"-"``.  Only defined for two-sided problems.
    """
    if problem.side != "two":
        raise ValueError("directional decisions require a two-sided problem")
    mp = marginal_pvalues(problem)
    mask = report.rejected_mask(problem.m)
    records = tuple(
        rec if not mask[rec.i] else
        replace(rec, sign="+" if mp.plus[rec.i] < mp.minus[rec.i] else "-")
        for rec in report.records)
    return RejectionReport(report.rejected, records, report.pruning_invoked,
                           report.rng_seed, report.descriptor)


# ----------------------------------------------------------------------
# serialization


def _json_float(x: float):
    # strict-JSON-safe: NaN is the skipped-marker, infinities become strings
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def _record_json(r: CalibrationRecord, rejected: bool) -> dict:
    out = {"i": r.i, "p": r.p, "q": _json_float(r.q),
           "g_at_q": _json_float(r.g_at_q), "r_hat": r.r_hat,
           "accepted_by_cap": r.accepted_by_cap,
           "in_r_plus": r.in_r_plus, "pruned": r.pruned,
           "rejected": rejected, "sign": r.sign}
    if hasattr(r, "g2_at_q"):  # refinement-depth records carry extras
        out["g2_at_q"] = _json_float(r.g2_at_q)
        out["proxy_admitted"] = bool(r.proxy_admitted)
        out["integrals_evaluated"] = int(r.integrals_evaluated)
    return out


def report_to_json(report: RejectionReport) -> dict:
    mask = report.rejected_mask()
    return {
        "descriptor": report.descriptor.to_json(),
        "rejected": [int(i) for i in report.rejected],
        "pruning_invoked": bool(report.pruning_invoked),
        "rng_seed": report.rng_seed,
        "records": [_record_json(r, bool(mask[r.i]))
                    for r in report.records],
    }


def report_to_json_bytes(report: RejectionReport) -> bytes:
    return json.dumps(report_to_json(report), sort_keys=True,
                      separators=(",", ":")).encode()


def write_report_csv(report: RejectionReport, fileobj) -> None:
    writer = csv.writer(fileobj)
    refined = bool(report.records) and hasattr(report.records[0], "g2_at_q")
    header = ["i", "p", "q", "g_at_q", "r_hat", "rejected", "sign", "pruned"]
    if refined:
        header += ["g2_at_q", "proxy_admitted", "integrals_evaluated"]
    writer.writerow(header)
    mask = report.rejected_mask()
    for r in report.records:
        row = [r.i, repr(r.p), repr(r.q), repr(r.g_at_q), r.r_hat,
               int(mask[r.i]), r.sign, int(r.pruned)]
        if refined:
            row += [repr(r.g2_at_q), int(r.proxy_admitted),
                    int(r.integrals_evaluated)]
        writer.writerow(row)
