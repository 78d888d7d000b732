"""Monte-Carlo simulation harness.

Declarative scenario specs, reproducible counter-based data generation, a
registry of the twelve step-up method variants, signal-strength tuning,
FDR/power estimation under common random numbers, and runtime sweeps.

Everything is deterministic given the scenario seed.  Each replicate draws
from a dedicated Philox stream keyed by ``(seed; purpose, replicate)``, so
replicates can be produced in any order — or in parallel — without changing
a single draw, and adding a new draw purpose never perturbs the existing
ones.  Within one replicate every method sees the same data (common random
numbers), which makes per-replicate power comparisons and containment
checks meaningful draw by draw rather than only on averages.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .calibrate import (ALPHA_MAX, CalibrationRecord, MethodDescriptor,
                        RejectionReport, dsu_calibrate)
from .models import (ArCovariance, BlockCovariance, Covariance,
                     IdentityCovariance, LinearModelProblem, MvtProblem,
                     MvzProblem, marginal_pvalues)
from .refine import RefineConfig, refined_calibrate
from .stepup import (NumericError, ThresholdFamily, geometric_thresholds,
                     q_values, step_up)

__all__ = [
    "METHODS",
    "EstimateTable",
    "MethodEstimate",
    "MethodRun",
    "Scenario",
    "TimingRow",
    "TuningError",
    "acceptance_summary",
    "desk_grid",
    "estimate",
    "generate",
    "method_report",
    "run_method",
    "scenario_gamma",
    "timing_sweep",
    "tune_signal",
    "tuned",
    "write_estimates_csv",
    "write_timing_csv",
]

# Draw purposes: the first Philox counter word.  New purposes must extend
# this list (never renumber) to keep historical streams reproducible.
_DATA = 1      # test statistics / raw responses
_SCALE = 2     # the independent chi-squared scale of t models
_NOISE = 3     # linear-model response noise
_DESIGN = 4    # linear-model design matrix (drawn once: replicate index 0)
_PRUNE = 5     # per-replicate pruning seeds
# The tuner evaluates pilot replicates in an offset index range so tuning
# draws never coincide with estimation draws for the same scenario seed.
_TUNE_REP_OFFSET = 1_000_000


class TuningError(RuntimeError):
    """Signal tuning could not reach the requested pilot power."""


# ----------------------------------------------------------------------
# scenarios


_MODELS = ("mvz", "mvt", "lm", "mcc")
_COV_KINDS = ("ar", "block", "identity")


@dataclass(frozen=True)
class Scenario:
    """One simulation setting: a model, its dependence, and the run sizes.

    ``model`` selects the data-generating family: ``"mvz"`` (correlated
    z-statistics), ``"mvt"`` (z-numerators sharing one chi-squared scale on
    ``df`` degrees of freedom), ``"lm"`` (a Gaussian linear model with ``n``
    rows whose ``m`` coefficients are all tested through their OLS
    reduction), or ``"mcc"`` (a one-way layout of ``m`` treatment groups
    plus a shared control, ``replicates`` observations per group, reduced
    to equicorrelated two-sample t-statistics).

    ``cov`` with ``rho``/``block_size`` describes the correlation of the
    statistics (mvz/mvt) or of the design rows (lm); the mcc layout fixes
    its own structure, so ``cov`` is ignored there.  The first ``nonnulls``
    hypotheses carry the signal; ``signal`` is expressed on the
    standardized-statistic scale in every model (for lm it multiplies the
    coefficient's standard error, for mcc the contrast's standard
    deviation), so tuned strengths are comparable across models.
    """

    name: str = ""
    model: str = "mvz"
    m: int = 100
    side: str = "one"
    alpha: float = 0.05
    cov: str = "identity"
    rho: float = 0.0
    block_size: int = 20
    df: int = 0
    n: int = 0
    replicates: int = 0
    nonnulls: int = 0
    signal: float = 0.0
    reps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValueError(f"model must be one of {_MODELS}, "
                             f"got {self.model!r}")
        if self.side not in ("one", "two"):
            raise ValueError(f"side must be 'one' or 'two', got {self.side!r}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 0 <= self.nonnulls <= self.m:
            raise ValueError(f"nonnulls must be in [0, m], got {self.nonnulls}")
        if self.reps < 1:
            raise ValueError(f"reps must be >= 1, got {self.reps}")
        if not 0.0 < self.alpha <= ALPHA_MAX:
            raise ValueError(
                f"alpha must be in (0, {ALPHA_MAX}], got {self.alpha!r}")
        if not self.signal >= 0.0:
            raise ValueError(f"signal must be >= 0, got {self.signal!r}")
        if self.model != "mcc":
            if self.cov not in _COV_KINDS:
                raise ValueError(f"cov must be one of {_COV_KINDS}, "
                                 f"got {self.cov!r}")
            _covariance(self)  # validates rho / block_size eagerly
        if self.model == "mvt" and self.df < 1:
            raise ValueError(f"mvt scenarios need df >= 1, got {self.df}")
        if self.model == "lm" and self.n < self.m + 1:
            raise ValueError(
                f"lm scenarios need n >= m + 1 rows, got n={self.n}, m={self.m}")
        if self.model == "mcc" and self.replicates < 2:
            raise ValueError(
                f"mcc scenarios need replicates >= 2, got {self.replicates}")

    @property
    def label(self) -> str:
        return self.name if self.name else _default_name(self)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "Scenario":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - fields)
        if unknown:
            raise ValueError(f"unknown scenario fields: {unknown}")
        return cls(**data)


def _cov_tag(sc: Scenario) -> str:
    if sc.cov == "identity":
        return "id"
    if sc.cov == "ar":
        return f"ar{sc.rho:g}"
    return f"block{sc.block_size}x{sc.rho:g}"


def _default_name(sc: Scenario) -> str:
    if sc.model == "mcc":
        return f"mcc-r{sc.replicates}-a{sc.alpha:g}-{sc.side}"
    stem = {"mvz": "z", "mvt": f"t{sc.df}", "lm": "lm"}[sc.model]
    return f"{stem}-{_cov_tag(sc)}-{sc.side}-a{sc.alpha:g}"


def _covariance(sc: Scenario) -> Covariance:
    if sc.cov == "identity":
        return IdentityCovariance(sc.m)
    if sc.cov == "ar":
        return ArCovariance(sc.m, sc.rho)
    return BlockCovariance(sc.m, sc.block_size, sc.rho)


def scenario_gamma(sc: Scenario) -> float:
    """Calibration tuning the harness pairs with each scenario.

    1.0 where running uncorrected is known to be safe: independent
    coordinates on either side, and positively correlated z- or t-designs
    tested one-sided (where conditional rejection counts move monotonically
    with the conditioning statistic, so the admitted set never needs
    pruning).  Everything else — negative or two-sided correlated designs,
    linear models, and the control-comparison layout — runs at 0.9.
    """
    if sc.model == "mcc":
        return 0.9
    if sc.cov == "identity":
        return 1.0 if sc.model in ("mvz", "mvt") else 0.9
    if sc.model in ("mvz", "mvt") and sc.side == "one" and sc.rho > 0.0:
        return 1.0
    return 0.9


# ----------------------------------------------------------------------
# data generation


def _stream(seed: int, purpose: int, rep: int) -> np.random.Generator:
    bits = np.random.Philox(counter=[purpose, rep, 0, 0], key=seed)
    return np.random.Generator(bits)


def _prune_seed(sc: Scenario, rep: int) -> int:
    return int(_stream(sc.seed, _PRUNE, rep).integers(1 << 62))


# Designs are drawn once per scenario; the cache key excludes the signal so
# tuning never redraws X.
_DESIGN_CACHE: dict = {}


def _design(sc: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """The lm design matrix and the standard errors of its coefficients.

    Drawn once per (seed, size, row-covariance) from the scenario's design
    stream; the returned ``se`` is ``sqrt(diag((X'X)^-1))`` at unit noise,
    used to place signals on the standardized-coefficient scale.
    """
    key = (sc.seed, sc.m, sc.n, sc.cov, sc.rho, sc.block_size)
    hit = _DESIGN_CACHE.get(key)
    if hit is None:
        rng = _stream(sc.seed, _DESIGN, 0)
        x = _covariance(sc).sample(rng, sc.n)
        _, r_mat = np.linalg.qr(x)
        inv = np.linalg.inv(r_mat)
        se = np.sqrt(np.sum(inv * inv, axis=1))
        hit = (x, se)
        _DESIGN_CACHE[key] = hit
    return hit


def _mcc_reduce(y: np.ndarray, side: str) -> MvtProblem:
    """Reduce a one-way layout with a control row to paired t-statistics.

    Row 0 is the control group.  Each contrast ``mean_i - mean_0`` is
    standardized by its null standard deviation ``sqrt(2/r)``; contrasts
    share the control mean, so their correlation is exactly 1/2.  The
    pooled within-group variance on ``(m+1)(r-1)`` degrees of freedom is
    independent of all group means and supplies the common scale.
    """
    groups, r = y.shape
    m = groups - 1
    means = y.mean(axis=1)
    sse = float(((y - means[:, None]) ** 2).sum())
    df = groups * (r - 1)
    z = (means[1:] - means[0]) / math.sqrt(2.0 / r)
    return MvtProblem(z, BlockCovariance(m, m, 0.5), df, sse / df, side)


def generate(sc: Scenario, rep: int):
    """Draw replicate ``rep`` of a scenario.

    Returns ``(problem, nonnull)`` where ``nonnull`` is the boolean truth
    mask (the first ``sc.nonnulls`` hypotheses).  Deterministic given
    ``(sc.seed, rep)``: statistics, scales, noise, and designs each come
    from their own counter-based stream.  The lm design is drawn once per
    scenario and reused across replicates; only the response noise is
    fresh.
    """
    k = sc.nonnulls
    nonnull = np.zeros(sc.m, dtype=bool)
    nonnull[:k] = True
    if sc.model == "mvz":
        cov = _covariance(sc)
        z = cov.sample(_stream(sc.seed, _DATA, rep), 1)[0]
        z[:k] += sc.signal
        return MvzProblem(z, cov, sc.side), nonnull
    if sc.model == "mvt":
        psi = _covariance(sc)
        z = psi.sample(_stream(sc.seed, _DATA, rep), 1)[0]
        z[:k] += sc.signal
        scale = _stream(sc.seed, _SCALE, rep).chisquare(sc.df) / sc.df
        return MvtProblem(z, psi, sc.df, scale, sc.side), nonnull
    if sc.model == "lm":
        x, se = _design(sc)
        beta = np.zeros(sc.m)
        beta[:k] = sc.signal * se[:k]
        noise = _stream(sc.seed, _NOISE, rep).standard_normal(sc.n)
        y = x @ beta + noise
        return LinearModelProblem(x, y, np.arange(sc.m), sc.side), nonnull
    # mcc: row 0 is the control group
    r = sc.replicates
    y = _stream(sc.seed, _DATA, rep).standard_normal((sc.m + 1, r))
    y[1:k + 1] += sc.signal * math.sqrt(2.0 / r)
    return _mcc_reduce(y, sc.side), nonnull


# ----------------------------------------------------------------------
# signal tuning


def _pilot_power(sc: Scenario, signal: float, pilot_reps: int,
                 pilot_level: float) -> float:
    probe = dataclasses.replace(sc, signal=signal)
    fam = ThresholdFamily.dense(sc.m)
    total = 0.0
    for rep in range(pilot_reps):
        problem, nonnull = generate(probe, _TUNE_REP_OFFSET + rep)
        res = step_up(marginal_pvalues(problem).p, fam, pilot_level)
        total += np.count_nonzero(res.rejected & nonnull) / sc.nonnulls
    return total / pilot_reps


def tune_signal(sc: Scenario, target: float = 0.30, *, tol: float = 0.02,
                pilot_reps: int = 300, pilot_level: float = 0.05,
                max_signal: float = 64.0, max_iter: int = 48) -> float:
    """Signal strength at which the plain dense step-up hits a power target.

    Bisection against a pilot Monte-Carlo estimate of the power of the
    dense step-up at ``pilot_level``, run until the estimate is within
    ``tol`` of ``target``.  The pilot replicates share data across
    candidate strengths (common random numbers), which makes the power
    curve monotone in practice and the result a pure function of the
    scenario seed.

    Raises :class:`TuningError` when the target is unattainable: no signal
    coordinates, a target already exceeded at zero signal, a target not
    reached at ``max_signal``, or a bracket that fails to converge.
    """
    if not 0.0 < target < 1.0:
        raise ValueError(f"target power must be in (0, 1), got {target!r}")
    if sc.nonnulls == 0:
        raise TuningError("scenario has no signal coordinates to tune")
    floor = _pilot_power(sc, 0.0, pilot_reps, pilot_level)
    if floor >= target + tol:
        raise TuningError(
            f"target power {target:.3f} is below the zero-signal floor "
            f"{floor:.3f}")
    if abs(floor - target) <= tol:
        return 0.0
    hi, power_hi = 1.0, _pilot_power(sc, 1.0, pilot_reps, pilot_level)
    while power_hi < target and hi < max_signal:
        hi *= 2.0
        power_hi = _pilot_power(sc, hi, pilot_reps, pilot_level)
    if power_hi < target:
        raise TuningError(
            f"target power {target:.3f} not attainable below signal "
            f"{max_signal:g} (pilot power {power_hi:.3f})")
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        power_mid = _pilot_power(sc, mid, pilot_reps, pilot_level)
        if abs(power_mid - target) <= tol:
            return mid
        if power_mid < target:
            lo = mid
        else:
            hi = mid
    raise TuningError(
        f"bisection did not converge to within {tol:.3f} of {target:.3f} "
        f"in {max_iter} steps")


_TUNE_CACHE: dict = {}


def tuned(sc: Scenario, target: float = 0.30, **kwargs) -> Scenario:
    """The scenario with its signal tuned (cached per scenario and target)."""
    key = (dataclasses.replace(sc, signal=0.0, reps=1, name=""), target,
           tuple(sorted(kwargs.items())))
    if key not in _TUNE_CACHE:
        _TUNE_CACHE[key] = tune_signal(sc, target, **kwargs)
    return dataclasses.replace(sc, signal=_TUNE_CACHE[key])


# ----------------------------------------------------------------------
# method registry


@dataclass(frozen=True)
class _MethodSpec:
    kind: str        # "su" | "dsu" | "refined"
    sparse: bool     # geometric threshold family instead of the dense one
    corrected: bool  # harmonic-style correction: safe under any dependence


_METHOD_SPECS = {
    "bh": _MethodSpec("su", False, False),
    "by": _MethodSpec("su", False, True),
    "sbh": _MethodSpec("su", True, False),
    "sby": _MethodSpec("su", True, True),
    "dbh": _MethodSpec("dsu", False, False),
    "dby": _MethodSpec("dsu", False, True),
    "sdbh": _MethodSpec("dsu", True, False),
    "sdby": _MethodSpec("dsu", True, True),
    "dbh2": _MethodSpec("refined", False, False),
    "dby2": _MethodSpec("refined", False, True),
    "sdbh2": _MethodSpec("refined", True, False),
    "sdby2": _MethodSpec("refined", True, True),
}

#: All method ids, in reporting order.  Naming scheme: a leading ``s``
#: swaps the dense threshold family for the geometric (sparse) one; a
#: leading ``d`` (after the optional ``s``) runs the dependence-adjusted
#: calibration instead of the plain step-up; a trailing ``2`` adds one
#: round of recursive refinement.  ``*bh`` variants run at the requested
#: level with the scenario's tuning; ``*by`` variants apply the family's
#: harmonic-style correction (plain: level divided by the correction;
#: adjusted: tuning fixed at 1/correction), making them safe under
#: arbitrary dependence.
METHODS = tuple(_METHOD_SPECS)


@dataclass(frozen=True)
class MethodRun:
    """One method run: rejected indices, whether pruning fired, and the
    claimed directions (two-sided runs only; ``"+"``/``"-"`` on rejected
    hypotheses, ``"none"`` elsewhere)."""

    rejected: np.ndarray
    pruning: bool
    signs: tuple | None


def _family(m: int, sparse: bool) -> ThresholdFamily:
    return geometric_thresholds(m, 2.0) if sparse else ThresholdFamily.dense(m)


def run_method(name: str, problem, alpha: float, *, gamma: float | None = None,
               prune_seed: int | None = None, engine: str = "auto",
               eps: float | None = None, grid_points: int | None = None,
               strict: bool = False, tail_eps: float | None = None) -> MethodRun:
    """Run one registered method on a problem at level ``alpha``.

    ``gamma`` is the tuning used by the uncorrected adjusted methods
    (``None`` resolves to the structural default); corrected variants
    always run at 1 over their family's correction.  ``eps``,
    ``grid_points`` and ``strict`` configure the refinement stage and are
    ignored by the others.
    """
    spec = _METHOD_SPECS.get(name)
    if spec is None:
        raise ValueError(
            f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    m = problem.m
    fam = _family(m, spec.sparse)
    if spec.kind == "su":
        level = alpha / fam.correction if spec.corrected else alpha
        mp = marginal_pvalues(problem)
        res = step_up(mp.p, fam, level)
        signs = None
        if problem.side == "two":
            signs = tuple(
                ("+" if mp.plus[i] < mp.minus[i] else "-")
                if res.rejected[i] else "none" for i in range(m))
        return MethodRun(res.indices, False, signs)
    g = 1.0 / fam.correction if spec.corrected else gamma
    if spec.kind == "dsu":
        report = dsu_calibrate(problem, fam, alpha, g, prune_seed=prune_seed,
                               tail_eps=tail_eps, engine=engine)
    else:
        kwargs = {"engine": engine, "strict": strict}
        if eps is not None:
            kwargs["eps"] = eps
        if grid_points is not None:
            kwargs["grid_points"] = grid_points
        report = refined_calibrate(problem, fam, alpha, g,
                                   RefineConfig(**kwargs),
                                   prune_seed=prune_seed, tail_eps=tail_eps)
    signs = (tuple(rec.sign for rec in report.records)
             if problem.side == "two" else None)
    return MethodRun(np.asarray(report.rejected, dtype=np.int64),
                     bool(report.pruning_invoked), signs)


def method_report(name: str, problem, alpha: float, *,
                  gamma: float | None = None, prune_seed: int | None = None,
                  engine: str = "auto", eps: float | None = None,
                  grid_points: int | None = None, strict: bool = False,
                  tail_eps: float | None = None) -> RejectionReport:
    """Full per-hypothesis report for one registered method.

    Same dispatch and options as :func:`run_method`, but returns the
    complete rejection report.  Plain step-up methods synthesize one:
    p- and q-values, decisions, and directions are populated, while the
    admission-integral fields stay at NaN/zero because no calibration ran
    (the descriptor names the procedure ``"su"``).
    """
    spec = _METHOD_SPECS.get(name)
    if spec is None:
        raise ValueError(
            f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    m = problem.m
    fam = _family(m, spec.sparse)
    if spec.kind == "su":
        level = alpha / fam.correction if spec.corrected else alpha
        mp = marginal_pvalues(problem)
        res = step_up(mp.p, fam, level)
        q = q_values(mp.p, fam)
        if problem.side == "two":
            signs = [("+" if mp.plus[i] < mp.minus[i] else "-")
                     if res.rejected[i] else "none" for i in range(m)]
        else:
            signs = ["none"] * m
        records = tuple(CalibrationRecord(
            i=i, p=float(mp.p.values[i]), q=float(q[i]), g_at_q=float("nan"),
            r_hat=0, accepted_by_cap=bool(res.rejected[i]),
            in_r_plus=bool(res.rejected[i]), pruned=False, sign=signs[i])
            for i in range(m))
        descriptor = MethodDescriptor("su", float(level), 1.0, fam.kind,
                                      problem.side, safe=True)
        return RejectionReport(res.indices.astype(np.int64), records,
                               False, None, descriptor)
    g = 1.0 / fam.correction if spec.corrected else gamma
    if spec.kind == "dsu":
        return dsu_calibrate(problem, fam, alpha, g, prune_seed=prune_seed,
                             tail_eps=tail_eps, engine=engine)
    kwargs = {"engine": engine, "strict": strict}
    if eps is not None:
        kwargs["eps"] = eps
    if grid_points is not None:
        kwargs["grid_points"] = grid_points
    return refined_calibrate(problem, fam, alpha, g, RefineConfig(**kwargs),
                             prune_seed=prune_seed, tail_eps=tail_eps)


# ----------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class MethodEstimate:
    """Monte-Carlo estimates for one method on one scenario.

    ``fdr``/``power`` are means of the per-replicate false-discovery and
    true-positive proportions over the successful replicates; standard
    errors are the sample standard deviation over replicates divided by
    ``sqrt(reps)``.  ``dir_fdr`` counts a rejection as an error when the
    hypothesis is null or the claimed direction disagrees with the truth
    (NaN for one-sided runs).  ``failures`` counts replicates whose run
    raised a numeric or contract error; they are excluded from the
    estimates but reported.
    """

    method: str
    reps: int
    failures: int
    fdr: float
    fdr_se: float
    power: float
    power_se: float
    dir_fdr: float
    dir_fdr_se: float
    pruning_freq: float
    mean_runtime: float


@dataclass(frozen=True)
class EstimateTable:
    """Per-method estimate rows for one scenario run."""

    scenario: Scenario
    gamma: float
    rows: tuple


def _mean_se(values: list) -> tuple[float, float]:
    n = len(values)
    if n == 0:
        return float("nan"), float("nan")
    mean = float(np.mean(values))
    if n == 1:
        return mean, float("nan")
    return mean, float(np.std(values, ddof=1) / math.sqrt(n))


def estimate(sc: Scenario, methods=METHODS, *, reps: int | None = None,
             gamma: float | None = None, engine: str = "auto",
             progress=None) -> EstimateTable:
    """Estimate FDR, power, directional FDR, and pruning frequency.

    Runs every method on every replicate with common random numbers (one
    draw per replicate, shared across methods, plus one shared pruning
    seed).  Per replicate and method the accounting is exact: false
    rejections plus true rejections equal the rejection count.  Method
    errors (numeric failures, missing-seed contract violations) are
    counted as per-replicate failures and excluded from the estimates.
    ``reps`` overrides ``sc.reps``; ``gamma`` overrides the harness tuning
    policy of :func:`scenario_gamma`; ``progress``, when given, is called
    as ``progress(done, total)`` after every replicate.
    """
    methods = tuple(methods)
    for name in methods:
        if name not in _METHOD_SPECS:
            raise ValueError(
                f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    total = sc.reps if reps is None else int(reps)
    if total < 1:
        raise ValueError(f"reps must be >= 1, got {total}")
    if gamma is None:
        gamma = scenario_gamma(sc)
    k = sc.nonnulls
    fdp: dict = {name: [] for name in methods}
    tpp: dict = {name: [] for name in methods}
    dir_fdp: dict = {name: [] for name in methods}
    pruned: dict = {name: 0 for name in methods}
    runtime: dict = {name: 0.0 for name in methods}
    failures: dict = {name: 0 for name in methods}
    for rep in range(total):
        problem, nonnull = generate(sc, rep)
        seed = _prune_seed(sc, rep)
        for name in methods:
            start = time.perf_counter()
            try:
                run = run_method(name, problem, sc.alpha, gamma=gamma,
                                 prune_seed=seed, engine=engine)
            except (NumericError, ValueError, ArithmeticError):
                failures[name] += 1
                continue
            runtime[name] += time.perf_counter() - start
            rejected = run.rejected
            count = int(rejected.size)
            false_rej = int(np.count_nonzero(~nonnull[rejected]))
            true_rej = count - false_rej
            if false_rej + true_rej != count:
                raise AssertionError("rejection accounting broke")
            fdp[name].append(false_rej / max(count, 1))
            tpp[name].append(true_rej / max(k, 1))
            if sc.side == "two":
                wrong = false_rej
                if run.signs is not None:
                    wrong += sum(1 for i in rejected
                                 if nonnull[i] and run.signs[i] == "-")
                dir_fdp[name].append(wrong / max(count, 1))
            pruned[name] += bool(run.pruning)
        if progress is not None:
            progress(rep + 1, total)
    rows = []
    for name in methods:
        n_ok = total - failures[name]
        fdr, fdr_se = _mean_se(fdp[name])
        power, power_se = _mean_se(tpp[name])
        if sc.side == "two":
            dfr, dfr_se = _mean_se(dir_fdp[name])
        else:
            dfr, dfr_se = float("nan"), float("nan")
        rows.append(MethodEstimate(
            method=name, reps=total, failures=failures[name],
            fdr=fdr, fdr_se=fdr_se, power=power, power_se=power_se,
            dir_fdr=dfr, dir_fdr_se=dfr_se,
            pruning_freq=pruned[name] / n_ok if n_ok else float("nan"),
            mean_runtime=runtime[name] / n_ok if n_ok else float("nan")))
    return EstimateTable(sc, gamma, tuple(rows))


# ----------------------------------------------------------------------
# result files


_ESTIMATE_COLUMNS = ("method", "reps", "failures", "fdr", "fdr_se", "power",
                     "power_se", "dir_fdr", "dir_fdr_se", "pruning_freq")


def _cell(value: float) -> str:
    # shortest round-trip decimal; empty for not-applicable
    if isinstance(value, float) and math.isnan(value):
        return ""
    return repr(float(value))


def write_estimates_csv(table: EstimateTable, fileobj, *,
                        include_runtime: bool = False) -> None:
    """Write one row per method.

    Runtime is excluded by default: with it the file stays byte-identical
    across runs of the same scenario and seed.
    """
    writer = csv.writer(fileobj)
    header = _ESTIMATE_COLUMNS + (("mean_runtime_s",) if include_runtime else ())
    writer.writerow(header)
    for row in table.rows:
        out = [row.method, row.reps, row.failures, _cell(row.fdr),
               _cell(row.fdr_se), _cell(row.power), _cell(row.power_se),
               _cell(row.dir_fdr), _cell(row.dir_fdr_se),
               _cell(row.pruning_freq)]
        if include_runtime:
            out.append(_cell(row.mean_runtime))
        writer.writerow(out)


def _json_safe(value: float):
    return None if math.isnan(value) else float(value)


def acceptance_summary(tables) -> dict:
    """Machine-readable pass/fail record of the Monte-Carlo error bounds.

    One check per (scenario, method) cell: the estimated FDR must not
    exceed ``alpha * m0 / m + 4 * SE`` (the null fraction discounts the
    level, the four-standard-error slack absorbs Monte-Carlo noise); cells
    of two-sided scenarios also check directional FDR against
    ``alpha + 4 * SE``.  A cell with no successful replicates fails.
    """
    checks = []
    all_pass = True
    for table in tables:
        sc = table.scenario
        null_frac = (sc.m - sc.nonnulls) / sc.m
        for row in table.rows:
            bound = sc.alpha * null_frac + 4.0 * row.fdr_se
            ok = bool(row.fdr <= bound)  # NaN compares False: no-data fails
            entry = {
                "scenario": sc.label, "method": row.method, "reps": row.reps,
                "failures": row.failures, "gamma": table.gamma,
                "fdr": _json_safe(row.fdr), "fdr_bound": _json_safe(bound),
                "fdr_pass": ok,
            }
            if sc.side == "two":
                dir_bound = sc.alpha + 4.0 * row.dir_fdr_se
                dir_ok = bool(row.dir_fdr <= dir_bound)
                entry.update(dir_fdr=_json_safe(row.dir_fdr),
                             dir_fdr_bound=_json_safe(dir_bound),
                             dir_fdr_pass=dir_ok)
                ok = ok and dir_ok
            checks.append(entry)
            all_pass = all_pass and ok
    return {"all_pass": all_pass, "checks": checks}


# ----------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingRow:
    method: str
    m: int
    median_runtime: float
    runs: int


def timing_sweep(sizes, *, methods=("dbh", "sdbh"), runs: int = 5,
                 nonnulls: int = 10, alpha: float = 0.05,
                 seed: int = 20260814, engine: str = "auto") -> tuple:
    """Median wall-clock runtime per (method, size).

    Each size runs the one-sided AR(0.8) z template with ``nonnulls``
    signals of strength ``sqrt(2 log m)`` (no tuning) on ``runs`` fresh
    replicates per method, all replicates shared across methods.  Rows come
    back in (size, method) order; ``sizes`` must be strictly increasing.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(set(sizes)):
        raise ValueError("sizes must be strictly increasing")
    if not sizes or sizes[0] < 2:
        raise ValueError("sizes must be >= 2")
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    rows = []
    for m in sizes:
        sc = Scenario(name=f"timing-{m}", model="mvz", m=m, side="one",
                      alpha=alpha, cov="ar", rho=0.8,
                      nonnulls=min(nonnulls, m),
                      signal=math.sqrt(2.0 * math.log(m)), reps=runs,
                      seed=seed + m)
        gamma = scenario_gamma(sc)
        draws = [generate(sc, rep)[0] for rep in range(runs)]
        seeds = [_prune_seed(sc, rep) for rep in range(runs)]
        for name in methods:
            times = []
            for rep, problem in enumerate(draws):
                start = time.perf_counter()
                run_method(name, problem, alpha, gamma=gamma,
                           prune_seed=seeds[rep], engine=engine)
                times.append(time.perf_counter() - start)
            rows.append(TimingRow(name, m, statistics.median(times), runs))
    return tuple(rows)


def write_timing_csv(rows, fileobj) -> None:
    writer = csv.writer(fileobj)
    writer.writerow(("method", "m", "median_runtime_s", "runs"))
    for row in rows:
        writer.writerow((row.method, row.m, repr(float(row.median_runtime)),
                         row.runs))


# ----------------------------------------------------------------------
# the desk-scale scenario grid


def desk_grid(*, reps: int = 2000, seed: int = 20260814) -> tuple:
    """The 25 desk-scale scenarios the acceptance run sweeps.

    All at m=100 with the signal on the first coordinates: z-statistics
    under AR(0.8), AR(-0.8), and block(20, 0.5) on both sides; t-statistics
    with 5 and 50 degrees of freedom under AR(0.8), identity, and
    block(20, 0.5) on both sides; linear models (n = 3m rows) with the
    three row covariances, two-sided; and the control-comparison layout
    with 3 and 30 replicates per group at levels 0.05 and 0.2.  Signals
    are left untuned (0.0): pass each scenario through :func:`tuned` to
    pin its strength.  Seeds are distinct per scenario.
    """
    z_covs = (("ar", 0.8, 20), ("ar", -0.8, 20), ("block", 0.5, 20))
    t_covs = (("ar", 0.8, 20), ("identity", 0.0, 20), ("block", 0.5, 20))
    out = []

    def add(**kwargs):
        out.append(Scenario(m=100, reps=reps, seed=seed + len(out), **kwargs))

    for kind, rho, size in z_covs:
        for side in ("one", "two"):
            add(model="mvz", side=side, alpha=0.05, cov=kind, rho=rho,
                block_size=size, nonnulls=10)
    for df in (5, 50):
        for kind, rho, size in t_covs:
            for side in ("one", "two"):
                add(model="mvt", df=df, side=side, alpha=0.05, cov=kind,
                    rho=rho, block_size=size, nonnulls=10)
    for kind, rho, size in t_covs:
        add(model="lm", side="two", alpha=0.05, cov=kind, rho=rho,
            block_size=size, n=300, nonnulls=10)
    for replicates in (3, 30):
        for alpha in (0.05, 0.2):
            add(model="mcc", side="two", alpha=alpha, replicates=replicates,
                nonnulls=30)
    return tuple(out)
