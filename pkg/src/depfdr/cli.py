"""Command-line front end.

Three subcommands on one binary: ``test`` runs a registered method on a
problem file and writes its per-hypothesis report, ``simulate`` runs the
Monte-Carlo harness on a scenario file and writes the estimate table plus a
machine-readable acceptance summary, and ``bench`` measures method runtimes
over a list of problem sizes.

Configuration precedence is flags, then ``DEPFDR_``-prefixed environment
variables, then defaults.  Exit codes: 0 on success, 2 on usage, schema, or
contract errors (including a required-but-missing pruning seed), 3 on
numeric failures.  Output files are written next to their final name and
atomically renamed into place, so a crashed run never leaves a partial
file.  With a fixed seed the ``test`` and ``simulate`` outputs are
byte-identical across runs (runtimes are therefore kept out of them);
``bench`` output is a measurement and varies.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import os
import sys

from . import simulate as sim
from .calibrate import (ALPHA_MAX, report_to_json_bytes, write_report_csv)
from .models import problem_from_json
from .stepup import NumericError

__all__ = ["main"]

_ENV_PREFIX = "DEPFDR_"
_DEFAULT_SIM_METHODS = ("bh", "by", "sbh", "sby", "dbh", "dby", "sdbh", "sdby")
_DEFAULT_BENCH_METHODS = ("dbh", "sdbh")


class _UsageError(Exception):
    """Bad flags, environment values, or input schemas (exit code 2)."""


# ----------------------------------------------------------------------
# option resolution: flags > environment > defaults


def _env_raw(name: str) -> str | None:
    return os.environ.get(_ENV_PREFIX + name.upper().replace("-", "_"))


def _resolve(args, attr: str, env_name: str, parse, default):
    value = getattr(args, attr, None)
    if value is not None:
        return value
    raw = _env_raw(env_name)
    if raw is None:
        return default
    try:
        return parse(raw)
    except (ValueError, TypeError) as exc:
        raise _UsageError(
            f"invalid {_ENV_PREFIX}{env_name}={raw!r}: {exc}") from None


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_methods(raw) -> list:
    """Split repeatable/comma-separated method ids and validate them."""
    if isinstance(raw, str):
        raw = [raw]
    names = [part.strip() for item in raw for part in item.split(",")
             if part.strip()]
    if not names:
        raise _UsageError("no method ids given")
    for name in names:
        if name not in sim.METHODS:
            raise _UsageError(f"unknown method {name!r}; choose from "
                              f"{', '.join(sim.METHODS)}")
    return names


@dataclasses.dataclass
class _Options:
    alpha: float
    gamma: float | None   # None = resolve automatically
    side: str | None      # None = keep the input's sidedness
    methods: list | None
    seed: int | None
    eps: float | None
    grid_points: int | None
    strict: bool
    threads: int
    out: str | None
    fmt: str


def _resolve_options(args) -> _Options:
    alpha = _resolve(args, "alpha", "ALPHA", float, 0.05)
    if not 0.0 < alpha <= ALPHA_MAX:
        raise _UsageError(f"alpha must be in (0, {ALPHA_MAX}], got {alpha!r}")
    gamma_raw = _resolve(args, "gamma", "GAMMA", str, "auto")
    if isinstance(gamma_raw, str) and gamma_raw.strip().lower() == "auto":
        gamma = None
    else:
        try:
            gamma = float(gamma_raw)
        except ValueError:
            raise _UsageError(
                f"gamma must be a number or 'auto', got {gamma_raw!r}") from None
        if not 0.0 < gamma <= 1.0:
            raise _UsageError(f"gamma must be in (0, 1], got {gamma!r}")
    side = _resolve(args, "side", "SIDE", str, None)
    if side is not None and side not in ("one", "two"):
        raise _UsageError(f"side must be 'one' or 'two', got {side!r}")
    methods_raw = _resolve(args, "method", "METHOD", str, None)
    methods = None if methods_raw is None else _parse_methods(methods_raw)
    seed = _resolve(args, "seed", "SEED", int, None)
    eps = _resolve(args, "eps", "EPS", float, None)
    if eps is not None and not 0.0 < eps:
        raise _UsageError(f"eps must be positive, got {eps!r}")
    grid_points = _resolve(args, "grid_points", "GRID_POINTS", int, None)
    if grid_points is not None and grid_points < 1:
        raise _UsageError(f"grid-points must be >= 1, got {grid_points}")
    strict = _resolve(args, "strict", "STRICT", _parse_bool, False)
    threads = _resolve(args, "threads", "THREADS", int, 0)
    if threads < 0:
        raise _UsageError(f"threads must be >= 0, got {threads}")
    out = _resolve(args, "out", "OUT", str, None)
    fmt = _resolve(args, "fmt", "FORMAT", str, "csv")
    if fmt not in ("csv", "json"):
        raise _UsageError(f"format must be 'csv' or 'json', got {fmt!r}")
    return _Options(alpha, gamma, side, methods, seed, eps, grid_points,
                    strict, threads, out, fmt)


# ----------------------------------------------------------------------
# output plumbing


def _write_atomic(path: str, data: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(data: bytes, out: str | None) -> str:
    if out is None:
        sys.stdout.write(data.decode())
        return "stdout"
    _write_atomic(out, data)
    return out


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise _UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise _UsageError(f"{path} is not valid JSON: {exc}") from None


# ----------------------------------------------------------------------
# subcommands


def run_test(args, opts: _Options) -> int:
    """Run one method on a problem file and write its report."""
    data = _load_json(args.input)
    try:
        problem = problem_from_json(data, base_dir=os.path.dirname(
            os.path.abspath(args.input)))
    except (KeyError, TypeError) as exc:
        raise _UsageError(f"bad problem file {args.input}: {exc}") from None
    if opts.side is not None and opts.side != problem.side:
        problem = dataclasses.replace(problem, side=opts.side)
    if opts.methods is not None and len(opts.methods) != 1:
        raise _UsageError("'test' takes exactly one --method")
    name = opts.methods[0] if opts.methods else "dbh"
    report = sim.method_report(
        name, problem, opts.alpha, gamma=opts.gamma, prune_seed=opts.seed,
        eps=opts.eps, grid_points=opts.grid_points, strict=opts.strict)
    if opts.fmt == "json":
        payload = report_to_json_bytes(report)
    else:
        buf = io.StringIO()
        write_report_csv(report, buf)
        payload = buf.getvalue().encode()
    where = _emit(payload, opts.out)
    print(f"depfdr test: method={name} alpha={opts.alpha:g} "
          f"rejections={len(report.rejected)} "
          f"pruning={'yes' if report.pruning_invoked else 'no'} -> {where}",
          file=sys.stderr)
    return 0


def _summary_path(out: str) -> str:
    stem, _ = os.path.splitext(out)
    return stem + ".acceptance.json"


def run_simulate(args, opts: _Options) -> int:
    """Run the Monte-Carlo harness on a scenario file."""
    sc = sim.Scenario.from_json(_load_json(args.scenario))
    if opts.side is not None:
        sc = dataclasses.replace(sc, side=opts.side)
    if getattr(args, "alpha", None) is not None or _env_raw("ALPHA"):
        sc = dataclasses.replace(sc, alpha=opts.alpha)
    if opts.seed is not None:
        sc = dataclasses.replace(sc, seed=opts.seed)
    methods = opts.methods if opts.methods else list(_DEFAULT_SIM_METHODS)
    if sc.signal == 0.0 and sc.nonnulls > 0:
        print(f"depfdr simulate: tuning signal for {sc.label} ...",
              file=sys.stderr)
        sc = sim.tuned(sc)
        print(f"depfdr simulate: tuned signal = {sc.signal:.6g}",
              file=sys.stderr)
    step = max(1, sc.reps // 20)

    def progress(done: int, total: int) -> None:
        if done % step == 0 or done == total:
            print(f"depfdr simulate: {done}/{total} replicates",
                  file=sys.stderr)

    table = sim.estimate(sc, methods, gamma=opts.gamma, progress=progress)
    buf = io.StringIO()
    sim.write_estimates_csv(table, buf)
    where = _emit(buf.getvalue().encode(), opts.out)
    summary = sim.acceptance_summary([table])
    if opts.out is not None:
        payload = json.dumps(summary, sort_keys=True, indent=2,
                             allow_nan=False).encode() + b"\n"
        _write_atomic(_summary_path(opts.out), payload)
    print(f"depfdr simulate: scenario={sc.label} reps={sc.reps} "
          f"methods={len(methods)} all_pass={summary['all_pass']} -> {where}",
          file=sys.stderr)
    return 0


def run_bench(args, opts: _Options) -> int:
    """Measure runtimes over a size sweep and write the timing table."""
    try:
        sizes = [int(part) for part in args.sizes.split(",") if part.strip()]
    except ValueError:
        raise _UsageError(
            f"--sizes must be comma-separated integers, got {args.sizes!r}"
        ) from None
    methods = opts.methods if opts.methods else list(_DEFAULT_BENCH_METHODS)
    rows = sim.timing_sweep(sizes, methods=methods, runs=args.runs,
                            alpha=opts.alpha,
                            seed=opts.seed if opts.seed is not None
                            else 20260814)
    buf = io.StringIO()
    sim.write_timing_csv(rows, buf)
    where = _emit(buf.getvalue().encode(), opts.out)
    print(f"depfdr bench: {len(rows)} rows over sizes {sizes} -> {where}",
          file=sys.stderr)
    return 0


# ----------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=float, default=None,
                        help="target FDR level in (0, 0.25] (default 0.05)")
    common.add_argument("--gamma", default=None,
                        help="calibration tuning: a number in (0, 1] or "
                             "'auto' (structural default / harness policy)")
    common.add_argument("--side", default=None, choices=("one", "two"),
                        help="override the input's sidedness")
    common.add_argument("--method", action="append", default=None,
                        help="method id (repeatable or comma-separated): "
                             + ", ".join(sim.METHODS))
    common.add_argument("--seed", type=int, default=None,
                        help="pruning/scenario seed")
    common.add_argument("--eps", type=float, default=None,
                        help="refinement tail budget")
    common.add_argument("--grid-points", type=int, default=None,
                        dest="grid_points",
                        help="refinement grid cells per acceptance interval")
    common.add_argument("--strict", action="store_const", const=True,
                        default=None,
                        help="disable the refinement proxy shortcut")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (0 = auto); accepted for "
                             "interface stability, computation is "
                             "single-threaded")
    common.add_argument("--out", default=None,
                        help="output file (default: stdout); written "
                             "atomically")
    common.add_argument("--format", default=None, dest="fmt",
                        choices=("csv", "json"), help="report format")
    parser = argparse.ArgumentParser(
        prog="depfdr",
        description="Dependence-adjusted step-up FDR procedures: run them "
                    "on data, simulate their error rates, or benchmark them. "
                    "Flags override DEPFDR_* environment variables, which "
                    "override defaults.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_test = sub.add_parser(
        "test", parents=[common],
        help="run one method on a problem JSON file and write its report")
    p_test.add_argument("input", help="problem JSON path")
    p_sim = sub.add_parser(
        "simulate", parents=[common],
        help="estimate FDR/power for a scenario JSON file; writes the "
             "estimate CSV and, with --out, an .acceptance.json summary")
    p_sim.add_argument("scenario", help="scenario JSON path")
    p_bench = sub.add_parser(
        "bench", parents=[common],
        help="median method runtimes over a list of problem sizes")
    p_bench.add_argument("--sizes", required=True,
                         help="comma-separated problem sizes, ascending")
    p_bench.add_argument("--runs", type=int, default=5,
                         help="replicates per size (median is reported)")
    return parser


_COMMANDS = {"test": run_test, "simulate": run_simulate, "bench": run_bench}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        opts = _resolve_options(args)
        return _COMMANDS[args.command](args, opts)
    except _UsageError as exc:
        print(f"depfdr: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"depfdr: error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ArithmeticError) as exc:
        print(f"depfdr: numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"depfdr: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
