"""Command-line interface.

Every command writes its outputs into an output directory (``--out-dir``,
falling back to ``$MOMENTDD_OUTPUT_ROOT`` and then the working directory)
and appends a record to that directory's ``manifest.json``.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 numerical non-convergence.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    SweepSpec,
    certify_lower_bound,
    compare_qdd,
    grid_lower_bound,
    jitter_study,
    log_grid,
    resolve_schedule,
    scaling_sweep,
    stable_seed,
    write_curves_csv,
    write_summary_json,
)
from .dynamics import evolve, haar_product_states, reduced_error, sample_model
from .generators import (
    OptimizerConfig,
    default_axes,
    optimize_schedule,
    table_s1,
    table_s1_schedule,
)
from .pauli import verify_decoupling_group
from .schedule import PulseSchedule, ScheduleError, SchemaError, pulse_count, verify_order

log = logging.getLogger("momentdd")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NONCONVERGED = 0, 1, 2, 3
CONFIG_VERSION = 1
OUTPUT_ROOT_ENV = "MOMENTDD_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


def _g17(x: float) -> str:
    return f"{x:.17g}"


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """One run record; appended to ``manifest.json`` in the output directory."""

    command: list
    config: dict
    master_seed: Optional[int]
    version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    duration_s: float = 0.0
    exit_code: int = 0

    def add_input(self, path) -> None:
        p = Path(path)
        self.inputs[str(p)] = _digest(p)

    def add_output(self, path) -> None:
        self.outputs.append(Path(path).name)

    def append_to(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        runs = json.loads(path.read_text())["runs"] if path.exists() else []
        runs.append(self.__dict__)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"runs": runs}, indent=2, default=str))
        tmp.replace(path)
        return path


def _out_dir(args) -> Path:
    root = args.out_dir or os.environ.get(OUTPUT_ROOT_ENV) or "."
    p = Path(root)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _interval_table(intervals: Sequence[float]) -> str:
    return "\n".join(f"  {i:3d}  {x:.15f}" for i, x in enumerate(intervals))


def _load_schedule(path: str) -> PulseSchedule:
    text = Path(path).read_text()
    try:
        return PulseSchedule.from_json(text)
    except ScheduleError as exc:
        raise SchemaError(str(exc)) from exc


# ---------------------------------------------------------------- commands


def cmd_generate(args, manifest: RunManifest, out: Path) -> int:
    pattern = tuple(args.pattern.replace(",", " ").split()) if args.pattern else None
    cfg = OptimizerConfig(args.K, pattern=pattern, restarts=args.restarts, seed=args.seed,
                          max_evaluations=args.max_evaluations)
    res, sched = optimize_schedule(cfg)
    path = out / (args.out or f"schedule_K{args.K}_seed{args.seed}.json")
    path.write_text(sched.to_json())
    manifest.add_output(path)
    report = verify_order(sched, default_axes(1), args.K, 1.0)
    print(f"K = {args.K}: {len(res.intervals)} intervals, {pulse_count(sched)} pulses")
    print(_interval_table(res.intervals))
    print(f"phi = {res.phi:.3e}  evaluations = {res.evaluations}  start = {res.start}/{res.starts_run}")
    print(f"max |M| = {report.worst_residual:.3e} (axis {report.worst_axis}, m = {report.worst_m})")
    print(f"wrote {path}")
    if not res.converged:
        print("optimizer did not converge; best schedule saved", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_verify(args, manifest: RunManifest, out: Path) -> int:
    manifest.add_input(args.schedule)
    sched = _load_schedule(args.schedule)
    K = args.K if args.K is not None else sched.order
    if K is None:
        raise ConfigError("schedule records no order; pass --K")
    axes = [a for a in default_axes(sched.group.n) if verify_decoupling_group(sched.group, [a]).passed]
    if not axes:
        raise ConfigError("the schedule's group cancels no weight-one axis")
    skipped = sorted(set(a.axes for a in default_axes(sched.group.n)) - {a.axes for a in axes})
    if skipped:
        print(f"note: axes {skipped} are not cancelled by the group and are not checked")
    rep = verify_order(sched, axes, K, args.tol)
    status = "PASS" if rep.passed else "FAIL"
    print(f"{status}: K = {K}, max |M| = {rep.worst_residual:.3e} "
          f"(axis {rep.worst_axis}, m = {rep.worst_m}), tolerance {args.tol:g}")
    for axis, row in zip(rep.moments.axes, rep.moments.values):
        print(f"  {axis.axes}: " + " ".join(f"{v: .3e}" for v in row))
    return EXIT_OK if rep.passed else EXIT_FAIL


def _schedule_from_args(args, manifest: RunManifest) -> tuple[str, PulseSchedule]:
    if args.schedule:
        manifest.add_input(args.schedule)
        return resolve_schedule("file", path=args.schedule)
    return resolve_schedule(args.source, args.K)


def cmd_simulate(args, manifest: RunManifest, out: Path) -> int:
    sid, sched = _schedule_from_args(args, manifest)
    T = args.T
    rows = []
    model = sample_model(stable_seed(args.seed, "model", 0), args.J)
    states = haar_product_states(args.states, stable_seed(args.seed, "states", 0)) if args.states else None
    for t in T:
        if states is None:
            val = evolve(sched, model, t).error
        else:
            val = float(np.mean(reduced_error(sched, model, t, states)))
        rows.append((sid, sched.order, args.J, t, args.seed,
                     "operator-norm" if states is None else "trace-distance", val))
        print(f"T = {t:.6g}  error = {val:.6e}")
    path = write_curves_csv(rows, out / f"simulate_{sid}_seed{args.seed}.csv")
    manifest.add_output(path)
    return EXIT_OK


def _read_sweep_config(path: str) -> tuple[SweepSpec, dict]:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        if not cp.read(path):
            raise ConfigError(f"cannot read config {path}")
        s = cp["sweep"]
        ver = s.getint("version")
        if ver != CONFIG_VERSION:
            raise ConfigError(f"config version {ver} unsupported (expected {CONFIG_VERSION})")
        t_min, t_max = s.getfloat("t_min"), s.getfloat("t_max")
        if t_min is None or t_max is None:
            raise ConfigError("t_min and t_max are required")
        if "t_count" in s:
            count = s.getint("t_count")
        else:
            ppd = s.getint("points_per_decade", 30)
            count = int(round(ppd * np.log10(t_max / t_min))) + 1 if t_max > t_min > 0 else 0
        spec = SweepSpec(
            source=s.get("source", "table-s1"),
            orders=[int(x) for x in s.get("orders", "").replace(",", " ").split()],
            J_values=[float(x) for x in s.get("J", "").replace(",", " ").split()],
            t_min=t_min, t_max=t_max, t_count=count,
            model_seeds=[int(x) for x in s.get("model_seeds", "0").replace(",", " ").split()],
            states=s.getint("states", 0),
            metric=s.get("metric", "operator-norm"),
            master_seed=s.getint("master_seed", 0),
            path=s.get("path"),
        )
        _ = spec.T
        fit = {}
        if cp.has_section("fit"):
            f = cp["fit"]
            fit = {"decades": f.getfloat("decades", 1.0), "min_points": f.getint("min_points", 6)}
    except (KeyError, ValueError, configparser.Error) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad sweep config: {exc}") from exc
    return spec, fit


def cmd_sweep(args, manifest: RunManifest, out: Path) -> int:
    cfg_path = args.config
    if args.builtin:
        cfg_path = str(resources.files("momentdd") / "configs" / f"{args.builtin}.ini")
    if not cfg_path:
        raise ConfigError("pass a config file or --builtin NAME")
    spec, fit = _read_sweep_config(cfg_path)
    manifest.add_input(cfg_path)
    manifest.config = {k: v for k, v in spec.__dict__.items()}
    manifest.master_seed = spec.master_seed
    res = scaling_sweep(spec, jobs=args.jobs, **fit)
    stem = f"sweep_{Path(cfg_path).stem}_seed{spec.master_seed}"
    csv_path = write_curves_csv(res.rows, out / f"{stem}.csv")
    summary = {"curves": [c.summary() for c in res.curves], "failures": res.failures,
               "T": spec.T.tolist()}
    js_path = write_summary_json(summary, out / f"{stem}.json")
    manifest.add_output(csv_path)
    manifest.add_output(js_path)
    for c in res.curves:
        if c.fit is not None:
            cross = "none" if c.fit.crossover is None else f"{c.fit.crossover:.3e}"
            print(f"{c.sequence_id:>14s} J={c.J:.0e}  low slope {c.fit.small_slope:6.3f}  "
                  f"high slope {c.fit.large_slope:6.3f}  crossover {cross}")
        else:
            print(f"{c.sequence_id:>14s} J={c.J:.0e}  fit unavailable: {c.fit_error}")
    if res.failures:
        print(f"{len(res.failures)} point(s) failed; see {js_path.name}", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args, manifest: RunManifest, out: Path) -> int:
    T = log_grid(args.t_min, args.t_max, args.t_count)
    tab = compare_qdd(args.ours, args.qdd, args.J, T, samples=args.states,
                      model_seed=args.model_seed, master_seed=args.seed)
    stem = f"compare_K{args.ours}_qdd{args.qdd}_seed{args.seed}"
    rows = []
    for J, t, a, b in tab.rows():
        rows.append((f"K{args.ours}", args.ours, J, t, args.model_seed, "trace-distance", a))
        rows.append((f"qdd-K{args.qdd}", args.qdd, J, t, args.model_seed, "trace-distance", b))
    manifest.add_output(write_curves_csv(rows, out / f"{stem}.csv"))
    summary = tab.summary()
    manifest.add_output(write_summary_json(summary, out / f"{stem}.json"))
    print(f"ours K={args.ours} ({tab.ours_pulses} pulses) vs QDD K={args.qdd} ({tab.qdd_pulses} pulses)")
    for J, frac in summary["win_fraction"].items():
        print(f"  J={float(J):.0e}: ours lower on {frac:.0%} of T points "
              f"({summary['upper_decade_win_fraction'][J]:.0%} in the upper decade)")
    return EXIT_OK


def cmd_certify(args, manifest: RunManifest, out: Path) -> int:
    report: dict = {"K": args.K}
    if args.flips:
        cert = certify_lower_bound(args.flips, args.K, args.last_sign)
        report["certificate"] = {"flips": list(cert.flips), "value": cert.value,
                                 "pairing": cert.pairing, "coefficients": cert.coefficients.tolist(),
                                 "moments": cert.moments.tolist()}
        print(f"certificate value {_g17(cert.value)} (pairing {_g17(cert.pairing)})")
    if args.grid:
        best, arg = grid_lower_bound(args.K, args.grid)
        report["grid"] = {"resolution": args.grid, "min_max_moment": best, "argmin": list(arg)}
        print(f"grid {args.grid}: smallest max |M_m| with {args.K - 1} flips = {best:.6g} at {arg}")
    path = write_summary_json(report, out / f"certify_K{args.K}.json")
    manifest.add_output(path)
    return EXIT_OK


def cmd_jitter(args, manifest: RunManifest, out: Path) -> int:
    if args.schedule:
        manifest.add_input(args.schedule)
        sched = _load_schedule(args.schedule)
    else:
        sched = table_s1_schedule(args.K)
    T = log_grid(args.t_min, args.t_max, args.t_count)
    full = None
    rows, summary = [], {"mode": args.mode, "J": args.J, "divergence": {}}
    for d in args.digits:
        r = jitter_study(sched, d, args.J, T, model_seed=args.model_seed, master_seed=args.seed,
                         full=full, mode=args.mode)
        if full is None:
            full = r.full
            rows += [("full", sched.order, args.J, t, args.model_seed, "trace-distance", v)
                     for t, v in zip(T, full)]
        rows += [(f"d{d}", sched.order, args.J, t, args.model_seed, "trace-distance", v)
                 for t, v in zip(T, r.truncated)]
        summary["divergence"][str(d)] = r.divergence_time
        tc = "none in range" if r.divergence_time is None else f"{r.divergence_time:.4e}"
        print(f"d = {d:2d}: max timing error {r.max_timing_error:.2e}, T_c = {tc}")
    stem = f"jitter_{args.mode}_seed{args.seed}"
    manifest.add_output(write_curves_csv(rows, out / f"{stem}.csv"))
    manifest.add_output(write_summary_json(summary, out / f"{stem}.json"))
    return EXIT_OK


def cmd_table_s1(args, manifest: RunManifest, out: Path) -> int:
    orders = args.K or sorted(table_s1())
    for K in orders:
        sched = table_s1_schedule(K)
        path = out / f"table_s1_K{K}.json"
        path.write_text(sched.to_json())
        manifest.add_output(path)
        print(f"K = {K} ({pulse_count(sched)} pulses)")
        print(_interval_table(sched.intervals))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="momentdd", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", help=f"output directory (default ${OUTPUT_ROOT_ENV} or .)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="optimize an order-K schedule")
    g.add_argument("K", type=_positive_int)
    g.add_argument("--pattern", help="generator sequence, e.g. 'X,Z'")
    g.add_argument("--restarts", type=_positive_int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--max-evaluations", type=_positive_int, default=100_000)
    g.add_argument("--out", help="schedule file name inside the output directory")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("verify", parents=[common], help="check moment cancellation of a schedule file")
    v.add_argument("schedule")
    v.add_argument("--K", type=_positive_int)
    v.add_argument("--tol", type=float, default=1e-12)
    v.set_defaults(func=cmd_verify)

    def schedule_args(sp):
        sp.add_argument("--schedule", help="schedule JSON file")
        sp.add_argument("--source", choices=["table-s1", "generated", "qdd", "xy4"], default="table-s1")
        sp.add_argument("--K", type=_positive_int, default=1,
                        help="order (repetitions for xy4)")

    s = sub.add_parser("simulate", parents=[common], help="error of one schedule at given T values")
    schedule_args(s)
    s.add_argument("--J", type=float, required=True)
    s.add_argument("--T", type=_float_list, required=True, help="comma-separated total times")
    s.add_argument("--states", type=int, default=0,
                   help="Haar product states for the trace-distance metric (0: operator norm)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", parents=[common], help="run a scaling sweep from an INI config")
    w.add_argument("config", nargs="?")
    w.add_argument("--builtin", choices=["fig2", "fig3"], help="use a bundled config")
    w.add_argument("--jobs", type=_positive_int, default=1)
    w.set_defaults(func=cmd_sweep)

    def grid_args(sp, t_min, t_max, t_count):
        sp.add_argument("--t-min", type=float, default=t_min)
        sp.add_argument("--t-max", type=float, default=t_max)
        sp.add_argument("--t-count", type=int, default=t_count)

    c = sub.add_parser("compare", parents=[common], help="trace distance against QDD")
    c.add_argument("--ours", type=_positive_int, required=True)
    c.add_argument("--qdd", type=_positive_int, required=True)
    c.add_argument("--J", type=_float_list, default=[1e-5, 1e-4])
    c.add_argument("--states", type=_positive_int, default=100)
    c.add_argument("--model-seed", type=int, default=0)
    c.add_argument("--seed", type=int, default=0)
    grid_args(c, 1e-3, 1.0, 31)
    c.set_defaults(func=cmd_compare)

    ce = sub.add_parser("certify", parents=[common], help="lower-bound certificate and grid search")
    ce.add_argument("--K", type=_positive_int, required=True)
    ce.add_argument("--flips", type=_float_list)
    ce.add_argument("--last-sign", type=int, choices=[1, -1], default=1)
    ce.add_argument("--grid", type=int, default=0, help="grid resolution (0: skip)")
    ce.set_defaults(func=cmd_certify)

    j = sub.add_parser("jitter", parents=[common], help="timing-precision study")
    j.add_argument("--schedule")
    j.add_argument("--K", type=_positive_int, default=2)
    j.add_argument("--digits", type=_int_list, required=True)
    j.add_argument("--mode", choices=["truncate", "uniform"], default="truncate")
    j.add_argument("--J", type=float, default=1e-5)
    j.add_argument("--model-seed", type=int, default=0)
    j.add_argument("--seed", type=int, default=0)
    grid_args(j, 1e-6, 1.0, 121)
    j.set_defaults(func=cmd_jitter)

    t = sub.add_parser("table-s1", parents=[common], help="dump the embedded published timings")
    t.add_argument("--K", type=_int_list)
    t.set_defaults(func=cmd_table_s1)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = int(exc.code or 0)
        if code:
            # rejected invocations still leave a record
            root = Path(os.environ.get(OUTPUT_ROOT_ENV) or ".")
            if root.is_dir():
                RunManifest(["momentdd", *argv], {}, None, exit_code=code).append_to(root)
        return code
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    manifest = RunManifest(["momentdd", *argv], config, getattr(args, "seed", None))
    start = time.perf_counter()
    try:
        out = _out_dir(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        code = args.func(args, manifest, out)
    except (ConfigError, SchemaError, ScheduleError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NONCONVERGED
    manifest.duration_s = time.perf_counter() - start
    manifest.exit_code = code
    manifest.append_to(out)
    return code
