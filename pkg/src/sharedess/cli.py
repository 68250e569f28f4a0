"""Command-line front end.  Every subcommand is a thin wrapper over the library."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from .lp import LpError
from .model import ScenarioConfig, ScenarioFormatError, Schedule, load_scenario, save_scenario, validate_scenario
from .offline import (
    ConvergenceWarning,
    InfeasibleScenarioError,
    SolverOptions,
    solve_p1_distributed,
    solve_p1_monolithic,
    solve_p2_distributed_ess,
)
from .online import POLICIES, OnlinePolicyError, PredictionErrorModel, RhcOptions, run_online, summarize
from .online import write_summary_csv, write_trace_csv
from . import sim

OUTPUT_ENV = "SHAREDESS_OUTPUT_DIR"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVALID_SCENARIO = 4
EXIT_SOLVER = 5

EPILOG = f"""\
exit codes:
  {EXIT_OK}  success
  {EXIT_INTERNAL}  unexpected internal error
  {EXIT_USAGE}  unknown flag or bad argument value
  {EXIT_MISSING_FILE}  scenario file not found or unreadable
  {EXIT_INVALID_SCENARIO}  scenario malformed or failing validation
  {EXIT_SOLVER}  solver or policy failure (infeasible, numerical trouble)

Output files go to --out, else ${OUTPUT_ENV}, else the current directory.
Scenario arguments accept a path or a bundled name: {", ".join(sim.BUNDLED)}.
"""


class CliError(Exception):
    def __init__(self, code: int, msg: str, details: Sequence[str] = ()):
        super().__init__(msg)
        self.code = code
        self.details = list(details)


# --------------------------------------------------------------------------
# helpers


def _scenario(ref: str) -> tuple[ScenarioConfig, Path]:
    path = Path(ref)
    if not path.exists():
        stem = path.name[:-5] if path.name.endswith(".json") else path.name
        if stem in sim.BUNDLED:
            path = sim.bundled_path(stem)
        else:
            raise CliError(EXIT_MISSING_FILE, f"scenario not found: {ref}")
    try:
        cfg = load_scenario(path)
    except OSError as exc:
        raise CliError(EXIT_MISSING_FILE, f"cannot read {path}: {exc.strerror}") from exc
    except (ScenarioFormatError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_INVALID_SCENARIO, f"{path}: {exc}") from exc
    return cfg, path


def _valid_scenario(ref: str) -> tuple[ScenarioConfig, Path]:
    cfg, path = _scenario(ref)
    rep = validate_scenario(cfg)
    if not rep.ok:
        raise CliError(EXIT_INVALID_SCENARIO, f"{path}: {len(rep.violations)} violation(s)", rep.lines())
    return cfg, path


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def write_schedule_csv(cfg: ScenarioConfig, sched: Schedule, path: Path) -> None:
    states = np.asarray(sched.ess_states)
    loads = sched.load_totals()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "user", "G", "C", "D", "sum_L", "S_n"])
        for n in range(cfg.horizon):
            for m, u in enumerate(cfg.users):
                s = states[m, n] if states.ndim == 2 else states[n]
                w.writerow(
                    [n + 1, u.id]
                    + [repr(float(x)) for x in (sched.grid[m, n], sched.charge[m, n], sched.discharge[m, n], loads[m, n], s)]
                )


def _emit(args, summary: dict, text: Sequence[str]) -> None:
    if args.json:
        print(json.dumps(summary, sort_keys=True, default=sim._json_default))
    else:
        for line in text:
            print(line)


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args) -> int:
    cfg, path = _scenario(args.scenario)
    rep = validate_scenario(cfg)
    _emit(
        args,
        {"scenario": str(path), "ok": rep.ok, "violations": rep.lines()},
        [f"{path}: ok"] if rep.ok else [f"{path}: {len(rep.violations)} violation(s)", *("  " + v for v in rep.lines())],
    )
    return EXIT_OK if rep.ok else EXIT_INVALID_SCENARIO


def cmd_solve_offline(args) -> int:
    cfg, path = _valid_scenario(args.scenario)
    sched = solve_p1_monolithic(cfg, min_throughput=args.min_throughput)
    out = _out_dir(args) / "schedule.csv"
    write_schedule_csv(cfg, sched, out)
    _emit(args, {"scenario": str(path), "weighted_cost": sched.weighted_cost, "schedule": str(out)},
          [f"weighted cost: {sched.weighted_cost:.6f} $", f"schedule: {out}"])
    return EXIT_OK


def cmd_solve_distributed(args) -> int:
    cfg, path = _valid_scenario(args.scenario)
    out_dir = _out_dir(args)
    trace = out_dir / "distributed_trace.csv"
    opts = SolverOptions(
        max_iters=args.max_iters,
        step0=args.step0,
        tol=args.tol,
        y_cap=None if args.no_cap else "auto",
        init=args.init,
        seed=args.seed,
        time_limit=args.time_limit,
        trace_path=trace,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        sched, diag = solve_p1_distributed(cfg, opts)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = out_dir / "schedule.csv"
    write_schedule_csv(cfg, sched, out)
    summary = {
        "scenario": str(path),
        "weighted_cost": sched.weighted_cost,
        "iterations": diag.iterations,
        "stop_reason": diag.stop_reason,
        "best_dual_value": diag.best_dual_value,
        "messages": diag.total_messages,
        "schedule": str(out),
        "trace": str(trace),
    }
    _emit(args, summary, [
        f"weighted cost: {sched.weighted_cost:.6f} $",
        f"iterations: {diag.iterations} ({diag.stop_reason})",
        f"dual bound: {diag.best_dual_value:.6f} $",
        f"messages: {diag.total_messages}",
        f"schedule: {out}",
    ])
    return EXIT_OK


def cmd_solve_p2(args) -> int:
    cfg, path = _valid_scenario(args.scenario)
    sched = solve_p2_distributed_ess(cfg)
    out = _out_dir(args) / "schedule_p2.csv"
    write_schedule_csv(cfg, sched, out)
    _emit(args, {"scenario": str(path), "weighted_cost": sched.weighted_cost, "schedule": str(out)},
          [f"weighted cost: {sched.weighted_cost:.6f} $", f"schedule: {out}"])
    return EXIT_OK


def cmd_run_online(args) -> int:
    cfg, path = _valid_scenario(args.scenario)
    rhc = RhcOptions(solver=args.rhc_solver)
    results = run_online(cfg, args.policy, PredictionErrorModel(args.sigma2, args.seed), args.runs, rhc, args.jobs)
    s = summarize(results)
    out_dir = _out_dir(args)
    write_trace_csv(results, out_dir / "online_trace.csv")
    write_summary_csv([s], out_dir / "online_summary.csv")
    s.update(scenario=str(path), costs=[r.cost for r in results])
    _emit(args, s, [
        f"policy {args.policy}, variance {args.sigma2}, {args.runs} run(s)",
        f"mean cost: {s['mean_cost']:.6f} $ (std {s['std_cost']:.6f})",
        f"mean bits: {s['mean_bits']:.1f}",
        f"feasible: {100 * s['feasible_rate']:.0f}%",
    ])
    return EXIT_OK


def cmd_sweep_capacity(args) -> int:
    cfg, path = _valid_scenario(args.scenario)
    grid = args.rho if args.rho else sim.rho_grid(args.rho_max, args.rho_step)
    rows = sim.sweep_capacity(sim.SweepSpec(cfg, "capacity_rho", grid, jobs=args.jobs))
    out_dir = _out_dir(args)
    files = ["capacity.csv"]
    sim.write_table_csv(rows, out_dir / "capacity.csv", ["rho", "shared_cost", "distributed_cost", "saving_pct"])
    if args.plot_data:
        series = {
            "shared": [(r["rho"], r["shared_cost"]) for r in rows],
            "distributed": [(r["rho"], r["distributed_cost"]) for r in rows],
        }
        sim.write_plot_data(series, out_dir / "capacity_plot.csv", "rho")
        files.append("capacity_plot.csv")
    sim.write_manifest(out_dir / "manifest.json", "capacity_rho", {"scenario": path.name, "sha256": sim.file_digest(path)},
                       {"grid": grid, "seed": args.seed}, files + ["manifest.json"])
    _emit(args, {"scenario": str(path), "rows": rows}, [
        f"{'rho':>6} {'shared':>10} {'distributed':>12} {'saving %':>9}",
        *(f"{r['rho']:6.2f} {r['shared_cost']:10.4f} {r['distributed_cost']:12.4f} {r['saving_pct']:9.2f}" for r in rows),
    ])
    return EXIT_OK


def cmd_sweep_sigma2(args) -> int:
    cfg, path = _valid_scenario(args.scenario)
    spec = sim.SweepSpec(cfg, "sigma2", args.sigma2, runs=args.runs, seed=args.seed, jobs=args.jobs, policies=args.policies)
    rows = sim.sweep_sigma2(spec)
    out_dir = _out_dir(args)
    files = ["sigma2.csv"]
    write_summary_csv(rows, out_dir / "sigma2.csv")
    if args.plot_data:
        series: dict[str, list] = {}
        for r in rows:
            series.setdefault(r["policy"], []).append((r["sigma2"], r["mean_cost"]))
        sim.write_plot_data(series, out_dir / "sigma2_plot.csv", "sigma2")
        files.append("sigma2_plot.csv")
    sim.write_manifest(out_dir / "manifest.json", "sigma2", {"scenario": path.name, "sha256": sim.file_digest(path)},
                       {"grid": args.sigma2, "runs": args.runs, "seed": args.seed, "policies": list(args.policies)},
                       files + ["manifest.json"])
    _emit(args, {"scenario": str(path), "rows": rows}, [
        f"{'sigma2':>7} {'policy':>7} {'mean cost':>10} {'std':>8}",
        *(f"{r['sigma2']:7.2f} {r['policy']:>7} {r['mean_cost']:10.4f} {r['std_cost']:8.4f}" for r in rows),
    ])
    return EXIT_OK


def cmd_diversity(args) -> int:
    high, hpath = _valid_scenario(args.high)
    low, lpath = _valid_scenario(args.low)
    grid = args.rho if args.rho else sim.rho_grid(args.rho_max, args.rho_step)
    res = sim.diversity_experiment(high, low, grid, args.trace_rho, args.jobs)
    out_dir = _out_dir(args)
    rows = [dict(r, diversity=k) for k in ("high", "low") for r in res.tables[k]]
    sim.write_table_csv(rows, out_dir / "diversity_saving.csv", ["diversity", "rho", "no_ess_cost", "shared_cost", "saving"])
    trace_rows = [
        {"diversity": k, "slot": n + 1, "charge": res.traces[k]["charge"][n], "discharge": res.traces[k]["discharge"][n],
         "state": res.traces[k]["state"][n]}
        for k in ("high", "low") for n in range(len(res.traces[k]["charge"]))
    ]
    sim.write_table_csv(trace_rows, out_dir / "diversity_traces.csv")
    files = ["diversity_saving.csv", "diversity_traces.csv"]
    if args.plot_data:
        series = {f"saving_{k}": [(r["rho"], r["saving"]) for r in res.tables[k]] for k in res.tables}
        sim.write_plot_data(series, out_dir / "diversity_plot.csv", "rho")
        files.append("diversity_plot.csv")
    sim.write_manifest(
        out_dir / "manifest.json", "diversity",
        {"high": hpath.name, "high_sha256": sim.file_digest(hpath), "low": lpath.name, "low_sha256": sim.file_digest(lpath)},
        {"grid": grid, "trace_rho": args.trace_rho}, files + ["manifest.json"],
    )
    summary = {"saturation_rho": res.saturation, "overlap": res.overlap, "trace_rho": res.trace_rho}
    _emit(args, summary, [
        f"saturation rho: high {res.saturation['high']:.2f}, low {res.saturation['low']:.2f}",
        f"same-slot charge/discharge overlap at rho={res.trace_rho:g}: high {res.overlap['high']:.4f} kWh, "
        f"low {res.overlap['low']:.4f} kWh",
    ])
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    opts = sim.RandomScenarioOptions(max_loads_per_user=args.max_loads, quadratic=args.quadratic)
    cfg = sim.gen_random_scenario(args.seed, args.users, args.slots, opts)
    out = Path(args.output) if args.output else _out_dir(args) / f"random-s{args.seed}-m{args.users}-n{args.slots}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(cfg, out, {"generator": "gen_random_scenario", "seed": args.seed})
    _emit(args, {"scenario": str(out), "valid": validate_scenario(cfg).ok}, [f"wrote {out}"])
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sharedess",
        description="Energy management for users sharing one storage unit.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the result summary as JSON")
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUTPUT_ENV} or .)")
    common.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                        help="worker processes for sweeps and Monte Carlo runs (default: all cores)")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        sp = sub.add_parser(name, parents=[common], help=help_text, description=help_text, epilog=EPILOG,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(func=func)
        return sp

    sp = add("validate", cmd_validate, "check a scenario file and list every violation")
    sp.add_argument("scenario")

    sp = add("solve-offline", cmd_solve_offline, "solve the shared-storage problem as one LP")
    sp.add_argument("scenario")
    sp.add_argument("--min-throughput", action="store_true", help="among optimal schedules pick least charge+discharge")

    sp = add("solve-distributed-alg", cmd_solve_distributed, "solve with the price-coordination algorithm")
    sp.add_argument("scenario")
    sp.add_argument("--max-iters", type=_positive_int, default=5000)
    sp.add_argument("--step0", type=float, default=None, help="initial step (default: price/energy scale)")
    sp.add_argument("--tol", type=float, default=1e-5, help="multiplier change tolerance")
    sp.add_argument("--no-cap", action="store_true", help="do not box multipliers at the weighted price")
    sp.add_argument("--init", choices=("zeros", "random"), default="zeros")
    sp.add_argument("--time-limit", type=float, default=None, metavar="SECONDS")

    sp = add("solve-p2", cmd_solve_p2, "solve the benchmark where each user owns a private unit")
    sp.add_argument("scenario")

    sp = add("run-online", cmd_run_online, "simulate a real-time policy under forecast errors")
    sp.add_argument("scenario")
    sp.add_argument("--policy", choices=POLICIES, required=True)
    sp.add_argument("--sigma2", type=float, default=0.0, help="forecast error variance (kWh^2)")
    sp.add_argument("--runs", type=_positive_int, default=1)
    sp.add_argument("--rhc-solver", choices=("monolithic", "distributed"), default="monolithic")

    sp = add("sweep-capacity", cmd_sweep_capacity, "shared vs private storage cost over capacity multipliers")
    sp.add_argument("scenario")
    sp.add_argument("--rho", type=_float_list, help="explicit multipliers, comma separated")
    sp.add_argument("--rho-max", type=float, default=3.0)
    sp.add_argument("--rho-step", type=float, default=0.25)
    sp.add_argument("--plot-data", action="store_true", help="also write long-format plot data")

    sp = add("sweep-sigma2", cmd_sweep_sigma2, "mean policy cost over forecast error variances")
    sp.add_argument("scenario")
    sp.add_argument("--sigma2", type=_float_list, default=[0.0, 0.4, 0.8, 1.2])
    sp.add_argument("--runs", type=_positive_int, default=100)
    sp.add_argument("--policies", type=lambda s: [x for x in s.split(",") if x], default=list(POLICIES))
    sp.add_argument("--plot-data", action="store_true", help="also write long-format plot data")

    sp = add("diversity", cmd_diversity, "saving vs capacity for a high/low renewable diversity pair")
    sp.add_argument("--high", default="paper-like")
    sp.add_argument("--low", default="paper-like-low-diversity")
    sp.add_argument("--rho", type=_float_list, help="explicit multipliers, comma separated")
    sp.add_argument("--rho-max", type=float, default=6.0)
    sp.add_argument("--rho-step", type=float, default=0.25)
    sp.add_argument("--trace-rho", type=float, default=1.0, help="capacity multiplier for the storage traces")
    sp.add_argument("--plot-data", action="store_true", help="also write long-format plot data")

    sp = add("gen-scenario", cmd_gen_scenario, "write a random feasible scenario")
    sp.add_argument("--users", type=_positive_int, required=True)
    sp.add_argument("--slots", type=_positive_int, required=True)
    sp.add_argument("--max-loads", type=int, default=2)
    sp.add_argument("--quadratic", action="store_true", help="add quadratic cost terms")
    sp.add_argument("-o", "--output", help="output file (default: DIR/random-s<seed>-m<users>-n<slots>.json)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "policies", None):
        bad = [x for x in args.policies if x not in POLICIES]
        if bad:
            parser.error(f"unknown policy {bad[0]!r}; choose from {', '.join(POLICIES)}")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for line in exc.details:
            print(f"  {line}", file=sys.stderr)
        return exc.code
    except (InfeasibleScenarioError, LpError, OnlinePolicyError) as exc:
        print(f"error: solver failed: {exc}", file=sys.stderr)
        for line in getattr(exc, "certificate", []):
            print(f"  {line}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
