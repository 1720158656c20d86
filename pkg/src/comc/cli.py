"""Command-line front end.

Subcommands cover the two halves of the package: ``plan``, ``sweep``
and ``frontier`` drive the coordination planner; ``simulate`` and
``compare`` run the microsimulation; ``batch`` maps either task over
many scenarios. Results go to stdout as aligned text, JSON lines or
CSV; diagnostics go to stderr.

Exit codes: 0 success, 2 bad usage or scenario document, 3 no feasible
plan for the demand, 4 simulation consistency failure. A batch run
processes every scenario and exits with the highest code it saw.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Optional

from .config import (Scenario, bundled_scenario_names, find_scenario,
                     scenario_fingerprint)
from .errors import ConfigError, InfeasibleDemandError, SimulationError
from .metrics import aggregate_report, compare_cases, speed_contour
from .microsim import RunResult, run_simulation
from .optimizer import (ControlPlan, max_ramp_flow, parameter_sweep,
                        plan_table_rows, solve)
from .units import ms_to_kmh, vps_to_vph

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_SIMULATION = 4


def _fmt_value(value) -> str:
    if isinstance(value, float):
        return f"{value:g}"
    if value is None:
        return "-"
    return str(value)


def _emit(rows: list[dict], fmt: str, stream=None) -> None:
    """Write result rows in the requested format."""
    stream = stream if stream is not None else sys.stdout
    if fmt == "json":
        for row in rows:
            stream.write(json.dumps(row, sort_keys=True) + "\n")
        return
    if fmt == "csv":
        fields: list[str] = []
        for row in rows:
            for key in row:
                if key not in fields:
                    fields.append(key)
        writer = csv.DictWriter(stream, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(rows)
        return
    for row in rows:
        width = max(len(k) for k in row)
        for key, value in row.items():
            stream.write(f"{key:<{width}}  {_fmt_value(value)}\n")
        stream.write("\n")


def _plan_row(name: str, plan: ControlPlan) -> dict:
    return {
        "scenario": name,
        "n": plan.n,
        "d_m": round(plan.d, 3),
        "v_c_kmh": round(ms_to_kmh(plan.v_c), 3),
        "m": plan.m,
        "omega_ms": round(plan.omega, 4),
        "cycle_rate_per_h": round(plan.r, 4),
        "delay_main_s": round(plan.delay_main, 4),
        "delay_ramp_s": round(plan.delay_ramp, 4),
        "objective_s_per_h": round(plan.objective, 4),
        "required_accel_ms2": round(plan.a_req, 4),
    }


def _report_row(name: str, mode: str, result: RunResult) -> dict:
    report = aggregate_report(result.trips)
    row = {
        "scenario": name,
        "mode": mode,
        "seed": result.seed,
        "duration_s": result.duration,
        "count_mainline": report.count_mainline,
        "count_ramp": report.count_ramp,
        "mean_tt_mainline_s": round(report.mean_tt_mainline, 3),
        "mean_tt_ramp_s": round(report.mean_tt_ramp, 3),
        "mean_tt_overall_s": round(report.mean_tt_overall, 3),
        "mean_delay_mainline_s": round(report.mean_delay_mainline, 3),
        "mean_delay_ramp_s": round(report.mean_delay_ramp, 3),
        "mean_delay_overall_s": round(report.mean_delay_overall, 3),
    }
    if result.plan is not None:
        row["plan_n"] = result.plan.n
        row["plan_v_c_kmh"] = round(ms_to_kmh(result.plan.v_c), 3)
        row["plan_d_m"] = round(result.plan.d, 3)
        row["cycles_completed"] = result.counters["cycles_completed"]
        row["cycles_degraded"] = result.counters["cycles_degraded"]
        row["cycles_anomalous"] = result.counters["cycles_anomalous"]
    return row


def _write_trips(path: str, result: RunResult) -> None:
    from .metrics import trip_delay, trip_time

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "vehicle_class", "spawn_time_s",
                         "entry_time_s", "exit_time_s", "travel_time_s",
                         "delay_s"])
        for t in result.trips:
            writer.writerow([t.vehicle_id, t.vehicle_class,
                             f"{t.spawn_time:.3f}", f"{t.entry_time:.3f}",
                             f"{t.exit_time:.3f}", f"{trip_time(t):.3f}",
                             f"{trip_delay(t):.3f}"])


def _write_contour(path: str, result: RunResult, t_bin: float, x_bin: float,
                   window: Optional[tuple[float, float]]) -> None:
    """CSV grid of mean speeds in km/h: one row per time bin."""
    try:
        contour = speed_contour(result.count_grid, result.sum_grid,
                                result.fine_dt, result.fine_dx,
                                t_bin=t_bin, x_bin=x_bin, window=window)
    except ValueError as exc:
        raise ConfigError(f"contour binning: {exc}") from exc
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["t_start_s"] + [f"x_{int(x)}m" for x in contour.x_edges[:-1]]
        writer.writerow(header)
        for i in range(contour.mean_speed.shape[0]):
            row = [f"{contour.t_edges[i]:.0f}"]
            for v in contour.mean_speed[i]:
                row.append("" if v != v else f"{ms_to_kmh(float(v)):.2f}")
            writer.writerow(row)


def cmd_plan(args) -> int:
    scenario = find_scenario(args.scenario)
    plan = solve(scenario.inputs)
    if plan is None:
        print(f"error: no feasible plan for scenario {scenario.name}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    _emit([_plan_row(scenario.name, plan)], args.format)
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = find_scenario(args.scenario)
    if args.step <= 0.0:
        raise ConfigError("sweep.step: must be greater than 0")
    if args.stop < args.start:
        raise ConfigError("sweep.stop: must not be below sweep.start")
    grid = []
    value = args.start
    while value <= args.stop + 1e-9:
        grid.append(round(value, 10))
        value += args.step
    for v in grid:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"sweep grid value {v:g} outside [0, 1]")
    rows = plan_table_rows(parameter_sweep(scenario.inputs, args.axis, grid))
    out = []
    for row in rows:
        new = {"scenario": scenario.name, "axis": args.axis,
               "axis_value": row["axis_value"], "feasible": row["feasible"]}
        if row["feasible"]:
            new.update({
                "n": row["n"],
                "d_m": round(row["d_m"], 3),
                "v_c_kmh": round(row["v_c_kmh"], 3),
                "m": row["m"],
                "omega_ms": round(row["omega_ms"], 4),
                "cycle_rate_per_h": round(row["r_per_h"], 4),
                "delay_main_s": round(row["delay_main_s"], 4),
                "delay_ramp_s": round(row["delay_ramp_s"], 4),
                "objective_s_per_h": round(row["objective_s_per_h"], 4),
            })
        out.append(new)
    _emit(out, args.format)
    return EXIT_OK


def cmd_frontier(args) -> int:
    scenario = find_scenario(args.scenario)
    limit = max_ramp_flow(scenario.inputs)
    _emit([{
        "scenario": scenario.name,
        "mainline_per_lane_vph": round(vps_to_vph(scenario.inputs.q_m), 1),
        "max_ramp_vph": round(limit, 1),
    }], args.format)
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = find_scenario(args.scenario)
    control = not args.base
    plan = None
    if control:
        plan = solve(scenario.inputs)
        if plan is None:
            print(f"error: no feasible plan for scenario {scenario.name}",
                  file=sys.stderr)
            return EXIT_INFEASIBLE
    cfg = scenario.sim_config(control, seed=args.seed, duration=args.duration,
                              plan=plan)
    result = run_simulation(cfg)
    mode = "coordinated" if control else "uncontrolled"
    _emit([_report_row(scenario.name, mode, result)], args.format)
    if args.trips:
        _write_trips(args.trips, result)
    if args.contour:
        window = None
        if args.contour_window:
            window = tuple(args.contour_window)
        _write_contour(args.contour, result, args.contour_t_bin,
                       args.contour_x_bin, window)
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = find_scenario(args.scenario)
    plan = solve(scenario.inputs)
    if plan is None:
        print(f"error: no feasible plan for scenario {scenario.name}",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    base_cfg = scenario.sim_config(False, seed=args.seed, duration=args.duration)
    comc_cfg = scenario.sim_config(True, seed=args.seed,
                                   duration=args.duration, plan=plan)
    base = run_simulation(base_cfg)
    treated = run_simulation(comc_cfg)
    comparison = compare_cases(aggregate_report(base.trips),
                               aggregate_report(treated.trips))
    rows = []
    for metric in ("mean_tt_mainline", "mean_tt_ramp", "mean_tt_overall",
                   "mean_delay_mainline", "mean_delay_ramp",
                   "mean_delay_overall"):
        entry = comparison[metric]
        rows.append({
            "scenario": scenario.name,
            "metric": metric,
            "base": round(entry["base"], 3),
            "coordinated": round(entry["treated"], 3),
            "reduction_pct": (None if entry["reduction_pct"] is None
                              else round(entry["reduction_pct"], 2)),
        })
    rows.append({
        "scenario": scenario.name, "metric": "cycles_completed",
        "base": 0, "coordinated": treated.counters["cycles_completed"],
        "reduction_pct": None,
    })
    _emit(rows, args.format)
    return EXIT_OK


def cmd_batch(args) -> int:
    worst = EXIT_OK
    rows = []
    for ref in args.scenarios:
        try:
            scenario = find_scenario(ref)
        except ConfigError as exc:
            print(f"error: {ref}: {exc}", file=sys.stderr)
            worst = max(worst, EXIT_CONFIG)
            continue
        try:
            if args.task == "plan":
                plan = solve(scenario.inputs)
                if plan is None:
                    rows.append({"scenario": scenario.name, "feasible": False,
                                 "fingerprint": scenario_fingerprint(scenario)})
                    worst = max(worst, EXIT_INFEASIBLE)
                    continue
                row = _plan_row(scenario.name, plan)
            else:
                plan = solve(scenario.inputs)
                if plan is None:
                    rows.append({"scenario": scenario.name, "feasible": False,
                                 "fingerprint": scenario_fingerprint(scenario)})
                    worst = max(worst, EXIT_INFEASIBLE)
                    continue
                base = run_simulation(scenario.sim_config(
                    False, seed=args.seed, duration=args.duration))
                treated = run_simulation(scenario.sim_config(
                    True, seed=args.seed, duration=args.duration, plan=plan))
                b = aggregate_report(base.trips)
                t = aggregate_report(treated.trips)
                row = {
                    "scenario": scenario.name,
                    "base_delay_overall_s": round(b.mean_delay_overall, 3),
                    "coord_delay_overall_s": round(t.mean_delay_overall, 3),
                    "base_delay_ramp_s": round(b.mean_delay_ramp, 3),
                    "coord_delay_ramp_s": round(t.mean_delay_ramp, 3),
                    "cycles_completed": treated.counters["cycles_completed"],
                }
        except InfeasibleDemandError as exc:
            print(f"error: {ref}: {exc}", file=sys.stderr)
            worst = max(worst, EXIT_INFEASIBLE)
            continue
        except SimulationError as exc:
            print(f"error: {ref}: {exc}", file=sys.stderr)
            worst = max(worst, EXIT_SIMULATION)
            continue
        row["feasible"] = True
        row["fingerprint"] = scenario_fingerprint(scenario)
        rows.append(row)
    if rows:
        _emit(rows, args.format)
    return worst


def _add_format(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--format", choices=("text", "json", "csv"),
                        default="text", help="output format")


def _add_run_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--duration", type=float, default=None,
                        help="override the run length in seconds")


def build_parser() -> argparse.ArgumentParser:
    names = ", ".join(bundled_scenario_names())
    parser = argparse.ArgumentParser(
        prog="comc",
        description="Cooperative merging control: planning and simulation.",
        epilog=f"SCENARIO is a JSON file path or a bundled name ({names}).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="compute the control plan for a scenario")
    p.add_argument("scenario")
    _add_format(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sweep", help="re-solve along a weight or reserved-"
                                     "capacity grid")
    p.add_argument("scenario")
    p.add_argument("--axis", choices=("weights", "rho"), required=True)
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--stop", type=float, required=True)
    p.add_argument("--step", type=float, required=True)
    _add_format(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("frontier", help="largest schedulable ramp demand")
    p.add_argument("scenario")
    _add_format(p)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("simulate", help="run the microsimulation once")
    p.add_argument("scenario")
    p.add_argument("--base", action="store_true",
                   help="run without coordination")
    _add_run_overrides(p)
    p.add_argument("--trips", metavar="PATH",
                   help="write per-trip records to a CSV file")
    p.add_argument("--contour", metavar="PATH",
                   help="write the space-time mean-speed grid to a CSV file")
    p.add_argument("--contour-t-bin", type=float, default=300.0)
    p.add_argument("--contour-x-bin", type=float, default=100.0)
    p.add_argument("--contour-window", type=float, nargs=2, default=None,
                   metavar=("X_LO", "X_HI"))
    _add_format(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="coordinated vs uncontrolled run")
    p.add_argument("scenario")
    _add_run_overrides(p)
    _add_format(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("batch", help="run a task over many scenarios")
    p.add_argument("scenarios", nargs="+")
    p.add_argument("--task", choices=("plan", "compare"), default="plan")
    _add_run_overrides(p)
    _add_format(p)
    p.set_defaults(func=cmd_batch)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleDemandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
