"""Batch entry points: simulate, rootlocus, compare, serve.

Exit codes are a stable contract: 0 success, 2 usage/configuration error,
3 runtime failure (partial outputs are retained).
"""

from __future__ import annotations

import argparse
import asyncio
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import controllers as ctl
from .analysis import pid_tf, root_locus, ss_to_tf, RootFindingError
from .plant import linearize
from .sim import (
    ComparisonReport,
    Scenario,
    ScenarioError,
    compare_controllers,
    load_scenario,
    run_closed_loop,
    write_telemetry_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

GAIN_FLAGS = ("kp", "ki", "kd", "ku", "kc")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twsbr", description="Self-balancing robot simulation workbench"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim_p = sub.add_parser("simulate", help="run one closed-loop scenario")
    sim_p.add_argument("scenario", help="scenario JSON file")
    sim_p.add_argument("--controller", choices=("pid", "leadlag", "flc"),
                       help="override the scenario's controller type")
    for flag in GAIN_FLAGS:
        sim_p.add_argument(f"--{flag}", type=float, help=f"override controller gain {flag}")
    sim_p.add_argument("--out", required=True, help="output directory")

    rl_p = sub.add_parser("rootlocus", help="closed-loop pole sweep over a gain grid")
    rl_p.add_argument("scenario", help="scenario JSON file (plant parameters)")
    rl_p.add_argument("--compensator", choices=("none", "pid", "leadlag"), default="none")
    rl_p.add_argument("--gain-min", type=float, default=0.01)
    rl_p.add_argument("--gain-max", type=float, default=20.0)
    rl_p.add_argument("--points", type=int, default=200)
    rl_p.add_argument("--out", required=True, help="output CSV path")

    cmp_p = sub.add_parser("compare", help="run several controllers on one scenario")
    cmp_p.add_argument("scenario", help="scenario JSON file")
    cmp_p.add_argument("--controllers", default="pid,leadlag,flc",
                       help="comma-separated subset of pid,leadlag,flc")
    cmp_p.add_argument("--out", required=True, help="output directory")

    srv_p = sub.add_parser("serve", help="host the live front-panel session")
    srv_p.add_argument("scenario", help="scenario JSON file")
    srv_p.add_argument("--host", default="127.0.0.1")
    srv_p.add_argument("--port", type=int, default=7340,
                       help="TCP port (PORT env var overrides)")
    srv_p.add_argument("--speed", type=float, default=1.0,
                       help="simulated-to-wall-clock ratio; 0 = unpaced")
    srv_p.add_argument("--decimation", type=int, default=4,
                       help="emit every Nth record to live subscribers")
    srv_p.add_argument("--live-buffer", type=int, default=256,
                       help="per-subscriber telemetry backlog before drop-oldest")
    srv_p.add_argument("--sndbuf", type=int, default=None,
                       help="cap the per-subscriber kernel send buffer [bytes]")
    return parser


def _controller_override(scenario: Scenario, args: argparse.Namespace) -> Scenario:
    config = scenario.controller
    if args.controller is not None:
        kind = {"pid": ctl.PidGains, "leadlag": ctl.LeadLagParams, "flc": ctl.FlcConfig}[
            args.controller
        ]
        if not isinstance(config, kind):
            config = (
                ctl.PidGains(kp=10.0, ki=0.005, kd=0.015) if kind is ctl.PidGains else kind()
            )
    overrides = {}
    for flag in GAIN_FLAGS:
        value = getattr(args, flag)
        if value is None:
            continue
        if not hasattr(config, flag):
            raise ScenarioError(
                f"--{flag} does not apply to a {type(config).__name__} controller"
            )
        overrides[flag] = value
    if overrides:
        config = replace(config, **overrides)
    return replace(scenario, controller=config)


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        scenario = _controller_override(load_scenario(args.scenario), args)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_closed_loop(scenario)
    write_telemetry_csv(result.telemetry, str(out / "telemetry.csv"))

    lines = [f"ticks: {len(result.telemetry)}"]
    if result.metrics is not None:
        m = result.metrics
        settling = f"{m.settling_time:.6g} s" if m.settling_time is not None else "not settled"
        lines += [
            f"settling_time (2% band): {settling}",
            f"overshoot: {m.overshoot_pct:.4g} %",
            f"steady_state_error: {m.steady_state_error:.6g} rad",
            f"peak_time: {m.peak_time:.6g} s",
        ]
        dt = 1.0 / scenario.control_rate
        effort = sum(abs(r.u_sat) for r in result.telemetry) * dt
        lines.append(f"control_effort (sum |u_sat| dt): {effort:.6g}")
    if result.aborted:
        lines.append(f"aborted: {result.abort_reason}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))

    return EXIT_RUNTIME if result.aborted else EXIT_OK


def cmd_rootlocus(args: argparse.Namespace) -> int:
    if args.points < 1 or args.gain_min <= 0 or args.gain_min > args.gain_max:
        print("error: need 0 < gain-min <= gain-max and points >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    plant_tf = ss_to_tf(linearize(scenario.params))
    comp = None
    if args.compensator == "pid":
        gains = (
            scenario.controller
            if isinstance(scenario.controller, ctl.PidGains)
            else ctl.PidGains(kp=10.0, ki=0.005, kd=0.015)
        )
        comp = pid_tf(gains)
    elif args.compensator == "leadlag":
        params = (
            scenario.controller
            if isinstance(scenario.controller, ctl.LeadLagParams)
            else ctl.LeadLagParams()
        )
        comp = ctl.leadlag_tf(replace(params, kc=1.0))  # the locus gain plays the kc role

    if args.points == 1:
        gains = np.array([args.gain_min])
    else:
        gains = np.geomspace(args.gain_min, args.gain_max, args.points)

    # Loop gain includes the actuation calibration so the locus matches the
    # simulated loop (tau_total = calib * tau_max * 2 / 255 per count).
    k_act = 2.0 * scenario.torque_calibration * scenario.tau_max / 255.0
    try:
        locus = root_locus(plant_tf, comp, tuple(float(g) * k_act for g in gains))
    except RootFindingError as exc:
        print(f"error: root finding failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="\n") as fh:
        fh.write("gain,re,im,branch\n")
        for b, branch in enumerate(locus.branches):
            for g, pole in zip(gains, branch):
                fh.write(f"{g:.9g},{pole.real:.9g},{pole.imag:.9g},{b}\n")
    print(f"wrote {len(locus.branches)} branches x {len(gains)} gains to {out}")
    return EXIT_OK


def _comparison_table(report: ComparisonReport) -> tuple[str, str]:
    header = ["controller", "settling_s", "overshoot_pct", "sse_rad", "peak_s", "effort"]
    rows = []
    for row in report.rows:
        if row.error is not None or row.metrics is None:
            rows.append([row.label, "error", "", "", "", row.error or ""])
            continue
        m = row.metrics
        rows.append([
            row.label,
            f"{m.settling_time:.6g}" if m.settling_time is not None else "not_settled",
            f"{m.overshoot_pct:.5g}",
            f"{m.steady_state_error:.6g}",
            f"{m.peak_time:.6g}",
            f"{row.effort:.6g}",
        ])
    csv_text = "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    txt = "\n".join([fmt.format(*header)] + [fmt.format(*r) for r in rows]) + "\n"
    return csv_text, txt


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
        names = [n.strip() for n in args.controllers.split(",") if n.strip()]
        if len(names) < 2:
            raise ScenarioError("--controllers needs at least two entries")
        configs = []
        for name in names:
            if name == "pid":
                configs.append(
                    scenario.controller
                    if isinstance(scenario.controller, ctl.PidGains)
                    else ctl.PidGains(kp=10.0, ki=0.005, kd=0.015)
                )
            elif name == "leadlag":
                configs.append(
                    scenario.controller
                    if isinstance(scenario.controller, ctl.LeadLagParams)
                    else ctl.LeadLagParams()
                )
            elif name == "flc":
                configs.append(
                    scenario.controller
                    if isinstance(scenario.controller, ctl.FlcConfig)
                    else ctl.FlcConfig()
                )
            else:
                raise ScenarioError(f"unknown controller {name!r}")
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    report = compare_controllers(scenario, configs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_text, txt = _comparison_table(report)
    (out / "compare.csv").write_text(csv_text)
    (out / "compare.txt").write_text(txt)
    print(txt, end="")
    return EXIT_RUNTIME if any(r.error is not None for r in report.rows) else EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    port = int(os.environ.get("PORT", args.port))

    from .server import serve

    try:
        asyncio.run(
            serve(scenario, host=args.host, port=port, speed=args.speed,
                  decimation=args.decimation, live_buffer=args.live_buffer,
                  sndbuf=args.sndbuf)
        )
    except OSError as exc:
        print(f"error: cannot bind {args.host}:{port}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "simulate": cmd_simulate,
        "rootlocus": cmd_rootlocus,
        "compare": cmd_compare,
        "serve": cmd_serve,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
