"""Command-line front end: run scenarios, emit traces, charts, and reports.

    gridshed run scenarios/g1-outage.json --out out --controller both --csv --svg

Exit codes: 0 clean run, 1 usage error, 2 when any island blacked out.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .cascade import EventLog, Scenario, load_scenario, run
from .model import CaseError
from .report import TraceSet, render_svg, write_csv, write_report


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage is 1
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridshed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run a scenario file")
    runp.add_argument("scenario", help="path to a scenario JSON file")
    runp.add_argument("--out", default="out", help="output directory (default: out)")
    runp.add_argument(
        "--controller",
        choices=("on", "off", "both"),
        default=None,
        help="force the shedding controller on/off, or run both for comparison "
        "(default: honor the scenario file)",
    )
    runp.add_argument(
        "--csv",
        action="store_true",
        help="traces.csv is always written; flag kept for explicit invocations",
    )
    runp.add_argument("--svg", action="store_true", help="write SVG trace charts")
    runp.add_argument(
        "--dump-solver", action="store_true", help="write per-step solver diagnostics"
    )
    runp.add_argument(
        "--seed-free",
        action="store_true",
        help="document determinism: runs never use randomness (always on)",
    )
    return parser


def _figures(traces: TraceSet, out: Path) -> None:
    groups = {
        "frequency.svg": ["df"],
        "voltages.svg": [f"v_bus_{b}" for b in traces.bus_ids],
        "loads.svg": [f"p_load_{b}" for b in traces.load_buses],
        "rates.svg": [f"rate_line_{k}" for k in traces.line_ids],
    }
    for fname, selection in groups.items():
        render_svg(traces, selection, out / fname)


def _run_one(scenario: Scenario, out: Path, args, title: str) -> tuple[EventLog, TraceSet]:
    out.mkdir(parents=True, exist_ok=True)
    from .cascade import CascadeEngine

    engine = CascadeEngine(scenario)
    log, traces = engine.run()
    (out / "events.log").write_text(log.to_jsonl())
    write_report(log, traces, out / "report.md", title=title)
    write_csv(traces, out / "traces.csv")
    if args.svg:
        _figures(traces, out)
    if args.dump_solver:
        import json

        (out / "solver.log").write_text(
            "".join(json.dumps(rec) + "\n" for rec in engine.solver_log)
        )
    return log, traces


def _comparison_report(results: dict, out: Path, name: str) -> None:
    lines = [f"# {name}: controller comparison", ""]
    lines.append("| mode | relay trips | shed commands | island blackouts | final df (Hz) | final max rate (pu) |")
    lines.append("|---|---|---|---|---|---|")
    for mode, (log, traces) in results.items():
        lines.append(
            f"| {mode} | {len(log.of_kind('relay-trip'))} "
            f"| {len(log.of_kind('shed-command'))} "
            f"| {len(log.of_kind('island-blackout'))} "
            f"| {traces.df[-1]:+.4f} | {float(np.max(traces.rate[-1])):.4f} |"
        )
    lines.append("")
    lines.append("Per-mode artifacts live in the on/ and off/ subdirectories.")
    (out / "report.md").write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    scenario_path = Path(args.scenario)
    if not scenario_path.exists():
        print(f"gridshed: scenario file not found: {scenario_path}", file=sys.stderr)
        return 1
    out = Path(args.out)

    try:
        blackout = False
        if args.controller == "both":
            results = {}
            for mode in ("on", "off"):
                scenario = load_scenario(scenario_path, controller_override=(mode == "on"))
                scenario = replace(scenario, dump_solver=args.dump_solver)
                log, traces = _run_one(
                    scenario, out / mode, args, f"{scenario.name} (controller {mode})"
                )
                results[mode] = (log, traces)
                blackout |= bool(log.of_kind("island-blackout"))
            out.mkdir(parents=True, exist_ok=True)
            _comparison_report(results, out, scenario.name)
        else:
            override = None if args.controller is None else args.controller == "on"
            scenario = load_scenario(scenario_path, controller_override=override)
            scenario = replace(scenario, dump_solver=args.dump_solver)
            mode = "on" if scenario.controller.enabled else "off"
            log, _ = _run_one(
                scenario, out, args, f"{scenario.name} (controller {mode})"
            )
            blackout = bool(log.of_kind("island-blackout"))
    except (CaseError, ValueError, OSError) as exc:
        print(f"gridshed: {exc}", file=sys.stderr)
        return 1

    return 2 if blackout else 0


if __name__ == "__main__":
    raise SystemExit(main())
