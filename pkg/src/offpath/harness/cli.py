"""Command line entry point: ``offpath run|sweep|trace``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .report import IoError, export_report, report_to_csv, report_to_json
from .runner import run_scenario, run_trial, sweep
from .scenario import InvalidScenario, load_scenario

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _summary(agg: dict) -> str:
    return (f"trials={agg['trials']} successes={agg['successes']} "
            f"success_rate={agg['success_rate']:.4f} "
            f"ci95=[{agg['ci_low']:.4f}, {agg['ci_high']:.4f}] "
            f"mean_packets={agg['mean_packets']:.1f} mean_rounds={agg['mean_rounds']:.3f}")


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {out}: {exc}") from exc


def _cmd_run(args) -> None:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario, args.seed, args.trials, args.workers)
    print(_summary(report.aggregates))
    if args.out:
        export_report(report, args.format, args.out)


def _cmd_sweep(args) -> None:
    scenario = load_scenario(args.scenario)
    values = [_parse_value(v) for v in args.values.split(",")] if args.values else []
    table = sweep(scenario, args.param, values, args.seed, args.trials, args.workers)
    for value, report in table:
        print(f"{args.param}={value} {_summary(report.aggregates)}")
    if not args.out:
        return
    if args.format == "json":
        doc = [{"value": v, "report": json.loads(report_to_json(r))} for v, r in table]
        _write(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["value"] + report_to_csv(table[0][1]).splitlines()[0].split(",")
                        if table else ["value"])
        for value, report in table:
            for line in report_to_csv(report).splitlines()[1:]:
                writer.writerow([value] + next(csv.reader([line])))
        _write(buf.getvalue(), args.out)


def _cmd_trace(args) -> None:
    scenario = load_scenario(args.scenario)
    base = scenario.seed if args.seed is None else args.seed
    if args.trial < 0:
        raise InvalidScenario("--trial", "must be non-negative")
    outcome, world = run_trial(scenario, base + args.trial, trace=True)
    _write("".join(line + "\n" for line in world.net.trace_lines()), args.out)
    print(f"success={outcome.success} rounds={outcome.rounds} "
          f"packets_sent={outcome.packets_sent}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="offpath",
                                     description="Off-path attack simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the base seed")
        p.add_argument("--out", default=None, help="output path")
        p.add_argument("--format", choices=("csv", "json"), default="json")

    p = sub.add_parser("run", help="run all trials of a scenario")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a scenario once per parameter value")
    common(p)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma separated values")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("trace", help="dump the event log of one trial")
    common(p)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=_cmd_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "trials", None) is not None and args.trials < 1:
        print("error: --trials: must be a positive integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        args.func(args)
    except InvalidScenario as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
