"""Command line entry point.

    ptpsim validate <file>
    ptpsim run <file> --out <dir>
    ptpsim report <dir>
    ptpsim sweep <file> --param <path> --values <v1,v2,...> [--out <dir>] [--jobs N]

A bare scenario name such as ``paper_fig5`` loads the copy shipped with the package.

Exit codes: 0 pass, 1 fail or inconclusive, 2 invalid input, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import report as rep
from .scenario import (
    ScenarioError, build_scenario, load_scenario, packaged_scenario_text, parse_document, parse_value,
    scenario_digest, set_param,
)

EXIT_PASS, EXIT_FAIL, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2, 3


def _read_source(arg: str) -> tuple[str, str]:
    p = Path(arg)
    if p.exists():
        return p.read_text(encoding="utf-8"), p.stem
    if p.suffix == "" and "/" not in arg:
        try:
            return packaged_scenario_text(arg), arg
        except FileNotFoundError:
            pass
    raise FileNotFoundError(f"no such scenario file: {arg}")


def _verdict_code(verdict: str) -> int:
    return EXIT_PASS if verdict == rep.PASS else EXIT_FAIL


def cmd_validate(args) -> int:
    text, name = _read_source(args.file)
    sc = load_scenario(text, name)
    print(f"ok: {sc.name}, {len(sc.nodes)} nodes, {sc.duration_ns / 1e9:g} s, digest {sc.digest}")
    for line in sc.provenance:
        print(f"  default {line}")
    return EXIT_PASS


def cmd_run(args) -> int:
    text, name = _read_source(args.file)
    sc = load_scenario(text, name)
    report = rep.run_and_report(sc, args.out, text)
    sys.stdout.write(report.summary())
    return _verdict_code(report.verdict)


def cmd_report(args) -> int:
    out = Path(args.dir)
    scenario_path = out / rep.SCENARIO_FILE
    if scenario_path.exists():
        text = scenario_path.read_text(encoding="utf-8")
        report = rep.analyze(load_scenario(text, _stored_name(out)), rep.load_trace(out))
    else:
        report = rep.RunReport.from_json((out / rep.REPORT_FILE).read_text(encoding="utf-8"))
    sys.stdout.write(report.summary())
    return _verdict_code(report.verdict)


def _stored_name(out: Path) -> str:
    try:
        return json.loads((out / rep.REPORT_FILE).read_text(encoding="utf-8"))["scenario"]
    except (OSError, ValueError, KeyError):
        return "scenario"


def _sweep_one(job: tuple[dict, str, str, str, Optional[str]]) -> dict:
    doc, digest, name, label, out = job
    sc = build_scenario(doc, digest, name)
    if out:
        report = rep.run_and_report(sc, Path(out) / label)
    else:
        report = rep.analyze(sc, rep.simulate(sc))
    return {
        "value": label,
        "verdict": report.verdict,
        "convergence_ns": report.convergence_ns,
        "skew_p95_ns": [s.p95_abs_skew_ns for s in report.skew],
        "skew_max_ns": [s.max_abs_skew_ns for s in report.skew],
    }


def cmd_sweep(args) -> int:
    text, name = _read_source(args.file)
    doc = parse_document(text)
    load_scenario(text, name)  # the base document must be valid on its own
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ScenarioError("--values is empty")
    jobs = []
    for v in values:
        variant = set_param(doc, args.param, parse_value(v))
        digest = scenario_digest(f"{text}\n# sweep {args.param} = {v}\n")
        build_scenario(variant, digest, name)  # fail fast before spawning work
        jobs.append((variant, digest, name, v, args.out))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    print(json.dumps({"param": args.param, "results": rows}, indent=2))
    return EXIT_PASS if all(r["verdict"] == rep.PASS for r in rows) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptpsim", description="Deterministic PTP network simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a scenario")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run a scenario and write trace and report")
    p.add_argument("file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="re-analyze a run directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("sweep", help="run one scenario over several values of a parameter")
    p.add_argument("file")
    p.add_argument("--param", required=True, help="dotted path, e.g. servo.kp or nodes.s1.clock.granularity_ns")
    p.add_argument("--values", required=True, help="comma-separated TOML literals")
    p.add_argument("--out", default=None, help="optional directory for per-value run output")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_PASS
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as e:  # noqa: BLE001 - anything else is our bug
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
