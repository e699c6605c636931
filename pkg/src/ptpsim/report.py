"""Run a scenario and judge it against its declared criteria."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .harness import (
    EmptySkew, SkewReport, TraceRecord, detect_convergence, percentile, pps_skew, read_trace,
    steady_offsets, write_trace,
)
from .netsim import run
from .scenario import Scenario

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
TRACE_FILE = "trace.tsv"
REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.txt"
SCENARIO_FILE = "scenario.toml"


@dataclass
class RunReport:
    scenario: str
    digest: str
    seed: int
    duration_ns: int
    convergence_ns: dict[str, Optional[int]]
    offset_p95_ns: dict[str, Optional[int]]
    skew: list[SkewReport]
    verdict: str
    reasons: list[str] = field(default_factory=list)
    provenance: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        d = json.loads(text)
        d["skew"] = [SkewReport(**s) for s in d["skew"]]
        return cls(**d)

    def summary(self) -> str:
        lines = [f"scenario {self.scenario} digest {self.digest[:16]} seed {self.seed}"]
        for node, t in self.convergence_ns.items():
            conv = "never" if t is None else f"{t / 1e9:.3f} s"
            p95 = self.offset_p95_ns.get(node)
            tail = "" if p95 is None else f", steady |offset| p95 {p95} ns"
            lines.append(f"  {node}: converged {conv}{tail}")
        for s in self.skew:
            lines.append(
                f"  skew {s.node_a}-{s.node_b}: p95 {s.p95_abs_skew_ns} ns, max {s.max_abs_skew_ns} ns, "
                f"{s.edge_count} edges"
            )
        lines.extend(f"  - {r}" for r in self.reasons)
        lines.append(f"verdict: {self.verdict}")
        return "\n".join(lines) + "\n"


def analyze(scenario: Scenario, records: Sequence[TraceRecord]) -> RunReport:
    crit = scenario.criteria
    slaves = scenario.slave_ids
    conv: dict[str, Optional[int]] = {}
    offsets: dict[str, Optional[int]] = {}
    reasons: list[str] = []
    for node in slaves:
        t = detect_convergence(records, node, crit.convergence_window, crit.convergence_bound_ns)
        conv[node] = t
        steady = steady_offsets(records, node, t) if t is not None else []
        offsets[node] = int(percentile([abs(o) for o in steady], 95)) if steady else None

    skews: list[SkewReport] = []
    if scenario.duration_ns == 0:
        verdict = INCONCLUSIVE
        reasons.append("zero duration: nothing was simulated")
    else:
        for node in slaves:
            if conv[node] is None:
                reasons.append(f"{node} never converged")
            elif crit.max_p95_offset_ns is not None and offsets[node] is not None \
                    and offsets[node] >= crit.max_p95_offset_ns:
                reasons.append(f"{node} steady |offset| p95 {offsets[node]} ns >= {crit.max_p95_offset_ns} ns")
        for a, b in itertools.combinations(slaves, 2):
            if conv[a] is None or conv[b] is None:
                continue
            try:
                s = pps_skew(records, a, b, max(conv[a], conv[b]))
            except EmptySkew:
                reasons.append(f"no pairable PPS edges between {a} and {b}")
                continue
            skews.append(s)
            if s.p95_abs_skew_ns >= crit.max_p95_skew_ns:
                reasons.append(f"{a}-{b} PPS skew p95 {s.p95_abs_skew_ns} ns >= {crit.max_p95_skew_ns} ns")
        verdict = FAIL if reasons else PASS

    return RunReport(
        scenario=scenario.name, digest=scenario.digest, seed=scenario.seed, duration_ns=scenario.duration_ns,
        convergence_ns=conv, offset_p95_ns=offsets, skew=skews, verdict=verdict, reasons=reasons,
        provenance=list(scenario.provenance),
    )


def simulate(scenario: Scenario) -> list[TraceRecord]:
    return run(
        list(scenario.nodes), scenario.switch, seed=scenario.seed, duration_ns=scenario.duration_ns,
        pps=scenario.pps, tx_timestamp_latency_ns=scenario.tx_timestamp_latency_ns,
    ).records


def run_and_report(scenario: Scenario, out_dir, scenario_text: Optional[str] = None) -> RunReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = simulate(scenario)
    report = analyze(scenario, records)
    with open(out / TRACE_FILE, "w", encoding="utf-8", newline="\n") as fh:
        write_trace(records, fh)
    (out / REPORT_FILE).write_text(report.to_json(), encoding="utf-8")
    (out / SUMMARY_FILE).write_text(report.summary(), encoding="utf-8")
    if scenario_text is not None:
        (out / SCENARIO_FILE).write_text(scenario_text, encoding="utf-8")
    return report


def load_trace(out_dir) -> list[TraceRecord]:
    with open(Path(out_dir) / TRACE_FILE, encoding="utf-8") as fh:
        return read_trace(fh)
