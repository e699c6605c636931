"""Trace records and post-run analysis: convergence, offsets, PPS skew.

A trace file is tab-delimited text, one record per line, integer nanoseconds:

    #ptpsim-trace/1
    <time_ns> <node> OFFSET <offset_ns> <delay_ns>
    <time_ns> <node> PPS
    <time_ns> <node> STATE <from> <to>
    <time_ns> <node> DROP <reason>
"""
from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence, Union

TRACE_HEADER = "#ptpsim-trace/1"
HALF_SECOND_NS = 500_000_000


@dataclass(frozen=True)
class OffsetSample:
    offset_ns: int
    delay_ns: int


@dataclass(frozen=True)
class PpsRising:
    pass


@dataclass(frozen=True)
class StateChange:
    from_state: str
    to_state: str


@dataclass(frozen=True)
class Drop:
    reason: str


TraceKind = Union[OffsetSample, PpsRising, StateChange, Drop]


@dataclass(frozen=True)
class TraceRecord:
    true_time_ns: int
    node_id: str
    kind: TraceKind

    def to_line(self) -> str:
        k = self.kind
        if isinstance(k, OffsetSample):
            fields = ("OFFSET", str(k.offset_ns), str(k.delay_ns))
        elif isinstance(k, PpsRising):
            fields = ("PPS",)
        elif isinstance(k, StateChange):
            fields = ("STATE", k.from_state, k.to_state)
        else:
            fields = ("DROP", k.reason)
        return "\t".join((str(self.true_time_ns), self.node_id) + fields)

    @classmethod
    def from_line(cls, line: str) -> TraceRecord:
        parts = line.rstrip("\n").split("\t")
        t, node, tag, rest = int(parts[0]), parts[1], parts[2], parts[3:]
        if tag == "OFFSET":
            kind: TraceKind = OffsetSample(int(rest[0]), int(rest[1]))
        elif tag == "PPS":
            kind = PpsRising()
        elif tag == "STATE":
            kind = StateChange(rest[0], rest[1])
        elif tag == "DROP":
            kind = Drop(rest[0])
        else:
            raise ValueError(f"unknown trace record kind {tag!r}")
        return cls(t, node, kind)


def write_trace(records: Iterable[TraceRecord], fh: IO[str]) -> None:
    fh.write(TRACE_HEADER + "\n")
    for r in records:
        fh.write(r.to_line() + "\n")


def read_trace(fh: IO[str]) -> list[TraceRecord]:
    header = fh.readline().strip()
    if header != TRACE_HEADER:
        raise ValueError(f"not a trace file (header {header!r})")
    return [TraceRecord.from_line(line) for line in fh if line.strip()]


def offset_samples(trace: Iterable[TraceRecord], node_id: str) -> list[tuple[int, int]]:
    return [
        (r.true_time_ns, r.kind.offset_ns)
        for r in trace
        if r.node_id == node_id and isinstance(r.kind, OffsetSample)
    ]


def pps_edges(trace: Iterable[TraceRecord], node_id: str) -> list[int]:
    return [r.true_time_ns for r in trace if r.node_id == node_id and isinstance(r.kind, PpsRising)]


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile, ``q`` in (0, 100]."""
    if not values:
        raise ValueError("percentile of empty sequence")
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return ordered[rank - 1]


def detect_convergence(
    trace: Iterable[TraceRecord], node_id: str, window_edges: int = 10, bound_ns: int = 1000
) -> Optional[int]:
    """True time of the first offset sample opening a run of ``window_edges`` within bound."""
    if window_edges < 1:
        raise ValueError("window_edges must be >= 1")
    run_start = None
    run = 0
    for t, offset in offset_samples(trace, node_id):
        if abs(offset) <= bound_ns:
            if run == 0:
                run_start = t
            run += 1
            if run >= window_edges:
                return run_start
        else:
            run = 0
    return None


class EmptySkew(ValueError):
    """No pairable PPS edges."""


@dataclass(frozen=True)
class SkewReport:
    node_a: str
    node_b: str
    convergence_true_time_ns: int
    max_abs_skew_ns: int
    p95_abs_skew_ns: int
    edge_count: int


def _nearest(sorted_edges: list[int], t: int) -> Optional[int]:
    i = bisect.bisect_left(sorted_edges, t)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(sorted_edges):
            c = sorted_edges[j]
            if best is None or abs(c - t) < abs(best - t):
                best = c
    return best


def pair_edges(a_edges: list[int], b_edges: list[int]) -> list[tuple[int, int]]:
    """Mutual-nearest pairs within half a second."""
    pairs = []
    for ta in a_edges:
        tb = _nearest(b_edges, ta)
        if tb is None or abs(tb - ta) > HALF_SECOND_NS:
            continue
        if _nearest(a_edges, tb) == ta:
            pairs.append((ta, tb))
    return pairs


def pps_skew(trace: Sequence[TraceRecord], node_a: str, node_b: str, after_true_ns: int = 0) -> SkewReport:
    a_edges = sorted(t for t in pps_edges(trace, node_a) if t >= after_true_ns)
    b_edges = sorted(t for t in pps_edges(trace, node_b) if t >= after_true_ns)
    pairs = pair_edges(a_edges, b_edges)
    if not pairs:
        raise EmptySkew(f"no pairable PPS edges between {node_a} and {node_b}")
    skews = [abs(tb - ta) for ta, tb in pairs]
    return SkewReport(
        node_a=node_a,
        node_b=node_b,
        convergence_true_time_ns=after_true_ns,
        max_abs_skew_ns=max(skews),
        p95_abs_skew_ns=int(percentile(skews, 95)),
        edge_count=len(pairs),
    )


def steady_offsets(trace: Sequence[TraceRecord], node_id: str, after_true_ns: int) -> list[int]:
    return [o for t, o in offset_samples(trace, node_id) if t >= after_true_ns]
