"""Deterministic discrete-event simulation of PTP nodes around one switch.

Events are popped in (true_time_ns, seq) order, ``seq`` being a global
insertion counter. Every random draw comes from a named stream derived from
the scenario seed, so the same scenario always yields the same trace.

Topology: each node hangs off one switch port by its own link. "Forward"
on a link means switch -> node; link asymmetry is added in that direction.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Optional

from .clock import NS_PER_S, PpsConfig, VirtualClock
from .engine import (
    ApplyServo,
    ArmTimer,
    PortConfig,
    PortRuntime,
    PowerUp,
    RecordTrace,
    Rx,
    TimerFired,
    TimerId,
    Transmit,
    TransitionTo,
    TxTimestamped,
    handle_event,
)
from .harness import Drop, PpsRising, StateChange, TraceRecord
from .servo import StepPhase
from .wire import MessageType, PtpMessage, TimeInterval, Timestamp, encode_message

EVENT_MESSAGES = (MessageType.SYNC, MessageType.DELAY_REQ)
RNG_ALGORITHM = "MT19937 (random.Random), streams keyed by SHA-256(seed/stream)"


class ScenarioInvalid(ValueError):
    pass


class InternalInvariantBreach(RuntimeError):
    pass


class Rng:
    """Seed plus named, independent substreams."""

    def __init__(self, seed: int):
        self.seed = seed

    def stream(self, name: str) -> random.Random:
        digest = hashlib.sha256(f"{self.seed}/{name}".encode()).digest()
        return random.Random(int.from_bytes(digest, "big"))


@dataclass(frozen=True)
class Jitter:
    """Zero-mean delay/error distribution: none, uniform(+-a) or gaussian(sigma, cut at 4 sigma)."""

    kind: str = "none"
    magnitude_ns: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "gaussian"):
            raise ScenarioInvalid(f"unknown jitter kind {self.kind!r}")
        if self.magnitude_ns < 0:
            raise ScenarioInvalid("jitter magnitude must be >= 0")

    @classmethod
    def uniform(cls, a_ns: float) -> Jitter:
        return cls("uniform", a_ns)

    @classmethod
    def gaussian(cls, sigma_ns: float) -> Jitter:
        return cls("gaussian", sigma_ns)

    @property
    def bound_ns(self) -> float:
        return {"none": 0.0, "uniform": self.magnitude_ns, "gaussian": 4 * self.magnitude_ns}[self.kind]

    def sample(self, rng: random.Random) -> int:
        if self.kind == "none" or self.magnitude_ns == 0:
            return 0
        if self.kind == "uniform":
            return round(rng.uniform(-self.magnitude_ns, self.magnitude_ns))
        while True:
            x = rng.gauss(0.0, self.magnitude_ns)
            if abs(x) <= 4 * self.magnitude_ns:
                return round(x)


NO_JITTER = Jitter()


@dataclass(frozen=True)
class LinkModel:
    base_delay_ns: int = 100
    jitter: Jitter = NO_JITTER
    asymmetry_ns: int = 0
    # drawn once per frame the node sends, so it is a per-message loss rate
    loss_probability: float = 0.0

    def __post_init__(self):
        if self.base_delay_ns < 0:
            raise ScenarioInvalid("link base delay must be >= 0")
        if not 0 <= self.loss_probability <= 1:
            raise ScenarioInvalid("loss probability must be in [0, 1]")

    def sample_delay(self, rng: random.Random, forward: bool) -> int:
        d = self.base_delay_ns + self.jitter.sample(rng) + (self.asymmetry_ns if forward else 0)
        return max(d, 0)

    def lost(self, rng: random.Random) -> bool:
        return self.loss_probability > 0 and rng.random() < self.loss_probability


@dataclass(frozen=True)
class SwitchModel:
    ports: tuple[str, ...] = ()
    forwarding_delay_ns: int = 2_000
    queue_jitter: Jitter = Jitter.uniform(200)
    transparent_clock: bool = False
    # one latency draw per ingress frame, shared by its fan-out copies; per-port draws on request
    jitter_per_port: bool = False

    def __post_init__(self):
        if self.forwarding_delay_ns < 0:
            raise ScenarioInvalid("forwarding delay must be >= 0")
        if self.queue_jitter.bound_ns > self.forwarding_delay_ns:
            # store-and-forward: a frame cannot leave before it has been received
            raise ScenarioInvalid("queue jitter bound exceeds forwarding delay")


@dataclass(frozen=True)
class TimestampPointModel:
    name: str
    error: Jitter


PHY_A = TimestampPointModel("PhyA", Jitter.uniform(25))
MAC_B = TimestampPointModel("MacB", Jitter.uniform(100))
APP_C = TimestampPointModel("AppC", Jitter.gaussian(20_000))
TIMESTAMP_MODELS = {m.name: m for m in (PHY_A, MAC_B, APP_C)}


def timestamp_with_model(model: TimestampPointModel, true_ns: int, clock: VirtualClock,
                         rng: random.Random) -> Timestamp:
    err = model.error.sample(rng)
    # never ask the clock about an instant before its last rate change
    return Timestamp.from_ns(clock.read(max(true_ns + err, clock.anchor_true_ns)))


def route(switch: SwitchModel, src: str, message: PtpMessage, arrival_true_ns: int,
          rng: random.Random) -> list[tuple[str, int, PtpMessage]]:
    """Fan a frame out to every other port.

    A transparent switch adds each event message's residence time to its correctionField.
    """
    if src not in switch.ports:
        raise ScenarioInvalid(f"{src!r} is not attached to the switch")
    out = []
    shared = None if switch.jitter_per_port else switch.queue_jitter.sample(rng)
    for dst in switch.ports:
        if dst == src:
            continue
        jitter = switch.queue_jitter.sample(rng) if shared is None else shared
        depart = arrival_true_ns + switch.forwarding_delay_ns + jitter
        msg = message
        if switch.transparent_clock and message.message_type in EVENT_MESSAGES:
            # only event messages are timestamped, so only they carry residence time
            residence = TimeInterval.from_ns(depart - arrival_true_ns)
            msg = message.with_correction(message.header.correction + residence)
        out.append((dst, depart, msg))
    return out


@dataclass(frozen=True)
class NodeSpec:
    node_id: str
    port: PortConfig
    initial_offset_ns: int = 0
    frequency_offset_ppm: float = 0.0
    granularity_ns: int = 20
    slew_cap_ppb: float = 100_000
    timestamp_model: TimestampPointModel = MAC_B
    link: LinkModel = LinkModel()


@dataclass(frozen=True)
class TxRecord:
    true_time_ns: int
    node_id: str
    message: PtpMessage


@dataclass
class SimulationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    transmissions: list[TxRecord] = field(default_factory=list)
    runtimes: dict[str, PortRuntime] = field(default_factory=dict)
    clocks: dict[str, VirtualClock] = field(default_factory=dict)


class _Node:
    def __init__(self, spec: NodeSpec, rng: Rng):
        self.spec = spec
        self.id = spec.node_id
        self.runtime = PortRuntime.initial(spec.port)
        self.clock = VirtualClock(
            initial_offset_ns=spec.initial_offset_ns,
            frequency_offset_ppm=spec.frequency_offset_ppm,
            granularity_ns=spec.granularity_ns,
            slew_cap_ppb=spec.slew_cap_ppb,
        )
        self.ts_rng = rng.stream(f"timestamp/{self.id}")
        self.link_rng = rng.stream(f"link/{self.id}")
        self.timer_gen: dict[TimerId, int] = {}
        self.pps_gen = 0
        self.next_pps_local = 0


class Simulator:
    def __init__(
        self,
        nodes: list[NodeSpec],
        switch: SwitchModel,
        seed: int = 0,
        duration_ns: int = 10 * NS_PER_S,
        pps: PpsConfig = PpsConfig(),
        tx_timestamp_latency_ns: int = 10_000,
    ):
        ids = [n.node_id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ScenarioInvalid("duplicate node ids")
        if not nodes:
            raise ScenarioInvalid("at least one node is required")
        if set(switch.ports) != set(ids):
            raise ScenarioInvalid("switch ports must be exactly the node ids")
        if duration_ns < 0:
            raise ScenarioInvalid("duration must be >= 0")
        self.rng = Rng(seed)
        self.switch = switch
        self.switch_rng = self.rng.stream("switch")
        self.duration_ns = duration_ns
        self.pps = pps
        self.tx_latency = tx_timestamp_latency_ns
        self.nodes = {n.node_id: _Node(n, self.rng) for n in nodes}
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.trace = SimulationTrace()

    def _push(self, t: int, *payload) -> None:
        if t < self.now:
            raise InternalInvariantBreach(f"event scheduled at {t} before now={self.now}")
        heapq.heappush(self._queue, (t, self._seq, payload))
        self._seq += 1

    def _record(self, node_id: str, kind) -> None:
        self.trace.records.append(TraceRecord(self.now, node_id, kind))

    # --- PPS ----------------------------------------------------------------

    def _schedule_pps(self, node: _Node) -> None:
        node.pps_gen += 1
        t = max(self.now, node.clock.pps_edge_true_time(node.next_pps_local))
        self._push(t, "pps", node.id, node.pps_gen)

    def _fire_pps(self, node: _Node, gen: int) -> None:
        if gen != node.pps_gen:
            return
        self._record(node.id, PpsRising())
        local_now = node.clock.offset_from_true(self.now) + self.now
        node.next_pps_local = node.clock.next_pps_edge(max(node.next_pps_local, local_now), self.pps)[0]
        self._schedule_pps(node)

    # --- engine glue --------------------------------------------------------

    def _dispatch(self, node: _Node, event) -> None:
        node.runtime, actions = handle_event(node.runtime, event)
        for action in actions:
            self._execute(node, action)

    def _execute(self, node: _Node, action) -> None:
        if isinstance(action, Transmit):
            self._transmit(node, action.message)
        elif isinstance(action, ArmTimer):
            gen = node.timer_gen.get(action.timer, 0) + 1
            node.timer_gen[action.timer] = gen
            self._push(self.now + node.clock.true_delay(action.delay_local_ns),
                       "timer", node.id, action.timer, gen)
        elif isinstance(action, ApplyServo):
            servo = action.action
            if isinstance(servo, StepPhase):
                node.clock.step_phase(servo.delta_ns)
            else:
                node.clock.adjust_rate(servo.rate_ppb, at_true_ns=self.now)
            self._schedule_pps(node)
        elif isinstance(action, RecordTrace):
            self._record(node.id, action.kind)
        elif isinstance(action, TransitionTo):
            self._record(node.id, StateChange(str(action.from_state), str(action.to_state)))
        else:
            raise InternalInvariantBreach(f"unknown action {action!r}")

    def _transmit(self, node: _Node, message: PtpMessage) -> None:
        self.trace.transmissions.append(TxRecord(self.now, node.id, message))
        h = message.header
        if h.message_type in EVENT_MESSAGES:
            ts = timestamp_with_model(node.spec.timestamp_model, self.now, node.clock, node.ts_rng)
            self._push(self.now + self.tx_latency, "txts", node.id, h.message_type, h.sequence_id, ts)
        link = node.spec.link
        if link.lost(node.link_rng):
            self._record(node.id, Drop("link_loss"))
            return
        self._push(self.now + link.sample_delay(node.link_rng, forward=False), "switch", node.id, message)

    def _switch(self, src: str, message: PtpMessage) -> None:
        for dst, depart, msg in route(self.switch, src, message, self.now, self.switch_rng):
            node = self.nodes[dst]
            link = node.spec.link
            arrival = depart + link.sample_delay(node.link_rng, forward=True)
            self._push(arrival, "deliver", dst, encode_message(msg))

    def _deliver(self, node: _Node, payload: bytes) -> None:
        rx = timestamp_with_model(node.spec.timestamp_model, self.now, node.clock, node.ts_rng)
        self._dispatch(node, Rx(payload, rx))

    # --- main loop ----------------------------------------------------------

    def run(self) -> SimulationTrace:
        if self.duration_ns == 0:
            return self.trace
        for node in self.nodes.values():
            self._push(0, "power", node.id)
            node.next_pps_local = node.clock.next_pps_edge(node.clock.offset_from_true(0), self.pps)[0]
            self._schedule_pps(node)
        last = (0, -1)
        while self._queue and self._queue[0][0] <= self.duration_ns:
            t, seq, payload = heapq.heappop(self._queue)
            if (t, seq) < last:
                raise InternalInvariantBreach("event queue popped out of order")
            last = (t, seq)
            self.now = t
            kind, node_id = payload[0], payload[1]
            if kind == "switch":
                self._switch(node_id, payload[2])
                continue
            node = self.nodes[node_id]
            if kind == "power":
                self._dispatch(node, PowerUp(node.clock.peek(t)))
            elif kind == "timer":
                timer, gen = payload[2], payload[3]
                if node.timer_gen.get(timer) == gen:
                    self._dispatch(node, TimerFired(timer, node.clock.peek(t)))
            elif kind == "txts":
                self._dispatch(node, TxTimestamped(payload[2], payload[3], payload[4]))
            elif kind == "deliver":
                self._deliver(node, payload[2])
            elif kind == "pps":
                self._fire_pps(node, payload[2])
        self.trace.runtimes = {k: n.runtime for k, n in self.nodes.items()}
        self.trace.clocks = {k: n.clock for k, n in self.nodes.items()}
        return self.trace


def run(nodes: list[NodeSpec], switch: SwitchModel, **kwargs) -> SimulationTrace:
    return Simulator(nodes, switch, **kwargs).run()
