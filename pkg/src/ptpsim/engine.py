"""PTP port state machine as a pure function of (runtime, event).

``handle_event`` never mutates its input: it returns a new ``PortRuntime`` and
a list of actions for the simulator to execute (transmit, arm a timer, apply
a servo correction, record a trace sample, announce a state change).
Two-step master, end-to-end delay request/response only.
"""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from . import bmc
from .bmc import ClockDescriptor, ForeignMasterRecord
from .harness import Drop, OffsetSample, TraceKind
from .servo import (
    ServoAction,
    ServoState,
    StepPhase,
    filter_delay,
    master_to_slave_ns,
    servo_update,
    compute_offset_and_delay,
    ExchangeTimestamps,
)
from .wire import (
    FLAG_TWO_STEP,
    AnnounceBody,
    DelayReqBody,
    DelayRespBody,
    FollowUpBody,
    MessageType,
    PortIdentity,
    PtpMessage,
    SyncBody,
    TimeInterval,
    Timestamp,
    WireError,
    decode_message,
    make_message,
)

NS_PER_S = 1_000_000_000
LOG_INTERVAL_UNSPECIFIED = 0x7F


class PortState(enum.Enum):
    INITIALIZING = "INITIALIZING"
    LISTENING = "LISTENING"
    MASTER = "MASTER"
    SLAVE = "SLAVE"
    PASSIVE = "PASSIVE"
    FAULTY = "FAULTY"

    def __str__(self) -> str:
        return self.value


class TimerId(enum.Enum):
    SYNC = "sync"
    ANNOUNCE = "announce"
    ANNOUNCE_RECEIPT = "announce_receipt"
    DELAY_REQ = "delay_req"


def interval_ns(log_interval: int) -> int:
    if log_interval >= 0:
        return NS_PER_S << log_interval
    return NS_PER_S >> -log_interval


@dataclass(frozen=True)
class PortConfig:
    descriptor: ClockDescriptor = ClockDescriptor()
    port_number: int = 1
    slave_only: bool = False
    master_only: bool = False
    domain_number: int = 0
    log_sync_interval: int = 0
    log_announce_interval: int = 1
    log_min_delay_req_interval: int = 0
    announce_receipt_timeout: int = 3
    qualification_threshold: int = bmc.FOREIGN_MASTER_THRESHOLD
    jitter_seed: int = 0
    servo: ServoState = ServoState()

    def __post_init__(self):
        for name in ("log_sync_interval", "log_announce_interval", "log_min_delay_req_interval"):
            v = getattr(self, name)
            if not -7 <= v <= 7:
                raise ValueError(f"{name}={v} outside [-7, 7]")
        if self.slave_only and self.master_only:
            raise ValueError("a port cannot be both slave-only and master-only")
        if self.announce_receipt_timeout < 2:
            raise ValueError("announce_receipt_timeout must be >= 2")
        if not 0 <= self.domain_number <= 255:
            raise ValueError("domain_number out of range")

    @property
    def port_identity(self) -> PortIdentity:
        return PortIdentity(self.descriptor.clock_identity, self.port_number)

    @property
    def announce_receipt_timeout_ns(self) -> int:
        return self.announce_receipt_timeout * interval_ns(self.log_announce_interval)


@dataclass(frozen=True)
class PendingSync:
    sequence_id: int
    t2: Timestamp
    correction: TimeInterval
    source: PortIdentity


@dataclass(frozen=True)
class SyncSample:
    t1: Timestamp
    t2: Timestamp
    correction: TimeInterval
    steps: int


@dataclass(frozen=True)
class PendingDelayReq:
    sequence_id: int
    steps: int
    t3: Optional[Timestamp] = None
    # a response can beat the local tx timestamp; hold it until t3 is known
    early_response: Optional[PtpMessage] = None


@dataclass(frozen=True)
class PortRuntime:
    config: PortConfig
    state: PortState = PortState.INITIALIZING
    servo: ServoState = ServoState()
    foreign: tuple[ForeignMasterRecord, ...] = ()
    parent: Optional[PortIdentity] = None
    pending_sync: Optional[PendingSync] = None
    last_sync: Optional[SyncSample] = None
    pending_delay_req: Optional[PendingDelayReq] = None
    delay_req_armed: bool = False
    calibrating: bool = True
    sync_seq: int = 0
    announce_seq: int = 0
    delay_req_seq: int = 0
    steps: int = 0
    last_raw_delay_ns: int = 0
    drops: int = 0

    @classmethod
    def initial(cls, config: PortConfig) -> PortRuntime:
        return cls(config=config, servo=config.servo)

    @property
    def identity(self) -> PortIdentity:
        return self.config.port_identity


# --- events ---------------------------------------------------------------


@dataclass(frozen=True)
class PowerUp:
    local_ns: int = 0


@dataclass(frozen=True)
class Rx:
    message: Union[PtpMessage, bytes]
    rx_local: Timestamp


@dataclass(frozen=True)
class TimerFired:
    timer: TimerId
    local_ns: int = 0


@dataclass(frozen=True)
class TxTimestamped:
    message_type: MessageType
    sequence_id: int
    tx_local: Timestamp


EngineEvent = Union[PowerUp, Rx, TimerFired, TxTimestamped]


# --- actions --------------------------------------------------------------


@dataclass(frozen=True)
class Transmit:
    message: PtpMessage


@dataclass(frozen=True)
class ArmTimer:
    timer: TimerId
    delay_local_ns: int


@dataclass(frozen=True)
class ApplyServo:
    action: ServoAction


@dataclass(frozen=True)
class RecordTrace:
    kind: TraceKind


@dataclass(frozen=True)
class TransitionTo:
    from_state: PortState
    to_state: PortState


EngineAction = Union[Transmit, ArmTimer, ApplyServo, RecordTrace, TransitionTo]


# --- helpers --------------------------------------------------------------


def _uniform01(*parts) -> float:
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def _next_seq(seq: int) -> int:
    return (seq + 1) & 0xFFFF


def _header(rt: PortRuntime, seq: int, log_interval: int, flags: int = 0,
            correction: TimeInterval = TimeInterval()) -> dict:
    return dict(
        domain_number=rt.config.domain_number,
        flags=flags,
        correction=correction,
        source_port_identity=rt.identity,
        sequence_id=seq,
        log_message_interval=log_interval,
    )


def _transition(rt: PortRuntime, to: PortState, actions: list) -> PortRuntime:
    if rt.state is not to:
        actions.append(TransitionTo(rt.state, to))
    return replace(rt, state=to)


def _drop(rt: PortRuntime, reason: str, actions: list) -> PortRuntime:
    actions.append(RecordTrace(Drop(reason)))
    return replace(rt, drops=rt.drops + 1)


def _arm_announce_receipt(rt: PortRuntime, actions: list) -> None:
    actions.append(ArmTimer(TimerId.ANNOUNCE_RECEIPT, rt.config.announce_receipt_timeout_ns))


def _become_master(rt: PortRuntime, actions: list) -> PortRuntime:
    if rt.config.slave_only:
        raise AssertionError("slave-only port asked to become master")
    if rt.state is PortState.MASTER:
        return rt
    rt = _transition(rt, PortState.MASTER, actions)
    actions.append(ArmTimer(TimerId.ANNOUNCE, interval_ns(rt.config.log_announce_interval)))
    actions.append(ArmTimer(TimerId.SYNC, interval_ns(rt.config.log_sync_interval)))
    return replace(rt, parent=None, pending_sync=None, pending_delay_req=None,
                   last_sync=None, delay_req_armed=False)


def _apply_recommendation(rt: PortRuntime, rec: bmc.Recommendation, actions: list) -> PortRuntime:
    if isinstance(rec, bmc.BecomeMaster):
        return _become_master(rt, actions)
    if isinstance(rec, bmc.BecomeSlaveOf):
        if rt.state is PortState.SLAVE and rt.parent == rec.source_port:
            return rt
        rt = _transition(rt, PortState.SLAVE, actions)
        _arm_announce_receipt(rt, actions)
        return replace(rt, parent=rec.source_port, pending_sync=None, last_sync=None,
                       pending_delay_req=None, calibrating=True)
    target = PortState.LISTENING if rt.config.slave_only else PortState.PASSIVE
    rt = _transition(rt, target, actions)
    _arm_announce_receipt(rt, actions)
    return replace(rt, parent=None, pending_sync=None, last_sync=None, pending_delay_req=None)


def _decide(rt: PortRuntime, actions: list) -> PortRuntime:
    if rt.config.master_only:
        return rt
    best = bmc.best_foreign(rt.foreign, rt.config.qualification_threshold)
    rec = bmc.state_decision(rt.config.descriptor, best, rt.config.slave_only)
    return _apply_recommendation(rt, rec, actions)


# --- master side ----------------------------------------------------------


def master_tick(rt: PortRuntime, timer: TimerId) -> tuple[PortRuntime, list[EngineAction]]:
    if rt.state is not PortState.MASTER:
        return rt, []
    cfg = rt.config
    actions: list[EngineAction] = []
    if timer is TimerId.SYNC:
        seq = rt.sync_seq
        msg = make_message(SyncBody(), **_header(rt, seq, cfg.log_sync_interval, FLAG_TWO_STEP))
        actions.append(Transmit(msg))
        actions.append(ArmTimer(TimerId.SYNC, interval_ns(cfg.log_sync_interval)))
        rt = replace(rt, sync_seq=_next_seq(seq))
    elif timer is TimerId.ANNOUNCE:
        d = cfg.descriptor
        body = AnnounceBody(
            grandmaster_priority1=d.priority1,
            grandmaster_clock_quality=d.quality(),
            grandmaster_priority2=d.priority2,
            grandmaster_identity=d.clock_identity,
            steps_removed=0,
        )
        actions.append(Transmit(make_message(body, **_header(rt, rt.announce_seq, cfg.log_announce_interval))))
        actions.append(ArmTimer(TimerId.ANNOUNCE, interval_ns(cfg.log_announce_interval)))
        rt = replace(rt, announce_seq=_next_seq(rt.announce_seq))
    return rt, actions


def _on_delay_req(rt: PortRuntime, msg: PtpMessage, rx_local: Timestamp, actions: list) -> PortRuntime:
    if rt.state is not PortState.MASTER:
        return rt
    h = msg.header
    body = DelayRespBody(receive_timestamp=rx_local, requesting_port_identity=h.source_port_identity)
    actions.append(Transmit(make_message(
        body, **_header(rt, h.sequence_id, rt.config.log_min_delay_req_interval, correction=h.correction)
    )))
    return rt


# --- slave side -----------------------------------------------------------


def _process_sync(rt: PortRuntime, t1: Timestamp, t2: Timestamp, correction: TimeInterval,
                  actions: list) -> PortRuntime:
    cfg = rt.config
    rt = replace(rt, last_sync=SyncSample(t1, t2, correction, rt.steps), pending_sync=None)
    if rt.servo.mean_path_delay_ns is not None:
        ms = master_to_slave_ns(t1, t2, correction)
        offset = ms - round(rt.servo.mean_path_delay_ns)
        servo, action = servo_update(rt.servo, offset, interval_ns(cfg.log_sync_interval) / NS_PER_S)
        actions.append(ApplyServo(action))
        actions.append(RecordTrace(OffsetSample(offset, rt.last_raw_delay_ns)))
        steps = rt.steps + 1 if isinstance(action, StepPhase) else rt.steps
        rt = replace(rt, servo=servo, steps=steps, calibrating=False)
    if not rt.delay_req_armed:
        span = 2 * interval_ns(cfg.log_min_delay_req_interval)
        u = _uniform01(cfg.jitter_seed, rt.identity.clock_identity.hex(), t2.to_ns())
        actions.append(ArmTimer(TimerId.DELAY_REQ, int(u * span)))
        rt = replace(rt, delay_req_armed=True)
    return rt


def _from_parent(rt: PortRuntime, msg: PtpMessage) -> bool:
    return rt.state is PortState.SLAVE and msg.header.source_port_identity == rt.parent


def _on_sync(rt: PortRuntime, msg: PtpMessage, rx_local: Timestamp, actions: list) -> PortRuntime:
    if not _from_parent(rt, msg):
        return rt
    h = msg.header
    if h.two_step:
        return replace(rt, pending_sync=PendingSync(h.sequence_id, rx_local, h.correction,
                                                    h.source_port_identity))
    return _process_sync(rt, msg.body.origin_timestamp, rx_local, h.correction, actions)


def _on_follow_up(rt: PortRuntime, msg: PtpMessage, actions: list) -> PortRuntime:
    if not _from_parent(rt, msg):
        return rt
    p = rt.pending_sync
    if p is None or p.sequence_id != msg.header.sequence_id:
        return _drop(rt, "follow_up_unmatched", actions)
    return _process_sync(rt, msg.body.precise_origin_timestamp, p.t2,
                         p.correction + msg.header.correction, actions)


def _send_delay_req(rt: PortRuntime, actions: list) -> PortRuntime:
    rt = replace(rt, delay_req_armed=False)
    if rt.state is not PortState.SLAVE:
        return rt
    seq = rt.delay_req_seq
    msg = make_message(DelayReqBody(), **_header(rt, seq, LOG_INTERVAL_UNSPECIFIED))
    actions.append(Transmit(msg))
    return replace(rt, delay_req_seq=_next_seq(seq), pending_delay_req=PendingDelayReq(seq, rt.steps))


def _complete_delay(rt: PortRuntime, p: PendingDelayReq, resp: PtpMessage) -> PortRuntime:
    rt = replace(rt, pending_delay_req=None)
    s = rt.last_sync
    # a phase step between t2 and t3 would corrupt the round trip
    if s is None or s.steps != p.steps or p.steps != rt.steps:
        return rt
    x = ExchangeTimestamps(s.t1, s.t2, p.t3, resp.body.receive_timestamp, s.correction,
                           resp.header.correction)
    _, raw_delay = compute_offset_and_delay(x)
    return replace(rt, servo=filter_delay(rt.servo, raw_delay), last_raw_delay_ns=raw_delay)


def _on_delay_resp(rt: PortRuntime, msg: PtpMessage, actions: list) -> PortRuntime:
    if not _from_parent(rt, msg) or msg.body.requesting_port_identity != rt.identity:
        return rt
    p = rt.pending_delay_req
    if p is None or p.sequence_id != msg.header.sequence_id:
        return _drop(rt, "delay_resp_unmatched", actions)
    if p.t3 is None:
        return replace(rt, pending_delay_req=replace(p, early_response=msg))
    return _complete_delay(rt, p, msg)


def _on_announce(rt: PortRuntime, msg: PtpMessage, rx_local: Timestamp, actions: list) -> PortRuntime:
    cfg = rt.config
    if cfg.master_only or rt.state in (PortState.INITIALIZING, PortState.FAULTY):
        return rt
    src = msg.header.source_port_identity
    now = rx_local.to_ns()
    window = bmc.FOREIGN_MASTER_TIME_WINDOW * interval_ns(cfg.log_announce_interval)
    descriptor = ClockDescriptor.from_announce(msg.body)
    records = []
    found = False
    for r in rt.foreign:
        if r.source_port == src:
            count = 1 if now - r.last_announce_local_ns > window else r.announce_count + 1
            r = ForeignMasterRecord(descriptor, src, count, now)
            found = True
        records.append(r)
    if not found:
        records.append(ForeignMasterRecord(descriptor, src, 1, now))
    rt = replace(rt, foreign=tuple(records))
    if rt.state is PortState.SLAVE and src == rt.parent:
        _arm_announce_receipt(rt, actions)
    if bmc.best_foreign(rt.foreign, cfg.qualification_threshold) is None:
        # nothing qualified yet; the receipt timeout decides what an empty field means
        return rt
    return _decide(rt, actions)


def announce_timeout(rt: PortRuntime, local_ns: int) -> tuple[PortRuntime, list[EngineAction]]:
    """Expire silent foreign masters and re-run the state decision."""
    if rt.state not in (PortState.SLAVE, PortState.LISTENING, PortState.PASSIVE):
        return rt, []
    timeout = rt.config.announce_receipt_timeout_ns
    alive = tuple(r for r in rt.foreign if local_ns - r.last_announce_local_ns < timeout)
    rt = replace(rt, foreign=alive)
    actions: list[EngineAction] = []
    before = rt.state
    rt = _decide(rt, actions)
    if rt.state is before and rt.state is not PortState.SLAVE:
        # still listening: keep the watchdog running
        if not any(isinstance(a, ArmTimer) and a.timer is TimerId.ANNOUNCE_RECEIPT for a in actions):
            _arm_announce_receipt(rt, actions)
    return rt, actions


# --- dispatch -------------------------------------------------------------


def _on_rx(rt: PortRuntime, ev: Rx, actions: list) -> PortRuntime:
    msg = ev.message
    if isinstance(msg, (bytes, bytearray)):
        try:
            msg = decode_message(msg)
        except WireError as exc:
            return _drop(rt, f"malformed:{type(exc).__name__}", actions)
    h = msg.header
    if h.domain_number != rt.config.domain_number:
        return _drop(rt, "foreign_domain", actions)
    if h.source_port_identity == rt.identity:
        return rt
    t = h.message_type
    if t is MessageType.ANNOUNCE:
        return _on_announce(rt, msg, ev.rx_local, actions)
    if t is MessageType.SYNC:
        return _on_sync(rt, msg, ev.rx_local, actions)
    if t is MessageType.FOLLOW_UP:
        return _on_follow_up(rt, msg, actions)
    if t is MessageType.DELAY_REQ:
        return _on_delay_req(rt, msg, ev.rx_local, actions)
    return _on_delay_resp(rt, msg, actions)


def handle_event(rt: PortRuntime, ev: EngineEvent) -> tuple[PortRuntime, list[EngineAction]]:
    actions: list[EngineAction] = []
    if isinstance(ev, PowerUp):
        if rt.state is not PortState.INITIALIZING:
            return rt, actions
        if rt.config.master_only:
            rt = _become_master(rt, actions)
        else:
            rt = _transition(rt, PortState.LISTENING, actions)
            _arm_announce_receipt(rt, actions)
        return rt, actions

    if isinstance(ev, TimerFired):
        if ev.timer in (TimerId.SYNC, TimerId.ANNOUNCE):
            return master_tick(rt, ev.timer)
        if ev.timer is TimerId.ANNOUNCE_RECEIPT:
            return announce_timeout(rt, ev.local_ns)
        return _send_delay_req(rt, actions), actions

    if isinstance(ev, TxTimestamped):
        if ev.message_type is MessageType.SYNC and rt.state is PortState.MASTER:
            body = FollowUpBody(precise_origin_timestamp=ev.tx_local)
            actions.append(Transmit(make_message(
                body, **_header(rt, ev.sequence_id, rt.config.log_sync_interval)
            )))
        elif ev.message_type is MessageType.DELAY_REQ:
            p = rt.pending_delay_req
            if p is not None and p.sequence_id == ev.sequence_id:
                p = replace(p, t3=ev.tx_local)
                rt = replace(rt, pending_delay_req=p)
                if p.early_response is not None:
                    rt = _complete_delay(rt, p, p.early_response)
        return rt, actions

    return _on_rx(rt, ev, actions), actions
