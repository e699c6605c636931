"""PTP version 2 message codec.

Covers the five message types a two-step, end-to-end delay exchange needs:
Sync, Delay_Req, Follow_Up, Delay_Resp and Announce. Everything is
big-endian on the wire; the common header is 34 octets.

    octet  0      transportSpecific (hi nibble) | messageType (lo nibble)
    octet  1      reserved (hi nibble)          | versionPTP (lo nibble)
    octets 2-3    messageLength
    octet  4      domainNumber
    octet  5      reserved
    octets 6-7    flagField
    octets 8-15   correctionField (signed, ns * 2**16)
    octets 16-19  reserved
    octets 20-29  sourcePortIdentity (clockIdentity[8] + portNumber[2])
    octets 30-31  sequenceId
    octet  32     controlField
    octet  33     logMessageInterval (signed)
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace
from typing import Union

HEADER_LENGTH = 34
PTP_VERSION = 2
NS_PER_S = 1_000_000_000

FLAG_TWO_STEP = 0x0200

_HEADER = struct.Struct(">BBHBxHq4x8sHHBb")


class WireError(ValueError):
    """Base class for codec failures."""


class Truncated(WireError):
    pass


class UnknownMessageType(WireError):
    pass


class BadVersion(WireError):
    pass


class LengthMismatch(WireError):
    pass


class InvariantViolation(WireError):
    pass


class MessageType(enum.IntEnum):
    SYNC = 0x0
    DELAY_REQ = 0x1
    FOLLOW_UP = 0x8
    DELAY_RESP = 0x9
    ANNOUNCE = 0xB

    def __str__(self) -> str:
        return self.name


# legacy controlField values, still emitted by v2 senders
_CONTROL = {
    MessageType.SYNC: 0,
    MessageType.DELAY_REQ: 1,
    MessageType.FOLLOW_UP: 2,
    MessageType.DELAY_RESP: 3,
    MessageType.ANNOUNCE: 5,
}


@dataclass(frozen=True, order=True)
class Timestamp:
    seconds: int = 0
    nanoseconds: int = 0

    def __post_init__(self):
        if not 0 <= self.seconds < 1 << 48:
            raise InvariantViolation(f"seconds out of 48-bit range: {self.seconds}")
        if not 0 <= self.nanoseconds < NS_PER_S:
            raise InvariantViolation(f"nanoseconds out of range: {self.nanoseconds}")

    @classmethod
    def from_ns(cls, ns: int) -> Timestamp:
        s, n = divmod(ns, NS_PER_S)
        return cls(s, n)

    def to_ns(self) -> int:
        return self.seconds * NS_PER_S + self.nanoseconds

    def encode(self) -> bytes:
        return self.seconds.to_bytes(6, "big") + self.nanoseconds.to_bytes(4, "big")

    @classmethod
    def decode(cls, octets: bytes) -> Timestamp:
        if len(octets) < 10:
            raise Truncated("timestamp needs 10 octets")
        return cls(int.from_bytes(octets[:6], "big"), int.from_bytes(octets[6:10], "big"))


@dataclass(frozen=True, order=True)
class TimeInterval:
    """Signed nanoseconds scaled by 2**16, as carried in correctionField."""

    scaled_nanoseconds: int = 0

    def __post_init__(self):
        if not -(1 << 63) <= self.scaled_nanoseconds < 1 << 63:
            raise InvariantViolation("TimeInterval exceeds signed 64-bit range")

    @classmethod
    def from_ns(cls, ns: int) -> TimeInterval:
        return cls(ns << 16)

    @property
    def ns(self) -> int:
        """Whole nanoseconds, truncated toward zero."""
        v = self.scaled_nanoseconds
        return v >> 16 if v >= 0 else -((-v) >> 16)

    def __add__(self, other: TimeInterval) -> TimeInterval:
        return TimeInterval(self.scaled_nanoseconds + other.scaled_nanoseconds)

    def encode(self) -> bytes:
        return self.scaled_nanoseconds.to_bytes(8, "big", signed=True)


@dataclass(frozen=True, order=True)
class PortIdentity:
    clock_identity: bytes = bytes(8)
    port_number: int = 1

    def __post_init__(self):
        if len(self.clock_identity) != 8:
            raise InvariantViolation("clockIdentity must be 8 octets")
        if not 0 <= self.port_number <= 0xFFFF:
            raise InvariantViolation("portNumber out of range")

    def encode(self) -> bytes:
        return self.clock_identity + self.port_number.to_bytes(2, "big")

    @classmethod
    def decode(cls, octets: bytes) -> PortIdentity:
        return cls(bytes(octets[:8]), int.from_bytes(octets[8:10], "big"))

    def __str__(self) -> str:
        return f"{self.clock_identity.hex()}-{self.port_number}"


def compare_port_identity(a: PortIdentity, b: PortIdentity) -> int:
    """-1, 0 or 1 by (clockIdentity, portNumber)."""
    ka = (a.clock_identity, a.port_number)
    kb = (b.clock_identity, b.port_number)
    return (ka > kb) - (ka < kb)


@dataclass(frozen=True)
class ClockQuality:
    clock_class: int = 248
    clock_accuracy: int = 0xFE
    offset_scaled_log_variance: int = 0xFFFF


@dataclass(frozen=True)
class AnnounceBody:
    origin_timestamp: Timestamp = Timestamp()
    grandmaster_priority1: int = 128
    grandmaster_clock_quality: ClockQuality = ClockQuality()
    grandmaster_priority2: int = 128
    grandmaster_identity: bytes = bytes(8)
    steps_removed: int = 0
    time_source: int = 0xA0
    current_utc_offset: int = 0


@dataclass(frozen=True)
class SyncBody:
    origin_timestamp: Timestamp = Timestamp()


@dataclass(frozen=True)
class FollowUpBody:
    precise_origin_timestamp: Timestamp = Timestamp()


@dataclass(frozen=True)
class DelayReqBody:
    origin_timestamp: Timestamp = Timestamp()


@dataclass(frozen=True)
class DelayRespBody:
    receive_timestamp: Timestamp = Timestamp()
    requesting_port_identity: PortIdentity = PortIdentity()


Body = Union[AnnounceBody, SyncBody, FollowUpBody, DelayReqBody, DelayRespBody]

BODY_TYPES: dict[MessageType, type] = {
    MessageType.SYNC: SyncBody,
    MessageType.DELAY_REQ: DelayReqBody,
    MessageType.FOLLOW_UP: FollowUpBody,
    MessageType.DELAY_RESP: DelayRespBody,
    MessageType.ANNOUNCE: AnnounceBody,
}
MESSAGE_TYPES = {v: k for k, v in BODY_TYPES.items()}

MESSAGE_LENGTH = {
    MessageType.SYNC: 44,
    MessageType.DELAY_REQ: 44,
    MessageType.FOLLOW_UP: 44,
    MessageType.DELAY_RESP: 54,
    MessageType.ANNOUNCE: 64,
}


@dataclass(frozen=True)
class PtpHeader:
    message_type: MessageType
    message_length: int
    domain_number: int = 0
    flags: int = 0
    correction: TimeInterval = TimeInterval()
    source_port_identity: PortIdentity = PortIdentity()
    sequence_id: int = 0
    log_message_interval: int = 0
    transport_specific: int = 0
    version_ptp: int = PTP_VERSION

    @property
    def two_step(self) -> bool:
        return bool(self.flags & FLAG_TWO_STEP)


@dataclass(frozen=True)
class PtpMessage:
    header: PtpHeader
    body: Body

    @property
    def message_type(self) -> MessageType:
        return self.header.message_type

    def with_correction(self, correction: TimeInterval) -> PtpMessage:
        return replace(self, header=replace(self.header, correction=correction))


def make_message(body: Body, **header_fields) -> PtpMessage:
    """Build a message whose header type and length agree with ``body``."""
    try:
        mtype = MESSAGE_TYPES[type(body)]
    except KeyError:
        raise InvariantViolation(f"unsupported body {type(body).__name__}") from None
    header = PtpHeader(message_type=mtype, message_length=MESSAGE_LENGTH[mtype], **header_fields)
    return PtpMessage(header, body)


def _check_header(h: PtpHeader) -> None:
    ranges = (
        ("version_ptp", h.version_ptp, 0, 0xF),
        ("transport_specific", h.transport_specific, 0, 0xF),
        ("domain_number", h.domain_number, 0, 0xFF),
        ("flags", h.flags, 0, 0xFFFF),
        ("sequence_id", h.sequence_id, 0, 0xFFFF),
        ("log_message_interval", h.log_message_interval, -128, 127),
    )
    for name, value, lo, hi in ranges:
        if not lo <= value <= hi:
            raise InvariantViolation(f"{name}={value} outside [{lo}, {hi}]")
    if h.version_ptp != PTP_VERSION:
        raise InvariantViolation(f"versionPTP must be {PTP_VERSION}")


def _u(name: str, value: int, bits: int) -> int:
    if not 0 <= value < 1 << bits:
        raise InvariantViolation(f"{name}={value} does not fit in {bits} bits")
    return value


def _encode_body(body: Body) -> bytes:
    if isinstance(body, (SyncBody, DelayReqBody)):
        return body.origin_timestamp.encode()
    if isinstance(body, FollowUpBody):
        return body.precise_origin_timestamp.encode()
    if isinstance(body, DelayRespBody):
        return body.receive_timestamp.encode() + body.requesting_port_identity.encode()
    q = body.grandmaster_clock_quality
    if len(body.grandmaster_identity) != 8:
        raise InvariantViolation("grandmasterIdentity must be 8 octets")
    if not -(1 << 15) <= body.current_utc_offset < 1 << 15:
        raise InvariantViolation("currentUtcOffset out of range")
    return body.origin_timestamp.encode() + struct.pack(
        ">hxBBBHB8sHB",
        body.current_utc_offset,
        _u("grandmasterPriority1", body.grandmaster_priority1, 8),
        _u("clockClass", q.clock_class, 8),
        _u("clockAccuracy", q.clock_accuracy, 8),
        _u("offsetScaledLogVariance", q.offset_scaled_log_variance, 16),
        _u("grandmasterPriority2", body.grandmaster_priority2, 8),
        body.grandmaster_identity,
        _u("stepsRemoved", body.steps_removed, 16),
        _u("timeSource", body.time_source, 8),
    )


def encode_message(msg: PtpMessage) -> bytes:
    h = msg.header
    expected_type = MESSAGE_TYPES.get(type(msg.body))
    if expected_type is None or expected_type != h.message_type:
        raise InvariantViolation(
            f"body {type(msg.body).__name__} does not match messageType {h.message_type!r}"
        )
    if h.message_length != MESSAGE_LENGTH[h.message_type]:
        raise InvariantViolation(
            f"messageLength {h.message_length} != {MESSAGE_LENGTH[h.message_type]}"
        )
    _check_header(h)
    header = _HEADER.pack(
        (h.transport_specific << 4) | int(h.message_type),
        h.version_ptp,
        h.message_length,
        h.domain_number,
        h.flags,
        h.correction.scaled_nanoseconds,
        h.source_port_identity.clock_identity,
        h.source_port_identity.port_number,
        h.sequence_id,
        _CONTROL[h.message_type],
        h.log_message_interval,
    )
    return header + _encode_body(msg.body)


def decode_message(octets: bytes) -> PtpMessage:
    """Parse one PTP payload. Octets beyond messageLength are ignored."""
    octets = bytes(octets)
    if len(octets) < HEADER_LENGTH:
        raise Truncated(f"{len(octets)} octets, header needs {HEADER_LENGTH}")
    (b0, b1, length, domain, flags, corr, clock_id, port, seq, _control,
     log_interval) = _HEADER.unpack_from(octets)
    version = b1 & 0x0F
    if version != PTP_VERSION:
        raise BadVersion(f"versionPTP={version}")
    try:
        mtype = MessageType(b0 & 0x0F)
    except ValueError:
        raise UnknownMessageType(f"messageType=0x{b0 & 0x0F:x}") from None
    if length != MESSAGE_LENGTH[mtype]:
        raise LengthMismatch(f"{mtype} messageLength={length}, expected {MESSAGE_LENGTH[mtype]}")
    if len(octets) < length:
        raise Truncated(f"{len(octets)} octets, messageLength says {length}")

    p = octets[HEADER_LENGTH:length]
    try:
        if mtype is MessageType.SYNC:
            body: Body = SyncBody(Timestamp.decode(p))
        elif mtype is MessageType.DELAY_REQ:
            body = DelayReqBody(Timestamp.decode(p))
        elif mtype is MessageType.FOLLOW_UP:
            body = FollowUpBody(Timestamp.decode(p))
        elif mtype is MessageType.DELAY_RESP:
            body = DelayRespBody(Timestamp.decode(p), PortIdentity.decode(p[10:20]))
        else:
            utc, prio1, cclass, cacc, var, prio2, gm_id, steps, source = struct.unpack_from(
                ">hxBBBHB8sHB", p, 10
            )
            body = AnnounceBody(
                origin_timestamp=Timestamp.decode(p),
                grandmaster_priority1=prio1,
                grandmaster_clock_quality=ClockQuality(cclass, cacc, var),
                grandmaster_priority2=prio2,
                grandmaster_identity=gm_id,
                steps_removed=steps,
                time_source=source,
                current_utc_offset=utc,
            )
    except InvariantViolation as exc:
        # e.g. nanoseconds field >= 1e9 on the wire
        raise InvariantViolation(f"malformed {mtype} body: {exc}") from None

    header = PtpHeader(
        message_type=mtype,
        message_length=length,
        domain_number=domain,
        flags=flags,
        correction=TimeInterval(corr),
        source_port_identity=PortIdentity(clock_id, port),
        sequence_id=seq,
        log_message_interval=log_interval,
        transport_specific=b0 >> 4,
        version_ptp=version,
    )
    return PtpMessage(header, body)
