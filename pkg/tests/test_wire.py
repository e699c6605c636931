import struct

import pytest
from hypothesis import given, settings, strategies as st

from ptpsim.wire import (
    FLAG_TWO_STEP, AnnounceBody, BadVersion, ClockQuality, DelayRespBody, InvariantViolation,
    LengthMismatch, MessageType, PortIdentity, PtpHeader, PtpMessage, SyncBody, TimeInterval, Timestamp,
    Truncated, UnknownMessageType, WireError, compare_port_identity, decode_message, encode_message,
    make_message,
)

from strategies import messages, port_identities


def sync_vector():
    """Zero Sync laid out by hand from the field table, independent of the encoder."""
    return bytes(
        [0x00, 0x02, 0x00, 44, 0x00, 0x00, 0x00, 0x00]  # type, version, length, domain, reserved, flags
        + [0] * 8                                         # correctionField
        + [0] * 4                                         # reserved
        + [0] * 8 + [0x00, 0x01]                          # sourcePortIdentity (port 1)
        + [0x00, 0x00, 0x00, 0x00]                        # sequenceId, controlField, logMessageInterval
        + [0] * 10                                        # originTimestamp
    )


def test_sync_golden_vector():
    raw = encode_message(make_message(SyncBody()))
    assert len(raw) == 44
    assert raw[0] & 0x0F == 0x0
    assert raw == sync_vector()


def test_announce_length_and_type_nibble():
    raw = encode_message(make_message(AnnounceBody(
        grandmaster_priority1=0, grandmaster_clock_quality=ClockQuality(0, 0, 0),
        grandmaster_priority2=0, time_source=0)))
    assert len(raw) == 64
    assert raw[0] & 0x0F == 0xB
    assert raw[34:] == bytes(30)


def test_announce_body_layout():
    body = AnnounceBody(
        origin_timestamp=Timestamp(7, 8), grandmaster_priority1=1,
        grandmaster_clock_quality=ClockQuality(6, 0x21, 0x4E5D), grandmaster_priority2=2,
        grandmaster_identity=bytes(range(8)), steps_removed=3, time_source=0x20, current_utc_offset=37,
    )
    raw = encode_message(make_message(body))
    p = raw[34:]
    assert p[:10] == bytes([0, 0, 0, 0, 0, 7, 0, 0, 0, 8])
    assert p[10:12] == (37).to_bytes(2, "big")
    assert p[12] == 0  # reserved
    assert p[13:18] == bytes([1, 6, 0x21, 0x4E, 0x5D])
    assert p[18] == 2
    assert p[19:27] == bytes(range(8))
    assert p[27:29] == b"\x00\x03"
    assert p[29] == 0x20


def test_timestamp_octets():
    assert Timestamp(1, 0).encode() == bytes.fromhex("00000000000100000000")


def test_header_fields_land_on_their_offsets():
    ident = PortIdentity(bytes.fromhex("0011223344556677"), 0x0102)
    m = make_message(
        DelayRespBody(Timestamp(1, 2), ident), domain_number=4, flags=FLAG_TWO_STEP,
        correction=TimeInterval.from_ns(400), source_port_identity=ident, sequence_id=0xBEEF,
        log_message_interval=-3, transport_specific=1,
    )
    raw = encode_message(m)
    assert len(raw) == 54
    assert raw[0] == 0x19 and raw[1] == 0x02
    assert raw[2:4] == b"\x00\x36" and raw[4] == 4
    assert raw[6:8] == b"\x02\x00"
    assert struct.unpack(">q", raw[8:16])[0] == 400 * 65536
    assert raw[20:30] == ident.encode()
    assert raw[30:32] == b"\xbe\xef"
    assert raw[32] == 3  # legacy controlField for Delay_Resp
    assert struct.unpack(">b", raw[33:34])[0] == -3
    assert raw[44:54] == ident.encode()


@given(messages())
@settings(max_examples=300)
def test_round_trip(m):
    assert decode_message(encode_message(m)) == m


@given(messages(), st.binary(max_size=20))
def test_trailing_octets_ignored(m, tail):
    assert decode_message(encode_message(m) + tail) == m


@given(st.binary(max_size=4096))
@settings(max_examples=500)
def test_decoder_is_total(octets):
    try:
        decode_message(octets)
    except WireError:
        pass


def test_empty_is_truncated():
    with pytest.raises(Truncated):
        decode_message(b"")


def test_bad_version():
    raw = bytearray(sync_vector())
    raw[1] = (raw[1] & 0xF0) | 1
    with pytest.raises(BadVersion):
        decode_message(bytes(raw))


def test_unknown_type():
    raw = bytearray(sync_vector())
    raw[0] = 0x05
    with pytest.raises(UnknownMessageType):
        decode_message(bytes(raw))


def test_length_mismatch():
    raw = bytearray(sync_vector())
    raw[3] = 45
    with pytest.raises(LengthMismatch):
        decode_message(bytes(raw))


def test_body_shorter_than_length():
    with pytest.raises(Truncated):
        decode_message(sync_vector()[:40])


def test_nanoseconds_out_of_range_rejected():
    raw = bytearray(sync_vector())
    raw[40:44] = (1_000_000_000).to_bytes(4, "big")
    with pytest.raises(InvariantViolation):
        decode_message(bytes(raw))


def test_encode_rejects_mismatched_header():
    h = PtpHeader(MessageType.SYNC, 44)
    with pytest.raises(InvariantViolation):
        encode_message(PtpMessage(h, AnnounceBody()))
    with pytest.raises(InvariantViolation):
        encode_message(PtpMessage(PtpHeader(MessageType.SYNC, 50), SyncBody()))
    with pytest.raises(InvariantViolation):
        encode_message(make_message(SyncBody(), sequence_id=70000))


def test_timestamp_invariants():
    with pytest.raises(InvariantViolation):
        Timestamp(0, 1_000_000_000)
    assert Timestamp.from_ns(1_500_000_000) == Timestamp(1, 500_000_000)


@given(st.integers(-(1 << 40), 1 << 40))
def test_time_interval_ns_truncates_toward_zero(ns):
    assert TimeInterval.from_ns(ns).ns == ns
    assert TimeInterval((ns << 16) + (1 if ns >= 0 else -1)).ns == ns


def test_port_identity_examples():
    a = PortIdentity(bytes(7) + b"\x01", 1)
    assert compare_port_identity(a, a) == 0
    assert compare_port_identity(a, PortIdentity(bytes(7) + b"\x02", 1)) == -1
    assert compare_port_identity(a, PortIdentity(bytes(7) + b"\x01", 2)) == -1


@given(port_identities, port_identities)
def test_port_identity_order_is_lexicographic(a, b):
    expected = (a.encode() > b.encode()) - (a.encode() < b.encode())
    assert compare_port_identity(a, b) == expected
    assert compare_port_identity(b, a) == -expected
