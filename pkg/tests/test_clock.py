from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from ptpsim.clock import ClockError, PpsConfig, SlewCapExceeded, TimeReversal, VirtualClock

S = 1_000_000_000


def ideal(**kw):
    kw.setdefault("granularity_ns", 1)
    return VirtualClock(**kw)


def test_identity_clock_reads_true_time():
    assert ideal().read(S) == S


def test_drift_ten_ppm():
    assert ideal(frequency_offset_ppm=10).read(S) == 1_000_010_000


def test_floor_to_granularity():
    assert VirtualClock(initial_offset_ns=15, granularity_ns=20).read(S) == 1_000_000_000


def test_step_zero_and_positive():
    a, b = ideal(), ideal()
    b.step_phase(0)
    assert [a.read(t) for t in (1, 10, S)] == [b.read(t) for t in (1, 10, S)]
    c = ideal()
    c.step_phase(500)
    assert [c.read(t) - t for t in (10, S, 5 * S)] == [500, 500, 500]


def test_negative_step_is_clamped():
    c = ideal()
    before = c.read(S)
    c.step_phase(-200)
    assert c.read(S) >= before
    assert c.read(S + 1000) == S + 800


def test_rate_adjust():
    c = ideal()
    c.adjust_rate(0, at_true_ns=0)
    assert c.read(S) == S
    c = ideal()
    c.adjust_rate(1000, at_true_ns=0)
    assert c.read(S) == 1_000_001_000


def test_rate_cap():
    with pytest.raises(SlewCapExceeded):
        ideal().adjust_rate(100_001)
    ideal().adjust_rate(-100_000)


def test_read_before_anchor():
    c = ideal()
    c.adjust_rate(10, at_true_ns=S)
    with pytest.raises(TimeReversal):
        c.read(S - 1)


def test_pps_edges():
    c = ideal()
    assert c.next_pps_edge(0) == (S, S + 10_000_000)
    assert c.next_pps_edge(S)[0] == 2 * S
    assert c.next_pps_edge(S - 1)[0] == S
    with pytest.raises(ClockError):
        PpsConfig(0)


def test_pps_inverse_examples():
    assert ideal().pps_edge_true_time(S) == S
    assert ideal(frequency_offset_ppm=10).pps_edge_true_time(1_000_010_000) == S
    c = ideal()
    c.step_phase(500)
    assert c.pps_edge_true_time(S) == S - 500


def test_construction_limits():
    with pytest.raises(ClockError):
        VirtualClock(frequency_offset_ppm=501)
    with pytest.raises(ClockError):
        VirtualClock(granularity_ns=0)


ops = st.lists(
    st.tuples(
        st.integers(0, 10 * S),
        st.one_of(st.none(), st.integers(-10**6, 10**6), st.floats(-100_000, 100_000)),
    ),
    max_size=30,
)


@given(st.integers(-10**9, 10**9), st.floats(-500, 500), st.integers(1, 100), ops)
def test_readings_never_decrease(offset, drift, gran, script):
    c = VirtualClock(offset, drift, gran)
    t = 0
    last = c.read(0)
    for dt, op in script:
        t += dt
        if isinstance(op, int):
            c.step_phase(op)
        elif isinstance(op, float):
            c.adjust_rate(op, at_true_ns=t)
        r = c.read(t)
        assert r >= last
        assert r % gran == 0 or r == last
        last = r


@given(st.integers(-10**9, 10**9), st.integers(-500_000, 500_000), st.integers(0, 10**12))
def test_linear_in_true_time(offset, drift_ppb_x1000, t):
    # exact rational oracle for the unquantized local time
    drift_ppm = drift_ppb_x1000 / 1000
    c = VirtualClock(offset, drift_ppm, granularity_ns=1)
    rate = 1 + Fraction(round(drift_ppm * 10**12), 10**18)
    expected = offset + t * rate
    assert c.read(t) == int(expected // 1)


@given(st.integers(-10**6, 10**6), st.floats(-500, 500), st.integers(0, 100 * S))
def test_pps_inverse_is_first_crossing(offset, drift, after):
    c = VirtualClock(offset, drift, granularity_ns=1)
    rising, _ = c.next_pps_edge(c.offset_from_true(after) + after)
    t = c.pps_edge_true_time(rising)
    assert c.local_exact(t) >= rising
    assert c.local_exact(t - 1) < rising
