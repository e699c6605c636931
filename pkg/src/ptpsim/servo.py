"""Offset/delay computation and the PI clock servo."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .wire import TimeInterval, Timestamp

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1

DEFAULT_KP = 0.7
DEFAULT_KI = 0.3
DEFAULT_STEP_THRESHOLD_NS = 1_000_000
DEFAULT_DELAY_ALPHA = 1 / 8
DEFAULT_SLEW_CAP_PPB = 100_000


class ArithmeticOverflow(ArithmeticError):
    pass


@dataclass(frozen=True)
class ExchangeTimestamps:
    t1: Timestamp
    t2: Timestamp
    t3: Timestamp
    t4: Timestamp
    sync_correction: TimeInterval = TimeInterval()
    delay_correction: TimeInterval = TimeInterval()


def _checked(value: int) -> int:
    if not INT64_MIN <= value <= INT64_MAX:
        raise ArithmeticOverflow(f"{value} overflows signed 64-bit nanoseconds")
    return value


def _div2_trunc(v: int) -> int:
    return v // 2 if v >= 0 else -((-v) // 2)


def master_to_slave_ns(t1: Timestamp, t2: Timestamp, correction: TimeInterval) -> int:
    return _checked(_checked(t2.to_ns() - t1.to_ns()) - correction.ns)


def compute_offset_and_delay(x: ExchangeTimestamps) -> tuple[int, int]:
    """(offsetFromMaster, meanPathDelay) in ns. Delay is raw and may be negative."""
    ms = master_to_slave_ns(x.t1, x.t2, x.sync_correction)
    sm = _checked(_checked(x.t4.to_ns() - x.t3.to_ns()) - x.delay_correction.ns)
    delay = _div2_trunc(_checked(ms + sm))
    return _checked(ms - delay), delay


@dataclass(frozen=True)
class StepPhase:
    delta_ns: int


@dataclass(frozen=True)
class SlewRate:
    rate_ppb: float


ServoAction = Union[StepPhase, SlewRate]


@dataclass(frozen=True)
class ServoState:
    kp: float = DEFAULT_KP
    ki: float = DEFAULT_KI
    step_threshold_ns: int = DEFAULT_STEP_THRESHOLD_NS
    delay_alpha: float = DEFAULT_DELAY_ALPHA
    slew_cap_ppb: float = DEFAULT_SLEW_CAP_PPB
    integral_ns: float = 0.0
    last_offset_ns: int = 0
    mean_path_delay_ns: Optional[float] = None
    updates: int = 0

    @property
    def integral_bound(self) -> float:
        """Anti-windup clamp: the integral term alone may just reach the slew cap."""
        return self.slew_cap_ppb / self.ki if self.ki > 0 else 0.0


def servo_update(state: ServoState, offset_ns: int, interval_s: float) -> tuple[ServoState, ServoAction]:
    if interval_s <= 0:
        raise ValueError("interval_s must be positive")
    if abs(offset_ns) > state.step_threshold_ns:
        new = replace(state, integral_ns=0.0, last_offset_ns=offset_ns, updates=state.updates + 1)
        return new, StepPhase(-offset_ns)
    bound = state.integral_bound
    integral = min(max(state.integral_ns + offset_ns * interval_s, -bound), bound)
    rate = -(state.kp * offset_ns + state.ki * integral)
    rate = min(max(rate, -state.slew_cap_ppb), state.slew_cap_ppb)
    new = replace(state, integral_ns=integral, last_offset_ns=offset_ns, updates=state.updates + 1)
    return new, SlewRate(rate + 0.0)


def filter_delay(state: ServoState, raw_delay_ns: int) -> ServoState:
    sample = max(raw_delay_ns, 0)
    if state.mean_path_delay_ns is None:
        return replace(state, mean_path_delay_ns=float(sample))
    a = state.delay_alpha
    return replace(state, mean_path_delay_ns=(1 - a) * state.mean_path_delay_ns + a * sample)


def run_closed_loop(
    initial_offset_ns: int,
    drift_ppm: float,
    duration_s: int = 60,
    state: Optional[ServoState] = None,
    granularity_ns: int = 20,
) -> list[int]:
    """Drive a VirtualClock with the servo from perfect once-per-second offset readings.

    Returns the measured offset at each update. No path delay and no timestamp noise,
    so the only measurement error is counter quantization.
    """
    from .clock import NS_PER_S, VirtualClock

    state = state or ServoState()
    clock = VirtualClock(initial_offset_ns, drift_ppm, granularity_ns, slew_cap_ppb=state.slew_cap_ppb)
    measured = []
    for k in range(1, duration_s + 1):
        t = k * NS_PER_S
        offset = clock.peek(t) - t
        measured.append(offset)
        state, action = servo_update(state, offset, 1.0)
        if isinstance(action, StepPhase):
            clock.step_phase(action.delta_ns)
        else:
            clock.adjust_rate(action.rate_ppb, at_true_ns=t)
    return measured
