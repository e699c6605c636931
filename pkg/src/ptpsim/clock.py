"""Drifting, quantized, adjustable local clock for simulated nodes.

Local time is a piecewise-linear function of true (simulator) time. Rates are
kept as exact integers in units of 1e-18 so long runs accumulate no rounding:

    local(t) = anchor_local + (t - anchor_true) * rate
    rate     = 1 + frequency_offset_ppm * 1e-6 + servo_rate_ppb * 1e-9

Readings are floored to a multiple of ``granularity_ns`` and never decrease.
"""
from __future__ import annotations

from dataclasses import dataclass

NS_PER_S = 1_000_000_000
RATE_ONE = 10**18  # fixed-point unit for rates

DEFAULT_GRANULARITY_NS = 20
DEFAULT_SLEW_CAP_PPB = 100_000
MAX_FREQUENCY_PPM = 500.0


class ClockError(ValueError):
    pass


class TimeReversal(ClockError):
    pass


class SlewCapExceeded(ClockError):
    pass


class Unreachable(ClockError):
    pass


@dataclass(frozen=True)
class PpsConfig:
    pulse_width_ns: int = 10_000_000

    def __post_init__(self):
        if not 0 < self.pulse_width_ns < NS_PER_S:
            raise ClockError(f"pulse width must be in (0, 1e9) ns, got {self.pulse_width_ns}")


def _ppm_to_fixed(ppm: float) -> int:
    return round(ppm * 10**12)


def _ppb_to_fixed(ppb: float) -> int:
    return round(ppb * 10**9)


def _ceil_div(a: int, b: int) -> int:
    return -((-a) // b)


class VirtualClock:
    def __init__(
        self,
        initial_offset_ns: int = 0,
        frequency_offset_ppm: float = 0.0,
        granularity_ns: int = DEFAULT_GRANULARITY_NS,
        slew_cap_ppb: float = DEFAULT_SLEW_CAP_PPB,
        max_frequency_ppm: float = MAX_FREQUENCY_PPM,
        epoch_true_ns: int = 0,
    ):
        if granularity_ns < 1:
            raise ClockError("granularity_ns must be positive")
        if abs(frequency_offset_ppm) > max_frequency_ppm:
            raise ClockError(
                f"|frequency offset| {frequency_offset_ppm} ppm exceeds {max_frequency_ppm} ppm"
            )
        if slew_cap_ppb <= 0:
            raise ClockError("slew cap must be positive")
        self.base_offset_ns = int(initial_offset_ns)
        self.frequency_offset_ppm = frequency_offset_ppm
        self.servo_rate_ppb = 0.0
        self.granularity_ns = int(granularity_ns)
        self.slew_cap_ppb = slew_cap_ppb
        self.anchor_true_ns = int(epoch_true_ns)
        self._anchor_local = (int(epoch_true_ns) + self.base_offset_ns) * RATE_ONE
        self._intrinsic = _ppm_to_fixed(frequency_offset_ppm)
        self._servo = 0
        self._last_reading: int | None = None

    def __repr__(self) -> str:
        return (
            f"VirtualClock(offset={self.base_offset_ns}ns, drift={self.frequency_offset_ppm}ppm, "
            f"servo={self.servo_rate_ppb}ppb, granularity={self.granularity_ns}ns)"
        )

    @property
    def rate(self) -> int:
        """Local ns per true ns, scaled by 1e18."""
        return RATE_ONE + self._intrinsic + self._servo

    @property
    def total_rate_ppb(self) -> float:
        return (self.rate - RATE_ONE) / 1e9

    @property
    def last_reading(self) -> int | None:
        return self._last_reading

    def _scaled_local(self, true_ns: int) -> int:
        return self._anchor_local + (true_ns - self.anchor_true_ns) * self.rate

    def local_exact(self, true_ns: int) -> float:
        """Unquantized local time, for diagnostics only."""
        return self._scaled_local(true_ns) / RATE_ONE

    def offset_from_true(self, true_ns: int) -> int:
        """Unquantized local minus true time, floored to whole ns."""
        return self._scaled_local(true_ns) // RATE_ONE - true_ns

    def peek(self, true_ns: int) -> int:
        """Quantized local time without touching the monotone reading state."""
        local = self._scaled_local(true_ns) // RATE_ONE
        return local - local % self.granularity_ns

    def read(self, true_ns: int) -> int:
        """Timestamp counter value (local ns) at ``true_ns``."""
        if true_ns < self.anchor_true_ns:
            raise TimeReversal(f"read at {true_ns} precedes anchor {self.anchor_true_ns}")
        local = self._scaled_local(true_ns) // RATE_ONE
        local -= local % self.granularity_ns
        if self._last_reading is not None and local < self._last_reading:
            local = self._last_reading
        self._last_reading = local
        return local

    def step_phase(self, delta_ns: int) -> None:
        """Translate all later readings by ``delta_ns``; negative steps clamp, never rewind."""
        self._anchor_local += int(delta_ns) * RATE_ONE

    def adjust_rate(self, rate_ppb: float, at_true_ns: int | None = None) -> None:
        """Replace the servo rate correction from ``at_true_ns`` (default: current anchor) on."""
        if abs(rate_ppb) > self.slew_cap_ppb:
            raise SlewCapExceeded(f"|{rate_ppb}| ppb exceeds cap {self.slew_cap_ppb} ppb")
        if at_true_ns is not None:
            if at_true_ns < self.anchor_true_ns:
                raise TimeReversal(f"rate change at {at_true_ns} precedes anchor")
            self._anchor_local = self._scaled_local(at_true_ns)
            self.anchor_true_ns = int(at_true_ns)
        self.servo_rate_ppb = rate_ppb
        self._servo = _ppb_to_fixed(rate_ppb)

    def next_pps_edge(self, after_local_ns: int, cfg: PpsConfig = PpsConfig()) -> tuple[int, int]:
        rising = (after_local_ns // NS_PER_S + 1) * NS_PER_S
        return rising, rising + cfg.pulse_width_ns

    def pps_edge_true_time(self, rising_local_ns: int) -> int:
        """Earliest true ns at which the linear local time reaches ``rising_local_ns``."""
        rate = self.rate
        if rate <= 0:
            raise Unreachable("clock rate is not positive; local time cannot be inverted")
        return self.anchor_true_ns + _ceil_div(rising_local_ns * RATE_ONE - self._anchor_local, rate)

    def true_delay(self, local_delay_ns: int) -> int:
        """True ns needed for the local clock to advance ``local_delay_ns``."""
        return _ceil_div(local_delay_ns * RATE_ONE, self.rate)
