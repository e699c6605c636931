"""Best master clock selection: descriptor ordering, qualification, state decision."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Union

from .wire import AnnounceBody, ClockQuality, PortIdentity

FOREIGN_MASTER_THRESHOLD = 2
FOREIGN_MASTER_TIME_WINDOW = 4  # in announce intervals


@dataclass(frozen=True)
class ClockDescriptor:
    priority1: int = 128
    clock_class: int = 248
    clock_accuracy: int = 0xFE
    offset_scaled_log_variance: int = 0xFFFF
    priority2: int = 128
    clock_identity: bytes = bytes(8)
    steps_removed: int = 0

    def key(self) -> tuple:
        return (
            self.priority1,
            self.clock_class,
            self.clock_accuracy,
            self.offset_scaled_log_variance,
            self.priority2,
            self.steps_removed,
            self.clock_identity,
        )

    @classmethod
    def from_announce(cls, body: AnnounceBody) -> ClockDescriptor:
        q = body.grandmaster_clock_quality
        return cls(
            priority1=body.grandmaster_priority1,
            clock_class=q.clock_class,
            clock_accuracy=q.clock_accuracy,
            offset_scaled_log_variance=q.offset_scaled_log_variance,
            priority2=body.grandmaster_priority2,
            clock_identity=body.grandmaster_identity,
            # one hop across the segment
            steps_removed=body.steps_removed + 1,
        )

    def quality(self) -> ClockQuality:
        return ClockQuality(self.clock_class, self.clock_accuracy, self.offset_scaled_log_variance)


def compare_descriptors(a: ClockDescriptor, b: ClockDescriptor) -> int:
    """Negative when ``a`` is the better master, positive when ``b`` is, 0 only if identical."""
    ka, kb = a.key(), b.key()
    return (ka > kb) - (ka < kb)


@dataclass(frozen=True)
class ForeignMasterRecord:
    descriptor: ClockDescriptor
    source_port: PortIdentity
    announce_count: int = 1
    last_announce_local_ns: int = 0

    def sort_key(self) -> tuple:
        return self.descriptor.key() + (self.source_port.clock_identity, self.source_port.port_number)


def best_foreign(
    records: Iterable[ForeignMasterRecord],
    qualification_threshold: int = FOREIGN_MASTER_THRESHOLD,
) -> Optional[ForeignMasterRecord]:
    qualified = [r for r in records if r.announce_count >= qualification_threshold]
    if not qualified:
        return None
    # source port breaks ties between identical descriptors so the result is order-independent
    return min(qualified, key=ForeignMasterRecord.sort_key)


@dataclass(frozen=True)
class BecomeMaster:
    pass


@dataclass(frozen=True)
class BecomeSlaveOf:
    source_port: PortIdentity
    descriptor: ClockDescriptor


@dataclass(frozen=True)
class BecomePassive:
    pass


Recommendation = Union[BecomeMaster, BecomeSlaveOf, BecomePassive]


def state_decision(
    own: ClockDescriptor, best: Optional[ForeignMasterRecord], slave_only: bool
) -> Recommendation:
    if best is None:
        return BecomePassive() if slave_only else BecomeMaster()
    if slave_only or compare_descriptors(best.descriptor, own) < 0:
        return BecomeSlaveOf(best.source_port, best.descriptor)
    return BecomeMaster()
