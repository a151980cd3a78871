"""LoRa PHY arithmetic: airtime, link budget, capture, and duty cycle.

Airtime follows the SX127x data sheet formula with explicit header and CRC
on; low data rate optimisation switches on automatically for SF11/SF12 at
125 kHz.  Collision resolution applies the usual 6 dB co-channel capture
rule with cross-SF transmissions treated as orthogonal.
"""

from __future__ import annotations

import math
from bisect import insort
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Band, Frame, SimTime, US_PER_S

# receiver sensitivity, dBm, 125 kHz bandwidth
SENSITIVITY_DBM: dict[int, float] = {
    7: -123.0,
    8: -126.0,
    9: -129.0,
    10: -132.0,
    11: -134.5,
    12: -137.0,
}

CAPTURE_THRESHOLD_DB = 6.0

DUTY_WINDOW_US = 3600 * US_PER_S
DUTY_LIMIT: dict[Band, float] = {Band.BAND0: 0.01, Band.BAND1: 0.10}


def airtime_us(
    payload_len: int,
    sf: int,
    bandwidth: int = 125_000,
    coding_rate: int = 1,
    preamble_symbols: int = 8,
    explicit_header: bool = True,
    crc: bool = True,
) -> int:
    """Time on air in microseconds for one LoRa frame.

    Exact for the standard bandwidths: 2^SF * 1e6 is divisible by all of
    them and the preamble term 12.25 symbols lands on an integer because a
    symbol lasts a multiple of 4 us.
    """
    if payload_len < 0:
        raise ValueError("negative payload length")
    if sf < 7 or sf > 12:
        raise ValueError(f"spreading factor {sf} outside 7..12")
    t_sym = (1 << sf) * (US_PER_S // bandwidth)
    t_preamble = (4 * preamble_symbols + 17) * t_sym // 4  # (n + 4.25) symbols
    de = 1 if (bandwidth == 125_000 and sf >= 11) else 0
    h = 0 if explicit_header else 1
    num = 8 * payload_len - 4 * sf + 28 + (16 if crc else 0) - 20 * h
    den = 4 * (sf - 2 * de)
    n_payload = 8 + max(-(-num // den) * (coding_rate + 4), 0)
    return t_preamble + n_payload * t_sym


def received_power_dbm(
    tx_power_dbm: float,
    distance_m: float,
    reference_loss_db: float = 40.0,
    exponent: float = 2.7,
) -> float:
    """Log-distance path loss, referenced to 1 m."""
    d = max(distance_m, 1.0)
    return tx_power_dbm - reference_loss_db - 10.0 * exponent * math.log10(d)


@dataclass(frozen=True, slots=True)
class LinkModel:
    reference_loss_db: float = 40.0
    exponent: float = 2.7

    def rx_power(self, tx_power_dbm: float, distance_m: float) -> float:
        return received_power_dbm(
            tx_power_dbm, distance_m, self.reference_loss_db, self.exponent
        )


def resolve_collisions(
    entries: Sequence[tuple[Frame, float]],
    capture_db: float = CAPTURE_THRESHOLD_DB,
) -> set[int]:
    """Indices of the frames a receiver can decode out of an overlap set.

    Frames on different channels never interact and different spreading
    factors on one channel are orthogonal.  Within one (channel, SF) group a
    frame survives only if it is at least capture_db above every other frame
    whose airtime overlaps its own; anything below sensitivity is lost
    regardless.
    """
    decodable: set[int] = set()
    for i, (frame, power) in enumerate(entries):
        if power < SENSITIVITY_DBM[frame.radio.sf]:
            continue
        ok = True
        for j, (other, other_power) in enumerate(entries):
            if j == i:
                continue
            if other.radio.channel != frame.radio.channel:
                continue
            if other.radio.sf != frame.radio.sf:
                continue
            if other.tx_start >= frame.tx_end or frame.tx_start >= other.tx_end:
                continue
            if power - other_power < capture_db:
                ok = False
                break
        if ok:
            decodable.add(i)
    return decodable


@dataclass(slots=True)
class DutyCycleTracker:
    """Sliding one-hour duty cycle budget for one transmitter on one band.

    Reservations may be booked for future transmit times (acknowledgements
    are committed when the uplink is decoded, up to two seconds before they
    go on air), so the record list is kept sorted by transmit start and a
    new booking is refused if it would push any already-booked later window
    over budget.
    """

    band: Band
    limit: float = 0.0
    _records: list[tuple[SimTime, int]] = field(default_factory=list)
    _head: int = 0

    # bookings are at most a few seconds ahead of the event clock; pruning
    # keeps this much slack so slightly out-of-order queries stay exact
    _PRUNE_SLACK_US = 10 * US_PER_S

    def __post_init__(self) -> None:
        if not self.limit:
            self.limit = DUTY_LIMIT[self.band]

    @property
    def budget_us(self) -> int:
        return int(self.limit * DUTY_WINDOW_US)

    def _prune(self, at: SimTime) -> None:
        records = self._records
        head = self._head
        cutoff = at - DUTY_WINDOW_US - self._PRUNE_SLACK_US
        while head < len(records) and records[head][0] <= cutoff:
            head += 1
        self._head = head
        if head > 512:
            del records[:head]
            self._head = 0

    def _window_used(self, at: SimTime) -> int:
        cutoff = at - DUTY_WINDOW_US
        return sum(
            a for t, a in self._records[self._head :] if cutoff < t <= at
        )

    def used_us(self, at: SimTime) -> int:
        self._prune(at)
        return self._window_used(at)

    def try_reserve(self, airtime: int, at: SimTime) -> bool:
        """Book airtime starting at `at`; False (and no booking) if over budget."""
        self._prune(at)
        budget = self.budget_us
        if self._window_used(at) + airtime > budget:
            return False
        for t, _ in self._records[self._head :]:
            if t > at and self._window_used(t) + airtime > budget:
                return False
        insort(self._records, (at, airtime))
        return True

    def next_free(self, airtime: int, at: SimTime) -> SimTime | None:
        """Earliest time >= at when try_reserve(airtime, .) would succeed.

        None if the airtime alone exceeds the band budget.
        """
        self._prune(at)
        budget = self.budget_us
        if airtime > budget:
            return None
        if self._window_used(at) + airtime <= budget:
            return at
        for t, _ in self._records[self._head :]:
            cand = t + DUTY_WINDOW_US
            if cand <= at:
                continue
            if self._window_used(cand) + airtime <= budget:
                return cand
        last = self._records[-1][0] if self._records else at
        return max(at, last + DUTY_WINDOW_US)


def audit_duty_cycle(
    records: Iterable[tuple[int, Band, SimTime, int]],
    limits: dict[Band, float] | None = None,
) -> list[tuple[int, Band, SimTime, int]]:
    """Check transmit records against the sliding-window budgets.

    records: (transmitter id, band, tx_start, airtime_us) in any order.
    Returns one entry per violating transmission: at its start time the
    trailing one-hour window (including it) exceeded the band budget.
    """
    limits = limits or DUTY_LIMIT
    by_key: dict[tuple[int, Band], list[tuple[SimTime, int]]] = {}
    for txer, band, start, airtime in records:
        by_key.setdefault((txer, band), []).append((start, airtime))
    violations: list[tuple[int, Band, SimTime, int]] = []
    for (txer, band), entries in by_key.items():
        entries.sort()
        budget = int(limits[band] * DUTY_WINDOW_US)
        window: list[tuple[SimTime, int]] = []
        used = 0
        head = 0
        for start, airtime in entries:
            window.append((start, airtime))
            used += airtime
            cutoff = start - DUTY_WINDOW_US
            while window[head][0] <= cutoff:
                used -= window[head][1]
                head += 1
            if used > budget:
                violations.append((txer, band, start, airtime))
    return violations
