"""Shared wire-level types: time base, identifiers, radio parameters, frames.

Simulation time is an integer microsecond count from scenario start.  All
protocol state machines and logs use this base; floats appear only in signal
strength and reward arithmetic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields

SimTime = int  # microseconds since scenario start

US_PER_S = 1_000_000
SLOT_US = 100_000  # scheduler timeslot, 0.1 s

COUNTER_MOD = 1 << 16  # uplink frame counters wrap at 16 bits

NodeAddr = int
GatewayId = int
NetworkId = int


def slot_of(t: SimTime) -> int:
    """Index of the 0.1 s timeslot containing t."""
    return t // SLOT_US


def slot_start(slot: int) -> SimTime:
    return slot * SLOT_US


def counter_gap(last: int, new: int) -> int:
    """Forward distance from last to new on the wrapping 16-bit counter."""
    return (new - last) % COUNTER_MOD


class Band(enum.IntEnum):
    """EU868 sub-bands used here: Band0 uplink/G2G, Band1 downlink RX2."""

    BAND0 = 0  # 868.0-868.8 MHz, 1% duty cycle
    BAND1 = 1  # 869.40-869.65 MHz, 10% duty cycle


class FrameKind(enum.IntEnum):
    UPLINK = 0
    DOWNLINK_ACK = 1
    # gateway-to-gateway overlay
    REQ_UPLINK = 2
    REBROADCAST_UPLINK = 3
    REQ_FORWARD_DOWNLINK = 4
    NEIGHBOUR_DOWNLINK = 5


G2G_KINDS = frozenset(
    {
        FrameKind.REQ_UPLINK,
        FrameKind.REBROADCAST_UPLINK,
        FrameKind.REQ_FORWARD_DOWNLINK,
        FrameKind.NEIGHBOUR_DOWNLINK,
    }
)

# Broadcast overlay kinds are the ones other gateways listen for on Band0 and
# that must be granted a slot by the scheduler before transmission.
G2G_BROADCAST_KINDS = frozenset(
    {
        FrameKind.REQ_UPLINK,
        FrameKind.REBROADCAST_UPLINK,
        FrameKind.REQ_FORWARD_DOWNLINK,
    }
)

# channel index -> (centre frequency Hz, band)
CHANNELS: tuple[tuple[int, Band], ...] = (
    (868_100_000, Band.BAND0),
    (868_300_000, Band.BAND0),
    (868_500_000, Band.BAND0),
    (869_525_000, Band.BAND1),
)

RX2_CHANNEL = 3
RX2_SF = 12
RX2_TX_POWER_DBM = 27.0  # 869.525 MHz sits in the high-power 10% sub-band

UPLINK_CHANNELS = tuple(
    i for i, (_, band) in enumerate(CHANNELS) if band == Band.BAND0
)

VALID_SF = range(7, 13)
VALID_BW = (125_000, 250_000, 500_000)


class ConfigError(ValueError):
    """Raised for invalid radio parameters, scenarios, or config files."""


@dataclass(frozen=True, slots=True)
class RadioParams:
    """PHY settings of one transmission."""

    channel: int
    sf: int
    bandwidth: int = 125_000
    tx_power_dbm: float = 14.0

    def __post_init__(self) -> None:
        if self.sf not in VALID_SF:
            raise ConfigError(f"spreading factor {self.sf} outside 7..12")
        if self.bandwidth not in VALID_BW:
            raise ConfigError(f"unsupported bandwidth {self.bandwidth}")
        if not 0 <= self.channel < len(CHANNELS):
            raise ConfigError(f"unknown channel index {self.channel}")

    @property
    def band(self) -> Band:
        return CHANNELS[self.channel][1]

    @property
    def frequency_hz(self) -> int:
        return CHANNELS[self.channel][0]


@dataclass(slots=True)
class Frame:
    """One transmission on the air.

    src is a node address for UPLINK and a gateway id for everything else.
    dst is 0 for broadcast frames; counter carries the uplink frame counter
    (or the counter being acknowledged).  data holds the overlay message
    bytes for G2G kinds and is empty for plain node traffic, whose payload
    is modelled by length only.
    """

    kind: FrameKind
    src: int
    dst: int
    network: NetworkId
    counter: int
    payload_len: int
    radio: RadioParams
    tx_start: SimTime
    airtime_us: int
    needs_ack: bool = False
    data: bytes = b""

    def __post_init__(self) -> None:
        if not 0 <= self.counter < COUNTER_MOD:
            raise ConfigError(f"counter {self.counter} outside 16-bit range")
        if self.payload_len < 0:
            raise ConfigError("negative payload length")

    @property
    def tx_end(self) -> SimTime:
        return self.tx_start + self.airtime_us

    def to_line(self) -> str:
        """Canonical one-line textual form, fields in declaration order."""
        return ",".join(
            (
                self.kind.name,
                str(self.src),
                str(self.dst),
                str(self.network),
                str(self.counter),
                str(self.payload_len),
                str(self.radio.channel),
                str(self.radio.sf),
                str(self.radio.bandwidth),
                repr(self.radio.tx_power_dbm),
                str(self.tx_start),
                str(self.airtime_us),
                "1" if self.needs_ack else "0",
                self.data.hex(),
            )
        )

    @classmethod
    def from_line(cls, line: str) -> "Frame":
        parts = line.strip().split(",")
        if len(parts) != 14:
            raise ValueError(f"frame line has {len(parts)} fields, expected 14")
        return cls(
            kind=FrameKind[parts[0]],
            src=int(parts[1]),
            dst=int(parts[2]),
            network=int(parts[3]),
            counter=int(parts[4]),
            payload_len=int(parts[5]),
            radio=RadioParams(
                channel=int(parts[6]),
                sf=int(parts[7]),
                bandwidth=int(parts[8]),
                tx_power_dbm=float(parts[9]),
            ),
            tx_start=int(parts[10]),
            airtime_us=int(parts[11]),
            needs_ack=parts[12] == "1",
            data=bytes.fromhex(parts[13]),
        )


FRAME_FIELD_NAMES = tuple(f.name for f in fields(Frame))
