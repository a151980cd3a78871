"""Wire format of the four gateway-to-gateway overlay messages.

Each message is a 1-byte kind tag followed by big-endian fields.  Messages
that carry a LoRaWAN frame embed it verbatim as a length-prefixed copy of
its canonical line form, so the encrypted payload bytes survive the relay
untouched and no key material is needed to produce them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .core import ConfigError, Frame, FrameKind, NodeAddr, SimTime


class MalformedG2G(ValueError):
    """Raised when overlay bytes do not parse; receivers drop and count."""


@dataclass(frozen=True, slots=True)
class ReqUplink:
    """Ask neighbours for any message from node newer than last_counter."""

    node: NodeAddr
    last_counter: int


@dataclass(frozen=True, slots=True)
class RebroadcastUplink:
    """A cached uplink replayed for a requesting neighbour."""

    original: Frame


@dataclass(frozen=True, slots=True)
class ReqForwardDownlink:
    """Ask neighbours to deliver a downlink inside the node's RX windows."""

    downlink: Frame
    node: NodeAddr
    rx1_deadline: SimTime
    rx2_deadline: SimTime


@dataclass(frozen=True, slots=True)
class NeighbourDownlink:
    """The handed-over downlink as transmitted by a helping neighbour."""

    downlink: Frame


G2GMessage = ReqUplink | RebroadcastUplink | ReqForwardDownlink | NeighbourDownlink

_REQ_UPLINK = struct.Struct(">BIH")
_FORWARD_HEAD = struct.Struct(">BIQQ")


def kind_of(message: G2GMessage) -> FrameKind:
    if isinstance(message, ReqUplink):
        return FrameKind.REQ_UPLINK
    if isinstance(message, RebroadcastUplink):
        return FrameKind.REBROADCAST_UPLINK
    if isinstance(message, ReqForwardDownlink):
        return FrameKind.REQ_FORWARD_DOWNLINK
    if isinstance(message, NeighbourDownlink):
        return FrameKind.NEIGHBOUR_DOWNLINK
    raise TypeError(f"not a G2G message: {message!r}")


def _embed(frame: Frame) -> bytes:
    line = frame.to_line().encode("ascii")
    if len(line) > 0xFFFF:
        raise ValueError("embedded frame line too long")
    return struct.pack(">H", len(line)) + line


def encode(message: G2GMessage) -> bytes:
    kind = kind_of(message)
    if isinstance(message, ReqUplink):
        return _REQ_UPLINK.pack(kind, message.node, message.last_counter)
    if isinstance(message, RebroadcastUplink):
        return bytes([kind]) + _embed(message.original)
    if isinstance(message, ReqForwardDownlink):
        head = _FORWARD_HEAD.pack(
            kind, message.node, message.rx1_deadline, message.rx2_deadline
        )
        return head + _embed(message.downlink)
    return bytes([kind]) + _embed(message.downlink)


def _take_frame(data: bytes, offset: int) -> Frame:
    if len(data) < offset + 2:
        raise MalformedG2G("truncated frame length prefix")
    (length,) = struct.unpack_from(">H", data, offset)
    body = data[offset + 2 :]
    if len(body) != length:
        raise MalformedG2G(f"embedded frame length {length} != {len(body)}")
    try:
        return Frame.from_line(body.decode("ascii"))
    except (ValueError, KeyError, ConfigError, UnicodeDecodeError) as exc:
        raise MalformedG2G(f"bad embedded frame: {exc}") from exc


def decode(data: bytes) -> G2GMessage:
    if not data:
        raise MalformedG2G("empty overlay payload")
    kind = data[0]
    if kind == FrameKind.REQ_UPLINK:
        if len(data) != _REQ_UPLINK.size:
            raise MalformedG2G(f"ReqUplink payload of {len(data)} bytes")
        _, node, last = _REQ_UPLINK.unpack(data)
        return ReqUplink(node=node, last_counter=last)
    if kind == FrameKind.REBROADCAST_UPLINK:
        return RebroadcastUplink(original=_take_frame(data, 1))
    if kind == FrameKind.REQ_FORWARD_DOWNLINK:
        if len(data) < _FORWARD_HEAD.size:
            raise MalformedG2G("truncated ReqForwardDownlink header")
        _, node, rx1, rx2 = _FORWARD_HEAD.unpack_from(data, 0)
        return ReqForwardDownlink(
            downlink=_take_frame(data, _FORWARD_HEAD.size),
            node=node,
            rx1_deadline=rx1,
            rx2_deadline=rx2,
        )
    if kind == FrameKind.NEIGHBOUR_DOWNLINK:
        return NeighbourDownlink(downlink=_take_frame(data, 1))
    raise MalformedG2G(f"unknown overlay kind tag {kind}")
