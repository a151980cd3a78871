"""Gateway runtime: manager fan-out, TTL cache, and the G2G state machine.

One runtime per gateway.  The surrounding simulation delivers every frame
the gateway decodes to on_receive, calls tick once late in each timeslot,
and puts the frames both of them return on the air.  The runtime owns the
gateway's duty-cycle trackers, the arrival predictor, the slot scheduler,
the node cache, and a structured event log.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Callable

from .core import (
    COUNTER_MOD,
    RX2_CHANNEL,
    RX2_SF,
    RX2_TX_POWER_DBM,
    SLOT_US,
    US_PER_S,
    Band,
    Frame,
    FrameKind,
    GatewayId,
    NetworkId,
    NodeAddr,
    RadioParams,
    SimTime,
    counter_gap,
)
from .g2g import (
    G2GMessage,
    MalformedG2G,
    NeighbourDownlink,
    RebroadcastUplink,
    ReqForwardDownlink,
    ReqUplink,
    decode,
    encode,
    kind_of,
)
from .interpred import Agent
from .phy import DutyCycleTracker, airtime_us
from .rmip import MissingReport, Predictor, RmipConfig

RX1_DELAY_US = 1 * US_PER_S
RX2_DELAY_US = 2 * US_PER_S


@dataclass(frozen=True, slots=True)
class GatewayConfig:
    cache_ttl_s: int = 300
    g2g_retry_limit: int = 10
    # split of the Band0 duty budget between acknowledgement traffic and
    # overlay initiations, each accounted on its own side so a busy ack
    # schedule cannot shut out cooperation and vice versa
    ack_band0_fraction: float = 0.8
    g2g_tx_power_dbm: float = 14.0


@dataclass(slots=True)
class CacheEntry:
    node: NodeAddr
    counter: int
    frame: Frame
    received_at: SimTime

    @property
    def rx1_deadline(self) -> SimTime:
        return self.received_at + RX1_DELAY_US

    @property
    def rx2_deadline(self) -> SimTime:
        return self.received_at + RX2_DELAY_US


# -- receive effects, in the order the manager applies them ---------------------


@dataclass(frozen=True, slots=True)
class ForwardToServer:
    frame: Frame


@dataclass(frozen=True, slots=True)
class CacheStore:
    node: NodeAddr


@dataclass(frozen=True, slots=True)
class RmipObserve:
    node: NodeAddr
    events: tuple


@dataclass(frozen=True, slots=True)
class InterPredIngest:
    channel: int


@dataclass(frozen=True, slots=True)
class G2GHandle:
    kind: FrameKind


@dataclass(slots=True)
class ReceiveResult:
    effects: list = field(default_factory=list)
    transmissions: list[Frame] = field(default_factory=list)


@dataclass(slots=True)
class _PendingG2G:
    message: G2GMessage
    attempts: int = 0
    # only forward-downlink requests carry a deadline; the rest retire on
    # the attempt counter
    rx2_deadline: SimTime | None = None


def _modularly_newer(candidate: int, reference: int) -> bool:
    """True when candidate is ahead of reference on the wrapping counter."""
    return 0 < counter_gap(reference, candidate) < COUNTER_MOD // 2


class GatewayRuntime:
    def __init__(
        self,
        gateway_id: GatewayId,
        network: NetworkId,
        agent: Agent,
        config: GatewayConfig | None = None,
        rmip_config: RmipConfig | None = None,
        owned_nodes: frozenset[NodeAddr] | None = None,
        radio_busy: Callable[[SimTime, SimTime], bool] | None = None,
    ) -> None:
        self.gateway_id = gateway_id
        self.network = network
        self.config = config or GatewayConfig()
        self.agent = agent
        self.rmip = Predictor(rmip_config)
        self.duty = {band: DutyCycleTracker(band) for band in Band}
        # side ledger over the overlay's Band0 slice; the physical tracker
        # above still books every transmission, this one only meters how
        # much of it was G2G so the ack gate can subtract it back out
        base = DutyCycleTracker(Band.BAND0).limit
        self._g2g_ledger = DutyCycleTracker(
            Band.BAND0, limit=base * (1.0 - self.config.ack_band0_fraction)
        )
        self.cache: dict[NodeAddr, CacheEntry] = {}
        self.counters: Counter[str] = Counter()
        self.log: list[dict] = []
        self._queue: deque[_PendingG2G] = deque()
        # None means every tracked node is ours; the simulator narrows this
        # so foreign misses do not raise requests their owner will raise
        self._owned = owned_nodes
        # hook for the host to veto transmit times the one radio has
        # already promised elsewhere (acknowledgement windows, mostly)
        self._radio_busy = radio_busy

    # -- logging ------------------------------------------------------------

    def _log(self, now: SimTime, event: str, **fields) -> None:
        record = {"t": now, "gw": self.gateway_id, "event": event}
        record.update(fields)
        self.log.append(record)

    # -- duty split ----------------------------------------------------------

    def ack_band0_used(self, at: SimTime) -> int:
        """Band0 airtime spent on acknowledgements in the trailing hour."""
        return max(
            0,
            self.duty[Band.BAND0].used_us(at) - self._g2g_ledger.used_us(at),
        )

    def ack_band0_open(self, airtime: int, at: SimTime) -> bool:
        cap = self.config.ack_band0_fraction * self.duty[Band.BAND0].budget_us
        return self.ack_band0_used(at) + airtime <= cap

    # -- cache --------------------------------------------------------------

    def _evict_expired(self, now: SimTime) -> None:
        ttl_us = self.config.cache_ttl_s * US_PER_S
        dead = [
            node
            for node, entry in self.cache.items()
            if now - entry.received_at > ttl_us
        ]
        for node in dead:
            del self.cache[node]
            self.counters["cache_evicted"] += 1

    def _cache_store(self, frame: Frame, received_at: SimTime) -> bool:
        """Keep the latest reception per node; stale counters never clobber."""
        node = frame.src
        entry = self.cache.get(node)
        if entry is not None and _modularly_newer(entry.counter, frame.counter):
            return False
        self.cache[node] = CacheEntry(
            node=node,
            counter=frame.counter,
            frame=replace(frame),
            received_at=received_at,
        )
        return True

    # -- receive path ---------------------------------------------------------

    def on_receive(self, frame: Frame, now: SimTime) -> ReceiveResult:
        """Fan one decoded frame out to server, cache, predictor, scheduler."""
        self._evict_expired(now)
        result = ReceiveResult()
        self._log(
            now,
            "receive",
            kind=frame.kind.name,
            src=frame.src,
            counter=frame.counter,
            channel=frame.radio.channel,
        )
        self.agent.ingest_frame(
            frame.radio.channel, frame.airtime_us, now, frame.radio.sf
        )

        if frame.kind == FrameKind.UPLINK:
            result.effects.append(ForwardToServer(frame))
            duplicate = (
                frame.src in self.cache
                and self.cache[frame.src].counter == frame.counter
            )
            if self._cache_store(frame, now):
                result.effects.append(CacheStore(frame.src))
            if duplicate:
                # retransmission: the server deduplicates, the predictor
                # must not see the same counter as a fresh interval
                events: tuple = ()
            else:
                events = tuple(self.rmip.observe(frame.src, frame.counter, now))
            result.effects.append(RmipObserve(frame.src, events))
            for event in events:
                self._log(now, "rmip_event", detail=repr(event))
            if frame.radio.channel < self.agent.config.channels:
                result.effects.append(InterPredIngest(frame.radio.channel))
        elif frame.kind == FrameKind.DOWNLINK_ACK:
            pass  # another network's ack; spectrum accounting only
        elif frame.kind == FrameKind.NEIGHBOUR_DOWNLINK:
            # a neighbour's ack aimed at a node: plain downlink payload,
            # nothing in it for us to decode
            self._log(now, "g2g_overheard", kind=frame.kind.name)
        else:
            result.effects.append(G2GHandle(frame.kind))
            self._handle_g2g(frame, now, result)
        return result

    def _handle_g2g(self, frame: Frame, now: SimTime, result: ReceiveResult) -> None:
        try:
            message = decode(frame.data)
        except MalformedG2G as exc:
            self.counters["malformed_g2g"] += 1
            self._log(now, "g2g_malformed", detail=str(exc))
            return
        if isinstance(message, ReqUplink):
            self.answer_uplink_request(message, now)
        elif isinstance(message, RebroadcastUplink):
            self._accept_rebroadcast(message, now, result)
        else:
            tx = self.answer_downlink_request(message, now)
            if tx is not None:
                result.transmissions.append(tx)

    def _accept_rebroadcast(
        self, message: RebroadcastUplink, now: SimTime, result: ReceiveResult
    ) -> None:
        """A neighbour replayed an uplink we must have missed."""
        original = message.original
        self.counters["rebroadcast_recovered"] += 1
        self._log(
            now, "g2g_recovered", node=original.src, counter=original.counter
        )
        result.effects.append(ForwardToServer(original))
        # keep the newest counter answerable, but date the entry by the
        # original transmission so its receive windows stay in the past
        entry = self.cache.get(original.src)
        if entry is None or _modularly_newer(original.counter, entry.counter):
            self.cache[original.src] = CacheEntry(
                node=original.src,
                counter=original.counter,
                frame=replace(original),
                received_at=original.tx_end,
            )
            result.effects.append(CacheStore(original.src))

    # -- G2G initiation --------------------------------------------------------

    def raise_uplink_request(self, report: MissingReport, now: SimTime) -> None:
        self._log(
            now,
            "g2g_raise",
            node=report.node,
            last_counter=report.last_counter,
        )
        self._queue.append(
            _PendingG2G(ReqUplink(report.node, report.last_counter))
        )

    def answer_uplink_request(self, req: ReqUplink, now: SimTime) -> None:
        self._evict_expired(now)
        entry = self.cache.get(req.node)
        if entry is None or not _modularly_newer(entry.counter, req.last_counter):
            self.counters["cache_miss"] += 1
            self._log(now, "cache_miss", node=req.node)
            return
        self.counters["cache_hit"] += 1
        self._log(now, "cache_hit", node=req.node, counter=entry.counter)
        self._queue.append(_PendingG2G(RebroadcastUplink(replace(entry.frame))))

    def handover_downlink(
        self,
        downlink: Frame,
        rx1_deadline: SimTime,
        rx2_deadline: SimTime,
        now: SimTime,
    ) -> None:
        """Queue a forward request after local duty cycle failed both windows."""
        self._log(now, "g2g_handover", node=downlink.dst, counter=downlink.counter)
        self._queue.append(
            _PendingG2G(
                ReqForwardDownlink(
                    downlink=replace(downlink),
                    node=downlink.dst,
                    rx1_deadline=rx1_deadline,
                    rx2_deadline=rx2_deadline,
                ),
                rx2_deadline=rx2_deadline,
            )
        )

    def answer_downlink_request(
        self, req: ReqForwardDownlink, now: SimTime
    ) -> Frame | None:
        self._evict_expired(now)
        entry = self.cache.get(req.node)
        if entry is None or now - entry.received_at > 2 * US_PER_S:
            self.counters["cache_miss"] += 1
            self._log(now, "cache_miss", node=req.node)
            return None
        self.counters["cache_hit"] += 1
        uplink = entry.frame
        windows = (
            (entry.rx1_deadline, uplink.radio),
            (
                entry.rx2_deadline,
                RadioParams(
                    channel=RX2_CHANNEL,
                    sf=RX2_SF,
                    tx_power_dbm=RX2_TX_POWER_DBM,
                ),
            ),
        )
        for window_at, radio in windows:
            if window_at < now:
                continue
            downlink = replace(
                req.downlink,
                kind=FrameKind.NEIGHBOUR_DOWNLINK,
                src=self.gateway_id,
                radio=radio,
                tx_start=window_at,
                airtime_us=airtime_us(
                    req.downlink.payload_len, radio.sf, radio.bandwidth
                ),
            )
            if self._radio_busy is not None and self._radio_busy(
                window_at, window_at + downlink.airtime_us
            ):
                self._log(now, "radio_busy", g2g=True)
                continue
            if radio.band is Band.BAND0 and not self.ack_band0_open(
                downlink.airtime_us, window_at
            ):
                # forwarded downlinks spend the ack share, not the G2G slice
                self._log(now, "ack_gate_closed", node=req.node)
                continue
            if not self.duty[radio.band].try_reserve(
                downlink.airtime_us, window_at
            ):
                self._log(now, "duty_reject", band=radio.band.name, g2g=True)
                continue
            self._log(
                now,
                "g2g_answer_downlink",
                node=req.node,
                at=window_at,
                channel=radio.channel,
            )
            self.counters["neighbour_downlink_sent"] += 1
            return downlink
        return None

    # -- per-slot housekeeping ---------------------------------------------------

    def _try_g2g_send(self, pending: _PendingG2G, now: SimTime) -> Frame | None:
        grant = self.agent.request_slot(now)
        if grant is None:
            return None
        tx_start, channel = grant
        data = encode(pending.message)
        sf = self.agent.config.g2g_sf
        airtime = airtime_us(len(data), sf)
        if pending.rx2_deadline is not None:
            if tx_start + airtime + SLOT_US > pending.rx2_deadline:
                return None
        if self._radio_busy is not None and self._radio_busy(
            tx_start, tx_start + airtime
        ):
            self._log(now, "radio_busy", g2g=True)
            return None
        if not self._g2g_ledger.try_reserve(airtime, tx_start):
            self._log(now, "g2g_slice_full")
            return None
        band0 = self.duty[Band.BAND0]
        if not band0.try_reserve(airtime, tx_start):
            self._log(now, "duty_reject", band=Band.BAND0.name, g2g=True)
            return None
        message = pending.message
        if isinstance(message, ReqUplink):
            counter = message.last_counter
            dst = 0
        elif isinstance(message, RebroadcastUplink):
            counter = message.original.counter
            dst = 0
        else:
            counter = message.downlink.counter
            dst = 0
        return Frame(
            kind=kind_of(message),
            src=self.gateway_id,
            dst=dst,
            network=self.network,
            counter=counter,
            payload_len=len(data),
            radio=RadioParams(
                channel=channel,
                sf=sf,
                tx_power_dbm=self.config.g2g_tx_power_dbm,
            ),
            tx_start=tx_start,
            airtime_us=airtime,
            data=data,
        )

    def _deadline_impossible(self, pending: _PendingG2G, now: SimTime) -> bool:
        if pending.rx2_deadline is None:
            return False
        earliest = (now // SLOT_US + 1) * SLOT_US
        airtime = airtime_us(len(encode(pending.message)), self.agent.config.g2g_sf)
        return earliest + airtime + SLOT_US > pending.rx2_deadline

    def _next_pending(self) -> _PendingG2G | None:
        # deadline-bound forwards (acknowledgements racing the node's
        # receive windows) go before recovery traffic, which can wait
        for pending in self._queue:
            if pending.rx2_deadline is not None:
                return pending
        return self._queue[0] if self._queue else None

    def tick(self, now: SimTime) -> list[Frame]:
        """Late-slot housekeeping; returns G2G frames granted this slot.

        Polls the predictor for missing uplinks, works the most urgent
        entry of the G2G queue against the scheduler, then closes the
        agent's slot.  Must be called once per timeslot, before the slot
        boundary.
        """
        for report in self.rmip.poll_missing(now):
            self.counters["missing_reported"] += 1
            if self._owned is None or report.node in self._owned:
                self.raise_uplink_request(report, now)

        sent: list[Frame] = []
        queue = self._queue
        if queue:
            head = self._next_pending()
            frame = self._try_g2g_send(head, now)
            if frame is not None:
                queue.remove(head)
                kind = kind_of(head.message)
                self.counters[f"g2g_sent_{kind.name.lower()}"] += 1
                self._log(
                    now,
                    "g2g_send",
                    kind=kind.name,
                    at=frame.tx_start,
                    channel=frame.radio.channel,
                )
                sent.append(frame)
            # everything still queued deferred one slot; deadline entries
            # retire on their deadline, the rest on the retry budget
            survivors = deque()
            for pending in queue:
                pending.attempts += 1
                if pending.rx2_deadline is not None:
                    if self._deadline_impossible(pending, now):
                        self.counters["ack_abandoned"] += 1
                        self._log(
                            now, "g2g_abandoned", kind=kind_of(pending.message).name
                        )
                    else:
                        survivors.append(pending)
                elif pending.attempts > self.config.g2g_retry_limit:
                    self.counters["g2g_starved"] += 1
                    self._log(now, "g2g_starved", kind=kind_of(pending.message).name)
                else:
                    survivors.append(pending)
            self._queue = survivors

        self.agent.end_of_slot()
        self._evict_expired(now)
        return sent

    def note_own_transmission(self, frame: Frame, now: SimTime) -> None:
        """Account our own outgoing frame in the spectrum model and the log."""
        self.agent.ingest_frame(
            frame.radio.channel, frame.airtime_us, frame.tx_end, frame.radio.sf
        )
        self._log(
            now,
            "transmit",
            kind=frame.kind.name,
            at=frame.tx_start,
            channel=frame.radio.channel,
            dst=frame.dst,
        )
