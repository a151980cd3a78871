"""Discrete-event simulator binding nodes, gateways, and servers.

Scenarios partition gateways and nodes into owner networks and run one of
four systems over identical node traffic: plain LoRaWAN, the G2G overlay,
a wholesale-cooperation baseline (servers relay everything to each other),
and a centralised balanced-assignment baseline.  Node behaviour is Class A
with ALOHA access; all randomness derives from the scenario seed.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable

from .core import (
    Band,
    ConfigError,
    Frame,
    FrameKind,
    G2G_KINDS,
    NetworkId,
    NodeAddr,
    RX2_CHANNEL,
    RX2_SF,
    RX2_TX_POWER_DBM,
    RadioParams,
    SLOT_US,
    SimTime,
    UPLINK_CHANNELS,
    US_PER_S,
)
from .gateway import ForwardToServer, GatewayConfig, GatewayRuntime
from .interpred import Agent, InterPredConfig
from .phy import (
    DutyCycleTracker,
    LinkModel,
    SENSITIVITY_DBM,
    airtime_us,
    audit_duty_cycle,
    resolve_collisions,
)
from .rmip import RmipConfig

SYSTEMS = ("lorawan", "ironwan", "wcs", "flip")
# named load levels; ScenarioConfig.load also accepts a bare fraction
LOAD_ACK_FRACTION = {"low": 0.10, "medium": 0.50, "high": 0.90}

ACK_PAYLOAD_LEN = 12
ADR_MARGIN_DB = 3.0
NODE_TX_POWER_DBM = 14.0
RX1_DELAY_US = 1 * US_PER_S
RX2_DELAY_US = 2 * US_PER_S
# servers see every copy of an uplink the instant it ends; the ack choice is
# made shortly after so equal-time copies from several gateways all count
SERVER_DECISION_DELAY_US = 10_000
GATEWAY_TICK_OFFSET_US = 96_000


def gateway_grid(count: int, side_m: float) -> tuple[tuple[float, float], ...]:
    """Evenly spaced gateway positions on a centred grid inside the square."""
    if count < 1:
        raise ConfigError("need at least one gateway")
    rows = 2 if count >= 4 else 1
    cols = -(-count // rows)
    positions = []
    for index in range(count):
        row, col = divmod(index, cols)
        positions.append(
            (
                side_m * (2 * col + 1) / (2 * cols),
                side_m * (2 * row + 1) / (2 * rows),
            )
        )
    return tuple(positions)


@dataclass(frozen=True)
class ScenarioConfig:
    system: str = "lorawan"
    node_count: int = 200
    networks: int = 4
    gateway_count: int = 6
    gateway_positions: tuple[tuple[float, float], ...] | None = None
    gateway_networks: tuple[int, ...] | None = None
    # cycled over node index to draw each node's operator; uneven patterns
    # model operators with very different subscriber counts
    node_networks: tuple[int, ...] | None = None
    area_km2: float = 4.0
    load: float | str = "medium"
    duration_s: int = 4 * 3600
    seed: int = 0
    period_s: int = 180
    retx_limit: int = 8
    payload_len: int = 20
    link: LinkModel = LinkModel(reference_loss_db=40.0, exponent=3.2)
    rmip: RmipConfig = RmipConfig()
    interpred: InterPredConfig = InterPredConfig(training_slots=18_000)
    gateway: GatewayConfig = GatewayConfig()

    def __post_init__(self) -> None:
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}")
        if isinstance(self.load, str):
            if self.load not in LOAD_ACK_FRACTION:
                raise ConfigError(f"unknown load level {self.load!r}")
            object.__setattr__(self, "load", LOAD_ACK_FRACTION[self.load])
        if not 0.0 <= self.load <= 1.0:
            raise ConfigError("load must be a fraction between 0 and 1")
        if self.node_count < 0:
            raise ConfigError("negative node count")
        if self.networks < 1:
            raise ConfigError("need at least one network")
        if self.area_km2 <= 0:
            raise ConfigError("area must be positive")
        if self.duration_s <= 0 or self.period_s <= 0:
            raise ConfigError("duration and period must be positive")
        if self.retx_limit < 0:
            raise ConfigError("negative retransmission limit")
        if self.gateway_positions is None:
            object.__setattr__(
                self,
                "gateway_positions",
                gateway_grid(self.gateway_count, self.side_m),
            )
        elif len(self.gateway_positions) != self.gateway_count:
            raise ConfigError(
                f"{len(self.gateway_positions)} positions for "
                f"{self.gateway_count} gateways"
            )
        if self.gateway_networks is None:
            object.__setattr__(
                self,
                "gateway_networks",
                tuple(i % self.networks for i in range(self.gateway_count)),
            )
        if len(self.gateway_networks) != self.gateway_count or any(
            not 0 <= n < self.networks for n in self.gateway_networks
        ):
            raise ConfigError("gateway_networks must name a network per gateway")
        if set(self.gateway_networks) != set(range(self.networks)):
            raise ConfigError("every network needs at least one gateway")
        if self.node_networks is None:
            object.__setattr__(
                self,
                "node_networks",
                tuple(range(self.networks)),
            )
        if not self.node_networks or any(
            not 0 <= n < self.networks for n in self.node_networks
        ):
            raise ConfigError("node_networks entries must name valid networks")
        if set(self.node_networks) != set(range(self.networks)):
            raise ConfigError("every network needs at least one node slot")

    @property
    def side_m(self) -> float:
        return math.sqrt(self.area_km2) * 1000.0


class Engine:
    """Priority queue of (time, sequence, action); sequence breaks ties."""

    def __init__(self) -> None:
        self._heap: list[tuple[SimTime, int, Callable[[SimTime], None]]] = []
        self._seq = 0

    def schedule(self, at: SimTime, action: Callable[[SimTime], None]) -> None:
        heapq.heappush(self._heap, (at, self._seq, action))
        self._seq += 1

    def run(self, until: SimTime) -> None:
        heap = self._heap
        while heap and heap[0][0] < until:
            at, _, action = heapq.heappop(heap)
            action(at)


@dataclass(slots=True)
class _Attempt:
    counter: int
    channel: int
    tx_end: SimTime
    transmissions: int
    acked: bool = False


@dataclass(slots=True)
class NodeActor:
    index: int
    addr: NodeAddr
    network: NetworkId
    x: float
    y: float
    needs_ack: bool
    period_us: int
    phase_us: int
    rng: random.Random
    sf: int = 12
    counter: int = 0
    duty: DutyCycleTracker = field(
        default_factory=lambda: DutyCycleTracker(Band.BAND0)
    )
    attempt: _Attempt | None = None
    generated: int = 0
    acked: int = 0
    retransmissions: int = 0
    # retransmissions spent on messages that did get acknowledged; the
    # per-acked average is what the NoReTx metric reports
    retx_on_acked: int = 0


@dataclass(slots=True)
class _Gateway:
    gid: int
    network: NetworkId
    x: float
    y: float
    duty: dict[Band, DutyCycleTracker]
    runtime: GatewayRuntime | None = None
    tx_intervals: list[tuple[SimTime, SimTime]] = field(default_factory=list)

    def tx_busy(self, start: SimTime, end: SimTime) -> bool:
        return any(s < end and start < e for s, e in self.tx_intervals)

    def note_tx(self, start: SimTime, end: SimTime) -> None:
        intervals = self.tx_intervals
        intervals.append((start, end))
        if len(intervals) > 32:
            cutoff = start - 30 * US_PER_S
            self.tx_intervals = [iv for iv in intervals if iv[1] > cutoff]


def _build_gateways(config: ScenarioConfig) -> list[_Gateway]:
    return [
        _Gateway(
            gid=i,
            network=config.gateway_networks[i],
            x=pos[0],
            y=pos[1],
            duty={band: DutyCycleTracker(band) for band in Band},
        )
        for i, pos in enumerate(config.gateway_positions)
    ]


def _build_nodes(config: ScenarioConfig) -> list[NodeActor]:
    area_rng = random.Random(config.seed * 7_127 + 3)
    side = config.side_m
    pattern = config.node_networks
    nodes = []
    for i in range(config.node_count):
        rng = random.Random(config.seed * 1_000_003 + i + 1)
        nodes.append(
            NodeActor(
                index=i,
                addr=0x0100_0000 + i,
                network=pattern[i % len(pattern)],
                x=area_rng.uniform(0.0, side),
                y=area_rng.uniform(0.0, side),
                needs_ack=rng.random() < config.load,
                period_us=config.period_s * US_PER_S,
                phase_us=int(rng.uniform(0, config.period_s * US_PER_S)),
                rng=rng,
            )
        )
    return nodes


def assign_data_rates(config: ScenarioConfig) -> dict[NodeAddr, int]:
    """Static ADR: lowest SF that reaches the best own-network gateway.

    The margin is part of the threshold, so a link that meets sensitivity
    plus margin exactly still takes the lower SF.  Nodes out of range of
    their own network at SF12 make the scenario invalid.
    """
    gateways = _build_gateways(config)
    link = config.link
    assigned: dict[NodeAddr, int] = {}
    unreachable = []
    for node in _build_nodes(config):
        own = [g for g in gateways if g.network == node.network]
        best = max(
            link.rx_power(NODE_TX_POWER_DBM, math.dist((node.x, node.y), (g.x, g.y)))
            for g in own
        )
        for sf in range(7, 13):
            if best >= SENSITIVITY_DBM[sf] + ADR_MARGIN_DB:
                assigned[node.addr] = sf
                break
        else:
            unreachable.append(node.addr)
    if unreachable:
        raise ConfigError(
            f"{len(unreachable)} nodes unreachable by their own network at SF12"
        )
    return assigned


def flip_assignment(
    config: ScenarioConfig, sf_by_addr: dict[NodeAddr, int]
) -> dict[NodeAddr, int]:
    """Balance per-gateway node counts subject to SF reachability.

    Greedy in node-address order: each node goes to the reachable gateway
    with the fewest nodes so far, ties to the lowest gateway id; a node
    reaching no gateway at its SF stays with the nearest own-network one.
    """
    gateways = _build_gateways(config)
    link = config.link
    counts = [0] * len(gateways)
    assigned: dict[NodeAddr, int] = {}
    for node in sorted(_build_nodes(config), key=lambda n: n.addr):
        reachable = [
            g.gid
            for g in gateways
            if link.rx_power(
                NODE_TX_POWER_DBM, math.dist((node.x, node.y), (g.x, g.y))
            )
            >= SENSITIVITY_DBM[sf_by_addr[node.addr]]
        ]
        if reachable:
            gid = min(reachable, key=lambda g: (counts[g], g))
        else:
            own = [g for g in gateways if g.network == node.network]
            gid = min(
                own,
                key=lambda g: (math.dist((node.x, node.y), (g.x, g.y)), g.gid),
            ).gid
        assigned[node.addr] = gid
        counts[gid] += 1
    return assigned


@dataclass
class RunMetrics:
    system: str
    seed: int
    node_count: int
    networks: int
    gateway_count: int
    load: float
    duration_s: int
    retx_limit: int
    generated: int
    unique_total: int
    unique_per_node: float
    pdr_mean: float | None
    pdr_min: float | None
    no_retx_mean: float
    overhead: int
    g2g_messages: int
    band1_downlinks: int
    wcs_relays: int
    recovered_uplinks: int
    g2g_starved: int
    ack_abandoned: int
    malformed_g2g: int
    acks_sent: int
    acks_dropped: int
    duty_violations: int
    per_node: dict[NodeAddr, dict] = field(default_factory=dict, repr=False)

    CSV_FIELDS = (
        "system,seed,node_count,networks,gateway_count,load,duration_s,"
        "retx_limit,generated,unique_total,unique_per_node,pdr_mean,pdr_min,"
        "no_retx_mean,overhead,g2g_messages,band1_downlinks,wcs_relays,"
        "recovered_uplinks,g2g_starved,ack_abandoned,malformed_g2g,"
        "acks_sent,acks_dropped,duty_violations"
    )

    def csv_row(self) -> str:
        def fmt(value) -> str:
            if value is None:
                return ""
            if isinstance(value, float):
                return f"{value:.6f}"
            return str(value)

        return ",".join(fmt(getattr(self, name)) for name in self.CSV_FIELDS.split(","))

    def to_json_dict(self) -> dict:
        data = {name: getattr(self, name) for name in self.CSV_FIELDS.split(",")}
        data["per_node"] = {
            str(addr): stats for addr, stats in sorted(self.per_node.items())
        }
        return data


@dataclass(slots=True)
class _AirFrame:
    frame: Frame
    src_key: int
    interferers: list[Frame] = field(default_factory=list)


class Simulation:
    def __init__(self, config: ScenarioConfig) -> None:
        self.config = config
        self.engine = Engine()
        self.duration_us = config.duration_s * US_PER_S
        self.link = config.link
        self.log: list[dict] = []
        self.tx_records: list[tuple[int, Band, SimTime, int]] = []
        self.active: dict[int, list[_AirFrame]] = {}
        self.counters: Counter[str] = Counter()
        self._power_cache: dict[tuple[int, int], float] = {}

        self.nodes = _build_nodes(config)
        self.node_by_addr = {node.addr: node for node in self.nodes}

        self.gateways = _build_gateways(config)
        if config.system == "ironwan":
            for g in self.gateways:
                agent = Agent(
                    config.interpred, random.Random(config.seed * 131 + 17 + g.gid)
                )
                g.runtime = GatewayRuntime(
                    gateway_id=g.gid,
                    network=g.network,
                    agent=agent,
                    config=config.gateway,
                    rmip_config=config.rmip,
                    owned_nodes=frozenset(
                        n.addr for n in self.nodes if n.network == g.network
                    ),
                    radio_busy=g.tx_busy,
                )
                # acks and G2G share one radio, so they share one duty budget
                g.duty = g.runtime.duty
        if self.nodes:
            sfs = assign_data_rates(config)
            for node in self.nodes:
                node.sf = sfs[node.addr]
            self.flip_gateway = (
                flip_assignment(config, sfs) if config.system == "flip" else {}
            )
        else:
            self.flip_gateway = {}

        self.positions: dict[int, tuple[float, float]] = {
            g.gid: (g.x, g.y) for g in self.gateways
        }
        self.positions.update({n.addr: (n.x, n.y) for n in self.nodes})

        # server state, shared across networks and keyed by the node
        self.seen: set[tuple[NodeAddr, int]] = set()
        self.copies: dict[tuple[NodeAddr, int, SimTime], list[tuple[int, float]]] = {}
        self.unique: Counter[NodeAddr] = Counter()

    # -- propagation ----------------------------------------------------------

    def _base_power(self, tx_key: int, rx_key: int) -> float:
        """Received power for a 14 dBm transmission between two actors."""
        cached = self._power_cache.get((tx_key, rx_key))
        if cached is None:
            cached = self.link.rx_power(
                NODE_TX_POWER_DBM,
                math.dist(self.positions[tx_key], self.positions[rx_key]),
            )
            self._power_cache[(tx_key, rx_key)] = cached
            self._power_cache[(rx_key, tx_key)] = cached
        return cached

    def _rx_power(self, frame: Frame, src_key: int, rx_key: int) -> float:
        return (
            self._base_power(src_key, rx_key)
            + frame.radio.tx_power_dbm
            - NODE_TX_POWER_DBM
        )

    def _decodes(self, af: _AirFrame, rx_key: int) -> tuple[bool, float]:
        frame = af.frame
        power = self._rx_power(frame, af.src_key, rx_key)
        entries = [(frame, power)]
        for other in af.interferers:
            entries.append((other, self._rx_power(other, other.src, rx_key)))
        return 0 in resolve_collisions(entries), power

    # -- transmission lifecycle ------------------------------------------------

    def _emit(self, frame: Frame, src_key: int, gw: _Gateway | None = None) -> None:
        if gw is not None:
            # book the single gateway radio at scheduling time, so every
            # later decision in the same instant already sees the window taken
            if gw.tx_busy(frame.tx_start, frame.tx_end):
                self.counters["tx_conflict"] += 1
                self.log.append(
                    {
                        "t": frame.tx_start,
                        "event": "tx_conflict",
                        "src": src_key,
                        "kind": frame.kind.name,
                    }
                )
                return
            gw.note_tx(frame.tx_start, frame.tx_end)
        self.engine.schedule(
            frame.tx_start, lambda at: self._begin_tx(frame, src_key, gw)
        )

    def _begin_tx(self, frame: Frame, src_key: int, gw: _Gateway | None) -> None:
        if gw is not None and gw.runtime is not None:
            gw.runtime.note_own_transmission(frame, frame.tx_start)
        self.tx_records.append(
            (src_key, frame.radio.band, frame.tx_start, frame.airtime_us)
        )
        self.log.append(
            {
                "t": frame.tx_start,
                "event": "tx",
                "src": src_key,
                "kind": frame.kind.name,
                "channel": frame.radio.channel,
                "sf": frame.radio.sf,
                "counter": frame.counter,
            }
        )
        if frame.kind in G2G_KINDS:
            self.counters["g2g_messages"] += 1
        elif frame.kind == FrameKind.DOWNLINK_ACK and frame.radio.band == Band.BAND1:
            self.counters["band1_downlinks"] += 1

        af = _AirFrame(frame, src_key)
        ongoing = self.active.setdefault(frame.radio.channel, [])
        for other in ongoing:
            other.interferers.append(frame)
            af.interferers.append(other.frame)
        ongoing.append(af)
        self.engine.schedule(frame.tx_end, lambda at: self._end_tx(af))

    def _end_tx(self, af: _AirFrame) -> None:
        self.active[af.frame.radio.channel].remove(af)
        self._deliver(af)

    # -- reception --------------------------------------------------------------

    def _deliver(self, af: _AirFrame) -> None:
        frame = af.frame
        now = frame.tx_end
        for g in self.gateways:
            if g.gid == af.src_key:
                continue
            if g.tx_busy(frame.tx_start, frame.tx_end):
                continue
            ok, power = self._decodes(af, g.gid)
            if not ok:
                continue
            self.log.append(
                {
                    "t": now,
                    "event": "rx",
                    "gw": g.gid,
                    "src": frame.src,
                    "kind": frame.kind.name,
                    "counter": frame.counter,
                }
            )
            self._gateway_decode(g, frame, power, now)
        if frame.dst in self.node_by_addr:
            node = self.node_by_addr[frame.dst]
            ok, _ = self._decodes(af, node.addr)
            if ok:
                self._node_decode(node, frame, now)

    def _gateway_decode(
        self, g: _Gateway, frame: Frame, power: float, now: SimTime
    ) -> None:
        if g.runtime is not None:
            result = g.runtime.on_receive(frame, now)
            for effect in result.effects:
                if isinstance(effect, ForwardToServer):
                    recovered = effect.frame is not frame
                    self._server_copy(g, effect.frame, power, now, recovered)
            for tx in result.transmissions:
                self._emit(tx, g.gid, g)
        elif frame.kind == FrameKind.UPLINK:
            self._server_copy(g, frame, power, now, recovered=False)

    def _node_decode(self, node: NodeActor, frame: Frame, now: SimTime) -> None:
        if frame.kind not in (FrameKind.DOWNLINK_ACK, FrameKind.NEIGHBOUR_DOWNLINK):
            return
        attempt = node.attempt
        if attempt is None or attempt.acked or frame.counter != attempt.counter:
            return
        attempt.acked = True
        node.acked += 1
        node.retx_on_acked += attempt.transmissions - 1
        self.log.append(
            {"t": now, "event": "ack_ok", "node": node.addr, "counter": frame.counter}
        )

    # -- server behaviour ---------------------------------------------------------

    def _server_copy(
        self,
        g: _Gateway,
        frame: Frame,
        power: float,
        now: SimTime,
        recovered: bool,
    ) -> None:
        node = self.node_by_addr.get(frame.src)
        if node is None:
            return
        system = self.config.system
        if recovered:
            # a replayed uplink reaches the node's operator only through
            # gateways of that operator; its receive windows are long gone
            if (
                g.network == node.network
                and (node.addr, frame.counter) not in self.seen
            ):
                self.seen.add((node.addr, frame.counter))
                self.unique[node.addr] += 1
                self.counters["recovered_unique"] += 1
                self.log.append(
                    {
                        "t": now,
                        "event": "unique",
                        "node": node.addr,
                        "counter": frame.counter,
                        "recovered": True,
                    }
                )
            return
        if system in ("lorawan", "ironwan") and g.network != node.network:
            return
        if system == "flip" and g.gid != self.flip_gateway[node.addr]:
            return

        key = (node.addr, frame.counter, frame.tx_start)
        entries = self.copies.get(key)
        if entries is None:
            entries = []
            self.copies[key] = entries
            self.engine.schedule(
                frame.tx_end + SERVER_DECISION_DELAY_US,
                lambda at, key=key, frame=frame: self._server_decide(key, frame, at),
            )
        entries.append((g.gid, power))

    def _server_decide(self, key, frame: Frame, now: SimTime) -> None:
        node = self.node_by_addr[frame.src]
        entries = self.copies.pop(key)
        own = [e for e in entries if self.gateways[e[0]].network == node.network]
        claimed_unique = (node.addr, frame.counter) not in self.seen
        if claimed_unique:
            self.seen.add((node.addr, frame.counter))
            self.unique[node.addr] += 1
            self.log.append(
                {
                    "t": now,
                    "event": "unique",
                    "node": node.addr,
                    "counter": frame.counter,
                }
            )
        if self.config.system == "wcs" and claimed_unique and not own:
            self.counters["wcs_relays"] += 1

        if not frame.needs_ack:
            return
        if self.config.system == "wcs":
            # another server's gateway carries the ack only when no own
            # gateway heard the uplink, and each delegation costs one use
            pool = own or entries
            if not own:
                self.counters["wcs_relays"] += 1
        else:
            pool = entries
        gid, _ = max(pool, key=lambda e: (e[1], -e[0]))
        self._dispatch_ack(self.gateways[gid], frame, now)

    def _dispatch_ack(self, g: _Gateway, uplink: Frame, now: SimTime) -> None:
        node = self.node_by_addr[uplink.src]
        rx1_at = uplink.tx_end + RX1_DELAY_US
        rx2_at = uplink.tx_end + RX2_DELAY_US
        rx1_air = airtime_us(ACK_PAYLOAD_LEN, uplink.radio.sf)
        ack = Frame(
            kind=FrameKind.DOWNLINK_ACK,
            src=g.gid,
            dst=node.addr,
            network=g.network,
            counter=uplink.counter,
            payload_len=ACK_PAYLOAD_LEN,
            radio=RadioParams(
                channel=uplink.radio.channel,
                sf=uplink.radio.sf,
                tx_power_dbm=NODE_TX_POWER_DBM,
            ),
            tx_start=rx1_at,
            airtime_us=rx1_air,
        )
        band0 = g.duty[Band.BAND0]
        rx1_open = not g.tx_busy(rx1_at, rx1_at + rx1_air)
        if rx1_open and g.runtime is not None:
            # overlay gateways keep a Band0 slice for G2G traffic; only the
            # ack-side spend counts against the acknowledgement share
            rx1_open = g.runtime.ack_band0_open(rx1_air, rx1_at)
        if rx1_open and band0.try_reserve(rx1_air, rx1_at):
            self.counters["acks_sent"] += 1
            self._emit(ack, g.gid, g)
            return
        rx2_air = airtime_us(ACK_PAYLOAD_LEN, RX2_SF)
        rx2_ack = Frame(
            kind=FrameKind.DOWNLINK_ACK,
            src=g.gid,
            dst=node.addr,
            network=g.network,
            counter=uplink.counter,
            payload_len=ACK_PAYLOAD_LEN,
            radio=RadioParams(
                channel=RX2_CHANNEL, sf=RX2_SF, tx_power_dbm=RX2_TX_POWER_DBM
            ),
            tx_start=rx2_at,
            airtime_us=rx2_air,
        )
        if not g.tx_busy(rx2_at, rx2_at + rx2_air) and g.duty[Band.BAND1].try_reserve(
            rx2_air, rx2_at
        ):
            self.counters["acks_sent"] += 1
            self._emit(rx2_ack, g.gid, g)
            return
        if g.runtime is not None:
            g.runtime.handover_downlink(ack, rx1_at, rx2_at, now)
        else:
            self.counters["acks_dropped"] += 1
            self.log.append(
                {"t": now, "event": "ack_dropped", "gw": g.gid, "node": node.addr}
            )

    # -- node behaviour -------------------------------------------------------------

    def _start_nodes(self) -> None:
        for node in self.nodes:
            t = node.phase_us
            k = 0
            while t < self.duration_us:
                self.engine.schedule(
                    t, lambda at, node=node: self._app_message(node, at)
                )
                k += 1
                t = node.phase_us + k * node.period_us

    def _app_message(self, node: NodeActor, now: SimTime) -> None:
        node.attempt = None  # a still-unacked previous message is abandoned
        counter = node.counter
        node.counter = (node.counter + 1) % 65536
        node.generated += 1
        self._node_transmit(node, counter, transmissions=0, at=now)

    def _node_transmit(
        self, node: NodeActor, counter: int, transmissions: int, at: SimTime
    ) -> None:
        next_app = node.phase_us + node.generated * node.period_us
        channel = node.rng.choice(UPLINK_CHANNELS)
        air = airtime_us(self.config.payload_len, node.sf)
        start = at
        if not node.duty.try_reserve(air, start):
            delayed = node.duty.next_free(air, start)
            if delayed is None or delayed >= next_app:
                self.counters["uplink_duty_dropped"] += 1
                return
            start = delayed
            if not node.duty.try_reserve(air, start):
                self.counters["uplink_duty_dropped"] += 1
                return
        frame = Frame(
            kind=FrameKind.UPLINK,
            src=node.addr,
            dst=0,
            network=node.network,
            counter=counter,
            payload_len=self.config.payload_len,
            radio=RadioParams(channel=channel, sf=node.sf),
            tx_start=start,
            airtime_us=air,
            needs_ack=node.needs_ack,
        )
        if transmissions > 0:
            node.retransmissions += 1
        node.attempt = _Attempt(
            counter=counter,
            channel=channel,
            tx_end=frame.tx_end,
            transmissions=transmissions + 1,
        )
        self._emit(frame, node.addr)
        if node.needs_ack:
            deadline = (
                frame.tx_end
                + RX2_DELAY_US
                + airtime_us(ACK_PAYLOAD_LEN, RX2_SF)
                + 100_000
            )
            self.engine.schedule(
                deadline,
                lambda at, node=node, counter=counter: self._ack_deadline(
                    node, counter, at
                ),
            )

    def _ack_deadline(self, node: NodeActor, counter: int, now: SimTime) -> None:
        attempt = node.attempt
        if attempt is None or attempt.counter != counter or attempt.acked:
            return
        if attempt.transmissions > self.config.retx_limit:
            self.counters["ack_exhausted"] += 1
            node.attempt = None
            return
        backoff = int(node.rng.uniform(1.0, 3.0) * US_PER_S)
        self._node_transmit(
            node, counter, transmissions=attempt.transmissions, at=now + backoff
        )

    # -- gateway slot clock --------------------------------------------------------

    def _slot_tick(self, now: SimTime) -> None:
        for g in self.gateways:
            for frame in g.runtime.tick(now):
                self._emit(frame, g.gid, g)
        after = now + SLOT_US
        if after < self.duration_us:
            self.engine.schedule(after, self._slot_tick)

    # -- orchestration ---------------------------------------------------------------

    def run(self) -> RunMetrics:
        self._start_nodes()
        if self.config.system == "ironwan":
            self.engine.schedule(GATEWAY_TICK_OFFSET_US, self._slot_tick)
        self.engine.run(self.duration_us)
        return self._metrics()

    def _metrics(self) -> RunMetrics:
        config = self.config
        ack_nodes = [n for n in self.nodes if n.needs_ack and n.generated]
        pdrs = [n.acked / n.generated for n in ack_nodes]
        generated = sum(n.generated for n in self.nodes)
        unique_total = sum(self.unique.values())
        acked_total = sum(n.acked for n in ack_nodes)
        retx_on_acked = sum(n.retx_on_acked for n in ack_nodes)

        gw_counters: Counter[str] = Counter()
        for g in self.gateways:
            if g.runtime is not None:
                gw_counters.update(g.runtime.counters)

        g2g_messages = self.counters["g2g_messages"]
        band1_downlinks = self.counters["band1_downlinks"]
        if config.system == "ironwan":
            overhead = g2g_messages + band1_downlinks
        elif config.system == "wcs":
            overhead = self.counters["wcs_relays"]
        else:
            overhead = band1_downlinks

        per_node = {
            n.addr: {
                "network": n.network,
                "sf": n.sf,
                "needs_ack": n.needs_ack,
                "generated": n.generated,
                "unique": self.unique[n.addr],
                "acked": n.acked,
                "retransmissions": n.retransmissions,
                "retx_on_acked": n.retx_on_acked,
            }
            for n in self.nodes
        }
        return RunMetrics(
            system=config.system,
            seed=config.seed,
            node_count=config.node_count,
            networks=config.networks,
            gateway_count=config.gateway_count,
            load=config.load,
            duration_s=config.duration_s,
            retx_limit=config.retx_limit,
            generated=generated,
            unique_total=unique_total,
            unique_per_node=unique_total / len(self.nodes) if self.nodes else 0.0,
            pdr_mean=sum(pdrs) / len(pdrs) if pdrs else None,
            pdr_min=min(pdrs) if pdrs else None,
            no_retx_mean=retx_on_acked / acked_total if acked_total else 0.0,
            overhead=overhead,
            g2g_messages=g2g_messages,
            band1_downlinks=band1_downlinks,
            wcs_relays=self.counters["wcs_relays"],
            recovered_uplinks=self.counters["recovered_unique"],
            g2g_starved=gw_counters["g2g_starved"],
            ack_abandoned=gw_counters["ack_abandoned"],
            malformed_g2g=gw_counters["malformed_g2g"],
            acks_sent=self.counters["acks_sent"],
            acks_dropped=self.counters["acks_dropped"],
            duty_violations=len(audit_duty_cycle(self.tx_records)),
            per_node=per_node,
        )

    def gateway_logs(self) -> dict[int, list[dict]]:
        return {g.gid: g.runtime.log for g in self.gateways if g.runtime is not None}


def run(config: ScenarioConfig) -> tuple[RunMetrics, list[dict]]:
    """Run one scenario; returns the metrics and the engine event log."""
    sim = Simulation(config)
    metrics = sim.run()
    return metrics, sim.log
