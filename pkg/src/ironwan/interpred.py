"""Tabular SARSA scheduling of gateway-to-gateway transmissions.

The agent watches decoded traffic on the shared uplink channels, keeps a
small per-channel count matrix over the last P timeslots as its state, and
learns action values for "transmit in future slot f on channel c" plus a
per-channel no-transmission action.  Because a reward needs the following F
slots (plus the longest possible frame still in the air) to be observed,
updates are applied on a fixed delay behind the action stream, in order.

Training runs on pseudo actions only: the agent picks an action every slot,
scores it against the traffic that actually materialised, and never puts a
frame on the air for it.  Real slot requests are served greedily and never
update the table.
"""

from __future__ import annotations

import math
import random
import struct
from collections import deque
from dataclasses import dataclass, field

from .core import ConfigError, SLOT_US, SimTime, slot_of, slot_start

SLOTS_PER_HOUR = 36_000
# longest frame modelled (SF12, max payload) spans under 26 slots; rewards
# wait this much past the F-slot window so every overlapping frame has been
# fully received and counted
MAX_FRAME_SLOTS = 26


@dataclass(frozen=True, slots=True)
class InterPredConfig:
    past_slots: int = 4  # P
    future_slots: int = 8  # F
    channels: int = 3  # C
    alpha: float = 0.8
    gamma: float = 0.1
    epsilon: float = 0.2
    count_cap: int = 5
    training_slots: int = 3 * SLOTS_PER_HOUR
    g2g_sf: int = 7

    def __post_init__(self) -> None:
        if self.past_slots < 1 or self.future_slots < 1 or self.channels < 1:
            raise ConfigError("state dimensions must be positive")
        if self.count_cap < 1 or self.count_cap > 7:
            raise ConfigError("count cap must fit in 3 bits")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon outside [0, 1]")

    @property
    def n_actions(self) -> int:
        return (self.future_slots + 1) * self.channels


def action_index(config: InterPredConfig, channel: int, f: int) -> int:
    """Channel-major action layout; f = 0 is that channel's no-transmission."""
    return channel * (config.future_slots + 1) + f


def action_fields(config: InterPredConfig, index: int) -> tuple[int, int]:
    channel, f = divmod(index, config.future_slots + 1)
    return channel, f


class SpectrumState:
    """P x C matrix of capped per-slot message counts, packed 3 bits a cell.

    Row 0 is the oldest slot, row P-1 the slot in progress.  advance() drops
    the oldest row; ingest() smears a newly decoded frame over the last
    min(k, P) rows, k being its airtime in started slots.
    """

    __slots__ = ("p", "c", "cap", "encoded")

    def __init__(self, past_slots: int, channels: int, count_cap: int = 5):
        self.p = past_slots
        self.c = channels
        self.cap = count_cap
        self.encoded = 0

    def _cell_shift(self, row: int, channel: int) -> int:
        return 3 * (row * self.c + channel)

    def advance(self) -> None:
        self.encoded >>= 3 * self.c
        # dropped high bits are already zero for the fresh row

    def ingest(self, channel: int, airtime_us: int) -> None:
        k = min(-(-airtime_us // SLOT_US), self.p)
        for row in range(self.p - k, self.p):
            shift = self._cell_shift(row, channel)
            value = (self.encoded >> shift) & 0b111
            if value < self.cap:
                self.encoded += 1 << shift

    def counts(self) -> list[list[int]]:
        return [
            [(self.encoded >> self._cell_shift(p, c)) & 0b111 for c in range(self.c)]
            for p in range(self.p)
        ]

    def last_slot_count(self, channel: int) -> int:
        return (self.encoded >> self._cell_shift(self.p - 1, channel)) & 0b111


def transmit_reward(f: int, future_slots: int, m: int) -> float:
    """Earlier slots are worth more; interference scales the penalty."""
    base = 1.0 - f / future_slots
    if m == 0:
        return base
    return -2.0 * m * base


@dataclass(slots=True)
class _Pending:
    slot: int
    state: int
    action: int


class Agent:
    """SARSA learner plus interference bookkeeping for one gateway."""

    def __init__(self, config: InterPredConfig, rng: random.Random):
        self.config = config
        self.rng = rng
        self.state = SpectrumState(
            config.past_slots, config.channels, config.count_cap
        )
        self.q: dict[int, list[float]] = {}
        self.slot: int = 0
        self.trained_slots: int = 0
        self._pending: deque[_Pending] = deque()
        # absolute slot -> per-channel count of frames at the G2G spreading
        # factor overlapping that slot; this is what interference lookups use
        self._m: dict[int, list[int]] = {}
        self._maturity = config.future_slots + MAX_FRAME_SLOTS + 1
        self.total_pseudo_reward = 0.0
        self.updates_applied = 0

    @property
    def is_trained(self) -> bool:
        return self.trained_slots >= self.config.training_slots

    def _q_row(self, state: int) -> list[float]:
        row = self.q.get(state)
        if row is None:
            row = [0.0] * self.config.n_actions
            self.q[state] = row
        return row

    def _greedy(self, row: list[float]) -> int:
        best, best_value = 0, row[0]
        for i in range(1, len(row)):
            if row[i] > best_value:
                best, best_value = i, row[i]
        return best

    # -- environment feed ---------------------------------------------------

    def ingest_frame(
        self, channel: int, airtime_us: int, decoded_at: SimTime, sf: int
    ) -> None:
        """Account one decoded frame ending at decoded_at on a shared channel."""
        if channel >= self.config.channels:
            return
        self.state.ingest(channel, airtime_us)
        if sf != self.config.g2g_sf:
            return
        first = slot_of(decoded_at - airtime_us)
        last = slot_of(decoded_at - 1) if decoded_at > 0 else 0
        for s in range(first, last + 1):
            counts = self._m.get(s)
            if counts is None:
                counts = [0] * self.config.channels
                self._m[s] = counts
            counts[channel] += 1

    def interference(self, abs_slot: int, channel: int) -> int:
        counts = self._m.get(abs_slot)
        return counts[channel] if counts else 0

    # -- per-slot training loop ----------------------------------------------

    def _action_reward(self, pending: _Pending) -> float:
        cfg = self.config
        channel, f = action_fields(cfg, pending.action)
        if f > 0:
            return transmit_reward(
                f, cfg.future_slots, self.interference(pending.slot + f, channel)
            )
        total = 0.0
        for c in range(cfg.channels):
            for i in range(1, cfg.future_slots + 1):
                total += transmit_reward(
                    i, cfg.future_slots, self.interference(pending.slot + i, c)
                )
        # mean over the transmit actions the agent declined, so staying quiet
        # can never outscore the best single transmission
        return total / (cfg.future_slots * cfg.channels)

    def end_of_slot(self) -> None:
        """Close the current slot: mature one update, pick the next pseudo action."""
        cfg = self.config
        pending = self._pending
        if len(pending) > self._maturity:
            entry = pending.popleft()
            successor = pending[0]
            reward = self._action_reward(entry)
            self.total_pseudo_reward += reward
            row = self._q_row(entry.state)
            next_value = self._q_row(successor.state)[successor.action]
            row[entry.action] += cfg.alpha * (
                reward + cfg.gamma * next_value - row[entry.action]
            )
            self.updates_applied += 1

        # decide on the P completed slots before the window shifts; offset
        # f counts forward from the slot about to begin
        encoded = self.state.encoded
        row = self._q_row(encoded)
        if self.rng.random() < cfg.epsilon:
            action = self.rng.randrange(cfg.n_actions)
        else:
            action = self._greedy(row)
        pending.append(_Pending(self.slot, encoded, action))

        self.slot += 1
        self.state.advance()
        self.trained_slots += 1

        # slots pass one at a time, so evicting the single slot that just
        # left the maturity window keeps the interference map bounded
        self._m.pop(self.slot - self._maturity - 3, None)

    # -- real scheduling ----------------------------------------------------

    def request_slot(self, now: SimTime) -> tuple[SimTime, int] | None:
        """Greedy pick of a future transmit slot; None means stay silent.

        Returns (transmit time aligned to the slot grid, channel index).
        Never updates the table and never explores.
        """
        if not self.is_trained:
            return None
        row = self.q.get(self.state.encoded)
        if row is None:
            return None
        action = self._greedy(row)
        channel, f = action_fields(self.config, action)
        if f == 0 or row[action] <= 0.0:
            return None
        return slot_start(slot_of(now) + f), channel


# -- comparison policies -----------------------------------------------------


def random_action(config: InterPredConfig, rng: random.Random) -> tuple[int, int]:
    """Uniform over the transmit actions only: (channel, future slot)."""
    channel = rng.randrange(config.channels)
    f = rng.randrange(1, config.future_slots + 1)
    return channel, f


def next_used_action(
    config: InterPredConfig, state: SpectrumState
) -> tuple[int, int] | None:
    """Next slot on the lowest channel that was quiet in the current slot."""
    for channel in range(config.channels):
        if state.last_slot_count(channel) == 0:
            return channel, 1
    return None


# -- snapshot ----------------------------------------------------------------

_HEADER = struct.Struct("<BBBfff")


def save_agent(agent: Agent) -> bytes:
    """Little-endian snapshot: header, then (state key, action row) records."""
    cfg = agent.config
    record = struct.Struct(f"<Q{cfg.n_actions}f")
    parts = [
        _HEADER.pack(
            cfg.past_slots, cfg.future_slots, cfg.channels,
            cfg.alpha, cfg.gamma, cfg.epsilon,
        )
    ]
    for state in sorted(agent.q):
        parts.append(record.pack(state, *agent.q[state]))
    return b"".join(parts)


def load_agent(blob: bytes, rng: random.Random | None = None) -> Agent:
    if len(blob) < _HEADER.size:
        raise ValueError("snapshot shorter than its header")
    p, f, c, alpha, gamma, epsilon = _HEADER.unpack_from(blob, 0)
    config = InterPredConfig(
        past_slots=p, future_slots=f, channels=c,
        alpha=alpha, gamma=gamma, epsilon=epsilon,
    )
    agent = Agent(config, rng or random.Random(0))
    record = struct.Struct(f"<Q{config.n_actions}f")
    body = blob[_HEADER.size :]
    if len(body) % record.size:
        raise ValueError("snapshot body is not a whole number of records")
    for offset in range(0, len(body), record.size):
        values = record.unpack_from(body, offset)
        agent.q[values[0]] = list(values[1:])
    agent.trained_slots = config.training_slots  # a snapshot is a trained agent
    return agent
