"""Standalone evaluation drivers for the predictor and the scheduler.

These run against the synthetic workloads in traces.py, independent of the
network simulator, and back the rmip-eval and interpred-eval commands.
"""

from __future__ import annotations

import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .core import SLOT_US, SimTime
from .interpred import (
    Agent,
    InterPredConfig,
    SpectrumState,
    next_used_action,
    random_action,
)
from .rmip import ChangeDetected, Predictor, RmipConfig
from .traces import (
    COUNTER_MOD,
    STREAM_FRAME_AIRTIME_US,
    STREAM_FRAME_SF,
    SlotStream,
    TraceRow,
    build_stream,
)

RMIP_EVAL_HEADER = "n,e_s,tp,fp,fn,precision,recall"
POLICY_EVAL_HEADER = "policy,load,good,bad,none,total_reward"


# -- predictor grid evaluation --------------------------------------------------


@dataclass(frozen=True, slots=True)
class RmipCellResult:
    n: int
    e_s: float
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 1.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0

    def csv_row(self) -> str:
        return (
            f"{self.n},{self.e_s:g},{self.tp},{self.fp},{self.fn},"
            f"{self.precision:.6f},{self.recall:.6f}"
        )


def _group_rows(rows: list[TraceRow]) -> dict[int, list[TraceRow]]:
    grouped: dict[int, list[TraceRow]] = {}
    for row in rows:
        grouped.setdefault(row.node, []).append(row)
    for per_node in grouped.values():
        per_node.sort(key=lambda r: r.arrival_us)
    return grouped


# a sender qualifies as a splice donor when its inter-arrival spread is tiny
_DONOR_MIN_ROWS = 30
_DONOR_MAX_SPREAD = 0.1


def _median_interval(node_rows: list[TraceRow]) -> tuple[float, float]:
    intervals = [
        b.arrival_us - a.arrival_us for a, b in zip(node_rows, node_rows[1:])
    ]
    med = statistics.median(intervals)
    mad = statistics.median(abs(iv - med) for iv in intervals)
    return med, mad


def splice_changes(
    rows: list[TraceRow],
    count: int,
    seed: int,
) -> tuple[list[TraceRow], list[tuple[int, SimTime]]]:
    """Build period-change series by concatenating halves of real senders.

    Each change takes the first half of one regular sender and continues it
    with the counter and arrival steps from the second half of another whose
    period differs, so the synthetic series keeps real jitter and loss gaps.
    Returns the spliced rows (those nodes only, sorted) and per-node truth;
    the change time is the last arrival before the foreign steps begin.
    """
    grouped = _group_rows(rows)
    donors: list[tuple[float, int, float]] = []
    for node, node_rows in grouped.items():
        if len(node_rows) < _DONOR_MIN_ROWS:
            continue
        med, mad = _median_interval(node_rows)
        if mad <= med * _DONOR_MAX_SPREAD:
            donors.append((mad / med, node, med))
    donors.sort()
    if count > len(donors):
        raise ValueError(
            f"trace has {len(donors)} regular senders, cannot splice {count}"
        )

    rng = random.Random(seed * 9_176_399 + 5)
    spliced: list[TraceRow] = []
    truth: list[tuple[int, SimTime]] = []
    for _, node, med in donors[:count]:
        partners = [d for d in donors if abs(d[2] - med) > 0.2 * med]
        if not partners:
            raise ValueError("no donor with a different period to splice from")
        _, source, _ = rng.choice(partners)
        a_rows = grouped[node]
        b_rows = grouped[source]
        prefix = a_rows[: len(a_rows) // 2]
        tail = b_rows[len(b_rows) // 2 :]
        counter = prefix[-1].counter
        t = prefix[-1].arrival_us
        spliced.extend(prefix)
        truth.append((node, t))
        for before, after in zip(tail, tail[1:]):
            counter = (counter + (after.counter - before.counter)) % COUNTER_MOD
            t += after.arrival_us - before.arrival_us
            spliced.append(TraceRow(node, counter, t))
    spliced.sort(key=lambda r: (r.arrival_us, r.node))
    return spliced, truth


def evaluate_rmip_cell(
    grouped: dict[int, list[TraceRow]],
    truth: list[tuple[int, SimTime]],
    n: int,
    e_s: float,
) -> RmipCellResult:
    """Score change detections against injected ground truth.

    A truth change owns the stretch of its node's trace until the next
    change; the first detection landing there is its true positive, any
    further detection (or one before the first change) is a false positive.
    """
    config = RmipConfig(window=n, deviation_us=int(e_s * 1_000_000))
    truth_by_node: dict[int, list[SimTime]] = {}
    for node, at in truth:
        truth_by_node.setdefault(node, []).append(at)
    for times in truth_by_node.values():
        times.sort()

    tp = fp = 0
    matched: set[tuple[int, int]] = set()
    for node, node_rows in grouped.items():
        predictor = Predictor(config)
        changes = truth_by_node.get(node, ())
        for row in node_rows:
            for event in predictor.observe(node, row.counter, row.arrival_us):
                if not isinstance(event, ChangeDetected):
                    continue
                window = None
                for i, t_change in enumerate(changes):
                    if event.at > t_change:
                        window = i
                    else:
                        break
                if window is None or (node, window) in matched:
                    fp += 1
                else:
                    matched.add((node, window))
                    tp += 1
    fn = len(truth) - tp
    return RmipCellResult(n=n, e_s=e_s, tp=tp, fp=fp, fn=fn)


def _cell_worker(args) -> RmipCellResult:
    grouped, truth, n, e_s = args
    return evaluate_rmip_cell(grouped, truth, n, e_s)


def evaluate_rmip_grid(
    rows: list[TraceRow],
    truth: list[tuple[int, SimTime]],
    ns: tuple[int, ...] = tuple(range(5, 16)),
    es: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0),
    threads: int = 1,
) -> list[RmipCellResult]:
    """One detector pass per (window, deviation) cell, in grid order."""
    grouped = _group_rows(rows)
    cells = [(grouped, truth, n, e) for n in ns for e in es]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_cell_worker, cells, chunksize=1))
    return [_cell_worker(cell) for cell in cells]


# -- scheduler policy comparison -------------------------------------------------


@dataclass(slots=True)
class PolicyResult:
    policy: str
    load: str
    good: int = 0
    bad: int = 0
    none: int = 0
    total_reward: float = 0.0

    @property
    def requests(self) -> int:
        return self.good + self.bad + self.none

    @property
    def fulfilment(self) -> float:
        return (self.good + self.bad) / self.requests if self.requests else 0.0

    @property
    def bad_ratio(self) -> float:
        return self.bad / self.requests if self.requests else 0.0

    def csv_row(self) -> str:
        return (
            f"{self.policy},{self.load},{self.good},{self.bad},{self.none},"
            f"{self.total_reward:.6f}"
        )


POLICIES = ("interpred", "random", "next_used")


def compare_policies(
    load: str,
    seed: int,
    duration_slots: int = 24 * 36_000,
    config: InterPredConfig | None = None,
    request_gap: tuple[int, int] = (20, 60),
    stream: SlotStream | None = None,
) -> tuple[list[PolicyResult], Agent]:
    """Run the scheduler and both reference policies over one shared stream.

    The stream is identical for all three policies and none of their picks
    feeds back into it.  Requests start once the agent's training phase is
    over; a transmit pick scores good or bad against the traffic that
    actually occupies the chosen slot, a declined request scores zero.
    Returns the per-policy tallies and the trained agent.  A caller may
    pass its own stream (e.g. replayed from a trace); `load` then only
    labels the result rows.
    """
    config = config or InterPredConfig()
    if stream is None:
        stream = build_stream(load, duration_slots + config.future_slots + 2, seed)
    agent = Agent(config, random.Random(seed * 31 + 1))
    nu_state = SpectrumState(
        config.past_slots, config.channels, config.count_cap
    )
    req_rng = random.Random(seed * 31 + 2)
    rand_rng = random.Random(seed * 31 + 3)
    results = {name: PolicyResult(name, load) for name in POLICIES}

    def score(name: str, slot: int, pick: tuple[int, int] | None) -> None:
        result = results[name]
        if pick is None:
            result.none += 1
            return
        channel, f = pick
        m = stream.occupancy(slot + f, channel)
        base = 1.0 - f / config.future_slots
        if m == 0:
            result.good += 1
            result.total_reward += base
        else:
            result.bad += 1
            result.total_reward -= 2.0 * m * base

    next_request = config.training_slots + req_rng.randrange(*request_gap)
    for slot in range(duration_slots):
        in_slot_at = slot * SLOT_US + 95_000
        for channel, count in stream.slot_frames(slot):
            for _ in range(count):
                agent.ingest_frame(
                    channel, STREAM_FRAME_AIRTIME_US, in_slot_at, STREAM_FRAME_SF
                )
                nu_state.ingest(channel, STREAM_FRAME_AIRTIME_US)
        if slot == next_request:
            grant = agent.request_slot(slot * SLOT_US + 96_000)
            if grant is None:
                score("interpred", slot, None)
            else:
                tx_time, channel = grant
                score(
                    "interpred", slot, (channel, tx_time // SLOT_US - slot)
                )
            score("random", slot, random_action(config, rand_rng))
            score("next_used", slot, next_used_action(config, nu_state))
            next_request = slot + req_rng.randrange(*request_gap)
        agent.end_of_slot()
        nu_state.advance()
    return [results[name] for name in POLICIES], agent
