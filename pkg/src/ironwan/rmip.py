"""Streaming prediction of per-node uplink inter-arrival times.

One small constant-memory state machine per heard node learns the node's
sending interval from a window of recent inter-arrival samples, keeps a
rolling anchor for the expected arrival schedule, and reports three things:
an interval estimate, a change of the interval, and expected-but-missing
uplinks.  Counter gaps are filled with equal synthetic intervals before any
statistics run, so lost messages do not distort the estimate.

All times are integer microseconds at the interface; intervals are floats
internally because gap filling divides.
"""

from __future__ import annotations

import heapq
import math
import statistics
from collections import deque
from dataclasses import dataclass, field

from .core import NodeAddr, SimTime, counter_gap

DEFAULT_WINDOW = 10
DEFAULT_DEVIATION_US = 1_000_000
# two-sided 50% critical value of Student's t with window-1 = 9 dof; the
# estimate is adopted when the window mean is this close to its median
DEFAULT_T_CRITICAL = 0.703


@dataclass(frozen=True, slots=True)
class RmipConfig:
    window: int = DEFAULT_WINDOW
    deviation_us: int = DEFAULT_DEVIATION_US
    t_critical: float = DEFAULT_T_CRITICAL
    grace_us: int | None = None  # defaults to deviation_us
    gap_reset: int = 64  # counter jump treated as a node reset

    @property
    def effective_grace_us(self) -> int:
        return self.deviation_us if self.grace_us is None else self.grace_us


@dataclass(frozen=True, slots=True)
class IntervalEstimated:
    node: NodeAddr
    delta_us: float


@dataclass(frozen=True, slots=True)
class ChangeDetected:
    node: NodeAddr
    at: SimTime
    old_delta_us: float


@dataclass(frozen=True, slots=True)
class NodeReset:
    node: NodeAddr


@dataclass(frozen=True, slots=True)
class MissingReport:
    node: NodeAddr
    expected_at: SimTime
    last_counter: int
    last_arrival: SimTime


def fill_missing(
    last_counter: int,
    last_arrival: SimTime,
    counter: int,
    arrival: SimTime,
    gap_reset: int = 64,
) -> list[int] | None:
    """Equal synthetic inter-arrival times across a counter gap.

    Returns one interval per counter step (a single real interval when
    nothing was missed), an empty list for duplicates or non-advancing
    arrivals, and None when the gap exceeds gap_reset and the node should
    be treated as rebooted.
    """
    gap = counter_gap(last_counter, counter)
    if gap == 0 or arrival <= last_arrival:
        return []
    if gap > gap_reset:
        return None
    # integer split with the remainder spread over the first intervals, so
    # the synthetic intervals always sum to the real span exactly
    base, rem = divmod(arrival - last_arrival, gap)
    return [base + 1] * rem + [base] * (gap - rem)


def estimate_interval(
    samples: list[float], t_critical: float = DEFAULT_T_CRITICAL
) -> tuple[float, bool]:
    """Median of the window plus a mean-vs-median plausibility gate.

    The median (lower of the two middle values for even windows) is adopted
    only when a one-sample t statistic of the window mean against it stays
    within t_critical; a zero-variance window is accepted immediately.
    """
    median = statistics.median_low(samples)
    if len(samples) < 2:
        return median, True
    std = statistics.stdev(samples)
    if std == 0.0:
        return median, True
    t = (statistics.fmean(samples) - median) * math.sqrt(len(samples)) / std
    return median, abs(t) <= t_critical


def update_anchor(
    anchor: SimTime,
    count_including_this: int,
    arrival: SimTime,
    delta_us: float,
) -> tuple[SimTime, int]:
    """Advance the schedule anchor when a message beats its expected time.

    count_including_this is how many counter steps the node has taken since
    the anchor message, counting the one that just arrived.  Returns the new
    (anchor, steps-since-anchor) pair.
    """
    if arrival - anchor < count_including_this * delta_us:
        return arrival, 0
    return anchor, count_including_this


@dataclass(slots=True)
class NodeState:
    node: NodeAddr
    last_counter: int = 0
    last_arrival: SimTime | None = None
    buffer: deque = field(default_factory=deque)
    delta_us: float | None = None
    anchor: SimTime = 0
    anchor_count: int = 0
    deviation_run: int = 0
    missed_reported: int = 0

    def expected_next_us(self, grace_us: int) -> SimTime | None:
        """Deadline after which the next un-heard message counts as missing."""
        if self.delta_us is None or self.last_arrival is None:
            return None
        steps = self.anchor_count + 1 + self.missed_reported
        return int(self.anchor + steps * self.delta_us) + grace_us


class Predictor:
    """Per-node interval learning and missing-uplink detection."""

    def __init__(self, config: RmipConfig | None = None) -> None:
        self.config = config or RmipConfig()
        self.states: dict[NodeAddr, NodeState] = {}
        # (deadline, node) heap with lazy invalidation for cheap polling
        self._due: list[tuple[SimTime, NodeAddr]] = []

    def _reset(self, state: NodeState, counter: int, arrival: SimTime) -> None:
        state.last_counter = counter
        state.last_arrival = arrival
        state.buffer.clear()
        state.delta_us = None
        state.anchor = arrival
        state.anchor_count = 0
        state.deviation_run = 0
        state.missed_reported = 0

    def _push_due(self, state: NodeState) -> None:
        deadline = state.expected_next_us(self.config.effective_grace_us)
        if deadline is not None:
            heapq.heappush(self._due, (deadline, state.node))

    def observe(self, node: NodeAddr, counter: int, arrival: SimTime) -> list:
        """Feed one decoded uplink; returns the events it triggered."""
        cfg = self.config
        state = self.states.get(node)
        events: list = []
        if state is None:
            state = NodeState(node=node)
            self.states[node] = state
            self._reset(state, counter, arrival)
            return events

        intervals = fill_missing(
            state.last_counter, state.last_arrival, counter, arrival, cfg.gap_reset
        )
        if intervals is None:
            self._reset(state, counter, arrival)
            events.append(NodeReset(node))
            return events
        if not intervals:
            return events
        gap = len(intervals)

        estimated_here = False
        for interval in intervals:
            state.buffer.append(interval)
            if len(state.buffer) > cfg.window:
                state.buffer.popleft()
            if state.delta_us is not None:
                if abs(interval - state.delta_us) > cfg.deviation_us:
                    state.deviation_run += 1
                    if state.deviation_run >= cfg.window:
                        events.append(
                            ChangeDetected(node, arrival, state.delta_us)
                        )
                        state.delta_us = None
                        state.deviation_run = 0
                        median, ok = estimate_interval(
                            list(state.buffer), cfg.t_critical
                        )
                        if ok:
                            state.delta_us = median
                            estimated_here = True
                            events.append(IntervalEstimated(node, median))
                else:
                    state.deviation_run = 0
            elif len(state.buffer) == cfg.window:
                median, ok = estimate_interval(list(state.buffer), cfg.t_critical)
                if ok:
                    state.delta_us = median
                    estimated_here = True
                    events.append(IntervalEstimated(node, median))

        if state.delta_us is not None:
            if estimated_here:
                state.anchor = arrival
                state.anchor_count = 0
            else:
                state.anchor, state.anchor_count = update_anchor(
                    state.anchor,
                    state.anchor_count + gap,
                    arrival,
                    state.delta_us,
                )

        state.last_counter = counter
        state.last_arrival = arrival
        state.missed_reported = 0
        self._push_due(state)
        return events

    def poll_missing(self, now: SimTime) -> list[MissingReport]:
        """Expected-but-unseen uplinks whose grace period has passed.

        Each expected counter step is reported exactly once.
        """
        cfg = self.config
        reports: list[MissingReport] = []
        due = self._due
        while due and due[0][0] < now:
            _, node = heapq.heappop(due)
            state = self.states.get(node)
            if state is None:
                continue
            deadline = state.expected_next_us(cfg.effective_grace_us)
            if deadline is None:
                continue
            if deadline >= now:
                heapq.heappush(due, (deadline, node))
                continue
            reports.append(
                MissingReport(
                    node=node,
                    expected_at=deadline - cfg.effective_grace_us,
                    last_counter=state.last_counter,
                    last_arrival=state.last_arrival,
                )
            )
            state.missed_reported += 1
            self._push_due(state)
        return reports
