import random
import statistics

import pytest
import scipy.stats

from ironwan.rmip import (
    ChangeDetected,
    IntervalEstimated,
    MissingReport,
    NodeReset,
    Predictor,
    RmipConfig,
    estimate_interval,
    fill_missing,
    update_anchor,
)

S = 1_000_000  # microseconds per second


# -- gap filling --------------------------------------------------------------


def test_fill_single_interval():
    assert fill_missing(5, 0, 6, 180 * S) == [180 * S]


def test_fill_splits_gap_evenly():
    assert fill_missing(5, 0, 7, 360 * S) == [180 * S, 180 * S]


def test_fill_duplicate_counter():
    assert fill_missing(5, 100, 5, 200) == []


def test_fill_non_advancing_arrival():
    assert fill_missing(5, 200, 6, 200) == []


def test_fill_wraps_counter():
    assert fill_missing(65_534, 0, 2, 400 * S) == [100 * S] * 4


def test_fill_gap_reset_boundary():
    assert len(fill_missing(0, 0, 64, 640 * S)) == 64
    assert fill_missing(0, 0, 65, 650 * S) is None


def test_fill_conservation_exact():
    # synthetic intervals are integers that sum to the real span exactly
    rng = random.Random(7)
    for _ in range(500):
        gap = rng.randrange(1, 65)
        span = rng.randrange(1, 3_000 * S)
        intervals = fill_missing(0, 0, gap, span)
        assert len(intervals) == gap
        assert sum(intervals) == span
        assert max(intervals) - min(intervals) <= 1


# -- interval estimation -------------------------------------------------------


def test_estimate_zero_variance_accepts():
    median, ok = estimate_interval([180.0 * S] * 10)
    assert median == 180.0 * S
    assert ok


def test_estimate_single_outlier_rejected():
    # one outlier in ten puts the t statistic at exactly 1.0 > 0.703,
    # whatever the outlier magnitude
    median, ok = estimate_interval([180.0 * S] * 9 + [900.0 * S])
    assert median == 180.0 * S
    assert not ok


def test_estimate_symmetric_noise_accepts():
    samples = [100.0] * 8 + [97.0, 103.0]
    median, ok = estimate_interval(samples)
    assert median == 100.0
    assert ok


def test_estimate_even_window_takes_lower_middle():
    median, _ = estimate_interval([1.0, 2.0, 3.0, 4.0])
    assert median == 2.0


def test_estimate_agrees_with_reference_t_test():
    # decision matches an independently computed one-sample t statistic
    rng = random.Random(42)
    checked = 0
    for _ in range(400):
        n = rng.randrange(4, 16)
        samples = [rng.uniform(50.0, 200.0) for _ in range(n)]
        median = statistics.median_low(samples)
        t = scipy.stats.ttest_1samp(samples, median).statistic
        _, ok = estimate_interval(samples)
        assert ok == (abs(t) <= 0.703)
        checked += 1
    assert checked == 400


def test_estimate_jittered_stream():
    rng = random.Random(3)
    accepted = 0
    for _ in range(1000):
        samples = [180.0 + rng.uniform(0.0, 2.0) for _ in range(10)]
        median, ok = estimate_interval(samples)
        assert 180.0 <= median <= 182.0
        accepted += ok
    # taking the lower of the two middle values biases the median below the
    # mean, so roughly half the windows pass the gate; pinned for this seed
    assert accepted == 478


# -- anchor -------------------------------------------------------------------


def test_anchor_resets_on_early_arrival():
    assert update_anchor(0, 3, 500 * S, 180.0 * S) == (500 * S, 0)


def test_anchor_keeps_on_time_arrival():
    assert update_anchor(0, 3, 540 * S, 180.0 * S) == (0, 3)
    assert update_anchor(0, 3, 700 * S, 180.0 * S) == (0, 3)


def test_anchor_fixed_point_on_lossless_stream():
    anchor, count = 1_000, 0
    for k in range(1, 50):
        anchor, count = update_anchor(anchor, count + 1, 1_000 + k * 180 * S, 180.0 * S)
    assert anchor == 1_000
    assert count == 49


# -- observe ------------------------------------------------------------------


def _feed_periodic(pred, node, start_counter, n, period, t0):
    events = []
    for k in range(n):
        events.extend(pred.observe(node, (start_counter + k) % 65_536, t0 + k * period))
    return events


def test_observe_learns_after_window_fills():
    pred = Predictor()
    events = _feed_periodic(pred, 1, 0, 10, 180 * S, 0)
    assert events == []  # nine intervals so far
    events = pred.observe(1, 10, 1800 * S)
    assert events == [IntervalEstimated(1, 180 * S)]
    state = pred.states[1]
    assert state.delta_us == 180 * S
    assert state.anchor == 1800 * S
    assert state.anchor_count == 0


def test_observe_fill_keeps_schedule():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 11, 180 * S, 0)
    # counters 11 and 12 lost; 13 arrives on schedule
    events = pred.observe(1, 13, 13 * 180 * S)
    assert events == []
    state = pred.states[1]
    assert state.delta_us == 180 * S
    assert state.anchor_count == 3
    assert state.deviation_run == 0


def test_observe_duplicate_ignored():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 11, 180 * S, 0)
    before = pred.states[1].last_arrival
    assert pred.observe(1, 10, 1990 * S) == []
    assert pred.states[1].last_arrival == before


def test_observe_counter_jump_resets():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 11, 180 * S, 0)
    events = pred.observe(1, 200, 2000 * S)
    assert events == [NodeReset(1)]
    state = pred.states[1]
    assert state.delta_us is None
    assert len(state.buffer) == 0
    assert state.last_counter == 200


def test_observe_detects_period_change():
    pred = Predictor()
    # fifteen messages at 180 s, then the node switches to 300 s
    _feed_periodic(pred, 1, 0, 15, 180 * S, 0)
    t = 14 * 180 * S
    events = []
    for k in range(15, 26):
        t += 300 * S
        got = pred.observe(1, k, t)
        events.extend(got)
        if any(isinstance(e, ChangeDetected) for e in got):
            break
    assert events == [
        ChangeDetected(1, t, 180 * S),
        IntervalEstimated(1, 300 * S),
    ]
    assert k == 24  # tenth consecutive deviating interval
    assert pred.states[1].delta_us == 300 * S


def test_observe_single_outlier_does_not_change():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 12, 180 * S, 0)
    t_late = 11 * 180 * S + 190 * S  # one delayed message
    assert pred.observe(1, 12, t_late) == []
    assert pred.states[1].deviation_run == 1
    assert pred.observe(1, 13, 13 * 180 * S) == []
    assert pred.states[1].deviation_run == 2  # the 170 s interval also deviates
    assert pred.observe(1, 14, 14 * 180 * S) == []
    assert pred.states[1].deviation_run == 0


def test_observe_buffer_stays_bounded():
    pred = Predictor(RmipConfig(window=10))
    rng = random.Random(11)
    t, counter = 0, 0
    for _ in range(500):
        t += rng.randrange(1, 600 * S)
        counter = (counter + rng.randrange(1, 4)) % 65_536
        pred.observe(1, counter, t)
        assert len(pred.states[1].buffer) <= 10


# -- missing detection ----------------------------------------------------------


def _trained_predictor():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 11, 180 * S, 0)
    assert pred.states[1].delta_us == 180 * S
    return pred


def test_poll_before_grace_is_silent():
    pred = _trained_predictor()
    assert pred.poll_missing(1980 * S + 999_999) == []


def test_poll_reports_once_per_expected_slot():
    pred = _trained_predictor()
    reports = pred.poll_missing(1981 * S + 1)
    assert reports == [MissingReport(1, 1980 * S, 10, 1800 * S)]
    assert pred.poll_missing(1981 * S + 2) == []
    # next expected message 360 s after the anchor
    reports = pred.poll_missing(2161 * S + 1)
    assert reports == [MissingReport(1, 2160 * S, 10, 1800 * S)]


def test_poll_resets_after_arrival():
    pred = _trained_predictor()
    assert len(pred.poll_missing(1981 * S + 1)) == 1
    # the lost message's successor arrives on schedule
    assert pred.observe(1, 12, 2160 * S) == []
    assert pred.poll_missing(2341 * S) == []
    assert pred.poll_missing(2341 * S + 2) == [
        MissingReport(1, 2340 * S, 12, 2160 * S)
    ]


def test_poll_silent_without_estimate():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 5, 180 * S, 0)
    assert pred.poll_missing(10_000 * S) == []


def test_poll_multiple_nodes_sorted_by_deadline():
    pred = Predictor()
    _feed_periodic(pred, 1, 0, 11, 180 * S, 0)
    _feed_periodic(pred, 2, 0, 11, 60 * S, 0)
    reports = pred.poll_missing(3600 * S)
    nodes = [r.node for r in reports]
    assert nodes.count(2) > nodes.count(1)
    assert all(
        reports[i].expected_at <= reports[i + 1].expected_at or nodes[i] != nodes[i + 1]
        for i in range(len(reports) - 1)
    )
