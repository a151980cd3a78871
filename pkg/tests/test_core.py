import random

import pytest

from ironwan.core import (
    CHANNELS,
    COUNTER_MOD,
    ConfigError,
    Frame,
    FrameKind,
    RadioParams,
    Band,
    counter_gap,
    slot_of,
    slot_start,
)


def test_slot_of_boundaries():
    assert slot_of(0) == 0
    assert slot_of(99_999) == 0
    assert slot_of(100_000) == 1
    assert slot_start(7) == 700_000


def test_counter_gap_wraps():
    assert counter_gap(5, 6) == 1
    assert counter_gap(5, 5) == 0
    assert counter_gap(65_535, 0) == 1
    assert counter_gap(65_535, 2) == 3
    assert counter_gap(0, 65_535) == 65_535


def test_radio_params_validation():
    with pytest.raises(ConfigError):
        RadioParams(channel=0, sf=6)
    with pytest.raises(ConfigError):
        RadioParams(channel=0, sf=13)
    with pytest.raises(ConfigError):
        RadioParams(channel=0, sf=7, bandwidth=62_500)
    with pytest.raises(ConfigError):
        RadioParams(channel=99, sf=7)


def test_channel_bands():
    assert RadioParams(channel=0, sf=7).band == Band.BAND0
    assert RadioParams(channel=3, sf=12).band == Band.BAND1
    assert CHANNELS[3][0] == 869_525_000


def test_frame_counter_range():
    radio = RadioParams(channel=0, sf=7)
    with pytest.raises(ConfigError):
        Frame(
            kind=FrameKind.UPLINK,
            src=1,
            dst=0,
            network=0,
            counter=COUNTER_MOD,
            payload_len=10,
            radio=radio,
            tx_start=0,
            airtime_us=41_216,
        )


def _random_frame(rng: random.Random) -> Frame:
    return Frame(
        kind=rng.choice(list(FrameKind)),
        src=rng.randrange(1 << 32),
        dst=rng.randrange(1 << 32),
        network=rng.randrange(4),
        counter=rng.randrange(COUNTER_MOD),
        payload_len=rng.randrange(256),
        radio=RadioParams(
            channel=rng.randrange(len(CHANNELS)),
            sf=rng.randrange(7, 13),
            bandwidth=rng.choice((125_000, 250_000, 500_000)),
            tx_power_dbm=rng.choice((14.0, 27.0, 8.5)),
        ),
        tx_start=rng.randrange(1 << 40),
        airtime_us=rng.randrange(1, 3_000_000),
        needs_ack=rng.random() < 0.5,
        data=rng.randbytes(rng.randrange(40)),
    )


def test_frame_line_round_trip():
    rng = random.Random(20260816)
    for _ in range(300):
        frame = _random_frame(rng)
        line = frame.to_line()
        back = Frame.from_line(line)
        assert back == frame
        assert back.to_line() == line


def test_frame_line_field_count():
    rng = random.Random(1)
    line = _random_frame(rng).to_line()
    assert len(line.split(",")) == 14
    with pytest.raises(ValueError):
        Frame.from_line("UPLINK,1,2,3")
