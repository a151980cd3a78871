"""Sweep execution and the result tree it writes."""

import json

import pytest

from ironwan.netsim import RunMetrics
from ironwan.report import run_sweep, summarise
from ironwan.scenario import load_scenario

SMALL = """
node_count = 16
gateway_count = 2
networks = 1
gateway_networks = [0, 0]
duration_s = 1800
period_s = 300

[sweep]
seeds = [1, 2]
"""


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("sweep")
    scenario = root / "scenario.toml"
    scenario.write_text(SMALL)
    out = root / "out"
    csv_path = run_sweep(load_scenario(scenario), out)
    return out, csv_path


def test_metrics_csv_shape(sweep_dir):
    _, csv_path = sweep_dir
    lines = csv_path.read_text().splitlines()
    assert lines[0] == RunMetrics.CSV_FIELDS
    assert len(lines) == 3
    for line in lines[1:]:
        assert len(line.split(",")) == len(RunMetrics.CSV_FIELDS.split(","))


def test_per_seed_artifacts(sweep_dir):
    out, _ = sweep_dir
    for seed in (1, 2):
        label = f"lorawan_g2_l0.5_r8_s{seed}"
        events = (out / "events" / f"{label}.jsonl").read_text().splitlines()
        assert events
        for line in events[:50]:
            json.loads(line)
        blob = json.loads((out / "runs" / f"{label}.json").read_text())
        assert blob["seed"] == seed
        assert "per_node" in blob


def test_summary_groups_seeds(sweep_dir):
    out, _ = sweep_dir
    summary = json.loads((out / "summary.json").read_text())
    assert list(summary) == ["lorawan_g2_l0.5_r8"]
    cell = summary["lorawan_g2_l0.5_r8"]
    assert cell["seeds"] == [1, 2]
    stats = cell["pdr_mean"]
    assert stats["min"] <= stats["mean"] <= stats["max"]
    assert stats["q1"] <= stats["median"] <= stats["q3"]


def test_figures_rendered(sweep_dir):
    out, _ = sweep_dir
    for name in ("pdr_mean.png", "unique_per_node.png"):
        path = out / "figures" / name
        assert path.stat().st_size > 0


def test_rerun_is_byte_identical(sweep_dir, tmp_path):
    out, csv_path = sweep_dir
    scenario = tmp_path / "scenario.toml"
    scenario.write_text(SMALL)
    again = run_sweep(load_scenario(scenario), tmp_path / "out")
    assert again.read_bytes() == csv_path.read_bytes()


def test_threads_match_inline(sweep_dir, tmp_path):
    _, csv_path = sweep_dir
    scenario = tmp_path / "scenario.toml"
    scenario.write_text(SMALL)
    threaded = run_sweep(load_scenario(scenario), tmp_path / "out", threads=2)
    assert threaded.read_bytes() == csv_path.read_bytes()


def test_summarise_single_row_degenerate_quartiles():
    metrics, = [m for _, m in _tiny_rows()]
    summary = summarise([("x_g1_l0.5_r8_s1", metrics)])
    stats = summary["x_g1_l0.5_r8"]["pdr_mean"]
    assert stats["q1"] == stats["median"] == stats["q3"] == stats["mean"]


def _tiny_rows():
    metrics = RunMetrics(
        system="lorawan", seed=1, node_count=1, networks=1, gateway_count=1,
        load=0.5, duration_s=60, retx_limit=8, generated=1, unique_total=1,
        unique_per_node=1.0, pdr_mean=0.5, pdr_min=0.5, no_retx_mean=0.0,
        overhead=0, g2g_messages=0, band1_downlinks=0, wcs_relays=0,
        recovered_uplinks=0, g2g_starved=0, ack_abandoned=0, malformed_g2g=0,
        acks_sent=0, acks_dropped=0, duty_violations=0,
    )
    return [("x_g1_l0.5_r8_s1", metrics)]
