"""Scenario file parsing and sweep expansion."""

import pytest

from ironwan.core import ConfigError
from ironwan.scenario import cell_label, load_scenario, reference_path


def write(tmp_path, text):
    path = tmp_path / "scenario.toml"
    path.write_text(text)
    return path


def test_reference_file_parses():
    sweep = load_scenario(reference_path())
    assert len(sweep.cells) == 5
    for label, config in sweep.cells:
        assert config.system == "lorawan"
        assert config.gateway_count == 6
        assert config.load == 0.5
        assert label == f"lorawan_g6_l0.5_r8_s{config.seed}"
    assert [c.seed for _, c in sweep.cells] == [1, 2, 3, 4, 5]


def test_axis_order_system_slowest(tmp_path):
    path = write(
        tmp_path,
        """
        node_count = 12
        [sweep]
        system = ["lorawan", "wcs"]
        load = ["low", "high"]
        seeds = [1, 2]
        """,
    )
    sweep = load_scenario(path)
    assert len(sweep.cells) == 8
    systems = [c.system for _, c in sweep.cells]
    assert systems == ["lorawan"] * 4 + ["wcs"] * 4
    seeds = [c.seed for _, c in sweep.cells]
    assert seeds == [1, 2] * 4
    assert all(c.node_count == 12 for _, c in sweep.cells)


def test_load_names_normalised(tmp_path):
    path = write(tmp_path, 'load = "high"\n[sweep]\nseeds = [3]\n')
    sweep = load_scenario(path)
    (label, config), = sweep.cells
    assert config.load == 0.9
    assert "_l0.9_" in label


def test_unknown_top_level_key_rejected(tmp_path):
    path = write(tmp_path, "node_cuont = 100\n")
    with pytest.raises(ConfigError, match="node_cuont"):
        load_scenario(path)


def test_unknown_sweep_axis_rejected(tmp_path):
    path = write(tmp_path, "[sweep]\nperiods = [60, 120]\n")
    with pytest.raises(ConfigError, match="periods"):
        load_scenario(path)


def test_unknown_table_key_rejected(tmp_path):
    path = write(tmp_path, "[rmip]\nwindwo = 10\n")
    with pytest.raises(ConfigError, match="windwo"):
        load_scenario(path)


def test_axis_conflict_rejected(tmp_path):
    path = write(tmp_path, 'load = "low"\n[sweep]\nload = ["low", "high"]\n')
    with pytest.raises(ConfigError, match="load"):
        load_scenario(path)


def test_empty_axis_rejected(tmp_path):
    path = write(tmp_path, "[sweep]\nseeds = []\n")
    with pytest.raises(ConfigError, match="seeds"):
        load_scenario(path)


def test_scalar_axis_rejected(tmp_path):
    path = write(tmp_path, "[sweep]\nseeds = 3\n")
    with pytest.raises(ConfigError, match="seeds"):
        load_scenario(path)


def test_malformed_toml_reported_as_config_error(tmp_path):
    path = write(tmp_path, "node_count = = 3\n")
    with pytest.raises(ConfigError):
        load_scenario(path)


def test_network_patterns_become_tuples(tmp_path):
    path = write(
        tmp_path,
        """
        networks = 2
        gateway_networks = [0, 1, 0, 1, 0, 1]
        node_networks = [0, 1, 1]
        """,
    )
    (_, config), = load_scenario(path).cells
    assert config.gateway_networks == (0, 1, 0, 1, 0, 1)
    assert config.node_networks == (0, 1, 1)


def test_defaults_apply_without_sweep(tmp_path):
    path = write(tmp_path, "seed = 7\n")
    (label, config), = load_scenario(path).cells
    assert config.seed == 7
    assert config.node_count == 200
    assert config.retx_limit == 8
    assert label == cell_label(config)


def test_bad_table_value_rejected(tmp_path):
    path = write(tmp_path, 'link = "strong"\n')
    with pytest.raises(ConfigError, match="link"):
        load_scenario(path)


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_scenario("/nonexistent/scenario.toml")
