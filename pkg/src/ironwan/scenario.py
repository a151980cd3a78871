"""Scenario files: operator-facing descriptions of experiment sweeps.

A scenario file is a TOML document whose top-level keys map 1:1 onto
ScenarioConfig, with nested tables for the link model and the protocol
sub-configurations, plus a [sweep] table of axes to cross (systems,
gateway counts, loads, retransmission limits, seeds).  Unknown keys are
rejected everywhere so a typo fails loudly instead of silently running
defaults.  `reference_path()` points at a shipped file that documents
every key and its default inline.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .core import ConfigError
from .gateway import GatewayConfig
from .interpred import InterPredConfig
from .netsim import ScenarioConfig
from .phy import LinkModel
from .rmip import RmipConfig

__all__ = ["Sweep", "load_scenario", "cell_label", "reference_path"]

# nested tables and the dataclasses they populate
_TABLES = {
    "link": LinkModel,
    "rmip": RmipConfig,
    "interpred": InterPredConfig,
    "gateway": GatewayConfig,
}

# [sweep] axis name -> ScenarioConfig field it drives
_AXES = {
    "system": "system",
    "gateways": "gateway_count",
    "load": "load",
    "retx_limit": "retx_limit",
    "seeds": "seed",
}

_TUPLE_KEYS = ("gateway_networks", "node_networks")


def _build_table(cls, table: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {where}")
    return cls(**table)


def cell_label(config: ScenarioConfig) -> str:
    """Stable filename-safe identifier for one sweep cell and seed."""
    return (
        f"{config.system}_g{config.gateway_count}_l{config.load:g}"
        f"_r{config.retx_limit}_s{config.seed}"
    )


@dataclass(frozen=True, slots=True)
class Sweep:
    """A parsed scenario file, expanded into runnable cells.

    `cells` holds (label, config) pairs in a stable order: axes vary
    slowest-to-fastest as system, gateway count, load, retransmission
    limit, then seed, so metrics rows group naturally per cell.
    """

    cells: tuple[tuple[str, ScenarioConfig], ...]

    @property
    def labels(self) -> list[str]:
        return [label for label, _ in self.cells]


def load_scenario(path) -> Sweep:
    """Parse and validate a scenario file; raises ConfigError on bad input."""
    text = Path(path).read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    sweep_table = raw.pop("sweep", {})
    if not isinstance(sweep_table, dict):
        raise ConfigError("'sweep' must be a table of axis lists")
    for key in sweep_table:
        if key not in _AXES:
            raise ConfigError(f"unknown key '{key}' in [sweep]")

    scenario_fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    base: dict = {}
    for key, value in raw.items():
        if key in _TABLES:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a table")
            base[key] = _build_table(_TABLES[key], value, f"[{key}]")
        elif key in scenario_fields:
            base[key] = value
        else:
            raise ConfigError(f"unknown key '{key}' in scenario file")

    if "gateway_positions" in base:
        base["gateway_positions"] = tuple(
            tuple(point) for point in base["gateway_positions"]
        )
    for key in _TUPLE_KEYS:
        if key in base:
            base[key] = tuple(base[key])

    axes: dict[str, list] = {}
    for axis, field in _AXES.items():
        values = sweep_table.get(axis)
        if values is None:
            values = [base.pop(field)] if field in base else [None]
        else:
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis '{axis}' must be a non-empty list")
            if field in base:
                raise ConfigError(
                    f"'{field}' given both at top level and in [sweep]"
                )
        axes[axis] = values

    cells = []
    for system, gateways, load, retx, seed in itertools.product(
        axes["system"], axes["gateways"], axes["load"],
        axes["retx_limit"], axes["seeds"],
    ):
        overrides = {
            field: value
            for field, value in (
                ("system", system),
                ("gateway_count", gateways),
                ("load", load),
                ("retx_limit", retx),
                ("seed", seed),
            )
            if value is not None
        }
        config = ScenarioConfig(**base, **overrides)
        cells.append((cell_label(config), config))
    return Sweep(cells=tuple(cells))


def reference_path() -> Path:
    """The shipped scenario file documenting every key and default."""
    return Path(__file__).parent / "data" / "reference.toml"
