"""Experiment configuration: metric, grid, flow and per-experiment blocks plus a seed."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..flow import DEFAULT_HORIZON, DEFAULT_STEP, MAX_STEP, SAMPLE_SPACING
from ..geometry.grid import MIN_RESOLUTION, Grid
from ..geometry.metric import MetricField

BUMPY_DEFAULT = [[1, 0, 0.15, 0.0], [0, 1, 0.0, 0.1], [1, 1, 0.05, 0.0]]

GRID_DEFAULTS = {"resolution": 256, "halfwidth": 40.0, "max_cells": 2_000_000}
FLOW_DEFAULTS = {"step": DEFAULT_STEP, "spacing": SAMPLE_SPACING, "horizon": DEFAULT_HORIZON}

EXPERIMENT_DEFAULTS = {
    "geodesic": {"x": [0.0, 0.0], "theta": 0.0, "T": 10.0},
    "minimal": {"direction": "0/1", "span": 20.0, "count": 1},
    "hedlund": {"directions": [0.0, 0.4636476090008061, 0.7853981633974483, 1.1071487177940904,
                               0.5535743588970452], "span": 20.0},
    "entropy": {"eps": 0.5, "T_list": [5.0, 10.0, 20.0, 40.0], "population": 12},
    "spanning": {"eps": 0.5, "r_list": [5.0, 10.0, 20.0, 40.0], "witnesses": 30, "witness_r": [10.0, 20.0]},
    "tube": {"center_direction": [0.0, 0.6180339887498949, 0.7853981633974483, 1.2, 2.0344439357957027],
             "mu": None, "delta": 0.1, "T_list": [5.0, 10.0, 20.0, 40.0], "T_max": 60.0,
             "triangle_deltas": [0.1, 0.2], "triangles": 24},
}
EXPERIMENTS = tuple(EXPERIMENT_DEFAULTS) + ("metric-info", "full")


def _merge(defaults: dict, given: dict, where: str) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def parse_direction(value) -> float:
    """Angle from a float, a numeric string or a rational slope 'p/q' (rise p over run q)."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    if "/" in text:
        p, q = text.split("/", 1)
        try:
            return math.atan2(float(p), float(q))
        except ValueError as exc:
            raise ConfigError(f"bad direction {value!r}") from exc
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad direction {value!r}") from exc


@dataclass
class ExperimentConfig:
    metric: dict = field(default_factory=lambda: {"type": "flat", "coeffs": []})
    grid: dict = field(default_factory=dict)
    flow: dict = field(default_factory=dict)
    experiment: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.metric, dict):
            raise ConfigError("metric block must be an object")
        MetricField.from_dict(self.metric)
        self.grid = _merge(GRID_DEFAULTS, self.grid or {}, "grid")
        res = self.grid["resolution"]
        if not isinstance(res, int) or res < MIN_RESOLUTION:
            raise ConfigError(f"grid resolution must be an integer >= {MIN_RESOLUTION}")
        if not float(self.grid["halfwidth"]) > 0:
            raise ConfigError("grid halfwidth must be positive")
        self.flow = _merge(FLOW_DEFAULTS, self.flow or {}, "flow")
        if not 0 < float(self.flow["step"]) <= MAX_STEP:
            raise ConfigError(f"flow step must lie in (0, {MAX_STEP}]")
        if not float(self.flow["spacing"]) > 0:
            raise ConfigError("flow spacing must be positive")
        unknown = set(self.experiment or {}) - set(EXPERIMENT_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown experiment blocks: {sorted(unknown)}")
        self.experiment = {
            name: _merge(EXPERIMENT_DEFAULTS[name], (self.experiment or {}).get(name, {}), name)
            for name in EXPERIMENT_DEFAULTS
        }
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")

    # building blocks

    def build_metric(self) -> MetricField:
        return MetricField.from_dict(self.metric)

    def build_grid(self) -> Grid:
        g = self.grid
        return Grid(self.build_metric(), int(g["resolution"]), float(g["halfwidth"]), int(g["max_cells"]))

    def block(self, name: str) -> dict:
        return self.experiment[name]

    # serialisation

    def to_dict(self) -> dict:
        return {"metric": copy.deepcopy(self.metric), "grid": dict(self.grid), "flow": dict(self.flow),
                "experiment": copy.deepcopy(self.experiment), "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(data) - {"metric", "grid", "flow", "experiment", "seed"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        return cls(
            metric=data.get("metric", {"type": "flat", "coeffs": []}),
            grid=data.get("grid", {}),
            flow=data.get("flow", {}),
            experiment=data.get("experiment", {}),
            seed=data.get("seed", 0),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
