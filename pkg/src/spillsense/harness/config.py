"""Scenario configuration: nested dataclasses mirrored by a YAML file."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..domain import GridSpec, TimeGrid
from ..flow import BoundarySpec, DriftModel, SyntheticForcing
from ..placement import DescentConfig, PenaltyParams, WeightingConfig
from ..uncertainty import UncertaintyParams

STRATEGIES = ("none", "industry", "industry-no-velocity", "model-based")
HOUR = 3600.0


class ConfigValidationError(ValueError):
    pass


@dataclass
class GridConfig:
    n_x: int = 48
    n_y: int = 48
    dx: float = 1000.0
    dy: float = 1000.0
    # land: rows of cells along the north edge, plus optional rectangles [i0, i1, j0, j1)
    coast_rows: int = 3
    islands: list = field(default_factory=lambda: [[30, 33, 8, 11]])

    def build(self) -> GridSpec:
        land = np.zeros((self.n_x, self.n_y), bool)
        if self.coast_rows:
            land[:, self.n_y - self.coast_rows:] = True
        for i0, i1, j0, j1 in self.islands:
            land[i0:i1, j0:j1] = True
        return GridSpec(self.n_x, self.n_y, self.dx, self.dy, (0.0, 0.0), land)


@dataclass
class TimeConfig:
    t0: float = 0.0
    tf: float = 19 * HOUR
    dt: float = 60.0
    # flow and uncertainty fields are advanced every this many ticks
    flow_every: int = 5

    def build(self) -> TimeGrid:
        return TimeGrid(self.t0, self.tf, self.dt)


@dataclass
class SpillConfig:
    point: tuple = (12000.0, 22000.0)
    volume: float = 100 * 0.158987  # 100 barrels in m^3
    n_particles: int = 2000
    realizations: int = 8
    spread: float = 1000.0


@dataclass
class ForcingConfig:
    current: tuple = (0.05, 0.02)
    vortex_amplitude: float = 0.08
    tide_amplitude: float = 0.3
    tide_period: float = 12.42 * HOUR
    tide_phase: float = 0.0
    tide_angle: float = 0.5
    wind: tuple = (3.0, 1.0)
    wind_veer: float = 0.0

    def build(self, include_tide: bool) -> SyntheticForcing:
        return SyntheticForcing(tuple(self.current), self.vortex_amplitude, self.tide_amplitude,
                                self.tide_period, self.tide_phase, self.tide_angle, include_tide,
                                tuple(self.wind), self.wind_veer)


@dataclass
class FlowConfig:
    viscosity: float = 100.0
    relax_time: float = 1800.0
    bc: tuple = ("inflow", "outflow", "outflow", "outflow")  # west, east, south, north

    def boundary(self) -> BoundarySpec:
        return BoundarySpec(*self.bc)


@dataclass
class DriftConfig:
    current_factor: float = 1.0
    wind_factor: float = 0.03
    wave_factor: float = 1.0
    wave_fraction: float = 0.01
    dh_value: float = 5.0

    def build(self) -> DriftModel:
        return DriftModel(self.current_factor, self.wind_factor, self.wave_factor,
                          self.wave_fraction, "constant", self.dh_value)


@dataclass
class FleetConfig:
    n_p: int = 4
    v_sensor: float = 26.8224
    radius: float = 1000.0
    reading_interval: float = 900.0
    t_on: float = 1 * HOUR
    t_off: float = 15 * HOUR
    start: tuple = (6000.0, 6000.0)
    k_s: float = 0.8


@dataclass
class PlanConfig:
    horizons: tuple = (1, 2, 4)
    n_sub: int = 1
    max_iters: int = 12
    zeta_g: float = 1e-3
    w_v: float = 1.0
    w_m: float = 1.0
    w_e: float = 1.0
    weights: tuple = (1.0, 1.0, 1.0, 1.0)   # k_pov, k_se, k_pdmd, k_domain


@dataclass
class RomConfig:
    n_z: int = 5
    window: int = 48
    stabilize: bool = True
    k_id: float = 0.5
    n_select: int = 8
    kernel_length: float = 20000.0
    r_meas: float = 4e-4
    injection_gain: float = 1.0


@dataclass
class BaselineConfig:
    overlap: float = 0.10
    replan_period: float = 1 * HOUR
    presence_floor: float = 0.01


@dataclass
class MeasurementConfig:
    velocity_noise: float = 0.02
    oil_noise: float = 0.0


@dataclass
class OutputConfig:
    snapshot_every: int = 60
    plots: bool = True
    presence_threshold: float = 0.05


@dataclass
class ScenarioConfig:
    seed: int = 0
    strategies: tuple = STRATEGIES
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    spill: SpillConfig = field(default_factory=SpillConfig)
    truth: ForcingConfig = field(default_factory=ForcingConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    fleet: FleetConfig = field(default_factory=FleetConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    rom: RomConfig = field(default_factory=RomConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    measurement: MeasurementConfig = field(default_factory=MeasurementConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    # the test model drops the tide; set to true for an identical-twin control run
    test_includes_tide: bool = False

    # ---- derived objects
    def grid_spec(self) -> GridSpec:
        return self.grid.build()

    def truth_forcing(self) -> SyntheticForcing:
        return self.truth.build(True)

    def test_forcing(self) -> SyntheticForcing:
        return self.truth.build(self.test_includes_tide)

    def uncertainty_params(self) -> UncertaintyParams:
        f = self.fleet
        return UncertaintyParams(nu=10.0, zeta=0.95, k_s=f.k_s, r=f.radius, v_sensor=f.v_sensor,
                                 dt_ref=self.time.dt, injection_gain=self.rom.injection_gain)

    def penalty_params(self) -> PenaltyParams:
        p = self.plan
        return PenaltyParams(self.fleet.v_sensor, self.fleet.reading_interval, self.fleet.radius,
                             p.w_v, p.w_m, p.w_e)

    def descent_config(self) -> DescentConfig:
        return DescentConfig(zeta_g=self.plan.zeta_g, max_iters=self.plan.max_iters)

    def weighting(self) -> WeightingConfig:
        return WeightingConfig(*self.plan.weights)

    # ---- validation
    def validate(self) -> "ScenarioConfig":
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigValidationError(f"unknown strategies {bad}")
        if not self.strategies:
            raise ConfigValidationError("no strategies selected")
        t, f = self.time, self.fleet
        if not (t.tf > t.t0 and t.dt > 0 and t.flow_every >= 1):
            raise ConfigValidationError("invalid time window")
        if not (t.t0 <= f.t_on < f.t_off <= t.tf):
            raise ConfigValidationError("sensor active window must lie inside the simulation window")
        ri = f.reading_interval / t.dt
        if abs(ri - round(ri)) > 1e-9 or round(ri) % t.flow_every:
            raise ConfigValidationError("reading interval must be a multiple of the flow step")
        if f.n_p < 1 or not f.radius > 0 or not f.v_sensor > 0:
            raise ConfigValidationError("invalid fleet")
        s = self.spill
        if s.n_particles < 1 or s.realizations < 1 or not s.volume > 0:
            raise ConfigValidationError("invalid spill")
        if self.rom.n_z < 1 or self.rom.window < self.rom.n_z + 2:
            raise ConfigValidationError("ROM window must hold at least n_z + 2 snapshots")
        if not self.plan.horizons:
            raise ConfigValidationError("need at least one planning horizon")
        if not 0 <= self.baseline.overlap < 1:
            raise ConfigValidationError("overlap must lie in [0, 1)")
        if min(self.plan.weights) < 0 or sum(self.plan.weights) <= 0:
            raise ConfigValidationError("weights must be non-negative with a positive sum")
        g = self.grid_spec()
        x0, x1, y0, y1 = g.bounds
        for name, p in (("spill point", s.point), ("fleet start", f.start)):
            if not (x0 <= p[0] <= x1 and y0 <= p[1] <= y1):
                raise ConfigValidationError(f"{name} outside the grid")
        self.flow.boundary()
        self.drift.build()
        self.uncertainty_params()
        return self


# -- (de)serialisation ------------------------------------------------------

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(x) for x in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return str(obj)
    return obj


def to_dict(cfg: ScenarioConfig) -> dict:
    return _to_plain(cfg)


def _build(cls, data):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigValidationError(f"expected a mapping for {cls.__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigValidationError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kw = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kw[name] = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            kw[name] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            kw[name] = value
    return cls(**kw)


def from_dict(data: dict) -> ScenarioConfig:
    return _build(ScenarioConfig, data).validate()


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))
