"""The twin experiment: a tidal truth run feeds synthetic readings to tide-free test models."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..baseline import Measurement, ValueReplacementPolicy, follow_path, generate_ladder, value_replace
from ..domain import ScalarField, VectorField, locate_many, stack
from ..oil import entropy_neighborhood
from ..placement import (PlanningProblem, WaypointLog, excluded_cells, plan_receding_horizon,
                         weighting_field)
from ..rom import (KalmanState, default_noise, fit_dmd, interpolative_decomposition, kalman_step,
                   pdmd_weighting, scale_modes)
from ..uncertainty import (UncertaintyState, covariance_injection, sensor_mask, step_uncertainty,
                           variance_sources)
from .config import ScenarioConfig
from .metrics import MetricsSeries, oil_presence_error, presence_set, rms_current_error_where_oil
from .model import OceanModel

log = logging.getLogger(__name__)

N_FIELDS = 5  # stacked state: u_c, v_c, u_w, v_w, q


# -- measurements -----------------------------------------------------------

class TruthSampler:
    """Noisy point readings of the truth run, shared by every strategy.

    The noise at a given tick is one fixed field drawn from ``(seed, tick)``,
    so two strategies reading the same cell at the same tick see the same value.
    """

    def __init__(self, truth: OceanModel, cfg: ScenarioConfig):
        self.truth = truth
        self.cfg = cfg
        self._tick = None
        self._noise = None
        self._volume = None

    def begin_tick(self, tick: int) -> None:
        self._tick = tick
        self._noise = None
        self._volume = None

    def _noise_fields(self):
        if self._noise is None:
            rng = np.random.default_rng([self.cfg.seed, 7919, self._tick])
            self._noise = rng.standard_normal((3,) + self.truth.grid.shape)
        return self._noise

    def footprint_cells(self, P) -> np.ndarray:
        g = self.truth.grid
        X, Y = g.centers()
        r2 = self.cfg.fleet.radius ** 2
        m = np.zeros(g.shape, bool)
        for px, py in np.atleast_2d(P):
            m |= (X - px) ** 2 + (Y - py) ** 2 <= r2
        m &= ~g.land_mask
        return np.flatnonzero(m)

    def sensor_cells(self, P) -> np.ndarray:
        g = self.truth.grid
        P = np.atleast_2d(P)
        i, j = locate_many(g, P[:, 0], P[:, 1])
        c = i * g.n_y + j
        return np.unique(c[~g.land_mask.ravel()[c]])

    def measure(self, P) -> Measurement:
        n = self._noise_fields()
        sd_u = self.cfg.measurement.velocity_noise
        sd_o = self.cfg.measurement.oil_noise
        if self._volume is None:
            self._volume = self.truth.mean_cell_volume().ravel()
        oc = self.footprint_cells(P)
        vol = self._volume[oc]
        if sd_o > 0:
            vol = np.maximum(vol + sd_o * n[2].ravel()[oc], 0.0)
        vc = self.sensor_cells(P)
        U = self.truth.current
        W = self.truth.wind
        return Measurement(oc, vol, vc,
                           U.u.values.ravel()[vc] + sd_u * n[0].ravel()[vc],
                           U.v.values.ravel()[vc] + sd_u * n[1].ravel()[vc],
                           W.u.values.ravel()[vc], W.v.values.ravel()[vc])


# -- strategies -------------------------------------------------------------

class Strategy:
    name = "none"

    def __init__(self, cfg: ScenarioConfig, grid):
        self.cfg = cfg
        self.grid = grid
        self.model = OceanModel(cfg, cfg.test_forcing(), grid)
        self.positions = None
        self.J = math.nan
        self.waypoints = WaypointLog()

    def active(self, t: float) -> bool:
        f = self.cfg.fleet
        return f.t_on <= t < f.t_off

    def on_flow_step(self, tick: int, t: float, dt: float) -> None:
        """Called just before the flow layer advances."""

    def after_tick(self, tick: int, t: float, sampler: TruthSampler) -> None:
        """Called after particles reach ``t``."""


class IndustryStrategy(Strategy):
    """Ladder survey, hourly replanning, readings every tick, value replacement."""

    def __init__(self, cfg, grid, velocity: bool = True):
        super().__init__(cfg, grid)
        self.name = "industry" if velocity else "industry-no-velocity"
        self.policy = ValueReplacementPolicy("replace-in-place" if velocity else "none")
        self.plan = None
        self.plan_t = None
        self.cycle = -1

    def after_tick(self, tick, t, sampler):
        cfg = self.cfg
        if not self.active(t):
            if t >= cfg.fleet.t_off:
                self.positions = None
            return
        if self.plan is None or t - self.plan_t >= cfg.baseline.replan_period - 1e-9:
            start = self.positions if self.positions is not None else \
                np.repeat(np.asarray(cfg.fleet.start, float)[None], cfg.fleet.n_p, axis=0)
            self.plan = generate_ladder(self.model.presence(), 2 * cfg.fleet.radius, cfg.baseline.overlap,
                                        cfg.fleet.n_p, cfg.baseline.presence_floor,
                                        release_point=cfg.spill.point, start_positions=start,
                                        replan_period=cfg.baseline.replan_period)
            self.plan_t = t
            self.cycle += 1
        self.positions = follow_path(self.plan, cfg.fleet.v_sensor, t - self.plan_t)
        self.waypoints.add(self.cycle, t, self.positions)
        meas = sampler.measure(self.positions)
        ens, U = value_replace(self.model.ensembles, self.model.current, meas, self.policy,
                               self.model.particle_volume)
        self.model.ensembles = ens
        if self.policy.velocity_mode != "none":
            self.model.set_current(U)


def _spread(values, cells, grid, length: float) -> np.ndarray:
    """Shepard (normalised Gaussian) interpolation of point values to every cell."""
    X, Y = grid.centers()
    cx, cy = X.ravel()[cells], Y.ravel()[cells]
    d2 = (X.ravel()[:, None] - cx[None]) ** 2 + (Y.ravel()[:, None] - cy[None]) ** 2
    w = np.exp(-d2 / (2 * length**2))
    w /= np.maximum(w.sum(axis=1, keepdims=True), 1e-300)
    return np.where(grid.land_mask, 0.0, (w @ np.asarray(values, float)).reshape(grid.shape))


class ModelBasedStrategy(Strategy):
    """Adjoint-planned sensors, DMD reduced model and a modal Kalman filter."""

    name = "model-based"

    def __init__(self, cfg, grid):
        super().__init__(cfg, grid)
        self.params = cfg.uncertainty_params()
        self.unc = UncertaintyState.zeros(grid)
        self.excluded = excluded_cells(grid)
        self.snapshots: list[np.ndarray] = []
        self.rom = None
        self.kf: KalmanState | None = None
        self.selection = None
        self.start = np.repeat(np.asarray(cfg.fleet.start, float)[None], cfg.fleet.n_p, axis=0)
        self.next_positions = None
        self.cycle = -1
        self.reading_ticks = int(round(cfg.fleet.reading_interval / cfg.time.dt))

    # ---- state vector
    def state_vector(self) -> np.ndarray:
        m = self.model
        return stack([m.current.u, m.current.v, m.wind.u, m.wind.v, self.unc.q])

    def _field(self, x, block):
        n = self.grid.n_cells
        return x[block * n:(block + 1) * n].reshape(self.grid.shape)

    def _install(self, x_now, x_next) -> None:
        g = self.grid
        self.model.set_current(VectorField.from_arrays(self._field(x_now, 0), self._field(x_now, 1), g))
        if x_next is not None:
            self.model.target_override = VectorField.from_arrays(self._field(x_next, 0),
                                                                 self._field(x_next, 1), g)

    # ---- uncertainty
    def on_flow_step(self, tick, t, dt):
        U, D_h = self.model.drift()
        inj = None
        if self.kf is not None and self.rom is not None:
            inj = covariance_injection(self.kf.P, self.rom.U, self.grid, self.params.injection_gain)
        src = variance_sources(D_h, U, self.params, inj)
        P = self.positions if (self.positions is not None and self.active(t)) else np.zeros((0, 2))
        mask = sensor_mask(P, self.start[: len(P)], t, self.cfg.fleet.t_on, self.params, self.grid) \
            if len(P) else np.zeros(self.grid.shape)
        self.unc = step_uncertainty(self.unc, U, mask, src, self.params, dt)

    # ---- main hook
    def after_tick(self, tick, t, sampler):
        f = self.cfg.fleet
        k_on = int(round((f.t_on - self.cfg.time.t0) / self.cfg.time.dt))
        if tick < k_on or (tick - k_on) % self.reading_ticks:
            return
        if t < f.t_off:
            if self.next_positions is not None:
                self.positions = self.next_positions
                self.assimilate(sampler.measure(self.positions))
            self.plan_next(t)
        else:
            self.positions = None
            self.forecast()

    def assimilate(self, meas: Measurement) -> None:
        cfg = self.cfg
        m = self.model
        ens, _ = value_replace(m.ensembles, m.current, meas, ValueReplacementPolicy("none"),
                               m.particle_volume)
        m.ensembles = ens
        g = self.grid
        x_f = self.state_vector()
        cells = meas.vel_cells
        x_aug = x_f.copy()
        n = g.n_cells
        obs = (meas.u, meas.v, meas.uw, meas.vw)
        for b, y in enumerate(obs):
            innov = y - x_f[b * n + cells]
            x_aug[b * n:(b + 1) * n] += _spread(innov, cells, g, cfg.rom.kernel_length).ravel()
        x_now = x_aug
        if self.rom is not None:
            rows = np.concatenate([b * n + cells for b in range(4)])
            H = self.rom.U[rows]
            y = np.concatenate(obs)
            self.kf = kalman_step(self.kf, self.rom.A_tilde, y, H)
            x_now = self.rom.reconstruct(self.kf.z)
        self.snapshots.append(x_aug)
        if len(self.snapshots) >= cfg.rom.n_z + 2:
            self.refit(x_now)
        x_next = None if self.rom is None else self.rom.reconstruct(self.rom.A_tilde @ self.kf.z)
        self._install(x_now, x_next)

    def refit(self, x_now) -> None:
        cfg = self.cfg
        X = np.column_stack(self.snapshots[-cfg.rom.window:])
        old = self.rom
        rom = fit_dmd(X, cfg.rom.n_z, stabilize=cfg.rom.stabilize)
        Q, R = default_noise(rom.S, rom.rank, cfg.rom.r_meas)
        z = rom.project(x_now)
        if old is not None and self.kf is not None:
            T = rom.U.T @ old.U
            P = T @ self.kf.P @ T.T + Q
        else:
            P = 10.0 * Q
        self.rom = rom
        self.kf = KalmanState(z, 0.5 * (P + P.T), Q, R)
        US = scale_modes(rom.U, rom.S, cfg.rom.k_id)
        self.selection = interpolative_decomposition(US, min(cfg.rom.n_select, US.shape[0]),
                                                     k_id=cfg.rom.k_id)

    def forecast(self) -> None:
        if self.rom is None:
            return
        self.kf = kalman_step(self.kf, self.rom.A_tilde)
        x_now = self.rom.reconstruct(self.kf.z)
        self._install(x_now, self.rom.reconstruct(self.rom.A_tilde @ self.kf.z))

    def weighting(self) -> ScalarField:
        g = self.grid
        pres = self.model.presence()
        ent = entropy_neighborhood(pres)
        pd = ScalarField.zeros(g)
        if self.selection is not None and pres.values.any():
            pd = pdmd_weighting(self.selection, pres, g)
        return weighting_field(pres, ent, pd, self.cfg.weighting())

    def plan_next(self, t: float) -> None:
        cfg = self.cfg
        g = self.grid
        P_cur = self.positions if self.positions is not None else self.start
        U, D_h = self.model.drift()
        inj = None
        if self.kf is not None:
            inj = covariance_injection(self.kf.P, self.rom.U, g, self.params.injection_gain)
        src = variance_sources(D_h, U, self.params, inj)
        E = self.weighting()
        dt_plan = cfg.fleet.reading_interval
        cfl = (float(np.abs(U.u.values).max()) / g.dx + float(np.abs(U.v.values).max()) / g.dy) * dt_plan
        n_sub = max(cfg.plan.n_sub, int(math.ceil(cfl / 0.9)))
        prob = PlanningProblem(g, self.params, U, src, E, self.unc, P_cur, horizon=1,
                               t_start=t, dt_plan=dt_plan, n_sub=n_sub,
                               penalty=cfg.penalty_params(), excluded=self.excluded,
                               P_deploy=self.start, t_deploy=cfg.fleet.t_on)
        res = plan_receding_horizon(prob, cfg.plan.horizons, cfg.descent_config())
        self.cycle += 1
        self.J = res.best.total
        w = res.waypoint
        self.next_positions = w
        self.waypoints.add(self.cycle, t + cfg.fleet.reading_interval, w)


def make_strategy(name: str, cfg: ScenarioConfig, grid) -> Strategy:
    if name == "none":
        return Strategy(cfg, grid)
    if name == "industry":
        return IndustryStrategy(cfg, grid, True)
    if name == "industry-no-velocity":
        return IndustryStrategy(cfg, grid, False)
    if name == "model-based":
        return ModelBasedStrategy(cfg, grid)
    raise ValueError(name)


# -- driver -----------------------------------------------------------------

@dataclass
class Snapshot:
    tick: int
    t: float
    source: str
    fields: dict


@dataclass
class TwinResult:
    cfg: ScenarioConfig
    series: dict
    waypoints: dict
    snapshots: list = field(default_factory=list)


def run_twin_experiment(cfg: ScenarioConfig, progress=None) -> TwinResult:
    """Run truth and every configured strategy in lockstep, one tick at a time."""
    cfg.validate()
    grid = cfg.grid_spec()
    tg = cfg.time.build()
    truth = OceanModel(cfg, cfg.truth_forcing(), grid)
    strategies = [make_strategy(s, cfg, grid) for s in cfg.strategies]
    sampler = TruthSampler(truth, cfg)
    series = {s.name: MetricsSeries(s.name) for s in strategies}
    snaps = []
    thr = cfg.output.presence_threshold
    every = cfg.time.flow_every
    dt = tg.dt
    for k in range(1, tg.steps + 1):
        t_prev = tg.t(k - 1)
        t = tg.t(k)
        sampler.begin_tick(k)
        flow_tick = (k - 1) % every == 0
        if flow_tick:
            truth.step_flow(t_prev, every * dt)
        truth.advect(dt)
        for s in strategies:
            if flow_tick:
                s.on_flow_step(k, t_prev, every * dt)
                s.model.step_flow(t_prev, every * dt)
            s.model.advect(dt)
            s.after_tick(k, t, sampler)
        tp = truth.presence()
        oil = presence_set(tp, thr)
        for s in strategies:
            sp_ = s.model.presence()
            series[s.name].append(k, t, oil_presence_error(tp, sp_, thr),
                                  rms_current_error_where_oil(truth.current, s.model.current, oil),
                                  s.J, s.positions)
        if cfg.output.snapshot_every and (k % cfg.output.snapshot_every == 0 or k == tg.steps):
            snaps.append(Snapshot(k, t, "truth", {"u_c": truth.current.u.values, "v_c": truth.current.v.values,
                                                  "presence": tp.values}))
            for s in strategies:
                fl = {"u_c": s.model.current.u.values, "v_c": s.model.current.v.values,
                      "presence": s.model.presence().values}
                if isinstance(s, ModelBasedStrategy):
                    fl["q"] = s.unc.q.values
                snaps.append(Snapshot(k, t, s.name, fl))
        if progress is not None:
            progress(k, tg.steps)
    return TwinResult(cfg, series, {s.name: s.waypoints for s in strategies}, snaps)
