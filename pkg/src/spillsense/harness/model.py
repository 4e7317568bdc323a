"""One simulated ocean: nudged flow layer, forcing and oil realizations."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..domain import ScalarField, VectorField
from ..flow import FluidLayer, SyntheticForcing, project, step_layer, synthesize_forcing
from ..oil import (EmptySpillError, advect_particles, cell_volumes, probability_mean,
                   probability_single, release_spill)
from .config import ScenarioConfig


class OceanModel:
    """Current from a flow layer relaxed toward a target field; wind from the forcing.

    The target is the synthetic forcing unless an override is installed (the
    model-based strategy installs its reduced-order forecast).
    """

    def __init__(self, cfg: ScenarioConfig, forcing: SyntheticForcing, grid=None):
        self.cfg = cfg
        self.grid = grid or cfg.grid_spec()
        self.forcing = forcing
        self.drift_model = cfg.drift.build()
        self.bc = cfg.flow.boundary()
        self.tau = cfg.flow.relax_time
        t0 = cfg.time.t0
        U_c, self.wind = synthesize_forcing(forcing, self.grid, t0)
        u, v, _ = project(U_c.u.values, U_c.v.values, self.grid, self.bc, U_c)
        z = ScalarField.zeros(self.grid)
        self.layer = FluidLayer(VectorField.from_arrays(u, v, self.grid), z, cfg.flow.viscosity,
                                VectorField.zeros(self.grid), self.bc, U_c)
        s = cfg.spill
        self.particle_volume = s.volume / s.n_particles
        self.ensembles = [release_spill(self.grid, s.point, s.volume, s.n_particles, s.spread,
                                        cfg.seed, r) for r in range(s.realizations)]
        self.target_override: VectorField | None = None

    @property
    def current(self) -> VectorField:
        return self.layer.velocity

    def set_current(self, U: VectorField) -> None:
        g = self.grid
        u = np.where(g.land_mask, 0.0, U.u.values)
        v = np.where(g.land_mask, 0.0, U.v.values)
        self.layer = replace(self.layer, velocity=VectorField.from_arrays(u, v, g))

    def target(self, t: float) -> VectorField:
        U_c, self.wind = synthesize_forcing(self.forcing, self.grid, t)
        return U_c if self.target_override is None else self.target_override

    def step_flow(self, t: float, dt: float) -> None:
        tgt = self.target(t)
        U = self.layer.velocity
        src = VectorField.from_arrays((tgt.u.values - U.u.values) / self.tau,
                                      (tgt.v.values - U.v.values) / self.tau, self.grid)
        self.layer = step_layer(replace(self.layer, source=src, inflow=tgt), dt)

    def drift(self):
        return self.drift_model.drift(self.layer.velocity, self.wind)

    def advect(self, dt: float) -> None:
        U, D_h = self.drift()
        self.ensembles = [advect_particles(e, U, D_h, dt) for e in self.ensembles]

    # ---- diagnostics
    def probability(self) -> ScalarField:
        maps = []
        for e in self.ensembles:
            try:
                maps.append(probability_single(e, self.grid))
            except EmptySpillError:
                continue
        if not maps:
            return ScalarField.zeros(self.grid)
        # realizations without oil contribute zero probability
        mean = probability_mean(maps).prob.values * len(maps) / len(self.ensembles)
        return ScalarField(mean, self.grid)

    def presence(self) -> ScalarField:
        p = self.probability().values
        top = float(p.max())
        return ScalarField(p / top if top > 0 else p, self.grid)

    def mean_cell_volume(self) -> np.ndarray:
        return np.mean([cell_volumes(e, self.grid) for e in self.ensembles], axis=0)
