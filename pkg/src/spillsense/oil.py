"""Lagrangian oil particles and the drift-location probability maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .domain import (DomainError, GridSpec, ScalarField, VectorField, bilinear,
                     check_same_grid, inside, interpolate_many, locate_many)


class EmptySpillError(ValueError):
    """No active oil volume where some is required."""


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """One realization of the spill as parallel arrays.

    ``ids`` are unique and never reused; spawned particles get fresh ids. The
    ensemble owns its RNG stream, so advection is reproducible from the seed.
    """

    x: np.ndarray
    y: np.ndarray
    volume: np.ndarray
    active: np.ndarray
    ids: np.ndarray
    realization: int
    rng: np.random.Generator

    def __len__(self):
        return len(self.x)

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))

    @property
    def active_volume(self) -> float:
        return float(np.sum(self.volume[self.active]))

    @property
    def next_id(self) -> int:
        return int(self.ids.max()) + 1 if len(self.ids) else 0

    def with_arrays(self, **kw) -> "ParticleEnsemble":
        return replace(self, **kw)

    def spawn(self, x, y, volume) -> "ParticleEnsemble":
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        vol = np.broadcast_to(np.asarray(volume, float), x.shape)
        start = self.next_id
        return replace(self,
                       x=np.concatenate([self.x, x]),
                       y=np.concatenate([self.y, y]),
                       volume=np.concatenate([self.volume, vol]),
                       active=np.concatenate([self.active, np.ones(len(x), bool)]),
                       ids=np.concatenate([self.ids, np.arange(start, start + len(x))]))


def release_spill(grid: GridSpec, point, total_volume: float, n_particles: int,
                  spread: float, seed: int, realization: int = 0) -> ParticleEnsemble:
    """Instantaneous release: Gaussian cloud of equal-volume particles."""
    if n_particles < 1 or total_volume <= 0:
        raise DomainError("need at least one particle and positive volume")
    rng = np.random.default_rng([seed, realization])
    x = point[0] + spread * rng.standard_normal(n_particles)
    y = point[1] + spread * rng.standard_normal(n_particles)
    ok = inside(grid, x, y)
    i, j = locate_many(grid, np.where(ok, x, grid.origin[0]), np.where(ok, y, grid.origin[1]))
    ok &= ~grid.land_mask[i, j]
    return ParticleEnsemble(x, y, np.full(n_particles, total_volume / n_particles), ok,
                            np.arange(n_particles), realization, rng)


def advect_particles(ens: ParticleEnsemble, U: VectorField, D_h: ScalarField, dt: float) -> ParticleEnsemble:
    """Drift plus a Gaussian random walk of per-axis variance ``2 D_h dt``.

    Particles that leave the box or land on a land cell are deactivated.
    """
    if dt < 0:
        raise DomainError("dt must be non-negative")
    if dt == 0 or ens.n_active == 0:
        return ens
    grid = U.grid
    check_same_grid(grid, D_h.grid)
    act = ens.active
    xa, ya = ens.x[act], ens.y[act]
    u, v = interpolate_many(U, xa, ya)
    d = np.maximum(bilinear(D_h.values, grid, xa, ya), 0.0)
    sd = np.sqrt(2.0 * d * dt)
    xi = ens.rng.standard_normal((2, len(xa)))
    xn = xa + u * dt + sd * xi[0]
    yn = ya + v * dt + sd * xi[1]
    ok = inside(grid, xn, yn)
    i, j = locate_many(grid, np.where(ok, xn, grid.origin[0]), np.where(ok, yn, grid.origin[1]))
    ok &= ~grid.land_mask[i, j]
    x = ens.x.copy()
    y = ens.y.copy()
    x[act] = xn
    y[act] = yn
    active = act.copy()
    active[act] = ok
    return ens.with_arrays(x=x, y=y, active=active)


def particle_cells(ens: ParticleEnsemble, grid: GridSpec) -> np.ndarray:
    """Flat cell index per particle, -1 for inactive particles."""
    out = np.full(len(ens), -1, dtype=int)
    act = ens.active
    if act.any():
        i, j = locate_many(grid, ens.x[act], ens.y[act])
        out[act] = i * grid.n_y + j
    return out


@dataclass(frozen=True, eq=False)
class OilProbabilityMap:
    prob: ScalarField
    realizations: int = 1

    @property
    def grid(self) -> GridSpec:
        return self.prob.grid

    @property
    def presence(self) -> ScalarField:
        return rescale_presence(self)


def cell_volumes(ens: ParticleEnsemble, grid: GridSpec) -> np.ndarray:
    cells = particle_cells(ens, grid)
    act = cells >= 0
    vol = np.bincount(cells[act], weights=ens.volume[act], minlength=grid.n_cells)
    return vol.reshape(grid.shape)


def probability_single(ens: ParticleEnsemble, grid: GridSpec) -> OilProbabilityMap:
    if len(ens) == 0:
        raise DomainError("empty ensemble")
    total = ens.active_volume
    if total <= 0:
        raise EmptySpillError("no active oil volume")
    return OilProbabilityMap(ScalarField(cell_volumes(ens, grid) / total, grid), 1)


def probability_mean(maps: Sequence[OilProbabilityMap]) -> OilProbabilityMap:
    if not maps:
        raise DomainError("no realizations to average")
    g = maps[0].grid
    for m in maps[1:]:
        check_same_grid(g, m.grid)
    mean = np.mean([m.prob.values for m in maps], axis=0)
    return OilProbabilityMap(ScalarField(mean, g), len(maps))


def rescale_presence(m: OilProbabilityMap) -> ScalarField:
    vals = m.prob.values
    top = float(vals.max())
    if not top > 0:
        raise EmptySpillError("probability map is all zero")
    return ScalarField(vals / top, m.grid)


def rescale_field(f: ScalarField) -> ScalarField:
    """Divide a non-negative field by its maximum (idempotent)."""
    return rescale_presence(OilProbabilityMap(f))


def entropy_neighborhood(presence: ScalarField) -> ScalarField:
    """Min-max normalised Shannon entropy of each clipped 3x3 neighbourhood.

    The nine values are normalised to sum to one; all-zero neighbourhoods and
    constant entropy fields map to 0.
    """
    g = presence.grid
    p = np.pad(np.clip(presence.values, 0.0, None), 1)  # zero padding == clipped window
    nx, ny = g.shape
    windows = np.stack([p[a:a + nx, b:b + ny] for a in range(3) for b in range(3)])
    total = windows.sum(axis=0)
    safe = np.where(total > 0, total, 1.0)
    q = windows / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, -q * np.log(q), 0.0)
    H = np.where(total > 0, terms.sum(axis=0), 0.0)
    lo, hi = float(H.min()), float(H.max())
    if hi - lo <= 1e-15 * max(1.0, hi):
        return ScalarField.zeros(g)
    return ScalarField((H - lo) / (hi - lo), g)


# -- persistence ------------------------------------------------------------

PARTICLE_HEADER = ["realization", "step", "particle_id", "x", "y", "volume", "active"]


def write_particles_csv(path, snapshots: Sequence[tuple[int, ParticleEnsemble]]) -> None:
    """Write ``(step, ensemble)`` pairs in the particle dump schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PARTICLE_HEADER)
        for step, ens in snapshots:
            for k in range(len(ens)):
                w.writerow([ens.realization, step, int(ens.ids[k]), repr(float(ens.x[k])),
                            repr(float(ens.y[k])), repr(float(ens.volume[k])), int(ens.active[k])])


def read_particles_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["realization"] = int(r["realization"])
        r["step"] = int(r["step"])
        r["particle_id"] = int(r["particle_id"])
        for k in ("x", "y", "volume"):
            r[k] = float(r[k])
        r["active"] = bool(int(r["active"]))
    return rows
