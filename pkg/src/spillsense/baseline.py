"""Industry comparison strategy: ladder survey paths and value replacement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import DomainError, GridSpec, ScalarField, VectorField
from .oil import ParticleEnsemble, particle_cells


@dataclass
class Section:
    """One sensor's share of the ladder as a polyline, optionally preceded by a transit leg."""

    points: np.ndarray                 # (n, 2) vertices
    transit_from: np.ndarray | None = None

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.points, axis=0).T))) if len(self.points) > 1 else 0.0

    @property
    def transit_length(self) -> float:
        if self.transit_from is None:
            return 0.0
        return float(np.hypot(*(self.points[0] - self.transit_from)))


@dataclass
class LadderPlan:
    legs: list                          # [(start, end)] in traversal order
    swath: float
    overlap: float = 0.10
    sections: list = field(default_factory=list)
    legs_per_section: list = field(default_factory=list)
    replan_period: float = 3600.0
    along_x: bool = True

    @property
    def spacing(self) -> float:
        return self.swath * (1.0 - self.overlap)


def _bbox(presence: ScalarField, floor: float):
    g = presence.grid
    idx = np.argwhere(presence.values > floor)
    if idx.size == 0:
        return None
    ox, oy = g.origin
    i0, j0 = idx.min(axis=0)
    i1, j1 = idx.max(axis=0)
    return (ox + (i0 - 0.5) * g.dx, ox + (i1 + 0.5) * g.dx,
            oy + (j0 - 0.5) * g.dy, oy + (j1 + 0.5) * g.dy)


def generate_ladder(presence: ScalarField, swath: float, overlap: float = 0.10, n_p: int = 1,
                    presence_floor: float = 0.01, release_point=None, min_extent: float | None = None,
                    start_positions=None, replan_period: float = 3600.0) -> LadderPlan:
    """Boustrophedon legs over the bounding box of predicted oil.

    Legs run along the longer side of the box and are ``swath (1 - overlap)``
    apart, the outer ones sitting half a swath inside the box. Legs are split
    into ``n_p`` contiguous sections whose sizes differ by at most one leg.
    """
    if not swath > 0 or not 0 <= overlap < 1 or n_p < 1:
        raise DomainError("need swath > 0, 0 <= overlap < 1 and n_p >= 1")
    box = _bbox(presence, presence_floor)
    if box is None:
        if release_point is None:
            raise DomainError("empty prediction and no release point")
        half = 0.5 * (min_extent or swath)
        cx, cy = release_point
        box = (cx - half, cx + half, cy - half, cy + half)
    x0, x1, y0, y1 = box
    along_x = (x1 - x0) >= (y1 - y0)
    (a0, a1), (c0, c1) = ((x0, x1), (y0, y1)) if along_x else ((y0, y1), (x0, x1))
    spacing = swath * (1.0 - overlap)
    width = c1 - c0
    if width <= swath:
        offsets = [0.5 * (c0 + c1)]
    else:
        n = int(math.ceil((width - swath) / spacing - 1e-9)) + 1
        offsets = [c0 + 0.5 * swath + k * spacing for k in range(n)]
    legs = []
    for k, c in enumerate(offsets):
        s, e = (a0, a1) if k % 2 == 0 else (a1, a0)
        p, q = ((s, c), (e, c)) if along_x else ((c, s), (c, e))
        legs.append((np.array(p, float), np.array(q, float)))
    groups = np.array_split(np.arange(len(legs)), n_p)
    sections, counts = [], []
    for i, grp in enumerate(groups):
        if len(grp) == 0:
            grp = [i % len(legs)]
        pts = []
        for li in grp:
            pts.extend(legs[li])
        start = None if start_positions is None else np.asarray(start_positions, float)[i]
        sections.append(Section(np.array(pts), start))
        counts.append(len(grp))
    return LadderPlan(legs, swath, overlap, sections, counts, replan_period, along_x)


def _along(points: np.ndarray, s: float) -> np.ndarray:
    seg = np.diff(points, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    k = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(lens) - 1))
    if lens[k] == 0:
        return points[k].copy()
    f = min(max((s - cum[k]) / lens[k], 0.0), 1.0)
    return points[k] + f * seg[k]


def follow_path(plan: LadderPlan, v_max: float, t: float) -> np.ndarray:
    """Sensor positions at time ``t`` after the plan starts.

    Each sensor first flies straight to its section start (if a transit origin
    was given), then runs the section back and forth at ``v_max``: forward
    over ``[0, L/v]``, backward over ``[L/v, 2L/v]``, and so on.
    """
    if not plan.sections:
        raise DomainError("plan has no sections")
    if not v_max > 0 or t < 0:
        raise DomainError("need v_max > 0 and t >= 0")
    out = []
    for sec in plan.sections:
        d = v_max * t
        tl = sec.transit_length
        if d < tl:
            p0 = sec.transit_from
            out.append(p0 + (sec.points[0] - p0) * (d / tl))
            continue
        d -= tl
        L = sec.length
        if L == 0:
            out.append(sec.points[0].copy())
            continue
        r = math.fmod(d, 2 * L)
        out.append(_along(sec.points, r if r <= L else 2 * L - r))
    return np.array(out)


def swath_coverage(plan: LadderPlan, grid: GridSpec) -> np.ndarray:
    """Cells whose centre lies within half a swath of some leg."""
    X, Y = grid.centers()
    cov = np.zeros(grid.shape, bool)
    h = 0.5 * plan.swath * (1 + 1e-12)
    for p, q in plan.legs:
        d = q - p
        L2 = float(d @ d)
        t = np.clip(((X - p[0]) * d[0] + (Y - p[1]) * d[1]) / L2, 0, 1) if L2 > 0 else 0.0
        cov |= np.hypot(X - p[0] - t * d[0], Y - p[1] - t * d[1]) <= h
    return cov


# -- value replacement ------------------------------------------------------

@dataclass(frozen=True)
class ValueReplacementPolicy:
    velocity_mode: str = "replace-in-place"    # or "none"
    replace_oil: bool = True

    def __post_init__(self):
        if self.velocity_mode not in ("replace-in-place", "none"):
            raise DomainError(f"unknown velocity mode {self.velocity_mode!r}")


@dataclass
class Measurement:
    """Observed oil volume per cell and current velocity per cell (flat indices)."""

    oil_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    oil_volume: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vel_cells: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    u: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    uw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    vw: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def empty(self) -> bool:
        return len(self.oil_cells) == 0 and len(self.vel_cells) == 0


def replace_oil(ens: ParticleEnsemble, grid: GridSpec, cells, volumes, particle_volume: float) -> ParticleEnsemble:
    """Match the particle count in each measured cell to ``round(V / v_p)``.

    Excess particles are deactivated (highest ids first); missing ones are
    spawned uniformly inside the cell's central area from the ensemble RNG.
    """
    cells = np.asarray(cells, int)
    if cells.size == 0:
        return ens
    pc = particle_cells(ens, grid)
    active = ens.active.copy()
    new_x, new_y = [], []
    for c, V in zip(cells, np.asarray(volumes, float)):
        target = int(round(V / particle_volume))
        here = np.flatnonzero(pc == c)
        if len(here) > target:
            drop = here[np.argsort(ens.ids[here])[::-1][: len(here) - target]]
            active[drop] = False
        elif len(here) < target:
            i, j = divmod(int(c), grid.n_y)
            k = target - len(here)
            cx = grid.origin[0] + i * grid.dx
            cy = grid.origin[1] + j * grid.dy
            new_x.append(cx + grid.dx * ens.rng.uniform(-0.45, 0.45, k))
            new_y.append(cy + grid.dy * ens.rng.uniform(-0.45, 0.45, k))
    out = ens.with_arrays(active=active)
    if new_x:
        out = out.spawn(np.concatenate(new_x), np.concatenate(new_y), particle_volume)
    return out


def value_replace(ensembles: Sequence[ParticleEnsemble], velocity: VectorField,
                  meas: Measurement, policy: ValueReplacementPolicy, particle_volume: float):
    """Overwrite the measured cells of the model state; nothing else changes."""
    g = velocity.grid
    if meas.empty:
        return list(ensembles), velocity
    ens = list(ensembles)
    if policy.replace_oil and len(meas.oil_cells):
        ens = [replace_oil(e, g, meas.oil_cells, meas.oil_volume, particle_volume) for e in ens]
    if policy.velocity_mode == "replace-in-place" and len(meas.vel_cells):
        u = velocity.u.values.copy().ravel()
        v = velocity.v.values.copy().ravel()
        u[meas.vel_cells] = meas.u
        v[meas.vel_cells] = meas.v
        velocity = VectorField.from_arrays(u.reshape(g.shape), v.reshape(g.shape), g)
    return ens, velocity
