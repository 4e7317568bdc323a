"""Initial sensor positions and the projected Armijo gradient descent."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..domain import GridSpec, cell_center, locate_many
from .cost import CostBreakdown, ConfigError, cost_and_gradient

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DescentConfig:
    zeta_g: float = 1e-3
    max_iters: int = 100
    c1: float = 1e-4
    backtrack: float = 0.5
    step_cells: float = 1.0
    max_halvings: int = 30

    def __post_init__(self):
        if not 0 < self.c1 < 1 or not 0 < self.backtrack < 1:
            raise ConfigError("need 0 < c1 < 1 and 0 < backtrack < 1")
        if self.zeta_g < 0 or self.max_iters < 0 or self.step_cells <= 0:
            raise ConfigError("invalid descent settings")


@dataclass
class DescentResult:
    P: np.ndarray
    cost: CostBreakdown
    iterations: int
    history: list = field(default_factory=list)  # accepted J values, starting with J(P0)
    converged: bool = False
    stalled: bool = False


# -- initialisation ---------------------------------------------------------

_OFFSETS = [(1, 0), (0, 1), (-1, 0), (0, -1), (1, 1), (-1, 1), (1, -1), (-1, -1)]


def local_maxima(field_: np.ndarray) -> list[tuple[int, int]]:
    """Cells not below any 8-neighbour and strictly above the lower-index ones.

    On a strict peak this is "greater than all neighbours"; on a plateau the
    lowest row-major cell is kept. Sorted by value descending, then index.
    """
    f = np.asarray(field_, float)
    nx, ny = f.shape
    p = np.pad(f, 1, constant_values=-np.inf)
    keep = f > -np.inf
    for di, dj in [(-1, -1), (-1, 0), (-1, 1), (0, -1)]:      # lower flat index
        keep &= f > p[1 + di:1 + di + nx, 1 + dj:1 + dj + ny]
    for di, dj in [(0, 1), (1, -1), (1, 0), (1, 1)]:          # higher flat index
        keep &= f >= p[1 + di:1 + di + nx, 1 + dj:1 + dj + ny]
    cells = list(zip(*np.nonzero(keep)))
    cells.sort(key=lambda c: (-f[c], c[0] * ny + c[1]))
    return [(int(i), int(j)) for i, j in cells]


def initial_positions(mean_field, n_p: int, grid: GridSpec | None = None) -> np.ndarray:
    """Top ``n_p`` peaks of the sensor-free mean of ``E q^2`` as positions."""
    if n_p < 1:
        raise ConfigError("need at least one sensor")
    grid = grid or mean_field.grid
    f = np.asarray(getattr(mean_field, "values", mean_field), float)
    f = np.where(grid.land_mask, -np.inf, f)
    if not np.any(f > 0):
        warnings.warn("empty uncertainty field; placing sensors at the domain centroid", RuntimeWarning)
        x0, x1, y0, y1 = grid.bounds
        c = ((x0 + x1) / 2, (y0 + y1) / 2)
        return np.array([c] * n_p, float)
    peaks = [c for c in local_maxima(f) if f[c] > 0][:n_p]
    top = peaks[0]
    k = 0
    while len(peaks) < n_p:
        di, dj = _OFFSETS[k % 8]
        ring = 1 + k // 8
        i = min(max(top[0] + ring * di, 0), grid.n_x - 1)
        j = min(max(top[1] + ring * dj, 0), grid.n_y - 1)
        peaks.append((i, j))
        k += 1
    return np.array([cell_center(grid, i, j) for i, j in peaks], float)


# -- feasibility ------------------------------------------------------------

def clamp_path(P, P_start, reach: float, excluded: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Make a path feasible: inside the box, within ``reach`` of the previous
    waypoint, and not in an excluded cell (snapping to the nearest reachable
    permissible cell centre, else holding position)."""
    P = np.array(P, float, copy=True)
    prev = np.atleast_2d(np.asarray(P_start, float))
    x0, x1, y0, y1 = grid.bounds
    X, Y = grid.centers()
    ok = ~np.asarray(excluded, bool)
    Xo, Yo = X[ok], Y[ok]
    eps = 1e-9 * max(grid.dx, grid.dy)
    for k in range(len(P)):
        for s in range(P.shape[1]):
            p = P[k, s]
            d = p - prev[s]
            n = float(np.hypot(*d))
            if n > reach:
                p = prev[s] + d * (reach / n) * (1 - 1e-12)
            p = np.array([min(max(p[0], x0 + eps), x1 - eps), min(max(p[1], y0 + eps), y1 - eps)])
            i, j = locate_many(grid, p[0], p[1])
            if excluded[int(i), int(j)]:
                cand = (Xo - prev[s, 0]) ** 2 + (Yo - prev[s, 1]) ** 2 <= reach**2
                if cand.any():
                    d2 = (Xo[cand] - p[0]) ** 2 + (Yo[cand] - p[1]) ** 2
                    c = int(np.argmin(d2))
                    p = np.array([Xo[cand][c], Yo[cand][c]])
                else:
                    p = prev[s].copy()
            P[k, s] = p
        prev = P[k]
    return P


# -- descent ----------------------------------------------------------------

def _value(problem, P) -> CostBreakdown:
    return problem.cost(P)


def _value_grad(problem, P):
    if hasattr(problem, "cost_and_gradient"):
        return problem.cost_and_gradient(P)
    return cost_and_gradient(problem, P)


def descend(P0, problem, config: DescentConfig = DescentConfig()) -> DescentResult:
    """Gradient descent with one step length per sensor and Armijo backtracking.

    ``problem`` provides ``cost(P)`` and optionally ``cost_and_gradient(P)``,
    ``cell_width`` and ``clamp(P)``. Positions have shape ``(..., N_p, 2)``;
    the sensor axis is the second to last. Each sensor's trial step moves its
    largest gradient component by ``step_cells`` cell widths, or less when the
    Barzilai-Borwein estimate from the previous step is smaller; all steps are
    halved together until ``J(P - gamma g) <= J(P) - c1 sum gamma_n |g_n|^2``.
    """
    P = np.array(P0, float, copy=True)
    width = float(getattr(problem, "cell_width", 1.0))
    cost, g = _value_grad(problem, P)
    J0 = cost
    hist = [cost.total]
    it = 0
    converged = stalled = False
    prev_step = None
    while True:
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        if not math.isfinite(gmax):
            raise FloatingPointError("non-finite gradient")
        if gmax < config.zeta_g:
            converged = True
            break
        if it >= config.max_iters:
            break
        # per-sensor scale: max over everything except the sensor axis
        axes = tuple(a for a in range(g.ndim) if a != g.ndim - 2)
        gn = np.max(np.abs(g), axis=axes)
        gamma = np.where(gn > 0, config.step_cells * width / np.where(gn > 0, gn, 1.0), 0.0)
        if prev_step is not None:
            # Barzilai-Borwein curvature estimate per sensor caps the trial step
            s_, y_ = prev_step
            ss = np.sum(s_ * s_, axis=axes)
            sy = np.sum(s_ * y_, axis=axes)
            bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), np.inf)
            gamma = np.minimum(gamma, bb)
        shape = [1] * g.ndim
        shape[-2] = len(gamma)
        dec = float(np.sum(gamma.reshape(shape) * g * g))
        accepted = False
        for _ in range(config.max_halvings + 1):
            trial = P - gamma.reshape(shape) * g
            c_new = _value(problem, trial)
            if c_new.total <= cost.total - config.c1 * dec:
                accepted = True
                break
            gamma = gamma * config.backtrack
            dec *= config.backtrack
        if not accepted:
            stalled = True
            log.debug("line search stalled at iteration %d", it)
            break
        g_old = g
        prev_step_s = trial - P
        P = trial
        cost, g = _value_grad(problem, P)
        prev_step = (prev_step_s, g - g_old)
        hist.append(cost.total)
        it += 1
    if hasattr(problem, "clamp"):
        Pc = problem.clamp(P)
        cc = _value(problem, Pc)
        P0c = problem.clamp(np.asarray(P0, float))
        c0 = _value(problem, P0c)
        if c0.total < cc.total:
            Pc, cc = P0c, c0
        P, cost = Pc, cc
    elif J0.total < cost.total:  # cannot happen with Armijo acceptance
        P, cost = np.array(P0, float), J0
    return DescentResult(P, cost, it, hist, converged, stalled)
