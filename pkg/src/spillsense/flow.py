"""2D incompressible flow layers, drift velocity and synthetic forcing.

Layers are stepped with forward Euler (flux-form central advection, 5-point
diffusion, source) followed by a projection. The projection uses the discrete
divergence ``D`` (central differences with boundary ghosts folded in) and its
transpose as gradient, so ``D u + b = 0`` holds to the CG tolerance after every
step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg

from .domain import DomainError, GridSpec, ScalarField, VectorField, check_same_grid

EDGES = ("west", "east", "south", "north")
BC_KINDS = ("periodic", "inflow", "outflow", "wall")


class CFLError(ValueError):
    def __init__(self, cfl: float, substeps: int):
        super().__init__(f"CFL number {cfl:.3g} exceeds limit; use {substeps} sub-steps")
        self.cfl = cfl
        self.substeps = substeps


class PressureSolveError(RuntimeError):
    def __init__(self, residual: float, tol: float):
        super().__init__(f"pressure solve did not converge: divergence {residual:.3e} > {tol:.3e}")
        self.residual = residual


@dataclass(frozen=True)
class BoundarySpec:
    west: str = "inflow"
    east: str = "outflow"
    south: str = "outflow"
    north: str = "outflow"

    def __post_init__(self):
        for e in EDGES:
            if getattr(self, e) not in BC_KINDS:
                raise DomainError(f"unknown boundary kind {getattr(self, e)!r} on {e}")
        if (self.west == "periodic") != (self.east == "periodic"):
            raise DomainError("periodic boundaries must be paired west/east")
        if (self.south == "periodic") != (self.north == "periodic"):
            raise DomainError("periodic boundaries must be paired south/north")

    @classmethod
    def periodic(cls) -> "BoundarySpec":
        return cls("periodic", "periodic", "periodic", "periodic")


@dataclass(frozen=True)
class FluidLayer:
    velocity: VectorField
    pressure: ScalarField
    viscosity: float
    source: VectorField
    bc: BoundarySpec = field(default_factory=BoundarySpec)
    # ghost values used on inflow edges; defaults to the boundary cells themselves
    inflow: VectorField | None = None

    def __post_init__(self):
        if not self.viscosity > 0:
            raise DomainError("viscosity must be positive")
        check_same_grid(self.velocity.grid, self.pressure.grid)
        check_same_grid(self.velocity.grid, self.source.grid)

    @property
    def grid(self) -> GridSpec:
        return self.velocity.grid

    @classmethod
    def at_rest(cls, grid: GridSpec, viscosity: float, bc: BoundarySpec | None = None):
        return cls(VectorField.zeros(grid), ScalarField.zeros(grid), viscosity,
                   VectorField.zeros(grid), bc or BoundarySpec())


# -- ghost padding ----------------------------------------------------------

def _pad(a: np.ndarray, bc: BoundarySpec, land: np.ndarray, ghost: np.ndarray | None) -> np.ndarray:
    """One ghost layer; ``ghost`` supplies inflow values (same shape as ``a``)."""
    a = np.where(land, 0.0, a)
    p = np.pad(a, 1, mode="edge")
    g = a if ghost is None else ghost
    for edge in EDGES:
        kind = getattr(bc, edge)
        if edge == "west":
            sl, src, gsrc = (0, slice(1, -1)), a[-1, :], g[0, :]
        elif edge == "east":
            sl, src, gsrc = (-1, slice(1, -1)), a[0, :], g[-1, :]
        elif edge == "south":
            sl, src, gsrc = (slice(1, -1), 0), a[:, -1], g[:, 0]
        else:
            sl, src, gsrc = (slice(1, -1), -1), a[:, 0], g[:, -1]
        if kind == "periodic":
            p[sl] = src
        elif kind == "inflow":
            p[sl] = gsrc
        elif kind == "wall":
            p[sl] = 0.0
        # outflow: edge copy from np.pad
    return p


def _ddx(p, dx):
    return (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * dx)


def _ddy(p, dy):
    return (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * dy)


def _lap(p, dx, dy):
    c = p[1:-1, 1:-1]
    return ((p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / dx**2
            + (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / dy**2)


def divergence(u: np.ndarray, v: np.ndarray, grid: GridSpec, bc: BoundarySpec,
               inflow: VectorField | None = None) -> np.ndarray:
    """Central-difference divergence with boundary ghosts; zero on land."""
    land = grid.land_mask
    gu = None if inflow is None else inflow.u.values
    gv = None if inflow is None else inflow.v.values
    d = _ddx(_pad(u, bc, land, gu), grid.dx) + _ddy(_pad(v, bc, land, gv), grid.dy)
    return np.where(land, 0.0, d)


# -- projection operator ----------------------------------------------------

_OPERATOR_CACHE: dict = {}


def _neighbour(i, n, step, kind_lo, kind_hi):
    """Index of the neighbour ``i+step`` or ``None`` when it is a fixed ghost."""
    k = i + step
    if 0 <= k < n:
        return k
    kind = kind_lo if k < 0 else kind_hi
    if kind == "periodic":
        return k % n
    if kind == "outflow":
        return i
    return None


def divergence_matrix(grid: GridSpec, bc: BoundarySpec) -> sp.csr_matrix:
    """Linear part ``D`` of :func:`divergence` acting on ``[u.ravel(), v.ravel()]``.

    Rows and columns of land cells are zero.
    """
    key = (grid.n_x, grid.n_y, grid.dx, grid.dy, grid.land_mask.tobytes(), bc)
    hit = _OPERATOR_CACHE.get(key)
    if hit is not None:
        return hit
    nx, ny = grid.shape
    n = nx * ny
    land = grid.land_mask
    rows, cols, vals = [], [], []
    for i in range(nx):
        for j in range(ny):
            if land[i, j]:
                continue
            r = i * ny + j
            for step, sign in ((1, 1.0), (-1, -1.0)):
                k = _neighbour(i, nx, step, bc.west, bc.east)
                if k is not None and not land[k, j]:
                    rows.append(r)
                    cols.append(k * ny + j)
                    vals.append(sign / (2 * grid.dx))
                k = _neighbour(j, ny, step, bc.south, bc.north)
                if k is not None and not land[i, k]:
                    rows.append(r)
                    cols.append(n + i * ny + k)
                    vals.append(sign / (2 * grid.dy))
    D = sp.csr_matrix((vals, (rows, cols)), shape=(n, 2 * n))
    D.sum_duplicates()
    _OPERATOR_CACHE[key] = D
    return D


def _laplacian_matrix(D):
    key = ("L", id(D))
    hit = _OPERATOR_CACHE.get(key)
    if hit is None:
        hit = (D @ D.T).tocsr()
        _OPERATOR_CACHE[key] = hit
    return hit


def project(u, v, grid: GridSpec, bc: BoundarySpec, inflow=None, phi0=None,
            rtol: float = 1e-8, div_rtol: float = 1e-8, maxiter: int = 5000):
    """Remove the divergent part of ``(u, v)``.

    Returns ``(u, v, phi)`` with ``u_new = u + D^T phi``. Raises
    :class:`PressureSolveError` when the divergence stays above
    ``div_rtol * max|U| / min(dx, dy)``.
    """
    D = divergence_matrix(grid, bc)
    L = _laplacian_matrix(D)
    rhs = -divergence(u, v, grid, bc, inflow).ravel()
    scale = max(float(np.max(np.hypot(u, v))), 1e-300) / min(grid.dx, grid.dy)
    div_tol = div_rtol * scale
    x0 = None if phi0 is None else np.asarray(phi0, float).ravel()
    bnorm = float(np.linalg.norm(rhs))
    if bnorm <= div_tol:
        return np.array(u, float), np.array(v, float), np.zeros(grid.shape)
    atol = min(rtol * bnorm, div_tol)
    phi, _info = cg(L, rhs, x0=x0, rtol=0.0, atol=atol, maxiter=maxiter)
    corr = D.T @ phi
    n = grid.n_cells
    land = grid.land_mask
    un = np.where(land, 0.0, u + corr[:n].reshape(grid.shape))
    vn = np.where(land, 0.0, v + corr[n:].reshape(grid.shape))
    resid = float(np.max(np.abs(divergence(un, vn, grid, bc, inflow))))
    if resid > div_tol:
        raise PressureSolveError(resid, div_tol)
    return un, vn, phi.reshape(grid.shape)


# -- stepping ---------------------------------------------------------------

def cfl_number(U: VectorField, dt: float) -> float:
    g = U.grid
    return float(np.max(U.speed())) * dt / min(g.dx, g.dy)


def step_layer(layer: FluidLayer, dt: float, cfl_max: float = 0.9,
               rtol: float = 1e-8, div_rtol: float = 1e-8) -> FluidLayer:
    grid = layer.grid
    U = layer.velocity
    cfl = cfl_number(U, dt)
    if cfl > cfl_max:
        raise CFLError(cfl, int(math.ceil(cfl / cfl_max)))
    land = grid.land_mask
    u, v = U.u.values, U.v.values
    gu = gv = None
    if layer.inflow is not None:
        gu, gv = layer.inflow.u.values, layer.inflow.v.values
    pu = _pad(u, layer.bc, land, gu)
    pv = _pad(v, layer.bc, land, gv)
    dx, dy = grid.dx, grid.dy
    adv_u = _ddx(pu * pu, dx) + _ddy(pv * pu, dy)
    adv_v = _ddx(pu * pv, dx) + _ddy(pv * pv, dy)
    # central advection under forward Euler needs nu >= |U|^2 dt / 2
    nu = max(layer.viscosity, 0.5 * float(np.max(U.speed())) ** 2 * dt)
    us = u + dt * (-adv_u + nu * _lap(pu, dx, dy) + layer.source.u.values)
    vs = v + dt * (-adv_v + nu * _lap(pv, dx, dy) + layer.source.v.values)
    us = np.where(land, 0.0, us)
    vs = np.where(land, 0.0, vs)
    phi0 = -layer.pressure.values * dt
    un, vn, phi = project(us, vs, grid, layer.bc, layer.inflow, phi0=phi0,
                          rtol=rtol, div_rtol=div_rtol)
    return replace(layer,
                   velocity=VectorField.from_arrays(un, vn, grid),
                   pressure=ScalarField(-phi / dt, grid))


def kinetic_energy(U: VectorField) -> float:
    g = U.grid
    return 0.5 * float(np.sum(U.u.values**2 + U.v.values**2)) * g.cell_area


# -- drift ------------------------------------------------------------------

@dataclass(frozen=True)
class DriftModel:
    current_factor: float = 1.0
    wind_factor: float = 0.03
    wave_factor: float = 1.0
    # prescribed wave velocity as a fraction of the wind
    wave_fraction: float = 0.01
    dh_mode: str = "constant"
    dh_value: float = 1.0
    dh_k: float = 0.0

    def __post_init__(self):
        for name in ("current_factor", "wind_factor", "wave_factor", "wave_fraction"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.dh_mode not in ("constant", "scaled"):
            raise DomainError(f"unknown D_h mode {self.dh_mode!r}")
        if self.dh_value < 0 or self.dh_k < 0:
            raise DomainError("diffusion coefficients must be non-negative")

    def wave_velocity(self, U_w: VectorField) -> VectorField:
        return U_w * self.wave_fraction

    def diffusion(self, U: VectorField) -> ScalarField:
        """Horizontal diffusion coefficient D_h in m^2/s."""
        g = U.grid
        if self.dh_mode == "constant":
            d = np.full(g.shape, self.dh_value)
        else:
            d = self.dh_k * U.speed() * min(g.dx, g.dy)
        return ScalarField(np.where(g.land_mask, 0.0, d), g)

    def drift(self, U_c: VectorField, U_w: VectorField) -> tuple[VectorField, ScalarField]:
        """Drift velocity and D_h for the given current and wind."""
        D_h = self.diffusion(U_c)
        U = combined_drift(U_c, U_w, self.wave_velocity(U_w), diffusion_correction(D_h), self)
        return U, D_h


def combined_drift(U_c: VectorField, U_w: VectorField, U_wave: VectorField,
                   U_d: VectorField, model: DriftModel) -> VectorField:
    g = U_c.grid
    for f in (U_w, U_wave, U_d):
        check_same_grid(g, f.grid)
    return (U_c * model.current_factor + U_w * model.wind_factor
            + U_wave * model.wave_factor + U_d)


def diffusion_correction(D_h: ScalarField) -> VectorField:
    """Gradient of D_h: central in the interior, one-sided on the edges."""
    g = D_h.grid
    du, dv = np.gradient(D_h.values, g.dx, g.dy)
    land = g.land_mask
    return VectorField.from_arrays(np.where(land, 0.0, du), np.where(land, 0.0, dv), g)


# -- synthetic forcing ------------------------------------------------------

@dataclass(frozen=True)
class SyntheticForcing:
    """Analytic stand-in for external current and wind data.

    Current = uniform base + one periodic cellular vortex (stream function
    ``psi = A L/(2 pi) sin(2 pi x/Lx) sin(2 pi y/Ly)``) + an optional spatially
    uniform tide along ``tide_angle``. Wind is uniform, optionally veering at
    ``wind_veer`` rad/s.
    """

    current: tuple[float, float] = (0.05, 0.02)
    vortex_amplitude: float = 0.0
    tide_amplitude: float = 0.0
    tide_period: float = 12.42 * 3600.0
    tide_phase: float = 0.0
    tide_angle: float = 0.0
    include_tide: bool = True
    wind: tuple[float, float] = (3.0, 1.0)
    wind_veer: float = 0.0

    def __post_init__(self):
        if self.include_tide and not self.tide_period > 0:
            raise DomainError("tide period must be positive")

    def tide(self, t: float) -> tuple[float, float]:
        if not self.include_tide or self.tide_amplitude == 0.0:
            return (0.0, 0.0)
        s = self.tide_amplitude * math.sin(2 * math.pi * t / self.tide_period + self.tide_phase)
        return (s * math.cos(self.tide_angle), s * math.sin(self.tide_angle))


def synthesize_forcing(spec: SyntheticForcing, grid: GridSpec, t: float) -> tuple[VectorField, VectorField]:
    X, Y = grid.centers()
    xmin, xmax, ymin, ymax = grid.bounds
    Lx, Ly = xmax - xmin, ymax - ymin
    kx, ky = 2 * math.pi / Lx, 2 * math.pi / Ly
    sx, sy = kx * (X - xmin), ky * (Y - ymin)
    A = spec.vortex_amplitude
    tu, tv = spec.tide(t)
    # u = d(psi)/dy, v = -d(psi)/dx with psi scaled so |U| peaks near A
    uc = spec.current[0] + tu + A * np.sin(sx) * np.cos(sy)
    vc = spec.current[1] + tv - A * (kx / ky) * np.cos(sx) * np.sin(sy)
    ang = spec.wind_veer * t
    c, s = math.cos(ang), math.sin(ang)
    uw = np.full(grid.shape, c * spec.wind[0] - s * spec.wind[1])
    vw = np.full(grid.shape, s * spec.wind[0] + c * spec.wind[1])
    land = grid.land_mask
    z = lambda a: np.where(land, 0.0, a)  # noqa: E731
    return (VectorField.from_arrays(z(uc), z(vc), grid),
            VectorField.from_arrays(z(uw), z(vw), grid))
