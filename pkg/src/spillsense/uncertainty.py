"""Uncertainty tracer q and directional drift-variance fields.

Both variances follow the same forward-Euler update

    var' = (1 - k_s * mask) * (var + dt * (M(U) var + src)),   clamped at 0,

where ``M(U)`` is upwind advection plus 5-point diffusion with zero-gradient
ghosts, and the tracer follows the product rule

    q' = q + k_chi^2 * (var_x * (var_y' - var_y) + var_y * (var_x' - var_x)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import chi2

from .domain import DomainError, GridSpec, ScalarField, VectorField, check_same_grid


class NumericalError(ArithmeticError):
    pass


class VarianceCFLError(ValueError):
    pass


@dataclass(frozen=True)
class UncertaintyParams:
    nu: float = 10.0
    zeta: float = 0.95
    k_s: float = 0.8
    r: float = 1000.0
    v_sensor: float = 26.8224  # 60 mph
    # None -> 10% of the local squared drift speed
    eps_x: float | None = None
    eps_y: float | None = None
    # time step that defines k_chi and the D_h/dt source rate
    dt_ref: float = 60.0
    P0: tuple = field(default_factory=tuple)
    t0: float = 0.0
    injection_gain: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise DomainError("zeta must lie in (0, 1)")
        if not 0.0 <= self.k_s <= 1.0:
            raise DomainError("k_s must lie in [0, 1]")
        if not self.r > 0:
            raise DomainError("sensor radius must be positive")
        if self.nu < 0 or not self.v_sensor > 0 or not self.dt_ref > 0:
            raise DomainError("nu >= 0, v_sensor > 0 and dt_ref > 0 required")

    @property
    def chi(self) -> float:
        """Chi-squared quantile of ``zeta`` with two degrees of freedom."""
        return float(chi2.ppf(self.zeta, 2))

    def k_chi(self, grid: GridSpec) -> float:
        return math.pi * self.dt_ref**2 * self.chi / grid.domain_area


@dataclass(frozen=True, eq=False)
class UncertaintyState:
    q: ScalarField
    var_x: ScalarField
    var_y: ScalarField

    @property
    def grid(self) -> GridSpec:
        return self.q.grid

    @classmethod
    def zeros(cls, grid: GridSpec) -> "UncertaintyState":
        z = ScalarField.zeros(grid)
        return cls(z, z, z)


@dataclass(frozen=True, eq=False)
class CovarianceInjection:
    E_kx: ScalarField
    E_ky: ScalarField


# -- sensor footprints ------------------------------------------------------

def sensor_active(P, P0, t: float, t0: float, v_sensor: float) -> np.ndarray:
    """Per-sensor flag: enough time has passed to travel from ``P0`` to ``P``."""
    P = np.atleast_2d(np.asarray(P, float))
    P0 = np.atleast_2d(np.asarray(P0, float))
    return (t - t0) >= np.linalg.norm(P - P0, axis=1) / v_sensor


def sensor_mask(P, P0, t: float, t0: float, params: UncertaintyParams, grid: GridSpec) -> ScalarField:
    """1 on cells whose centre lies within ``r`` of an active sensor."""
    P = np.atleast_2d(np.asarray(P, float))
    mask = np.zeros(grid.shape)
    if P.size == 0:
        return ScalarField(mask, grid)
    X, Y = grid.centers()
    act = sensor_active(P, P0, t, t0, params.v_sensor)
    for (px, py), on in zip(P, act):
        if on:
            mask[(X - px) ** 2 + (Y - py) ** 2 <= params.r**2] = 1.0
    return ScalarField(np.where(grid.land_mask, 0.0, mask), grid)


_CUT = math.exp(-8.0)  # Gaussian value at the truncation radius 2r with width r/2
_NORM = 1.0 - 9.0 * _CUT


def smooth_footprint(P, r: float, grid: GridSpec, active=None):
    """Differentiable footprint of each sensor and its gradient.

    A Gaussian of width ``r/2`` truncated at ``2r``, shifted by a term linear in
    ``d^2`` so that both the value and the slope vanish at the cut:
    ``m = (g - e^-8 (1 - (d^2 - 4 r^2) / (2 s^2))) / (1 - 9 e^-8)`` with
    ``g = exp(-d^2 / (2 s^2))`` and ``s = r/2``. It equals 1 at the sensor.
    Returns ``(m, dm_dx, dm_dy)`` each shaped ``(N_p, n_x, n_y)``; the
    gradients are with respect to the sensor position.
    """
    P = np.atleast_2d(np.asarray(P, float))
    n = len(P)
    shape = (n,) + grid.shape
    m = np.zeros(shape)
    dmx = np.zeros(shape)
    dmy = np.zeros(shape)
    s2 = (0.5 * r) ** 2
    act = np.ones(n, bool) if active is None else np.asarray(active, bool)
    ox, oy = grid.origin
    # the footprint vanishes beyond 2r, so only a window around each sensor is evaluated
    for k in range(n):
        if not act[k]:
            continue
        px, py = P[k]
        i0 = max(int(math.floor((px - 2 * r - ox) / grid.dx)), 0)
        i1 = min(int(math.ceil((px + 2 * r - ox) / grid.dx)) + 1, grid.n_x)
        j0 = max(int(math.floor((py - 2 * r - oy) / grid.dy)), 0)
        j1 = min(int(math.ceil((py + 2 * r - oy) / grid.dy)) + 1, grid.n_y)
        if i0 >= i1 or j0 >= j1:
            continue
        dxs = (ox + grid.dx * np.arange(i0, i1))[:, None] - px
        dys = (oy + grid.dy * np.arange(j0, j1))[None, :] - py
        d2 = dxs**2 + dys**2
        inside_ = d2 < (2 * r) ** 2
        g = np.exp(-d2 / (2 * s2))
        m[k, i0:i1, j0:j1] = np.where(inside_, (g - _CUT * (1 - (d2 - 4 * r * r) / (2 * s2))) / _NORM, 0.0)
        # dm/d(d^2) = -(g - e^-8) / (2 s2 N) and d(d^2)/dP = -2 (X - P)
        dg = np.where(inside_, (g - _CUT) / (_NORM * s2), 0.0)
        dmx[k, i0:i1, j0:j1] = dg * dxs
        dmy[k, i0:i1, j0:j1] = dg * dys
    land = grid.land_mask
    if land.any():
        m[:, land] = 0.0
        dmx[:, land] = 0.0
        dmy[:, land] = 0.0
    return m, dmx, dmy


def union(masks: np.ndarray) -> np.ndarray:
    """Probabilistic union ``1 - prod(1 - m_i)`` (exact for 0/1 masks)."""
    if len(masks) == 0:
        return 0.0
    return 1.0 - np.prod(1.0 - masks, axis=0)


# -- transport operator -----------------------------------------------------

def transport_matrix(U: VectorField, nu: float) -> sp.csr_matrix:
    """Sparse ``M(U)``: upwind advection plus ``nu`` times the 5-point Laplacian.

    Ghost values equal the cell itself at the box edge and next to land, so
    neither advection nor diffusion carries anything across those faces.
    Land rows are zero.
    """
    g = U.grid
    nx, ny = g.shape
    n = nx * ny
    idx = np.arange(n).reshape(nx, ny)
    land = g.land_mask

    def nb(di, dj):
        out = idx.copy()
        ii = np.arange(nx)[:, None] + di
        jj = np.arange(ny)[None, :] + dj
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        ii_c = np.clip(ii, 0, nx - 1)
        jj_c = np.clip(jj, 0, ny - 1)
        cand = idx[np.broadcast_to(ii_c, (nx, ny)), np.broadcast_to(jj_c, (nx, ny))]
        ok = np.broadcast_to(ok, (nx, ny)) & ~land.ravel()[cand]
        out[ok] = cand[ok]
        return out

    E, W, N, S = nb(1, 0), nb(-1, 0), nb(0, 1), nb(0, -1)
    u = U.u.values
    v = U.v.values
    up, um = np.maximum(u, 0) / g.dx, np.minimum(u, 0) / g.dx
    vp, vm = np.maximum(v, 0) / g.dy, np.minimum(v, 0) / g.dy
    ax, ay = nu / g.dx**2, nu / g.dy**2
    # -u dsigma/dx (upwind): u>0 -> -u (s_i - s_W)/dx ; u<0 -> -u (s_E - s_i)/dx
    centre = -up + um - 2 * ax - 2 * ay
    parts = [
        (idx, centre),
        (W, up + ax),
        (E, -um + ax),
        (S, vp + ay),
        (N, -vm + ay),
    ]
    centre_y = -vp + vm
    rows = np.concatenate([idx.ravel()] * 6)
    cols = np.concatenate([p[0].ravel() for p in parts] + [idx.ravel()])
    vals = np.concatenate([p[1].ravel() for p in parts] + [centre_y.ravel()])
    keep = ~land.ravel()[rows]
    M = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    M.sum_duplicates()
    return M


def check_cfl(U: VectorField, nu: float, dt: float) -> None:
    g = U.grid
    c = float(np.max(np.abs(U.u.values))) * dt / g.dx + float(np.max(np.abs(U.v.values))) * dt / g.dy
    dcoef = nu * dt * (1 / g.dx**2 + 1 / g.dy**2)
    if c > 1.0 or dcoef > 0.5:
        raise VarianceCFLError(f"variance step unstable: advective CFL {c:.3g}, diffusion number {dcoef:.3g}")


def variance_sources(D_h: ScalarField, U: VectorField, params: UncertaintyParams,
                     injection: CovarianceInjection | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Source rates ``D_h/dt + eps + E_k`` for the x and y variances."""
    g = U.grid
    speed2 = U.u.values**2 + U.v.values**2
    ex = 0.1 * speed2 if params.eps_x is None else np.full(g.shape, params.eps_x)
    ey = 0.1 * speed2 if params.eps_y is None else np.full(g.shape, params.eps_y)
    base = D_h.values / params.dt_ref
    sx = base + ex
    sy = base + ey
    if injection is not None:
        sx = sx + injection.E_kx.values
        sy = sy + injection.E_ky.values
    land = g.land_mask
    return np.where(land, 0.0, sx), np.where(land, 0.0, sy)


def _step_var(var, M, mask, src, k_s, dt, land):
    new = (1.0 - k_s * mask) * (var + dt * (M @ var.ravel()).reshape(var.shape) + dt * src)
    return np.where(land, 0.0, np.maximum(new, 0.0))


def step_variance(var: ScalarField, U: VectorField, mask, source, params: UncertaintyParams,
                  dt: float, M: sp.spmatrix | None = None) -> ScalarField:
    if not dt > 0:
        raise DomainError("dt must be positive")
    g = var.grid
    check_same_grid(g, U.grid)
    check_cfl(U, params.nu, dt)
    if M is None:
        M = transport_matrix(U, params.nu)
    mask = np.asarray(getattr(mask, "values", mask), float)
    src = np.asarray(getattr(source, "values", source), float)
    return ScalarField(_step_var(var.values, M, mask, src, params.k_s, dt, g.land_mask), g)


def step_tracer(q: ScalarField, var_x: ScalarField, var_y: ScalarField,
                dvar_x_dt, dvar_y_dt, params: UncertaintyParams, dt: float) -> ScalarField:
    g = q.grid
    kc2 = params.k_chi(g) ** 2
    dx_ = np.asarray(getattr(dvar_x_dt, "values", dvar_x_dt), float)
    dy_ = np.asarray(getattr(dvar_y_dt, "values", dvar_y_dt), float)
    new = q.values + dt * kc2 * (var_x.values * dy_ + var_y.values * dx_)
    return ScalarField(np.where(g.land_mask, 0.0, np.clip(new, 0.0, 1.0)), g)


def step_uncertainty(state: UncertaintyState, U: VectorField, mask, sources, params: UncertaintyParams,
                     dt: float, M: sp.spmatrix | None = None) -> UncertaintyState:
    """Advance variances then the tracer by one step."""
    if M is None:
        check_cfl(U, params.nu, dt)
        M = transport_matrix(U, params.nu)
    sx, sy = sources
    vx = step_variance(state.var_x, U, mask, sx, params, dt, M)
    vy = step_variance(state.var_y, U, mask, sy, params, dt, M)
    q = step_tracer(state.q, state.var_x, state.var_y,
                    (vx.values - state.var_x.values) / dt,
                    (vy.values - state.var_y.values) / dt, params, dt)
    return UncertaintyState(q, vx, vy)


def covariance_injection(cov, basis, grid: GridSpec, gain: float = 1.0,
                         x_blocks=(0,), y_blocks=(1,)) -> CovarianceInjection:
    """Per-cell diagonal of ``basis @ cov @ basis.T`` on the velocity rows.

    ``x_blocks``/``y_blocks`` name which stacked field blocks hold the x and y
    velocity components; their diagonals are summed per cell.
    """
    cov = np.atleast_2d(np.asarray(cov, float))
    B = np.atleast_2d(np.asarray(basis, float))
    if cov.shape != (B.shape[1], B.shape[1]):
        raise DomainError(f"covariance {cov.shape} does not match basis {B.shape}")
    if not np.allclose(cov, cov.T, atol=1e-12 * max(1.0, float(np.abs(cov).max()))):
        raise NumericalError("covariance is not symmetric")
    diag = np.einsum("ij,ij->i", B @ cov, B)
    if diag.min(initial=0.0) < -1e-10:
        raise NumericalError(f"covariance not PSD: diagonal {diag.min():.3e}")
    diag = np.maximum(diag, 0.0)
    n = grid.n_cells

    def collect(blocks):
        out = np.zeros(n)
        for b in blocks:
            out += diag[b * n:(b + 1) * n]
        return np.where(grid.land_mask, 0.0, gain * out.reshape(grid.shape))

    return CovarianceInjection(ScalarField(collect(x_blocks), grid), ScalarField(collect(y_blocks), grid))
