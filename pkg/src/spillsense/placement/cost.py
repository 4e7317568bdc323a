"""Planning cost, penalty terms and the discrete adjoint of the uncertainty rollout.

The planning model advances ``(var_x, var_y, q)`` with the update documented
in :mod:`spillsense.uncertainty`. Sensor removal uses the smooth footprint, so
the rollout is differentiable in the sensor path and :func:`gradient` returns
its exact derivative (up to the clamps, which are treated as locally fixed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ..domain import DomainError, GridSpec, ScalarField, VectorField, check_same_grid
from ..uncertainty import (UncertaintyParams, UncertaintyState, check_cfl, sensor_active,
                           smooth_footprint, transport_matrix)


class ConfigError(ValueError):
    pass


# -- weighting --------------------------------------------------------------

@dataclass(frozen=True)
class WeightingConfig:
    k_pov: float = 1.0
    k_se: float = 1.0
    k_pdmd: float = 1.0
    k_domain: float = 1.0

    @property
    def k_T(self) -> float:
        return self.k_pov + self.k_se + self.k_pdmd + self.k_domain


def weighting_field(presence: ScalarField, entropy: ScalarField, pdmd: ScalarField,
                    config: WeightingConfig) -> ScalarField:
    g = presence.grid
    check_same_grid(g, entropy.grid)
    check_same_grid(g, pdmd.grid)
    ks = (config.k_pov, config.k_se, config.k_pdmd, config.k_domain)
    if min(ks) < 0:
        raise ConfigError("weights must be non-negative")
    kT = config.k_T
    if not kT > 0:
        raise ConfigError("weights sum to zero")
    E = (config.k_pov * presence.values + config.k_se * entropy.values
         + config.k_pdmd * pdmd.values + config.k_domain) / kT
    return ScalarField(np.where(g.land_mask, 0.0, E), g)


# -- penalty ----------------------------------------------------------------

@dataclass(frozen=True)
class PenaltyParams:
    v_sensor: float = 26.8224
    dt_plan: float = 900.0
    r: float = 1000.0
    w_v: float = 1.0
    w_m: float = 1.0
    w_e: float = 1.0
    interest_floor: float = 0.0

    @property
    def reach(self) -> float:
        return self.v_sensor * self.dt_plan


def excluded_cells(grid: GridSpec, no_fly=None) -> np.ndarray:
    ex = grid.land_mask.copy()
    if no_fly is not None:
        ex |= np.asarray(no_fly, bool)
    return ex


def _nearest(cx, cy, px, py):
    d2 = (cx - px) ** 2 + (cy - py) ** 2
    k = int(np.argmin(d2))
    return math.sqrt(d2[k]), cx[k] - px, cy[k] - py


@dataclass
class PenaltyResult:
    c: float
    grad: np.ndarray       # (N_p, 2) with respect to the positions
    grad_prev: np.ndarray  # (N_p, 2) with respect to the previous positions
    V: float = 0.0
    D_m: float = 0.0
    D_e: float = 0.0


def penalty(P, P_prev, interest: np.ndarray, excluded: np.ndarray, grid: GridSpec,
            params: PenaltyParams) -> PenaltyResult:
    """Reachability, distance-to-interest and exclusion penalties for one step.

    ``V = (max(0, |P - P_prev| - reach))^2``, ``D_m = max(0, d_interest - r)``
    and ``D_e`` is the distance to the nearest permissible cell centre while
    the sensor sits in an excluded cell. Each term is weighted and summed over
    sensors.
    """
    P = np.atleast_2d(np.asarray(P, float))
    P_prev = np.atleast_2d(np.asarray(P_prev, float))
    n = len(P)
    g = np.zeros((n, 2))
    gp = np.zeros((n, 2))
    X, Y = grid.centers()
    Xf, Yf = X.ravel(), Y.ravel()
    int_idx = np.flatnonzero(np.asarray(interest, bool).ravel())
    ok_idx = np.flatnonzero(~np.asarray(excluded, bool).ravel())
    from ..domain import inside, locate_many
    V = Dm = De = 0.0
    for s in range(n):
        d = P[s] - P_prev[s]
        dist = float(np.hypot(*d))
        over = dist - params.reach
        if over > 0:
            V += over**2
            unit = d / dist
            g[s] += params.w_v * 2 * over * unit
            gp[s] -= params.w_v * 2 * over * unit
        if int_idx.size:
            dm, vx, vy = _nearest(Xf[int_idx], Yf[int_idx], P[s, 0], P[s, 1])
            if dm > params.r:
                Dm += dm - params.r
                # d/dP of |C - P| = -(C - P)/|C - P|
                g[s] += params.w_m * np.array([-vx, -vy]) / dm
        if ok_idx.size and inside(grid, P[s, 0], P[s, 1]):
            i, j = locate_many(grid, P[s, 0], P[s, 1])
            if excluded[int(i), int(j)]:
                de, vx, vy = _nearest(Xf[ok_idx], Yf[ok_idx], P[s, 0], P[s, 1])
                De += de
                if de > 0:
                    g[s] += params.w_e * np.array([-vx, -vy]) / de
    c = params.w_v * V + params.w_m * Dm + params.w_e * De
    return PenaltyResult(c, g, gp, V, Dm, De)


# -- rollout ----------------------------------------------------------------

@dataclass
class CostBreakdown:
    total: float
    uncertainty: float
    penalty: float
    per_step: np.ndarray  # (H,) cost per planning step

    def __post_init__(self):
        if abs(self.total - (self.uncertainty + self.penalty)) > 1e-10 * max(1.0, abs(self.total)):
            raise ArithmeticError("cost breakdown does not add up")


@dataclass
class Rollout:
    P: np.ndarray                 # (H, N_p, 2)
    a: list                       # var_x per sub-step, length N+1
    b: list
    q: list
    a_hat: list                   # pre-clamp values per sub-step (length N, index j-1)
    b_hat: list
    q_hat: list
    masks: list                   # (N_p, nx, ny) footprints per planning step
    dmx: list
    dmy: list
    interest: list                # per planning step
    cost: CostBreakdown = None


@dataclass
class PlanningProblem:
    """One sensor-path optimisation over ``horizon`` planning steps.

    ``E`` is one field or a sequence with one field per planning step; the
    drift ``U`` and the variance sources are held fixed over the horizon.
    """

    grid: GridSpec
    params: UncertaintyParams
    U: VectorField
    sources: tuple
    E: object
    state0: UncertaintyState
    P_start: np.ndarray
    horizon: int
    t_start: float = 0.0
    dt_plan: float = 900.0
    n_sub: int = 1
    penalty: PenaltyParams = field(default_factory=PenaltyParams)
    excluded: np.ndarray | None = None
    P_deploy: np.ndarray | None = None
    t_deploy: float = -math.inf
    _M: sp.spmatrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.horizon < 1 or self.n_sub < 1:
            raise DomainError("horizon and n_sub must be at least 1")
        check_same_grid(self.grid, self.U.grid)
        self.P_start = np.atleast_2d(np.asarray(self.P_start, float))
        if self.excluded is None:
            self.excluded = excluded_cells(self.grid)
        if self.P_deploy is None:
            self.P_deploy = self.P_start.copy()
        check_cfl(self.U, self.params.nu, self.dt)
        if self._M is None:
            self._M = transport_matrix(self.U, self.params.nu)
        E = self.E
        if isinstance(E, ScalarField) or (isinstance(E, np.ndarray) and E.ndim == 2):
            E = [E] * self.horizon
        if len(E) < self.horizon:
            raise DomainError("E schedule shorter than the horizon")
        self._E = [np.asarray(getattr(e, "values", e), float) for e in E[: self.horizon]]

    @property
    def dt(self) -> float:
        return self.dt_plan / self.n_sub

    @property
    def n_p(self) -> int:
        return len(self.P_start)

    @property
    def cell_width(self) -> float:
        return min(self.grid.dx, self.grid.dy)

    @property
    def n_steps(self) -> int:
        return self.horizon * self.n_sub

    def with_(self, **kw) -> "PlanningProblem":
        kw.setdefault("_M", self._M if "U" not in kw else None)
        return replace(self, **kw)

    def hold_path(self) -> np.ndarray:
        return np.repeat(self.P_start[None], self.horizon, axis=0)

    def _shape(self, P) -> np.ndarray:
        P = np.asarray(P, float)
        if P.shape != (self.horizon, self.n_p, 2):
            P = P.reshape(self.horizon, self.n_p, 2)
        return P

    # ---- forward
    def rollout(self, P) -> Rollout:
        P = self._shape(P)
        g = self.grid
        land = g.land_mask
        prm = self.params
        k2 = prm.k_chi(g) ** 2
        dt = self.dt
        sx, sy = self._sources()
        M = self._M
        a = [self.state0.var_x.values.copy()]
        b = [self.state0.var_y.values.copy()]
        q = [self.state0.q.values.copy()]
        ah, bh, qh = [], [], []
        masks, dmxs, dmys, interests = [], [], [], []
        unc_steps = np.zeros(self.horizon)
        pen_steps = np.zeros(self.horizon)
        area = g.cell_area
        for k in range(self.horizon):
            interests.append(self._E[k] * q[-1] > self.penalty.interest_floor)
            t_k = self.t_start + (k + 1) * self.dt_plan
            act = sensor_active(P[k], self.P_deploy, t_k, self.t_deploy, prm.v_sensor)
            m_i, dmx, dmy = smooth_footprint(P[k], prm.r, g, act)
            masks.append(m_i)
            dmxs.append(dmx)
            dmys.append(dmy)
            m = 1.0 - np.prod(1.0 - m_i, axis=0)
            for _ in range(self.n_sub):
                a0, b0, q0 = a[-1], b[-1], q[-1]
                a_hat = (1.0 - prm.k_s * m) * (a0 + dt * (M @ a0.ravel()).reshape(g.shape) + dt * sx)
                b_hat = (1.0 - prm.k_s * m) * (b0 + dt * (M @ b0.ravel()).reshape(g.shape) + dt * sy)
                a1 = np.where(land, 0.0, np.maximum(a_hat, 0.0))
                b1 = np.where(land, 0.0, np.maximum(b_hat, 0.0))
                q_hat = q0 + k2 * (a0 * (b1 - b0) + b0 * (a1 - a0))
                q1 = np.where(land, 0.0, np.clip(q_hat, 0.0, 1.0))
                ah.append(a_hat)
                bh.append(b_hat)
                qh.append(q_hat)
                a.append(a1)
                b.append(b1)
                q.append(q1)
                unc_steps[k] += float(np.sum(self._E[k] * q1**2)) * area * dt
            prev = self.P_start if k == 0 else P[k - 1]
            pen_steps[k] = penalty(P[k], prev, interests[k], self.excluded, g, self.penalty).c
        unc = float(unc_steps.sum())
        pen = float(pen_steps.sum())
        cost = CostBreakdown(unc + pen, unc, pen, unc_steps + pen_steps)
        return Rollout(P, a, b, q, ah, bh, qh, masks, dmxs, dmys, interests, cost)

    def cost(self, P) -> CostBreakdown:
        return self.rollout(P).cost

    def cost_and_gradient(self, P):
        ro = self.rollout(P)
        return ro.cost, gradient(solve_adjoint(self, ro), ro, self)

    def clamp(self, P) -> np.ndarray:
        from .descent import clamp_path
        return clamp_path(self._shape(P), self.P_start, self.penalty.reach, self.excluded, self.grid)

    def final_state(self, P) -> UncertaintyState:
        r = self.rollout(P)
        g = self.grid
        return UncertaintyState(ScalarField(r.q[-1], g), ScalarField(r.a[-1], g), ScalarField(r.b[-1], g))

    def _sources(self):
        return tuple(np.asarray(getattr(s, "values", s), float) for s in self.sources)

    # ---- adjoint
    def dJ_dx(self, ro: Rollout, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Explicit derivative of J with respect to sub-step state ``j`` (1..N)."""
        k = (j - 1) // self.n_sub
        z = np.zeros(self.grid.shape)
        dq = 2.0 * self._E[k] * ro.q[j] * self.grid.cell_area * self.dt
        return z, z.copy(), dq

    def step_vjp(self, ro: Rollout, j: int, lam):
        """Transpose of the step ``x_{j-1} -> x_j`` applied to ``lam``.

        Returns ``(lam_prev, mbar)``: the adjoint pulled back to ``x_{j-1}``
        and the adjoint of the (union) sensor mask used in that step.
        """
        la, lb, lq = lam
        g = self.grid
        land = g.land_mask
        prm = self.params
        k2 = prm.k_chi(g) ** 2
        dt = self.dt
        a0, b0 = ro.a[j - 1], ro.b[j - 1]
        a1, b1 = ro.a[j], ro.b[j]
        k = (j - 1) // self.n_sub
        m = 1.0 - np.prod(1.0 - ro.masks[k], axis=0)
        qh = ro.q_hat[j - 1]
        chi_q = (~land) & (qh > 0.0) & (qh < 1.0)
        mu_q = np.where(chi_q, lq, 0.0)
        abar = la + k2 * b0 * mu_q
        bbar = lb + k2 * a0 * mu_q
        nu_a = np.where((~land) & (ro.a_hat[j - 1] > 0.0), abar, 0.0)
        nu_b = np.where((~land) & (ro.b_hat[j - 1] > 0.0), bbar, 0.0)
        MT = self._M.T
        keep = 1.0 - prm.k_s * m
        ka, kb = keep * nu_a, keep * nu_b
        la0 = ka + dt * (MT @ ka.ravel()).reshape(g.shape) + k2 * (b1 - 2 * b0) * mu_q
        lb0 = kb + dt * (MT @ kb.ravel()).reshape(g.shape) + k2 * (a1 - 2 * a0) * mu_q
        # removal acts on the transported value w = x + dt (M x + s)
        sx, sy = self._sources()
        wa = a0 + dt * (self._M @ a0.ravel()).reshape(g.shape) + dt * sx
        wb = b0 + dt * (self._M @ b0.ravel()).reshape(g.shape) + dt * sy
        mbar = -prm.k_s * (wa * nu_a + wb * nu_b)
        return (la0, lb0, mu_q), mbar


@dataclass
class AdjointSolution:
    lam: list        # lam[j] = (la, lb, lq) for j = 1..N; lam[0] is None
    mbar: list       # mbar[j] for the step into state j; mbar[0] is None

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([c.ravel() for c in l]) for l in self.lam[1:]])


def backward_sweep(n_steps: int, vjp: Callable, dJdx: Callable):
    """Solve ``(dF/dx)^T lam = dJ/dx`` for ``F_j = x_j - Phi_j(x_{j-1})``.

    ``vjp(j, lam_j)`` returns ``(Phi_j'(x_{j-1})^T lam_j, extra)``.
    Returns ``(lam, extras)`` indexed 1..n_steps (index 0 unused).
    """
    lam = [None] * (n_steps + 1)
    extras = [None] * (n_steps + 1)
    carry = None
    for j in range(n_steps, 0, -1):
        rhs = dJdx(j)
        lam[j] = rhs if carry is None else tuple(r + c for r, c in zip(rhs, carry))
        carry, extras[j] = vjp(j, lam[j])
    return lam, extras


def solve_adjoint(problem: PlanningProblem, ro: Rollout) -> AdjointSolution:
    lam, mbar = backward_sweep(problem.n_steps,
                               lambda j, l: problem.step_vjp(ro, j, l),
                               lambda j: problem.dJ_dx(ro, j))
    return AdjointSolution(lam, mbar)


def gradient(adj: AdjointSolution, ro: Rollout, problem: PlanningProblem) -> np.ndarray:
    """``dJ/dP = lam^T dPhi/dP + dJ/dP`` with shape ``(H, N_p, 2)``."""
    H, n = problem.horizon, problem.n_p
    G = np.zeros((H, n, 2))
    for j in range(1, problem.n_steps + 1):
        k = (j - 1) // problem.n_sub
        mi = ro.masks[k]
        mb = adj.mbar[j]
        for i in range(n):
            others = np.prod(np.delete(1.0 - mi, i, axis=0), axis=0) if n > 1 else 1.0
            w = mb * others
            G[k, i, 0] += float(np.sum(w * ro.dmx[k][i]))
            G[k, i, 1] += float(np.sum(w * ro.dmy[k][i]))
    for k in range(H):
        prev = problem.P_start if k == 0 else ro.P[k - 1]
        pr = penalty(ro.P[k], prev, ro.interest[k], problem.excluded, problem.grid, problem.penalty)
        G[k] += pr.grad
        if k > 0:
            G[k - 1] += pr.grad_prev
    return G


def cost_and_gradient(problem: PlanningProblem, P) -> tuple[CostBreakdown, np.ndarray]:
    ro = problem.rollout(P)
    adj = solve_adjoint(problem, ro)
    return ro.cost, gradient(adj, ro, problem)


def evaluate_cost(problem: PlanningProblem, P) -> CostBreakdown:
    return problem.cost(P)


# -- verification helpers ---------------------------------------------------

def step_function(problem: PlanningProblem, ro: Rollout, j: int) -> Callable[[np.ndarray], np.ndarray]:
    """``x_{j-1} -> x_j`` as a flat map with the step's mask frozen (for checks)."""
    g = problem.grid
    land = g.land_mask
    prm = problem.params
    k2 = prm.k_chi(g) ** 2
    dt = problem.dt
    sx, sy = (np.asarray(getattr(s, "values", s), float) for s in problem.sources)
    M = problem._M
    k = (j - 1) // problem.n_sub
    m = 1.0 - np.prod(1.0 - ro.masks[k], axis=0)
    n = g.n_cells

    def phi(x):
        a0, b0, q0 = (x[i * n:(i + 1) * n].reshape(g.shape) for i in range(3))
        a_hat = (1.0 - prm.k_s * m) * (a0 + dt * (M @ a0.ravel()).reshape(g.shape) + dt * sx)
        b_hat = (1.0 - prm.k_s * m) * (b0 + dt * (M @ b0.ravel()).reshape(g.shape) + dt * sy)
        a1 = np.where(land, 0.0, np.maximum(a_hat, 0.0))
        b1 = np.where(land, 0.0, np.maximum(b_hat, 0.0))
        q_hat = q0 + k2 * (a0 * (b1 - b0) + b0 * (a1 - a0))
        q1 = np.where(land, 0.0, np.clip(q_hat, 0.0, 1.0))
        return np.concatenate([a1.ravel(), b1.ravel(), q1.ravel()])

    return phi


def adjoint_residual(problem: PlanningProblem, ro: Rollout, adj: AdjointSolution,
                     h_rel: float = 1e-4) -> float:
    """Relative residual ``||(dF/dx)^T lam - dJ/dx|| / ||dJ/dx||``.

    The step Jacobians are assembled independently by central differences of
    :func:`step_function`; the update is at most quadratic in the state, so
    the differences are exact up to rounding. Intended for small grids.
    """
    N = problem.n_steps
    n3 = 3 * problem.grid.n_cells
    lam = adj.flat()
    rhs = np.concatenate([np.concatenate([c.ravel() for c in problem.dJ_dx(ro, j)]) for j in range(1, N + 1)])
    res = lam.copy()
    for j in range(2, N + 1):
        phi = step_function(problem, ro, j)
        x0 = np.concatenate([ro.a[j - 1].ravel(), ro.b[j - 1].ravel(), ro.q[j - 1].ravel()])
        scale = np.maximum(np.abs(x0), 1.0) * h_rel
        Jac = np.empty((n3, n3))
        for c in range(n3):
            e = np.zeros(n3)
            e[c] = scale[c]
            Jac[:, c] = (phi(x0 + e) - phi(x0 - e)) / (2 * scale[c])
        # block row for x_{j-1}: lam_{j-1} - Jac^T lam_j
        res[(j - 2) * n3:(j - 1) * n3] -= Jac.T @ lam[(j - 1) * n3:j * n3]
    return float(np.linalg.norm(res - rhs) / max(np.linalg.norm(rhs), 1e-300))
