import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spillsense.domain import GridSpec, ScalarField, VectorField
from spillsense.placement import (ConfigError, DescentConfig, PenaltyParams, PlanningProblem, WaypointLog,
                                  WeightingConfig, adjoint_residual, backward_sweep, cost_and_gradient,
                                  descend, evaluate_cost, initial_positions, local_maxima, penalty,
                                  plan_receding_horizon, read_waypoints, solve_adjoint, weighting_field)
from spillsense.uncertainty import UncertaintyParams, UncertaintyState, variance_sources

FREE = PenaltyParams(w_v=0.0, w_m=0.0, w_e=0.0)


def make_problem(n=6, horizon=4, seed=0, r_cells=3.0, n_p=1, E=None, pen=FREE, **kw):
    g = GridSpec(n, n, 1000.0, 1000.0)
    rng = np.random.default_rng(seed)
    U = VectorField.from_arrays(0.1 * rng.standard_normal(g.shape), 0.1 * rng.standard_normal(g.shape), g)
    prm = UncertaintyParams(nu=10.0, r=r_cells * 1000.0)
    src = variance_sources(ScalarField.full(g, 5.0), U, prm)
    if E is None:
        E = ScalarField(rng.uniform(0.2, 1.0, g.shape), g)
    st_ = UncertaintyState(ScalarField(rng.uniform(0, 0.1, g.shape), g),
                           ScalarField(rng.uniform(0, 50, g.shape), g), ScalarField(rng.uniform(0, 50, g.shape), g))
    P0 = rng.uniform(1500, n * 1000 - 1500, (n_p, 2))
    kw.setdefault("dt_plan", 900.0)
    kw.setdefault("n_sub", 3)
    return PlanningProblem(g, prm, U, src, E, st_, P0, horizon=horizon, penalty=pen, t_deploy=-1e9, **kw)


def fd_gradient(prob, P, h):
    """Five-point central differences."""
    fd = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        e = np.zeros_like(P)
        e[idx] = h
        f = lambda s: prob.cost(P + s * e).total
        fd[idx] = (8 * (f(1) - f(-1)) - (f(2) - f(-2))) / (12 * h)
    return fd


# -- weighting -------------------------------------------------------------

def test_weighting_domain_only(grid):
    z = ScalarField.zeros(grid)
    E = weighting_field(z, z, z, WeightingConfig(0, 0, 0, 1)).values
    assert np.all(E == 1.0)


def test_weighting_equal_weights():
    land = np.zeros((4, 4), bool)
    land[0, 0] = True
    g = GridSpec(4, 4, 1.0, 1.0, land_mask=land)
    f = np.zeros(g.shape)
    f[2, 2] = 1.0
    F = ScalarField(f, g)
    E = weighting_field(F, F, F, WeightingConfig(1, 1, 1, 1)).values
    assert E[2, 2] == 1.0 and E[0, 0] == 0.0
    assert np.allclose(np.delete(E.ravel(), [0, 10]), 0.25)
    with pytest.raises(ConfigError):
        weighting_field(F, F, F, WeightingConfig(0, 0, 0, 0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.lists(st.floats(0, 5), min_size=4, max_size=4).filter(lambda w: sum(w) > 0))
def test_weighting_is_convex(seed, w):
    g = GridSpec(5, 5, 1.0, 1.0)
    rng = np.random.default_rng(seed)
    fs = [ScalarField(rng.uniform(0, 1, g.shape), g) for _ in range(3)]
    E = weighting_field(*fs, WeightingConfig(*w)).values
    comps = np.stack([f.values for f in fs] + [np.ones(g.shape)])
    used = comps[np.asarray(w) > 0]
    assert np.all(E >= used.min(axis=0) - 1e-12) and np.all(E <= used.max(axis=0) + 1e-12)
    assert np.all((E >= 0) & (E <= 1))


# -- penalty ---------------------------------------------------------------

def test_penalty_inactive(grid):
    interest = np.zeros(grid.shape, bool)
    interest[5, 5] = True
    pr = penalty([(5500.0, 5500.0)], [(5000.0, 5000.0)], interest, grid.land_mask, grid, PenaltyParams())
    assert pr.c == 0.0 and np.all(pr.grad == 0)


def test_penalty_reach_hinge(grid):
    pp = PenaltyParams(v_sensor=1.0, dt_plan=1000.0)
    interest = np.ones(grid.shape, bool)
    pr = penalty([(1000.0 + 1100.0, 1000.0)], [(1000.0, 1000.0)], interest, grid.land_mask, grid, pp)
    assert math.isclose(pr.V, 100.0**2) and math.isclose(pr.c, 1e4)
    assert np.allclose(pr.grad, [[200.0, 0.0]]) and np.allclose(pr.grad_prev, [[-200.0, 0.0]])


def test_penalty_exclusion_points_to_water():
    land = np.zeros((10, 6), bool)
    land[:4] = True
    g = GridSpec(10, 6, 1.0, 1.0, land_mask=land)
    pr = penalty([(0.0, 2.0)], [(0.0, 2.0)], np.zeros(g.shape, bool), land, g, PenaltyParams(r=1.0))
    assert math.isclose(pr.D_e, 4.0)
    # descent direction -grad points from the land cell to the nearest water cell (+x)
    assert np.allclose(-pr.grad, [[1.0, 0.0]])


def test_penalty_distance_to_interest(grid):
    interest = np.zeros(grid.shape, bool)
    interest[9, 5] = True
    pr = penalty([(1000.0, 5000.0)], [(1000.0, 5000.0)], interest, grid.land_mask, grid, PenaltyParams(r=1000.0))
    assert math.isclose(pr.D_m, 7000.0) and np.allclose(pr.grad, [[-1.0, 0.0]])


# -- cost ------------------------------------------------------------------

def test_zero_weighting_gives_zero_cost_and_adjoint():
    prob = make_problem(E=ScalarField.zeros(GridSpec(6, 6, 1000.0, 1000.0)))
    P = prob.hold_path()
    ro = prob.rollout(P)
    assert ro.cost.total == 0.0
    adj = solve_adjoint(prob, ro)
    assert all(np.all(c == 0) for l in adj.lam[1:] for c in l)


def test_cost_linear_in_weighting():
    a = make_problem(seed=3)
    b = a.with_(E=ScalarField(2 * a._E[0], a.grid))
    P = a.hold_path()
    assert math.isclose(b.cost(P).uncertainty, 2 * a.cost(P).uncertainty, rel_tol=1e-13)


def test_parked_sensor_lowers_cost():
    g = GridSpec(6, 6, 1000.0, 1000.0)
    v = np.zeros(g.shape)
    v[2, 3] = 40.0
    state = UncertaintyState(ScalarField(np.where(v > 0, 0.2, 0.0), g), ScalarField(v, g), ScalarField(v, g))
    prm = UncertaintyParams(nu=0.0, k_s=1.0, r=600.0)
    srcv = np.zeros(g.shape)
    srcv[2, 3] = 0.01
    prob = PlanningProblem(g, prm, VectorField.zeros(g), (srcv, srcv), ScalarField.full(g, 1.0), state,
                           [(2500.0, 3500.0)], horizon=3, penalty=FREE, t_deploy=-1e9)
    parked = prob.cost(prob.hold_path()).total
    empty = prob.with_(t_deploy=np.inf).cost(prob.hold_path()).total
    assert parked < empty


def test_cost_breakdown_adds_up():
    prob = make_problem(pen=PenaltyParams(v_sensor=0.5, dt_plan=900.0))
    P = prob.hold_path() + np.array([800.0, 0.0])
    c = evaluate_cost(prob, P)
    assert abs(c.total - (c.uncertainty + c.penalty)) <= 1e-10 * c.total and c.penalty > 0


# -- adjoint ---------------------------------------------------------------

def test_backward_sweep_hand_solution():
    b, c1, c2 = 0.7, 1.5, -2.0
    rhs = {1: (np.array([c1]),), 2: (np.array([c2]),)}
    lam, _ = backward_sweep(2, lambda j, l: ((b * l[0],), None), lambda j: rhs[j])
    assert abs(lam[2][0][0] - c2) < 1e-12 and abs(lam[1][0][0] - (c1 + b * c2)) < 1e-12


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_adjoint_residual_small(seed):
    prob = make_problem(n=4, horizon=5, n_sub=1, seed=seed, r_cells=1.5)
    P = prob.hold_path() + np.random.default_rng(seed).uniform(-500, 500, (5, 1, 2))
    P = np.clip(P, 100, 3900)
    ro = prob.rollout(P)
    assert adjoint_residual(prob, ro, solve_adjoint(prob, ro)) <= 1e-8


def test_gradient_matches_fd_small_step():
    prob = make_problem(n=8, horizon=3, seed=5, n_p=2)
    P = prob.hold_path() + np.random.default_rng(5).uniform(-600, 600, (3, 2, 2))
    _, G = cost_and_gradient(prob, P)
    fd = fd_gradient(prob, P, 0.1)
    assert np.all(np.abs(G - fd) <= 1e-5 * np.abs(fd).max())


def test_penalty_only_gradient(grid):
    pp = PenaltyParams(v_sensor=1.0, dt_plan=900.0, r=1000.0)
    prob = make_problem(E=ScalarField.zeros(GridSpec(6, 6, 1000.0, 1000.0)), horizon=1, pen=pp)
    P = prob.hold_path() + np.array([1200.0, -300.0])
    c, G = cost_and_gradient(prob, P)
    pr = penalty(P[0], prob.P_start, np.zeros(prob.grid.shape, bool), prob.excluded, prob.grid, pp)
    assert c.uncertainty == 0.0 and math.isclose(c.total, pr.c)
    assert np.allclose(G[0], pr.grad, rtol=0, atol=1e-12)


def test_far_sensor_flat_weighting_has_no_uncertainty_gradient():
    g = GridSpec(10, 10, 1000.0, 1000.0)
    v = np.zeros(g.shape)
    v[:2, :2] = 30.0
    state = UncertaintyState(ScalarField(np.where(v > 0, 0.1, 0.0), g), ScalarField(v, g), ScalarField(v, g))
    zero = np.zeros(g.shape)
    prm = UncertaintyParams(nu=0.0, r=1000.0)
    prob = PlanningProblem(g, prm, VectorField.zeros(g), (zero, zero), ScalarField.full(g, 1.0), state,
                           [(8500.0, 8500.0)], horizon=2, penalty=FREE, t_deploy=-1e9)
    _, G = cost_and_gradient(prob, prob.hold_path())
    assert np.abs(G).max() <= 1e-10
    pp = PenaltyParams(r=1000.0)
    _, G2 = cost_and_gradient(prob.with_(penalty=pp), prob.hold_path())
    ro = prob.rollout(prob.hold_path())
    pr = penalty(prob.P_start, prob.P_start, ro.interest[1], prob.excluded, g, pp)
    assert np.allclose(G2[1], pr.grad, atol=1e-10)


# -- initialisation --------------------------------------------------------

def _bump(g, cx, cy, h, w=1500.0):
    X, Y = g.centers()
    return h * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))


def test_initial_positions_single_peak(grid):
    f = _bump(grid, 3000.0, 6000.0, 1.0)
    assert np.allclose(initial_positions(ScalarField(f, grid), 1), [[3000.0, 6000.0]])


def test_initial_positions_ordered(grid):
    f = _bump(grid, 2000.0, 2000.0, 1.0) + _bump(grid, 9000.0, 7000.0, 2.0)
    assert np.allclose(initial_positions(ScalarField(f, grid), 2), [[9000.0, 7000.0], [2000.0, 2000.0]])


def test_initial_positions_fill_and_fallback(grid):
    f = _bump(grid, 5000.0, 4000.0, 1.0)
    P = initial_positions(ScalarField(f, grid), 3)
    assert np.allclose(P[0], [5000.0, 4000.0]) and len({tuple(p) for p in P}) == 3
    with pytest.warns(RuntimeWarning):
        P = initial_positions(ScalarField.zeros(grid), 2)
    assert np.allclose(P, [[5500.0, 4500.0]] * 2)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_local_maxima_beat_neighbours(seed):
    from scipy.ndimage import gaussian_filter
    f = gaussian_filter(np.random.default_rng(seed).standard_normal((15, 12)), 1.5)
    peaks = local_maxima(f)
    assert peaks
    for i, j in peaks:
        nb = f[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2]
        assert f[i, j] == nb.max() and np.count_nonzero(nb == f[i, j]) == 1


# -- descent ---------------------------------------------------------------

class Quadratic:
    cell_width = 1.0

    def __init__(self, target):
        self.target = np.asarray(target, float)

    def cost(self, P):
        from spillsense.placement import CostBreakdown
        v = float(np.sum((P - self.target) ** 2))
        return CostBreakdown(v, v, 0.0, np.array([v]))

    def cost_and_gradient(self, P):
        return self.cost(P), 2 * (P - self.target)


def test_descent_quadratic_converges():
    q = Quadratic([[3.0, -2.0], [10.0, 4.0]])
    res = descend(np.zeros((2, 2)), q, DescentConfig())
    assert np.linalg.norm(res.P - q.target) < 1e-3 and res.iterations <= 50 and res.converged
    assert np.all(np.diff(res.history) <= 0)


def test_descent_at_minimum_returns_immediately():
    q = Quadratic([[1.0, 1.0]])
    res = descend(q.target.copy(), q)
    assert res.iterations == 0 and res.converged and np.array_equal(res.P, q.target)


def test_descent_monotone_on_scenario():
    prob = make_problem(n=8, horizon=2, seed=4, pen=PenaltyParams())
    P0 = prob.hold_path()
    res = descend(P0, prob, DescentConfig(max_iters=15))
    assert np.all(np.diff(res.history) <= 0)
    assert res.cost.total <= prob.cost(prob.clamp(P0)).total


def test_descent_config_validation():
    with pytest.raises(ConfigError):
        DescentConfig(c1=1.5)


def test_weighting_scale_leaves_argmin_unchanged():
    a = make_problem(n=8, horizon=2, seed=6)
    b = a.with_(E=ScalarField(3.0 * a._E[0], a.grid))
    cfg = DescentConfig(max_iters=10)
    ra, rb = descend(a.hold_path(), a, cfg), descend(b.hold_path(), b, cfg)
    assert np.allclose(ra.P, rb.P, atol=1e-6)


# -- receding horizon ------------------------------------------------------

def _plan_problem(seed=7):
    return make_problem(n=8, horizon=1, seed=seed, n_p=2, pen=PenaltyParams(v_sensor=2.0, dt_plan=900.0))


def test_single_horizon_equals_chained_descent():
    from spillsense.placement.horizon import optimise_step
    prob = _plan_problem()
    cfg = DescentConfig(max_iters=5)
    res = plan_receding_horizon(prob, [1], cfg)
    ref = optimise_step(prob.with_(horizon=1), cfg)
    assert len(res.chains) == 1 and np.allclose(res.waypoint, ref.P[0])


def test_horizon_selects_cheapest_chain():
    prob = _plan_problem(seed=8)
    res = plan_receding_horizon(prob, [1, 2], DescentConfig(max_iters=4))
    totals = [c.total for c in res.chains]
    assert res.best.total == min(totals)
    assert all(len(c.path) == 2 for c in res.chains)


def test_committed_waypoints_respect_speed():
    prob = _plan_problem(seed=9)
    res = plan_receding_horizon(prob, [1, 2], DescentConfig(max_iters=4))
    reach = prob.penalty.reach
    for c in res.chains:
        prev = prob.P_start
        for w in c.path:
            assert np.all(np.hypot(*(w - prev).T) <= reach * (1 + 1e-9))
            prev = w


def test_waypoint_csv_roundtrip(tmp_path):
    log = WaypointLog()
    log.add(0, 900.0, [(1.0, 2.0), (3.0, 4.0)])
    log.add(1, 1800.0, [(5.0, 6.0), (7.0, 8.0)], committed=False)
    p = tmp_path / "w.csv"
    log.write(p)
    assert open(p).readline().strip() == "cycle,sensor_id,t,x,y,committed"
    rows = read_waypoints(p)
    assert rows[3] == {"cycle": 1, "sensor_id": 1, "t": 1800.0, "x": 7.0, "y": 8.0, "committed": False}
