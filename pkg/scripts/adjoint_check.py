#!/usr/bin/env python3
"""Compare the adjoint gradient of the planning cost with finite differences.

Prints the componentwise relative error for a sweep of finite-difference steps
and both the second- and fourth-order central stencils, which shows where the
difference oracle is limited by truncation (large h) and by rounding (small h).
"""
import argparse
import time

import numpy as np

from spillsense.domain import GridSpec, ScalarField, VectorField
from spillsense.placement import PenaltyParams, PlanningProblem, adjoint_residual, cost_and_gradient, solve_adjoint
from spillsense.uncertainty import UncertaintyParams, UncertaintyState, variance_sources


def build(n, horizon, n_p, r_cells, seed):
    g = GridSpec(n, n, 1000.0, 1000.0)
    rng = np.random.default_rng(seed)
    U = VectorField.from_arrays(0.1 * rng.standard_normal(g.shape), 0.1 * rng.standard_normal(g.shape), g)
    prm = UncertaintyParams(nu=10.0, r=r_cells * g.dx)
    src = variance_sources(ScalarField.full(g, 5.0), U, prm)
    E = ScalarField(rng.uniform(0.2, 1.0, g.shape), g)
    state = UncertaintyState(ScalarField(rng.uniform(0, 0.1, g.shape), g),
                             ScalarField(rng.uniform(0, 50, g.shape), g), ScalarField(rng.uniform(0, 50, g.shape), g))
    P0 = rng.uniform(1500, n * 1000 - 1500, (n_p, 2))
    prob = PlanningProblem(g, prm, U, src, E, state, P0, horizon=horizon, n_sub=3,
                           penalty=PenaltyParams(w_v=0, w_m=0, w_e=0), t_deploy=-1e9)
    P = prob.hold_path() + rng.uniform(-600, 600, (horizon, n_p, 2))
    return prob, P


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--horizon", type=int, default=4)
    ap.add_argument("--sensors", type=int, default=1)
    ap.add_argument("--radius-cells", type=float, default=3.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    prob, P = build(args.n, args.horizon, args.sensors, args.radius_cells, args.seed)
    t0 = time.perf_counter()
    c, G = cost_and_gradient(prob, P)
    print(f"J = {c.total:.6g}; adjoint gradient in {time.perf_counter() - t0:.3f} s")
    ro = prob.rollout(P)
    if prob.grid.n_cells <= 64:
        print(f"adjoint residual {adjoint_residual(prob, ro, solve_adjoint(prob, ro)):.2e}")
    f = lambda Q: prob.cost(Q).total
    print(f"{'h [m]':>8s} {'2nd order':>10s} {'4th order':>10s}")
    for h in (400.0, 100.0, 10.0, 1.0, 0.1, 1e-3):
        fd2 = np.zeros_like(P)
        fd4 = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            e = np.zeros_like(P)
            e[idx] = h
            d1, d2 = f(P + e) - f(P - e), f(P + 2 * e) - f(P - 2 * e)
            fd2[idx] = d1 / (2 * h)
            fd4[idx] = (8 * d1 - d2) / (12 * h)
        r2 = np.max(np.abs(G - fd2) / np.abs(fd2))
        r4 = np.max(np.abs(G - fd4) / np.abs(fd4))
        print(f"{h:8.3g} {r2:10.2e} {r4:10.2e}")


if __name__ == "__main__":
    main()
