"""Receding-horizon assembly of sensor paths and waypoint persistence."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..domain import ScalarField
from ..uncertainty import UncertaintyState
from .cost import PlanningProblem
from .descent import DescentConfig, DescentResult, descend, initial_positions

log = logging.getLogger(__name__)

DEFAULT_HORIZONS = (1, 2, 4)


@dataclass
class Chain:
    horizon: int
    path: np.ndarray                 # (T, N_p, 2) committed waypoints
    step_costs: np.ndarray           # J of each committed step
    stalled: bool = False

    @property
    def total(self) -> float:
        return float(self.step_costs.sum())


@dataclass
class PlanResult:
    chains: list
    best: Chain
    stalled: bool = False

    @property
    def waypoint(self) -> np.ndarray:
        return self.best.path[0]


def peak_guess(problem: PlanningProblem) -> np.ndarray:
    """Peaks of the time-mean ``E q^2`` of a sensor-free rollout, held over the horizon."""
    far = problem.with_(t_deploy=np.inf)  # every sensor inactive
    ro = far.rollout(far.hold_path())
    n = problem.n_sub
    acc = np.zeros(problem.grid.shape)
    for j in range(1, problem.n_steps + 1):
        acc += problem._E[(j - 1) // n] * ro.q[j] ** 2
    mean = ScalarField(acc / problem.n_steps, problem.grid)
    P = initial_positions(mean, problem.n_p, problem.grid)
    return problem.clamp(np.repeat(P[None], problem.horizon, axis=0))


def optimise_step(problem: PlanningProblem, config: DescentConfig) -> DescentResult:
    """Descend from the cheaper of 'hold position' and 'go to the peaks'."""
    hold = problem.hold_path()
    peaks = peak_guess(problem)
    start = hold if problem.cost(hold).total <= problem.cost(peaks).total else peaks
    return descend(start, problem, config)


def run_chain(base: PlanningProblem, horizon: int, n_steps: int, config: DescentConfig) -> Chain:
    """Optimise over ``horizon``, commit the first waypoint, advance, repeat."""
    state = base.state0
    P_cur = base.P_start
    path, costs = [], []
    stalled = False
    E_all = base._E
    for s in range(n_steps):
        E = [E_all[min(s + k, len(E_all) - 1)] for k in range(horizon)]
        prob = base.with_(horizon=horizon, state0=state, P_start=P_cur, E=E,
                          t_start=base.t_start + s * base.dt_plan)
        res = optimise_step(prob, config)
        stalled |= res.stalled
        w = res.P[0]
        one = prob.with_(horizon=1, E=E[:1])
        ro = one.rollout(w[None])
        costs.append(ro.cost.total)
        g = base.grid
        state = UncertaintyState(ScalarField(ro.q[-1], g), ScalarField(ro.a[-1], g), ScalarField(ro.b[-1], g))
        P_cur = w
        path.append(w)
    return Chain(horizon, np.array(path), np.array(costs), stalled)


def plan_receding_horizon(problem: PlanningProblem, horizons: Sequence[int] = DEFAULT_HORIZONS,
                          config: DescentConfig = DescentConfig()) -> PlanResult:
    """Run one chain per horizon up to the common end and keep the cheapest.

    ``problem.horizon`` is ignored; the ``E`` schedule is reused from its last
    entry when it is shorter than the common end. Ties go to the shorter
    horizon.
    """
    if not horizons:
        raise ValueError("need at least one horizon")
    hs = sorted(set(int(h) for h in horizons))
    end = hs[-1]
    base = problem.with_(horizon=max(problem.horizon, 1))
    chains = [run_chain(base, h, end, config) for h in hs]
    ok = [c for c in chains if not c.stalled]
    pool = ok or chains
    best = min(pool, key=lambda c: (c.total, c.horizon))
    if not ok:
        log.warning("all horizon chains stalled; committing the cheapest")
    return PlanResult(chains, best, stalled=not ok)


# -- persistence ------------------------------------------------------------

WAYPOINT_HEADER = ["cycle", "sensor_id", "t", "x", "y", "committed"]


@dataclass
class WaypointLog:
    rows: list = field(default_factory=list)

    def add(self, cycle: int, t: float, P, committed: bool = True) -> None:
        for s, (x, y) in enumerate(np.atleast_2d(P)):
            self.rows.append((cycle, s, float(t), float(x), float(y), int(committed)))

    def write(self, path, strategy: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow((["strategy"] if strategy else []) + WAYPOINT_HEADER)
            for r in self.rows:
                w.writerow(([strategy] if strategy else []) + [r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4]), r[5]])


def read_waypoints(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["cycle"] = int(r["cycle"])
        r["sensor_id"] = int(r["sensor_id"])
        for k in ("t", "x", "y"):
            r[k] = float(r[k])
        r["committed"] = bool(int(r["committed"]))
    return rows
