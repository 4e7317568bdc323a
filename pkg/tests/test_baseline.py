import math

import numpy as np
import pytest

from spillsense.baseline import (Measurement, ValueReplacementPolicy, follow_path, generate_ladder,
                                 swath_coverage, value_replace)
from spillsense.domain import DomainError, GridSpec, ScalarField, VectorField
from spillsense.oil import cell_volumes, release_spill


@pytest.fixture
def square():
    g = GridSpec(20, 20, 1.0, 1.0)
    p = np.zeros(g.shape)
    p[5:15, 5:15] = 1.0
    return g, ScalarField(p, g)


def test_ladder_spacing_and_coverage(square):
    g, pres = square
    plan = generate_ladder(pres, swath=2.0, overlap=0.1)
    assert math.isclose(plan.spacing, 1.8)
    offs = [p[1] for p, _ in plan.legs]
    assert np.allclose(np.diff(offs), 1.8)
    cov = swath_coverage(plan, g)
    assert np.all(cov[pres.values > 0.01])


def test_ladder_zero_overlap(square):
    _, pres = square
    plan = generate_ladder(pres, swath=2.0, overlap=0.0)
    assert plan.spacing == 2.0 and len(plan.legs) == 5


def test_ladder_sections_balanced(square):
    _, pres = square
    plan = generate_ladder(pres, swath=2.0, n_p=4)
    assert len(plan.sections) == 4
    assert max(plan.legs_per_section) - min(plan.legs_per_section) <= 1
    assert sum(plan.legs_per_section) == len(plan.legs)


def test_ladder_legs_alternate_direction(square):
    _, pres = square
    plan = generate_ladder(pres, swath=2.0)
    for (p0, q0), (p1, q1) in zip(plan.legs, plan.legs[1:]):
        assert np.allclose(q0[0], p1[0])


def test_ladder_empty_prediction(square):
    g, _ = square
    plan = generate_ladder(ScalarField.zeros(g), swath=2.0, release_point=(10.0, 10.0), min_extent=4.0)
    # legs keep their exact spacing, so the last one may overshoot the box by less than one spacing
    lim = 2.0 + plan.spacing
    assert all(abs(p[0] - 10) <= lim and abs(p[1] - 10) <= lim for leg in plan.legs for p in leg)
    assert np.allclose(plan.legs[0][0], [8.0, 9.0])
    with pytest.raises(DomainError):
        generate_ladder(ScalarField.zeros(g), swath=2.0)


def test_follow_path_arc_length(square):
    _, pres = square
    plan = generate_ladder(pres, swath=2.0)
    sec = plan.sections[0]
    L, v = sec.length, 2.0
    assert np.allclose(follow_path(plan, v, 0.0)[0], sec.points[0])
    assert np.allclose(follow_path(plan, v, L / v)[0], sec.points[-1])
    mid = follow_path(plan, v, 0.5 * L / v)[0]
    assert np.allclose(follow_path(plan, v, 1.5 * L / v)[0], mid)


def test_follow_path_speed_audit(square):
    _, pres = square
    plan = generate_ladder(pres, swath=2.0, n_p=3, start_positions=[(0.0, 0.0)] * 3)
    v, dt = 1.5, 0.37
    prev = follow_path(plan, v, 0.0)
    for k in range(1, 400):
        cur = follow_path(plan, v, k * dt)
        assert np.all(np.hypot(*(cur - prev).T) <= v * dt * (1 + 1e-9))
        prev = cur


def _state(grid):
    ens = [release_spill(grid, (5000.0, 5000.0), 1.0, 200, 0.0, seed=0, realization=r) for r in range(2)]
    return ens, VectorField.uniform(grid, 0.1, -0.2)


def test_value_replace_empty_measurement(grid):
    ens, vel = _state(grid)
    out, v2 = value_replace(ens, vel, Measurement(), ValueReplacementPolicy(), 1.0 / 200)
    assert v2 is vel and all(a is b for a, b in zip(out, ens))


def test_value_replace_clear_water_removes_oil(grid):
    ens, vel = _state(grid)
    c = 5 * grid.n_y + 5
    out, _ = value_replace(ens, vel, Measurement(np.array([c]), np.array([0.0])),
                           ValueReplacementPolicy(), 1.0 / 200)
    assert all(o.n_active == 0 for o in out)


def test_value_replace_sets_cell_volume(grid):
    ens, vel = _state(grid)
    c = 3 * grid.n_y + 4
    out, _ = value_replace(ens, vel, Measurement(np.array([c]), np.array([0.25])),
                           ValueReplacementPolicy(), 1.0 / 200)
    for o in out:
        vols = cell_volumes(o, grid)
        assert math.isclose(vols[3, 4], 0.25) and math.isclose(vols[5, 5], 1.0)


def test_velocity_modes(grid):
    ens, vel = _state(grid)
    m = Measurement(vel_cells=np.array([7]), u=np.array([1.0]), v=np.array([2.0]))
    _, same = value_replace(ens, vel, m, ValueReplacementPolicy(velocity_mode="none"), 1.0)
    assert np.array_equal(same.u.values, vel.u.values) and np.array_equal(same.v.values, vel.v.values)
    _, rep = value_replace(ens, vel, m, ValueReplacementPolicy(), 1.0)
    assert rep.u.values.ravel()[7] == 1.0 and rep.v.values.ravel()[7] == 2.0
    others = np.arange(grid.n_cells) != 7
    assert np.array_equal(rep.u.values.ravel()[others], vel.u.values.ravel()[others])
    with pytest.raises(DomainError):
        ValueReplacementPolicy(velocity_mode="blend")


def test_value_replace_idempotent(grid):
    ens, vel = _state(grid)
    m = Measurement(np.array([5 * grid.n_y + 5, 2]), np.array([0.5, 0.1]))
    once, _ = value_replace(ens, vel, m, ValueReplacementPolicy(), 1.0 / 200)
    twice, _ = value_replace(once, vel, m, ValueReplacementPolicy(), 1.0 / 200)
    for a, b in zip(once, twice):
        assert np.allclose(cell_volumes(a, grid), cell_volumes(b, grid))
