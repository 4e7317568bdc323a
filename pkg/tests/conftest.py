import sys

import numpy as np
import pytest

from spillsense.domain import GridSpec


@pytest.fixture
def grid():
    return GridSpec(12, 10, 1000.0, 1000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _small_config(seed=0, **kw):
    """A 20 x 20, three-hour scenario that runs all strategies in a few seconds."""
    from spillsense.harness.config import (FleetConfig, GridConfig, OutputConfig, PlanConfig, RomConfig,
                                           ScenarioConfig, SpillConfig, TimeConfig)
    H = 3600.0
    blocks = dict(
        grid=GridConfig(20, 20, 1000.0, 1000.0, coast_rows=2, islands=[[12, 14, 5, 7]]),
        time=TimeConfig(0.0, 3 * H, 60.0, 5),
        spill=SpillConfig(point=(6000.0, 9000.0), n_particles=300, realizations=2, spread=800.0),
        fleet=FleetConfig(n_p=2, t_on=0.5 * H, t_off=2 * H, start=(4000.0, 4000.0)),
        plan=PlanConfig(horizons=(1, 2), max_iters=3),
        rom=RomConfig(window=12, n_select=4),
        output=OutputConfig(snapshot_every=60, plots=False),
    )
    blocks.update(kw)
    return ScenarioConfig(seed=seed, **blocks).validate()


@pytest.fixture
def small_config():
    return _small_config


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
