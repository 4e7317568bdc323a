import dataclasses
import filecmp
import math

import numpy as np
import pytest

from spillsense.domain import GridSpec, ScalarField, VectorField
from spillsense.harness import cli
from spillsense.harness.config import (ConfigValidationError, FleetConfig, ScenarioConfig, from_dict,
                                       load_config, save_config, to_dict)
from spillsense.harness.metrics import MetricsSeries, oil_presence_error, rms_current_error_where_oil
from spillsense.harness.outputs import emit_outputs, read_metrics_csv, render_plots, write_metrics_csv
from spillsense.harness.twin import run_twin_experiment


# -- metrics ---------------------------------------------------------------

def test_presence_error_examples():
    g = GridSpec(10, 10, 1000.0, 1000.0)
    a, b = np.zeros(g.shape), np.zeros(g.shape)
    a[0, :5] = 1.0
    b[5, :3] = 1.0
    A, B = ScalarField(a, g), ScalarField(b, g)
    assert oil_presence_error(A, A) == 0.0
    assert oil_presence_error(A, B) == 8e6


def test_presence_error_matches_xor_oracle(rng):
    g = GridSpec(15, 11, 500.0, 700.0)
    for _ in range(20):
        a, b = rng.uniform(0, 0.1, g.shape), rng.uniform(0, 0.1, g.shape)
        n = sum((a[i, j] >= 0.05) != (b[i, j] >= 0.05) for i in range(15) for j in range(11))
        assert oil_presence_error(ScalarField(a, g), ScalarField(b, g)) == n * 500.0 * 700.0


def test_rms_examples(rng):
    g = GridSpec(6, 6, 1.0, 1.0)
    mask = np.zeros(g.shape, bool)
    mask[1:3, 2:5] = True
    T = VectorField.from_arrays(rng.standard_normal(g.shape), rng.standard_normal(g.shape), g)
    assert rms_current_error_where_oil(T, T, mask) == 0.0
    E = VectorField.from_arrays(T.u.values + 0.3, T.v.values + 0.4, g)
    assert math.isclose(rms_current_error_where_oil(T, E, mask), 0.5)
    R = VectorField.from_arrays(rng.standard_normal(g.shape), rng.standard_normal(g.shape), g)
    total = 0.0
    for i, j in zip(*np.nonzero(mask)):
        total += (T.u.values[i, j] - R.u.values[i, j]) ** 2 + (T.v.values[i, j] - R.v.values[i, j]) ** 2
    assert abs(rms_current_error_where_oil(T, R, mask) - math.sqrt(total / mask.sum())) < 1e-12
    assert math.isnan(rms_current_error_where_oil(T, R, np.zeros(g.shape, bool)))


def test_series_window_mean():
    s = MetricsSeries("x")
    for k, (e, r) in enumerate([(1.0, math.nan), (2.0, 0.5), (3.0, 0.7), (4.0, 0.9)]):
        s.append(k + 1, 60.0 * (k + 1), e, r, 0.0)
    assert s.window_mean("oil_error", 120.0, 180.0) == 2.5
    assert math.isclose(s.window_mean("rms_current", 0.0, 120.0), 0.5)
    assert s.final("oil_error") == 4.0
    with pytest.raises(ValueError):
        s.append(5, 300.0, -1.0, 0.0, 0.0)


# -- config ----------------------------------------------------------------

def test_default_config_is_valid():
    cfg = ScenarioConfig().validate()
    assert cfg.grid_spec().shape == (48, 48)
    assert cfg.truth_forcing().include_tide and not cfg.test_forcing().include_tide


def test_config_rejects_bad_values():
    with pytest.raises(ConfigValidationError):
        ScenarioConfig(strategies=("bogus",)).validate()
    with pytest.raises(ConfigValidationError):
        ScenarioConfig(fleet=FleetConfig(t_on=0.0, t_off=30 * 3600.0)).validate()
    with pytest.raises(ConfigValidationError):
        from_dict({"fleet": {"speed": 3}})


def test_config_yaml_roundtrip(tmp_path, small_config):
    cfg = small_config(seed=11)
    p = tmp_path / "c.yaml"
    save_config(cfg, p)
    back = load_config(p)
    assert to_dict(back) == to_dict(cfg)


# -- twin ------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_run():
    from conftest import _small_config
    cfg = _small_config()
    return cfg, run_twin_experiment(cfg)


def test_series_lengths_and_signs(small_run):
    cfg, res = small_run
    steps = cfg.time.build().steps
    assert set(res.series) == set(cfg.strategies)
    for s in res.series.values():
        assert len(s) == steps
        assert np.all(np.asarray(s.oil_error) >= 0)
        r = np.asarray(s.rms_current)
        assert np.all(r[~np.isnan(r)] >= 0)


def test_none_strategy_is_open_loop(small_run, small_config):
    cfg, res = small_run
    solo = run_twin_experiment(dataclasses.replace(cfg, strategies=("none",)))
    assert solo.series["none"].oil_error == res.series["none"].oil_error
    assert solo.series["none"].rms_current == pytest.approx(res.series["none"].rms_current, nan_ok=True)


def test_identical_twin_control(small_config):
    cfg = small_config(test_includes_tide=True)
    res = run_twin_experiment(dataclasses.replace(cfg, strategies=("none",)))
    area = cfg.grid_spec().cell_area
    assert max(res.series["none"].oil_error) < area
    r = np.asarray(res.series["none"].rms_current)
    assert np.all(r[~np.isnan(r)] == 0.0)


def test_sensing_moves_sensors(small_run):
    cfg, res = small_run
    rows = res.waypoints["model-based"].rows
    assert rows and all(r[2] >= cfg.fleet.t_on for r in rows)


def test_outputs_and_plots(tmp_path, small_run):
    cfg, res = small_run
    files = emit_outputs(res, tmp_path, plots=True)
    data = read_metrics_csv(files["metrics"])
    steps = cfg.time.build().steps
    lines = open(files["metrics"]).read().splitlines()
    assert lines[0] == "strategy,step,t,oil_error_m2,rms_current_mps,J"
    assert len(lines) - 1 == steps * len(cfg.strategies)
    assert np.array_equal(data["industry"]["oil_error_m2"], np.asarray(res.series["industry"].oil_error))
    assert (tmp_path / "errors.png").exists() and (tmp_path / "final_presence.png").exists()
    assert list((tmp_path / "fields").glob("*.fld"))
    first = (tmp_path / "errors.png").read_bytes()
    render_plots(tmp_path)
    assert (tmp_path / "errors.png").read_bytes() == first


def test_metrics_csv_is_deterministic(tmp_path, small_run, small_config):
    cfg, res = small_run
    again = run_twin_experiment(small_config())
    write_metrics_csv(tmp_path / "a.csv", res.series)
    write_metrics_csv(tmp_path / "b.csv", again.series)
    assert filecmp.cmp(tmp_path / "a.csv", tmp_path / "b.csv", shallow=False)


def test_seed_changes_results(small_run, small_config):
    cfg, res = small_run
    other = run_twin_experiment(dataclasses.replace(small_config(seed=1), strategies=("none",)))
    assert other.series["none"].oil_error != res.series["none"].oil_error


# -- CLI -------------------------------------------------------------------

def test_cli_smoke(tmp_path, small_config, capsys):
    cfgp = tmp_path / "cfg.yaml"
    save_config(small_config(), cfgp)
    out = tmp_path / "out"
    assert cli.main(["twin", "--config", str(cfgp), "--out", str(out), "--no-plots"]) == 0
    assert "model-based" in capsys.readouterr().out
    assert cli.main(["metrics", str(out / "metrics.csv"), "--config", str(cfgp)]) == 0
    assert cli.main(["plot", "--out", str(out)]) == 0
    assert (out / "errors.png").exists()
    sim = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(cfgp), "--out", str(sim), "--until", "3600"]) == 0
    assert (sim / "particles.csv").exists() and (sim / "state.fld").exists()
    assert cli.main(["plan", "--config", str(cfgp), "--state", str(sim / "state.fld"), "--out", str(sim)]) == 0
    assert (sim / "waypoints_plan.csv").exists()
    assert cli.main(["baseline", "--config", str(cfgp), "--out", str(tmp_path / "b"), "--no-plots"]) == 0
    with pytest.raises(SystemExit):
        cli.main(["twin", "--strategies", "bogus"])
