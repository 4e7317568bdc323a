"""Command line entry point: ``spillsense <command> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from ..domain import ScalarField, VectorField, read_fld1, write_fld1
from ..oil import write_particles_csv
from .config import STRATEGIES, ScenarioConfig, load_config, save_config

log = logging.getLogger("spillsense")


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(args.seed))
    return cfg.validate()


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _summary(series, cfg) -> list[tuple]:
    f, tf = cfg.fleet, cfg.time.tf
    rows = []
    for name, s in series.items():
        rows.append((name, s.window_mean("oil_error", f.t_on, f.t_off), s.window_mean("oil_error", f.t_off, tf),
                     s.final("oil_error"), s.window_mean("rms_current", f.t_off, tf)))
    return rows


def _print_summary(rows) -> None:
    print(f"{'strategy':22s} {'active km2':>11s} {'post km2':>9s} {'final km2':>10s} {'rms post m/s':>13s}")
    for name, a, p, fin, r in rows:
        print(f"{name:22s} {a / 1e6:11.2f} {p / 1e6:9.2f} {fin / 1e6:10.2f} {r:13.4f}")


# -- commands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    """Truth (tide on) or open-loop test (tide off) run without sensors."""
    from .model import OceanModel
    from ..uncertainty import UncertaintyState, step_uncertainty, variance_sources

    cfg = _config(args)
    out = _out(args)
    grid = cfg.grid_spec()
    forcing = cfg.truth_forcing() if args.mode == "truth" else cfg.test_forcing()
    m = OceanModel(cfg, forcing, grid)
    tg = cfg.time.build()
    params = cfg.uncertainty_params()
    unc = UncertaintyState.zeros(grid)
    every = cfg.time.flow_every
    dumps = [(0, e) for e in m.ensembles]
    stop = tg.steps if args.until is None else min(tg.steps, int(round((args.until - tg.t0) / tg.dt)))
    for k in range(1, stop + 1):
        if (k - 1) % every == 0:
            U, D_h = m.drift()
            unc = step_uncertainty(unc, U, np.zeros(grid.shape), variance_sources(D_h, U, params), params, every * tg.dt)
            m.step_flow(tg.t(k - 1), every * tg.dt)
        m.advect(tg.dt)
    dumps += [(stop, e) for e in m.ensembles]
    write_particles_csv(out / "particles.csv", [d for d in dumps])
    U, D_h = m.drift()
    write_fld1(out / "state.fld", grid, {
        "u": U.u.values, "v": U.v.values, "D_h": D_h.values, "q": unc.q.values,
        "var_x": unc.var_x.values, "var_y": unc.var_y.values, "presence": m.presence().values,
        "u_c": m.current.u.values, "v_c": m.current.v.values})
    save_config(cfg, out / "config.yaml")
    print(f"wrote {out / 'particles.csv'} and {out / 'state.fld'} at t = {tg.t(stop):.0f} s")
    return 0


def cmd_plan(args) -> int:
    """One receding-horizon planning cycle from a saved ``state.fld``."""
    from ..oil import entropy_neighborhood
    from ..placement import PlanningProblem, WaypointLog, plan_receding_horizon, weighting_field
    from ..uncertainty import UncertaintyState, variance_sources

    cfg = _config(args)
    out = _out(args)
    grid, f = read_fld1(args.state)
    grid = grid.with_land(cfg.grid_spec().land_mask) if grid.shape == cfg.grid_spec().shape else grid
    params = cfg.uncertainty_params()
    U = VectorField.from_arrays(f["u"], f["v"], grid)
    src = variance_sources(ScalarField(f["D_h"], grid), U, params)
    pres = ScalarField(f["presence"], grid)
    E = weighting_field(pres, entropy_neighborhood(pres), ScalarField.zeros(grid), cfg.weighting())
    state = UncertaintyState(ScalarField(f["q"], grid), ScalarField(f["var_x"], grid), ScalarField(f["var_y"], grid))
    P0 = np.repeat(np.asarray(cfg.fleet.start, float)[None], cfg.fleet.n_p, axis=0)
    dt_plan = cfg.fleet.reading_interval
    cfl = (np.abs(f["u"]).max() / grid.dx + np.abs(f["v"]).max() / grid.dy) * dt_plan
    n_sub = max(cfg.plan.n_sub, int(np.ceil(cfl / 0.9)))
    prob = PlanningProblem(grid, params, U, src, E, state, P0, horizon=1, t_start=cfg.fleet.t_on,
                           dt_plan=dt_plan, n_sub=n_sub, penalty=cfg.penalty_params(),
                           P_deploy=P0, t_deploy=cfg.fleet.t_on)
    res = plan_receding_horizon(prob, cfg.plan.horizons, cfg.descent_config())
    wl = WaypointLog()
    for k, P in enumerate(res.best.path):
        wl.add(0, cfg.fleet.t_on + (k + 1) * dt_plan, P, committed=(k == 0))
    wl.write(out / "waypoints_plan.csv", strategy="model-based")
    for c in res.chains:
        print(f"horizon {c.horizon}: total J {c.total:.6g}{' (stalled)' if c.stalled else ''}")
    print(f"selected horizon {res.best.horizon}; committed waypoint(s):")
    for s, (x, y) in enumerate(res.waypoint):
        print(f"  sensor {s}: ({x:.1f}, {y:.1f})")
    return 0


def _twin(args, strategies) -> int:
    from .outputs import emit_outputs
    from .twin import run_twin_experiment

    cfg = _config(args)
    if strategies is not None:
        cfg = dataclasses.replace(cfg, strategies=tuple(strategies)).validate()
    out = _out(args)
    res = run_twin_experiment(cfg)
    emit_outputs(res, out, plots=not args.no_plots and cfg.output.plots)
    _print_summary(_summary(res.series, cfg))
    return 0


def cmd_baseline(args) -> int:
    return _twin(args, ["none", "industry", "industry-no-velocity"])


def cmd_twin(args) -> int:
    return _twin(args, args.strategies)


def cmd_metrics(args) -> int:
    """Recompute window summaries from a metrics CSV."""
    from .outputs import read_metrics_csv

    cfg = _config(args)
    data = read_metrics_csv(args.metrics)
    f, tf = cfg.fleet, cfg.time.tf
    rows = []
    for name, d in data.items():
        t = d["t"]

        def wm(col, lo, hi):
            v = d[col][(t >= lo) & (t <= hi)]
            v = v[~np.isnan(v)]
            return float(v.mean()) if v.size else float("nan")
        rows.append((name, wm("oil_error_m2", f.t_on, f.t_off), wm("oil_error_m2", f.t_off, tf),
                     float(d["oil_error_m2"][-1]), wm("rms_current_mps", f.t_off, tf)))
    _print_summary(rows)
    if args.out:
        out = _out(args)
        with open(out / "summary.csv", "w") as fh:
            fh.write("strategy,active_oil_error_m2,post_oil_error_m2,final_oil_error_m2,post_rms_current_mps\n")
            for r in rows:
                fh.write(",".join([r[0]] + [repr(float(x)) for x in r[1:]]) + "\n")
    return 0


def cmd_plot(args) -> int:
    from .outputs import render_plots

    files = render_plots(args.out)
    for k, p in files.items():
        print(f"{k}: {p}")
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file (defaults documented in the README)")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="BLAS thread cap")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spillsense", description="Adaptive oil-spill monitoring simulator")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="truth or open-loop run")
    s.add_argument("--mode", choices=("truth", "open-loop"), default="truth")
    s.add_argument("--until", type=float, help="stop time in seconds (saves state there)")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("plan", parents=[common], help="one planning cycle from a saved state")
    s.add_argument("--state", required=True, help="state.fld written by 'simulate'")
    s.set_defaults(func=cmd_plan)
    s = sub.add_parser("baseline", parents=[common], help="ladder-path runs against no sensors")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_baseline)
    s = sub.add_parser("twin", parents=[common], help="full strategy comparison")
    s.add_argument("--strategies", nargs="+", choices=STRATEGIES)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_twin)
    s = sub.add_parser("metrics", parents=[common], help="summaries from a metrics CSV")
    s.add_argument("metrics", help="metrics.csv")
    s.set_defaults(func=cmd_metrics, out=None)
    s = sub.add_parser("plot", parents=[common], help="render plots from an output directory")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=max(1, args.threads)):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
