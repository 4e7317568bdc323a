#!/usr/bin/env python3
"""Run the default twin scenario over several seeds and tabulate the comparison.

    python scripts/seed_sweep.py --seeds 0 1 2 3 4 --out out/sweep
"""
import argparse
import csv
import dataclasses
import time
from pathlib import Path

from spillsense.harness.config import ScenarioConfig
from spillsense.harness.outputs import emit_outputs
from spillsense.harness.twin import run_twin_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default="out/sweep")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        cfg = dataclasses.replace(ScenarioConfig(), seed=seed).validate()
        t0 = time.perf_counter()
        res = run_twin_experiment(cfg)
        dt = time.perf_counter() - t0
        emit_outputs(res, out / f"seed{seed}", plots=False)
        f, tf = cfg.fleet, cfg.time.tf
        for name, s in res.series.items():
            rows.append({
                "seed": seed, "strategy": name,
                "active_km2": s.window_mean("oil_error", f.t_on, f.t_off) / 1e6,
                "post_km2": s.window_mean("oil_error", f.t_off, tf) / 1e6,
                "final_km2": s.final("oil_error") / 1e6,
                "post_rms_mps": s.window_mean("rms_current", f.t_off, tf),
                "seconds": dt,
            })
        for r in rows[-len(res.series):]:
            print(f"seed {seed} {r['strategy']:22s} active {r['active_km2']:6.1f} post {r['post_km2']:6.1f} "
                  f"final {r['final_km2']:6.1f} rms {r['post_rms_mps']:.4f}", flush=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {out / 'sweep.csv'}")


if __name__ == "__main__":
    main()
