#!/usr/bin/env python3
"""Run the default (or a YAML) twin scenario and write all outputs.

    python scripts/run_twin.py --out out/twin --seed 0
"""
import argparse
import time

from spillsense.harness.cli import _print_summary, _summary
from spillsense.harness.config import ScenarioConfig, load_config
from spillsense.harness.outputs import emit_outputs
from spillsense.harness.twin import run_twin_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/twin")
    ap.add_argument("--no-plots", action="store_true")
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    cfg.seed = args.seed
    cfg.validate()

    def progress(k, n):
        if k % 60 == 0:
            print(f"  tick {k}/{n}", flush=True)

    t0 = time.perf_counter()
    res = run_twin_experiment(cfg, progress=progress)
    print(f"twin finished in {time.perf_counter() - t0:.1f} s")
    files = emit_outputs(res, args.out, plots=not args.no_plots)
    _print_summary(_summary(res.series, cfg))
    for name, path in files.items():
        print(f"{name}: {path}")


if __name__ == "__main__":
    main()
