"""Persistence of twin results and plots rendered from the persisted CSVs."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..domain import read_fld1, write_fld1
from .config import save_config
from .twin import TwinResult

METRICS_HEADER = ["strategy", "step", "t", "oil_error_m2", "rms_current_mps", "J"]


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_metrics_csv(path, series: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for name, s in series.items():
            for k in range(len(s)):
                w.writerow([name, s.step[k], _fmt(s.t[k]), _fmt(s.oil_error[k]),
                            _fmt(s.rms_current[k]), _fmt(s.J[k])])


def read_metrics_csv(path) -> dict:
    """``{strategy: {column: np.ndarray}}``."""
    out = defaultdict(lambda: defaultdict(list))
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            d = out[row["strategy"]]
            for c in METRICS_HEADER[1:]:
                d[c].append(float(row[c]))
    return {k: {c: np.asarray(v) for c, v in d.items()} for k, d in out.items()}


def emit_outputs(result: TwinResult, out_dir, plots: bool | None = None) -> dict:
    """Write metrics, waypoints, field snapshots, the resolved config and plots."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["metrics"] = out / "metrics.csv"
    write_metrics_csv(files["metrics"], result.series)
    for name, log in result.waypoints.items():
        if log.rows:
            p = out / f"waypoints_{name}.csv"
            log.write(p, strategy=name)
            files[f"waypoints_{name}"] = p
    snap_dir = out / "fields"
    if result.snapshots:
        snap_dir.mkdir(exist_ok=True)
        grid = result.cfg.grid_spec()
        for s in result.snapshots:
            p = snap_dir / f"{s.source}_{s.tick:06d}.fld"
            write_fld1(p, grid, s.fields)
    save_config(result.cfg, out / "config.yaml")
    if result.cfg.output.plots if plots is None else plots:
        files.update(render_plots(out))
    return files


def render_plots(out_dir) -> dict:
    """Static PNGs derived only from files in ``out_dir``."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    data = read_metrics_csv(out / "metrics.csv")
    files = {}
    fig, axes = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for name, d in data.items():
        h = d["t"] / 3600.0
        axes[0].plot(h, d["oil_error_m2"] / 1e6, label=name)
        axes[1].plot(h, d["rms_current_mps"], label=name)
    axes[0].set_ylabel("oil presence error [km$^2$]")
    axes[1].set_ylabel("RMS current error where oil [m/s]")
    axes[1].set_xlabel("time [h]")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    files["errors_plot"] = out / "errors.png"
    fig.savefig(files["errors_plot"], dpi=100, metadata={"Software": None})
    plt.close(fig)

    snaps = sorted((out / "fields").glob("*.fld")) if (out / "fields").exists() else []
    if snaps:
        last = max(int(p.stem.rsplit("_", 1)[1]) for p in snaps)
        final = [p for p in snaps if p.stem.endswith(f"_{last:06d}")]
        fig, axes = plt.subplots(1, len(final), figsize=(3.2 * len(final), 3.2), squeeze=False)
        for ax, p in zip(axes[0], final):
            grid, fields = read_fld1(p)
            x0, x1, y0, y1 = grid.bounds
            ax.imshow(fields["presence"].T, origin="lower", extent=(x0 / 1e3, x1 / 1e3, y0 / 1e3, y1 / 1e3),
                      vmin=0, vmax=1, cmap="viridis")
            ax.contour(grid.land_mask.T.astype(float), levels=[0.5], colors="w",
                       extent=(x0 / 1e3, x1 / 1e3, y0 / 1e3, y1 / 1e3))
            ax.set_title(p.stem.rsplit("_", 1)[0], fontsize=9)
        fig.tight_layout()
        files["final_map"] = out / "final_presence.png"
        fig.savefig(files["final_map"], dpi=100, metadata={"Software": None})
        plt.close(fig)
    return files
