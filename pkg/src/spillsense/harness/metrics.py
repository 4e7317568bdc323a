"""Error metrics for the twin experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..domain import DomainError, ScalarField, VectorField, check_same_grid

UNDEFINED = math.nan  # sentinel for metrics over an empty mask


def presence_set(presence: ScalarField, threshold: float) -> np.ndarray:
    return (presence.values >= threshold) & ~presence.grid.land_mask


def oil_presence_error(truth: ScalarField, estimate: ScalarField, threshold: float = 0.05) -> float:
    """Area (m^2) of the symmetric difference of the thresholded presence sets."""
    check_same_grid(truth.grid, estimate.grid)
    diff = presence_set(truth, threshold) ^ presence_set(estimate, threshold)
    return float(np.count_nonzero(diff)) * truth.grid.cell_area


def rms_current_error_where_oil(truth: VectorField, estimate: VectorField, oil_mask) -> float:
    """``sqrt(mean |dU|^2)`` over masked cells; NaN when the mask is empty."""
    check_same_grid(truth.grid, estimate.grid)
    m = np.asarray(oil_mask, bool)
    if m.shape != truth.grid.shape:
        raise DomainError("mask shape does not match the grid")
    if not m.any():
        return UNDEFINED
    du = truth.u.values[m] - estimate.u.values[m]
    dv = truth.v.values[m] - estimate.v.values[m]
    return float(np.sqrt(np.mean(du * du + dv * dv)))


@dataclass
class MetricsSeries:
    strategy: str
    step: list = field(default_factory=list)
    t: list = field(default_factory=list)
    oil_error: list = field(default_factory=list)
    rms_current: list = field(default_factory=list)
    J: list = field(default_factory=list)
    positions: list = field(default_factory=list)

    def append(self, step: int, t: float, oil_error: float, rms: float, J: float, P=None) -> None:
        if oil_error < 0 or (not math.isnan(rms) and rms < 0):
            raise ValueError("errors must be non-negative")
        self.step.append(step)
        self.t.append(t)
        self.oil_error.append(oil_error)
        self.rms_current.append(rms)
        self.J.append(J)
        self.positions.append(None if P is None else np.array(P, float))

    def __len__(self):
        return len(self.step)

    def window_mean(self, name: str, t_lo: float, t_hi: float) -> float:
        """Mean of a column over ``t_lo <= t <= t_hi``, ignoring NaNs."""
        t = np.asarray(self.t)
        v = np.asarray(getattr(self, name), float)
        sel = (t >= t_lo) & (t <= t_hi)
        v = v[sel]
        v = v[~np.isnan(v)]
        return float(v.mean()) if v.size else UNDEFINED

    def final(self, name: str) -> float:
        return float(getattr(self, name)[-1])
