"""Grid, time axis and field containers shared by every other module.

Arrays are indexed ``[i, j]`` with ``i`` running west to east (``n_x``) and
``j`` south to north (``n_y``). Cell ``(i, j)`` is centred at
``origin + (i*dx, j*dy)``. Flattening is always C order, so the flat index of
cell ``(i, j)`` is ``i*n_y + j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Bad index, grid mismatch or invalid grid/time parameters."""


class OutOfDomainError(DomainError):
    """Point outside the grid bounding box."""


@dataclass(frozen=True, eq=False)
class GridSpec:
    n_x: int
    n_y: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)
    land_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.n_x < 3 or self.n_y < 3:
            raise DomainError(f"grid must be at least 3x3, got {self.n_x}x{self.n_y}")
        if not (self.dx > 0 and self.dy > 0):
            raise DomainError("cell spacings must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if self.land_mask is None:
            mask = np.zeros((self.n_x, self.n_y), dtype=bool)
        else:
            mask = np.array(self.land_mask, dtype=bool)
            if mask.shape != self.shape:
                raise DomainError(f"land mask shape {mask.shape} != {self.shape}")
        mask.flags.writeable = False
        object.__setattr__(self, "land_mask", mask)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_y)

    @property
    def n_cells(self) -> int:
        return self.n_x * self.n_y

    @property
    def water(self) -> np.ndarray:
        return ~self.land_mask

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def domain_area(self) -> float:
        """Water area in m^2 (land cells are excluded)."""
        return self.cell_area * int(np.count_nonzero(self.water))

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return (x0 - 0.5 * self.dx, x0 + (self.n_x - 0.5) * self.dx,
                y0 - 0.5 * self.dy, y0 + (self.n_y - 0.5) * self.dy)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinate arrays ``X, Y`` of shape ``(n_x, n_y)`` (read-only, cached)."""
        cached = self.__dict__.get("_centers")
        if cached is None:
            x = self.origin[0] + self.dx * np.arange(self.n_x)
            y = self.origin[1] + self.dy * np.arange(self.n_y)
            X, Y = np.meshgrid(x, y, indexing="ij")
            X.flags.writeable = False
            Y.flags.writeable = False
            cached = (X, Y)
            object.__setattr__(self, "_centers", cached)
        return cached

    def same_as(self, other: "GridSpec") -> bool:
        return (self is other) or (
            self.shape == other.shape
            and self.dx == other.dx
            and self.dy == other.dy
            and self.origin == other.origin
            and np.array_equal(self.land_mask, other.land_mask)
        )

    def with_land(self, land_mask) -> "GridSpec":
        return GridSpec(self.n_x, self.n_y, self.dx, self.dy, self.origin, land_mask)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    tf: float
    dt: float

    def __post_init__(self):
        if not self.tf > self.t0:
            raise DomainError("tf must exceed t0")
        if not self.dt > 0:
            raise DomainError("dt must be positive")

    @property
    def steps(self) -> int:
        return int(round((self.tf - self.t0) / self.dt))

    def t(self, k: int) -> float:
        return self.t0 + k * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise DomainError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("field contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(np.zeros(grid.shape), grid)

    @classmethod
    def full(cls, grid: GridSpec, value: float) -> "ScalarField":
        return cls(np.full(grid.shape, float(value)), grid)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self.grid, other.grid)
            return ScalarField(self.values + other.values, self.grid)
        return ScalarField(self.values + other, self.grid)

    def __mul__(self, k):
        return ScalarField(self.values * k, self.grid)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class VectorField:
    u: ScalarField
    v: ScalarField

    def __post_init__(self):
        check_same_grid(self.u.grid, self.v.grid)

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    @classmethod
    def from_arrays(cls, u, v, grid: GridSpec) -> "VectorField":
        return cls(ScalarField(u, grid), ScalarField(v, grid))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid))

    @classmethod
    def uniform(cls, grid: GridSpec, u: float, v: float) -> "VectorField":
        return cls(ScalarField.full(grid, u), ScalarField.full(grid, v))

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.u + other.u, self.v + other.v)

    def __mul__(self, k: float) -> "VectorField":
        return VectorField(self.u * k, self.v * k)

    __rmul__ = __mul__

    def speed(self) -> np.ndarray:
        return np.hypot(self.u.values, self.v.values)


def check_same_grid(a: GridSpec, b: GridSpec) -> None:
    if not a.same_as(b):
        raise DomainError("fields live on different grids")


def cell_center(grid: GridSpec, i: int, j: int) -> tuple[float, float]:
    if not (0 <= i < grid.n_x and 0 <= j < grid.n_y):
        raise DomainError(f"cell index ({i}, {j}) outside {grid.n_x}x{grid.n_y} grid")
    return (grid.origin[0] + i * grid.dx, grid.origin[1] + j * grid.dy)


def _axis_index(coord, origin, h, n):
    # shared edges resolve to the lower index
    s = (np.asarray(coord, dtype=float) - origin) / h - 0.5
    return np.clip(np.ceil(s).astype(int), 0, n - 1)


def inside(grid: GridSpec, x, y) -> np.ndarray:
    xmin, xmax, ymin, ymax = grid.bounds
    x = np.asarray(x)
    y = np.asarray(y)
    return (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)


def locate(grid: GridSpec, p) -> tuple[int, int]:
    x, y = float(p[0]), float(p[1])
    if not inside(grid, x, y):
        raise OutOfDomainError(f"point ({x}, {y}) outside domain {grid.bounds}")
    return (int(_axis_index(x, grid.origin[0], grid.dx, grid.n_x)),
            int(_axis_index(y, grid.origin[1], grid.dy, grid.n_y)))


def locate_many(grid: GridSpec, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`locate`; callers must ensure the points are inside."""
    return (_axis_index(x, grid.origin[0], grid.dx, grid.n_x),
            _axis_index(y, grid.origin[1], grid.dy, grid.n_y))


def bilinear(values: np.ndarray, grid: GridSpec, x, y) -> np.ndarray:
    """Bilinear interpolation of a cell-centred array, clamped at the edges."""
    fx = np.clip((np.asarray(x, dtype=float) - grid.origin[0]) / grid.dx, 0.0, grid.n_x - 1)
    fy = np.clip((np.asarray(y, dtype=float) - grid.origin[1]) / grid.dy, 0.0, grid.n_y - 1)
    i0 = np.minimum(np.floor(fx).astype(int), grid.n_x - 2)
    j0 = np.minimum(np.floor(fy).astype(int), grid.n_y - 2)
    ax = fx - i0
    ay = fy - j0
    return ((1 - ax) * (1 - ay) * values[i0, j0]
            + ax * (1 - ay) * values[i0 + 1, j0]
            + (1 - ax) * ay * values[i0, j0 + 1]
            + ax * ay * values[i0 + 1, j0 + 1])


def interpolate(field: VectorField, p) -> tuple[float, float]:
    grid = field.grid
    x, y = float(p[0]), float(p[1])
    if not inside(grid, x, y):
        raise OutOfDomainError(f"point ({x}, {y}) outside domain {grid.bounds}")
    return (float(bilinear(field.u.values, grid, x, y)),
            float(bilinear(field.v.values, grid, x, y)))


def interpolate_many(field: VectorField, x, y) -> tuple[np.ndarray, np.ndarray]:
    grid = field.grid
    return bilinear(field.u.values, grid, x, y), bilinear(field.v.values, grid, x, y)


# -- state stacking ---------------------------------------------------------

def stack(fields: Sequence[ScalarField]) -> np.ndarray:
    """Concatenate fields in the given order, each flattened row-major."""
    if not fields:
        raise DomainError("nothing to stack")
    g = fields[0].grid
    for f in fields[1:]:
        check_same_grid(g, f.grid)
    return np.concatenate([f.values.ravel() for f in fields])


def unstack(x: np.ndarray, grid: GridSpec, n_fields: int) -> list[ScalarField]:
    x = np.asarray(x, dtype=float)
    if x.shape != (n_fields * grid.n_cells,):
        raise DomainError(f"snapshot length {x.shape} != {n_fields}*{grid.n_cells}")
    return [ScalarField(block.reshape(grid.shape), grid)
            for block in np.split(x, n_fields)]


@dataclass
class StateTrajectory:
    """Time-ordered snapshots of equal length, one column per time."""

    names: tuple[str, ...]
    grid: GridSpec
    snapshots: list[np.ndarray] = field(default_factory=list)
    times: list[float] = field(default_factory=list)

    def append(self, t: float, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (len(self.names) * self.grid.n_cells,):
            raise DomainError("snapshot length mismatch")
        self.snapshots.append(x)
        self.times.append(float(t))

    def __len__(self):
        return len(self.snapshots)

    def matrix(self, last: int | None = None) -> np.ndarray:
        cols = self.snapshots if last is None else self.snapshots[-last:]
        return np.column_stack(cols)


# -- FLD1 persistence -------------------------------------------------------

def write_fld1(path, grid: GridSpec, fields: dict[str, np.ndarray]) -> None:
    names = list(fields)
    for n in names:
        if not n or any(c.isspace() for c in n):
            raise ValueError(f"bad field name {n!r}")
    path = Path(path)
    header = (f"FLD1 {grid.n_x} {grid.n_y} {grid.dx!r} {grid.dy!r} "
              f"{grid.origin[0]!r} {grid.origin[1]!r} {len(names)}\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write((" ".join(names) + "\n").encode("ascii"))
        for n in names:
            a = np.asarray(fields[n], dtype="<f8")
            if a.shape != grid.shape:
                raise DomainError(f"field {n} has shape {a.shape}")
            fh.write(np.ascontiguousarray(a).tobytes(order="C"))


def read_fld1(path) -> tuple[GridSpec, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if not header or header[0] != "FLD1" or len(header) != 8:
            raise ValueError(f"{path}: not an FLD1 file")
        n_x, n_y = int(header[1]), int(header[2])
        dx, dy, ox, oy = map(float, header[3:7])
        count = int(header[7])
        names = fh.readline().decode("ascii").split()
        if len(names) != count:
            raise ValueError(f"{path}: expected {count} field names, got {len(names)}")
        grid = GridSpec(n_x, n_y, dx, dy, (ox, oy))
        out = {}
        nbytes = 8 * n_x * n_y
        for n in names:
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise ValueError(f"{path}: truncated field {n}")
            out[n] = np.frombuffer(buf, dtype="<f8").reshape(n_x, n_y).copy()
    return grid, out


def dist_to_nearest(grid: GridSpec, targets: np.ndarray, px: float, py: float):
    """Distance and vector from ``(px, py)`` to the nearest centre of a True cell.

    Returns ``(inf, (0, 0))`` when no cell is flagged. Ties go to the lowest
    row-major cell index.
    """
    idx = np.flatnonzero(targets.ravel())
    if idx.size == 0:
        return math.inf, (0.0, 0.0)
    X, Y = grid.centers()
    cx = X.ravel()[idx]
    cy = Y.ravel()[idx]
    d2 = (cx - px) ** 2 + (cy - py) ** 2
    k = int(np.argmin(d2))
    return math.sqrt(d2[k]), (cx[k] - px, cy[k] - py)
