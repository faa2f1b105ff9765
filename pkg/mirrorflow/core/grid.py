"""
Grid - Space-time discretization of the cylinder [0, T) x O
Axis-aligned boxes in one or two dimensions, field storage and central differences
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import GridError, SolverError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class GridSpec:
    """Box domain, interior node counts and time levels"""
    dim: int
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    nx: Tuple[int, ...]
    nt: int
    horizon: float

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in np.atleast_1d(self.lo)))
        object.__setattr__(self, "hi", tuple(float(v) for v in np.atleast_1d(self.hi)))
        object.__setattr__(self, "nx", tuple(int(v) for v in np.atleast_1d(self.nx)))
        errors = self.problems()
        if errors:
            raise GridError("; ".join(errors))

    def problems(self) -> List[str]:
        """Collect every violated invariant"""
        errors = []
        if self.dim not in (1, 2):
            errors.append(f"dim must be 1 or 2, got {self.dim}")
        for name in ("lo", "hi", "nx"):
            if len(getattr(self, name)) != self.dim:
                errors.append(f"{name} needs {self.dim} entries")
        if errors:
            return errors
        for i in range(self.dim):
            if not (math.isfinite(self.lo[i]) and math.isfinite(self.hi[i])):
                errors.append(f"axis {i}: bounds must be finite")
            elif self.hi[i] <= self.lo[i]:
                errors.append(f"axis {i}: hi must exceed lo")
            if self.nx[i] < 3:
                errors.append(f"axis {i}: nx must be at least 3, got {self.nx[i]}")
        if self.nt < 2:
            errors.append(f"nt must be at least 2, got {self.nt}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            errors.append("horizon must be positive")
        return errors


@dataclass(frozen=True, eq=False)
class Grid:
    """Built grid: coordinates, steps, parabolic boundary and stencils"""
    spec: GridSpec
    dx: np.ndarray
    dt: float
    axes: Tuple[np.ndarray, ...]
    full_axes: Tuple[np.ndarray, ...]
    times: np.ndarray
    points: np.ndarray
    parabolic_boundary: np.ndarray
    neighbor_offsets: Tuple[Tuple[int, int], ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def nt(self) -> int:
        return self.spec.nt

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.spec.nx

    @property
    def padded_shape(self) -> Tuple[int, ...]:
        return tuple(n + 2 for n in self.spec.nx)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lateral_boundary(self) -> np.ndarray:
        """Spatial mask over the padded node set, True on the box boundary"""
        return self.parabolic_boundary[0]

    def boundary_points(self) -> np.ndarray:
        """Coordinates of every padded node, C order"""
        mesh = np.meshgrid(*self.full_axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_slice(self) -> Tuple[slice, ...]:
        return tuple(slice(1, -1) for _ in range(self.dim))

    def neighbor_values(self, padded: np.ndarray, axis: int, sign: int) -> np.ndarray:
        """Values of the (axis, sign) neighbour for every interior node of a padded level array"""
        index = []
        for i, n in enumerate(self.shape):
            if i == axis:
                index.append(slice(1 + sign, n + 1 + sign))
            else:
                index.append(slice(1, n + 1))
        return padded[tuple(index)]

    def touches_boundary(self, axis: int, sign: int) -> np.ndarray:
        """Interior nodes whose (axis, sign) neighbour is a boundary node"""
        mask = np.zeros(self.shape, dtype=bool)
        index = [slice(None)] * self.dim
        index[axis] = -1 if sign > 0 else 0
        mask[tuple(index)] = True
        return mask

    def contains(self, x: Sequence[float]) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            return False
        return bool(np.all(x > np.asarray(self.spec.lo)) and np.all(x < np.asarray(self.spec.hi)))

    def locate(self, t: float, x: Sequence[float]) -> Tuple[int, Tuple[int, ...]]:
        """Nearest time level and nearest interior node of a point"""
        if not (0.0 <= t <= self.spec.horizon):
            raise GridError(f"time {t} outside [0, {self.spec.horizon}]")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if not self.contains(x):
            raise GridError(f"point {x.tolist()} is not inside the domain")
        level = int(np.clip(round(t / self.dt), 0, self.nt))
        index = tuple(
            int(np.clip(round((x[i] - self.axes[i][0]) / self.dx[i]), 0, self.shape[i] - 1))
            for i in range(self.dim)
        )
        return level, index


def build_grid(spec: GridSpec) -> Grid:
    """Build node coordinates, parabolic-boundary classification and stencils"""
    lo = np.asarray(spec.lo)
    hi = np.asarray(spec.hi)
    nx = np.asarray(spec.nx)
    dx = (hi - lo) / (nx + 1)
    dt = spec.horizon / spec.nt

    full_axes = tuple(np.linspace(lo[i], hi[i], nx[i] + 2) for i in range(spec.dim))
    axes = tuple(a[1:-1] for a in full_axes)
    times = np.linspace(0.0, spec.horizon, spec.nt + 1)

    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)

    lateral = np.ones(tuple(nx + 2), dtype=bool)
    lateral[tuple(slice(1, -1) for _ in range(spec.dim))] = False
    parabolic = np.repeat(lateral[None, ...], spec.nt + 1, axis=0)
    parabolic[-1] = True

    offsets = tuple((axis, sign) for axis in range(spec.dim) for sign in (-1, 1))
    grid = Grid(
        spec=spec,
        dx=dx,
        dt=dt,
        axes=axes,
        full_axes=full_axes,
        times=times,
        points=points,
        parabolic_boundary=parabolic,
        neighbor_offsets=offsets,
    )
    logger.debug(f"Built grid: dim={spec.dim} nx={spec.nx} nt={spec.nt} dx={dx.tolist()} dt={dt:.3e}")
    return grid


@dataclass(frozen=True, eq=False)
class Field:
    """Values on grid nodes, indexed by (time level, spatial multi-index, component).

    Interior fields hold controls, duals and gradients; value fields carry the
    boundary ring as well (``with_boundary=True``) so Dirichlet data travels with them.
    """
    grid: Grid
    data: np.ndarray
    with_boundary: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        spatial = self.grid.padded_shape if self.with_boundary else self.grid.shape
        if data.ndim == 1 + self.grid.dim:
            data = data[..., None]
        expected = (self.grid.nt + 1,) + tuple(spatial)
        if data.shape[:-1] != expected:
            raise GridError(f"field data has shape {data.shape}, expected {expected} + (components,)")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros(cls, grid: Grid, components: int = 1, with_boundary: bool = False) -> "Field":
        spatial = grid.padded_shape if with_boundary else grid.shape
        return cls(grid, np.zeros((grid.nt + 1,) + tuple(spatial) + (components,)), with_boundary)

    @classmethod
    def from_levels(cls, grid: Grid, levels: Sequence[np.ndarray]) -> "Field":
        """Assemble an interior field from per-level (n_nodes, components) arrays"""
        stacked = np.stack([np.asarray(level, dtype=float) for level in levels])
        if stacked.ndim == 2:
            stacked = stacked[..., None]
        return cls(grid, stacked.reshape((grid.nt + 1,) + grid.shape + (stacked.shape[-1],)))

    @classmethod
    def from_function(
        cls, grid: Grid, fn: Callable[[float, np.ndarray], np.ndarray], with_boundary: bool = False
    ) -> "Field":
        """Evaluate fn(t, points) -> (n, components) at every level"""
        points = grid.boundary_points() if with_boundary else grid.points
        spatial = grid.padded_shape if with_boundary else grid.shape
        levels = []
        for t in grid.times:
            values = np.asarray(fn(float(t), points), dtype=float)
            if values.ndim == 1:
                values = values[:, None]
            levels.append(values.reshape(tuple(spatial) + (values.shape[-1],)))
        return cls(grid, np.stack(levels), with_boundary)

    @property
    def components(self) -> int:
        return int(self.data.shape[-1])

    @property
    def interior(self) -> np.ndarray:
        if not self.with_boundary:
            return self.data
        return self.data[(slice(None),) + self.grid.interior_slice()]

    def level(self, n: int) -> np.ndarray:
        """Interior values at level n flattened to (n_nodes, components)"""
        return self.interior[n].reshape(self.grid.n_nodes, self.components)

    def levels(self) -> Iterator[np.ndarray]:
        for n in range(self.grid.nt + 1):
            yield self.level(n)

    def value(self, n: int, index: Sequence[int], component: int = 0) -> float:
        return float(self.data[(n,) + tuple(index) + (component,)])

    def with_value(self, n: int, index: Sequence[int], component: int, value: float) -> "Field":
        data = self.data.copy()
        data[(n,) + tuple(index) + (component,)] = value
        return Field(self.grid, data, self.with_boundary)

    def map_interior(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        """Apply fn to the interior data and return an interior field"""
        return Field(self.grid, fn(self.interior))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.data + other.data, self.with_boundary)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.data - other.data, self.with_boundary)

    def scaled(self, factor: float) -> "Field":
        return Field(self.grid, factor * self.data, self.with_boundary)

    def check_finite(self, stage: str) -> "Field":
        if not np.all(np.isfinite(self.data)):
            bad = np.argwhere(~np.isfinite(self.data))[0]
            raise SolverError("non-finite field entry", stage=stage, node=tuple(int(i) for i in bad))
        return self

    def to_csv(self, path: PathLike) -> None:
        """Dump one row per node in full double precision"""
        grid = self.grid
        points = grid.boundary_points() if self.with_boundary else grid.points
        header = ["t"] + [f"x{i + 1}" for i in range(grid.dim)] + [f"c{c}" for c in range(self.components)]
        flat = self.data.reshape(grid.nt + 1, -1, self.components)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for n, t in enumerate(grid.times):
                for k in range(points.shape[0]):
                    row = [t, *points[k], *flat[n, k]]
                    writer.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def from_csv(cls, grid: Grid, path: PathLike, with_boundary: bool = False) -> "Field":
        """Read a dump written by to_csv back onto the same grid"""
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
        n_coords = 1 + grid.dim
        components = len(header) - n_coords
        if components < 1:
            raise GridError(f"{path}: header {header} has no component columns")
        spatial = grid.padded_shape if with_boundary else grid.shape
        expected = (grid.nt + 1) * int(np.prod(spatial))
        if len(rows) != expected:
            raise GridError(f"{path}: {len(rows)} rows, expected {expected}")
        values = np.asarray(rows)[:, n_coords:]
        return cls(grid, values.reshape((grid.nt + 1,) + tuple(spatial) + (components,)), with_boundary)


def spatial_gradient(v: Field, grid: Optional[Grid] = None) -> Field:
    """Central differences at interior nodes; neighbours on the boundary use the stored boundary data"""
    grid = grid or v.grid
    if not v.with_boundary:
        raise GridError("spatial_gradient needs a value field with boundary data")
    if v.components != 1:
        raise GridError(f"spatial_gradient expects a scalar field, got {v.components} components")
    values = v.data[..., 0]
    parts = []
    for axis in range(grid.dim):
        plus = _shift(values, grid, axis, +1)
        minus = _shift(values, grid, axis, -1)
        parts.append((plus - minus) / (2.0 * grid.dx[axis]))
    return Field(grid, np.stack(parts, axis=-1))


def _shift(values: np.ndarray, grid: Grid, axis: int, sign: int) -> np.ndarray:
    # values: (levels, *padded); returns neighbour values over the interior for all levels
    index: List[slice] = [slice(None)]
    for i, n in enumerate(grid.shape):
        index.append(slice(1 + sign, n + 1 + sign) if i == axis else slice(1, n + 1))
    return values[tuple(index)]


def level_gradient(padded: np.ndarray, grid: Grid) -> np.ndarray:
    """Central gradient of one padded level array, shape (n_nodes, d)"""
    parts = []
    for axis in range(grid.dim):
        up = grid.neighbor_values(padded, axis, +1).reshape(-1)
        down = grid.neighbor_values(padded, axis, -1).reshape(-1)
        parts.append((up - down) / (2.0 * grid.dx[axis]))
    return np.stack(parts, axis=-1)
