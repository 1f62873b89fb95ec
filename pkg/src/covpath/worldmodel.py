"""Ground-truth occupancy world: grid geometry, map file I/O, reachability.

Everything downstream (sensing, belief, planning) shares one grid convention:
cell (row, col) spans the world rectangle
[col*res, (col+1)*res) x [row*res, (row+1)*res), row 0 at the bottom,
x growing with columns and y with rows.  Cell centers sit at
((col+0.5)*res, (row+0.5)*res).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

RESOLUTION = 0.0375  # meters per cell, identical across world/belief/observation grids

FREE = 0
OBSTACLE = 1

_MAP_MAGIC = "covpath-map"
_MAP_VERSION = "v1"
_TAU = 2.0 * math.pi


class ParseError(ValueError):
    """Malformed map document."""


class GeometryError(ValueError):
    """Degenerate map geometry (zero-size grid)."""


class StartInObstacle(ValueError):
    """Flood fill seeded inside an obstacle or under-clearance cell."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = (theta + math.pi) % _TAU - math.pi
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", wrap_angle(self.heading))


@dataclass
class WorldMap:
    """Immutable binary occupancy grid with a closed border.

    Attributes:
        cells: (height_cells, width_cells) uint8 array of FREE/OBSTACLE.
        resolution: meters per cell.
        origin: world (x, y) of the lower-left corner of cell (0, 0).
    """

    cells: np.ndarray
    resolution: float = RESOLUTION
    origin: tuple[float, float] = (0.0, 0.0)
    _clearance_m: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        self.cells = np.ascontiguousarray(self.cells, dtype=np.uint8)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise GeometryError("map must be a non-empty 2D grid")
        # Confined arena: force a one-cell obstacle frame.
        self.cells[0, :] = OBSTACLE
        self.cells[-1, :] = OBSTACLE
        self.cells[:, 0] = OBSTACLE
        self.cells[:, -1] = OBSTACLE
        self.cells.setflags(write=False)

    @property
    def height_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def width_cells(self) -> int:
        return self.cells.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        """Metric (width, height) of the grid."""
        return (self.width_cells * self.resolution, self.height_cells * self.resolution)

    def cell_at(self, x: float, y: float) -> tuple[int, int]:
        """World point -> (row, col), clipped into the grid."""
        col = min(max(int((x - self.origin[0]) / self.resolution), 0), self.width_cells - 1)
        row = min(max(int((y - self.origin[1]) / self.resolution), 0), self.height_cells - 1)
        return row, col

    def contains(self, x: float, y: float) -> bool:
        w, h = self.extent
        return (
            self.origin[0] <= x < self.origin[0] + w
            and self.origin[1] <= y < self.origin[1] + h
        )

    def clearance_m(self) -> np.ndarray:
        """Per-cell distance (meters) from the cell center to the nearest obstacle cell center.

        Computed once, cached; obstacle cells read 0.
        """
        if self._clearance_m is None:
            dist = ndimage.distance_transform_edt(self.cells == FREE)
            field_m = (dist * self.resolution).astype(np.float64)
            field_m.setflags(write=False)
            self._clearance_m = field_m
        return self._clearance_m

    def is_collision(self, x: float, y: float, radius: float) -> bool:
        """Disc of the given radius at (x, y) overlaps an obstacle.

        Uses the same cell-rounded clearance rule as reachable_free_space, so a
        pose is collision-free exactly when its cell lies in the clearance mask.
        """
        return self.collision_fn(radius)(x, y)

    def collision_fn(self, radius: float) -> Callable[[float, float], bool]:
        """Hoisted is_collision for tight loops; one lookup per call, same rule."""
        clearance = self.clearance_m()
        threshold = radius_cells(radius, self.resolution) * self.resolution - 1e-12
        ox, oy = self.origin
        inv = 1.0 / self.resolution
        width, height = self.extent
        x_hi, y_hi = ox + width, oy + height

        def check(x: float, y: float) -> bool:
            if not (ox <= x < x_hi and oy <= y < y_hi):
                return True
            return clearance[int((y - oy) * inv), int((x - ox) * inv)] < threshold

        return check


def radius_cells(radius: float, resolution: float = RESOLUTION) -> int:
    """Sub-cell radius rounds up to whole cells (conservative)."""
    return int(math.ceil(radius / resolution - 1e-9))


@dataclass(frozen=True)
class FreeSpaceIndex:
    reachable_mask: np.ndarray
    reachable_area: float


def save_map(world: WorldMap) -> str:
    rows = []
    for r in range(world.height_cells - 1, -1, -1):
        rows.append("".join("#" if c == OBSTACLE else "." for c in world.cells[r]))
    header = (
        f"{_MAP_MAGIC} {_MAP_VERSION} {world.width_cells} "
        f"{world.height_cells} {world.resolution:g}"
    )
    return "\n".join([header, *rows]) + "\n"


def load_map(text: str) -> WorldMap:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty document")
    parts = lines[0].split()
    if len(parts) != 5 or parts[0] != _MAP_MAGIC or parts[1] != _MAP_VERSION:
        raise ParseError(f"bad header: {lines[0]!r}")
    try:
        width, height = int(parts[2]), int(parts[3])
        resolution = float(parts[4])
    except ValueError as exc:
        raise ParseError(f"bad header numbers: {lines[0]!r}") from exc
    if width <= 0 or height <= 0 or resolution <= 0:
        raise GeometryError("zero-size map")
    body = lines[1:]
    if len(body) != height:
        raise ParseError(f"expected {height} rows, got {len(body)}")
    grid = np.empty((height, width), dtype=np.uint8)
    for i, line in enumerate(body):
        if len(line) != width:
            raise ParseError(f"ragged row {i}: {len(line)} != {width}")
        row = np.frombuffer(line.encode("ascii"), dtype=np.uint8)
        bad = ~np.isin(row, (ord("#"), ord(".")))
        if bad.any():
            raise ParseError(f"unknown character in row {i}")
        grid[height - 1 - i] = (row == ord("#")).astype(np.uint8)
    return WorldMap(cells=grid, resolution=resolution)


def reachable_free_space(world: WorldMap, start: Pose, agent_radius: float) -> FreeSpaceIndex:
    """Cells whose clearance admits the agent disc, 4-connected to the start cell.

    The returned area is the coverage denominator for mowing; exploration
    callers dilate the mask by the coverage radius (see coverage_denominator).
    """
    r_cells = radius_cells(agent_radius, world.resolution)
    clear = world.clearance_m() >= r_cells * world.resolution - 1e-12
    row, col = world.cell_at(start.x, start.y)
    if not clear[row, col]:
        raise StartInObstacle(f"start cell ({row},{col}) lacks clearance {agent_radius}")
    labels, _ = ndimage.label(clear, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    mask = labels == labels[row, col]
    return FreeSpaceIndex(
        reachable_mask=mask, reachable_area=float(mask.sum()) * world.resolution**2
    )


def coverage_denominator(
    world: WorldMap, start: Pose, agent_radius: float, coverage_radius: float
) -> FreeSpaceIndex:
    """Denominator mask for coverage fractions.

    Mowing (d <= r): the agent-clearance reachable set itself.  Exploration
    (d > r): every free cell the agent can approach within d, i.e. the
    reachable set dilated by d, clipped to free cells.
    """
    index = reachable_free_space(world, start, agent_radius)
    if coverage_radius <= agent_radius:
        return index
    outside = ndimage.distance_transform_edt(~index.reachable_mask) * world.resolution
    mask = (outside <= coverage_radius + 1e-12) & (world.cells == FREE)
    return FreeSpaceIndex(reachable_mask=mask, reachable_area=float(mask.sum()) * world.resolution**2)
