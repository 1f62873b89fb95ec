"""Simulated 2D lidar: grid ray casting plus Gaussian pose/range noise."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .worldmodel import OBSTACLE, Pose, WorldMap, wrap_angle

_TAU = 2.0 * math.pi


class PoseOutsideMap(ValueError):
    pass


@dataclass(frozen=True)
class LidarConfig:
    n_rays: int = 24
    fov: float = math.pi
    max_range: float = 3.5

    def __post_init__(self) -> None:
        if self.n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        if not 0.0 < self.fov <= _TAU + 1e-12:
            raise ValueError("fov must be in (0, 2*pi]")

    def ray_angles(self, heading: float) -> np.ndarray:
        """Absolute ray angles, evenly spaced over the fov, centered on heading.

        A full 2*pi fov distributes rays without duplicating the wrap-around ray.
        """
        i = np.arange(self.n_rays)
        if self.fov >= _TAU - 1e-9:
            rel = i * _TAU / self.n_rays
        elif self.n_rays == 1:
            rel = np.zeros(1)
        else:
            rel = -self.fov / 2.0 + i * self.fov / (self.n_rays - 1)
        return heading + rel


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray  # meters, clipped to [0, max_range]
    hit_flags: np.ndarray  # per ray: True = obstacle hit, False = max-range miss

    def __post_init__(self) -> None:
        self.ranges.setflags(write=False)
        self.hit_flags.setflags(write=False)


@dataclass(frozen=True)
class NoiseConfig:
    sigma_position: float = 0.0
    sigma_heading: float = 0.0
    sigma_lidar: float = 0.0

    def __post_init__(self) -> None:
        if min(self.sigma_position, self.sigma_heading, self.sigma_lidar) < 0:
            raise ValueError("noise sigmas must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.sigma_position > 0 or self.sigma_heading > 0 or self.sigma_lidar > 0


# Table-style presets: (sigma_position m, sigma_heading rad, sigma_lidar m).
NOISE_PRESETS = {
    "none": NoiseConfig(),
    "low": NoiseConfig(0.01, 0.05, 0.05),
    "medium": NoiseConfig(0.02, 0.1, 0.1),
    "high": NoiseConfig(0.05, 0.2, 0.2),
}


def traverse_ray(
    world_shape: tuple[int, int],
    resolution: float,
    x0: float,
    y0: float,
    angle: float,
    max_range: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Cells crossed by a ray, in order, with the entry distance of each cell.

    Returns (cells, entry_t): cells is (n, 2) int rows/cols, entry_t the metric
    distance at which the ray enters each cell (0 for the origin cell).  Every
    cell the segment crosses appears exactly once; nothing beyond max_range or
    the grid edge.
    """
    h, w = world_shape
    dx, dy = math.cos(angle), math.sin(angle)
    # Clip the ray to the grid rectangle so boundary indices stay valid.
    t_lo, t_hi = 0.0, max_range
    for pos, delta, size in ((x0, dx, w * resolution), (y0, dy, h * resolution)):
        if abs(delta) < 1e-15:
            if not 0.0 <= pos < size:
                return np.empty((0, 2), dtype=np.int64), np.empty(0)
        else:
            ta, tb = (0.0 - pos) / delta, (size - pos) / delta
            t_lo = max(t_lo, min(ta, tb))
            t_hi = min(t_hi, max(ta, tb))
    t_hi -= 1e-9  # stay strictly inside the far boundary
    if t_hi <= t_lo:
        return np.empty((0, 2), dtype=np.int64), np.empty(0)

    crossings = [np.array([t_lo, t_hi])]
    for pos, delta in ((x0 / resolution, dx / resolution), (y0 / resolution, dy / resolution)):
        if abs(delta) < 1e-15:
            continue
        # Grid-line indices crossed between t_lo and t_hi along this axis.
        a, b = pos + t_lo * delta, pos + t_hi * delta
        lo, hi = (a, b) if a <= b else (b, a)
        lines = np.arange(math.ceil(lo - 1e-12), math.floor(hi + 1e-12) + 1, dtype=float)
        crossings.append((lines - pos) / delta)
    ts = np.unique(np.concatenate(crossings))
    ts = ts[(ts >= t_lo - 1e-12) & (ts <= t_hi + 1e-12)]
    if len(ts) < 2:
        return np.empty((0, 2), dtype=np.int64), np.empty(0)
    mid = (ts[:-1] + ts[1:]) / 2.0
    cols = np.floor((x0 + mid * dx) / resolution).astype(np.int64)
    rows = np.floor((y0 + mid * dy) / resolution).astype(np.int64)
    keep = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    cells = np.stack([rows[keep], cols[keep]], axis=1)
    return cells, ts[:-1][keep]


def traverse_batch(
    world_shape: tuple[int, int],
    resolution: float,
    x0: float,
    y0: float,
    angles: np.ndarray,
    max_ranges: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """traverse_ray for many rays at once, padded to a common segment count.

    Returns (rows, cols, entry_t, valid), each (n_rays, k): cell indices, the
    metric entry distance per cell, and which slots are real cells.  Row i
    restricted to its valid slots matches traverse_ray(..., angles[i],
    max_ranges[i]) exactly, in order.
    """
    h, w = world_shape
    n = len(angles)
    dx = np.cos(angles)
    dy = np.sin(angles)
    t_lo = np.zeros(n)
    t_hi = np.asarray(max_ranges, dtype=np.float64).copy()
    for pos, delta, size in ((x0, dx, w * resolution), (y0, dy, h * resolution)):
        parallel = np.abs(delta) < 1e-15
        if np.any(parallel) and not 0.0 <= pos < size:
            t_hi = np.where(parallel, -np.inf, t_hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (0.0 - pos) / delta
            tb = (size - pos) / delta
        lo = np.minimum(ta, tb)
        hi = np.maximum(ta, tb)
        t_lo = np.where(parallel, t_lo, np.maximum(t_lo, lo))
        t_hi = np.where(parallel, t_hi, np.minimum(t_hi, hi))
    t_hi = t_hi - 1e-9
    dead = t_hi <= t_lo

    # Crossing parameters of the grid lines each ray passes, per axis, padded.
    pieces = [t_lo[:, None], t_hi[:, None]]
    for pos, delta in ((x0 / resolution, dx / resolution), (y0 / resolution, dy / resolution)):
        usable = (np.abs(delta) >= 1e-15) & ~dead
        with np.errstate(invalid="ignore"):
            a = pos + t_lo * delta
            b = pos + t_hi * delta
        lo = np.where(usable, np.minimum(a, b), 0.0)
        hi = np.where(usable, np.maximum(a, b), -1.0)
        first = np.ceil(lo - 1e-12)
        count = np.floor(hi + 1e-12) - first + 1
        count = np.where(usable, np.maximum(count, 0), 0).astype(np.int64)
        k = int(count.max()) if len(count) else 0
        if k == 0:
            continue
        lines = first[:, None] + np.arange(k)[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            ts_axis = (lines - pos) / delta[:, None]
        ts_axis = np.where(np.arange(k)[None, :] < count[:, None], ts_axis, np.inf)
        pieces.append(ts_axis)
    ts = np.concatenate(pieces, axis=1)
    inside = (ts >= t_lo[:, None] - 1e-12) & (ts <= t_hi[:, None] + 1e-12) & ~dead[:, None]
    ts = np.where(inside, ts, np.inf)
    ts.sort(axis=1)

    starts = ts[:, :-1]
    ends = ts[:, 1:]
    # Strictly increasing pairs only: exact duplicates mirror np.unique upstream.
    seg = np.isfinite(starts) & np.isfinite(ends) & (ends > starts)
    mid = 0.5 * (starts + ends)
    with np.errstate(invalid="ignore"):
        cols = np.floor((x0 + mid * dx[:, None]) / resolution)
        rows = np.floor((y0 + mid * dy[:, None]) / resolution)
    good = seg & np.isfinite(rows) & np.isfinite(cols)
    rows = np.where(good, rows, 0).astype(np.int64)
    cols = np.where(good, cols, 0).astype(np.int64)
    valid = good & (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    return rows, cols, starts, valid


def cast_rays(world: WorldMap, pose: Pose, cfg: LidarConfig) -> LidarScan:
    """Ranges to the first obstacle-cell boundary along each ray, or max_range."""
    if not world.contains(pose.x, pose.y):
        raise PoseOutsideMap(f"({pose.x}, {pose.y}) outside map extent {world.extent}")
    x0 = pose.x - world.origin[0]
    y0 = pose.y - world.origin[1]
    angles = cfg.ray_angles(pose.heading)
    limits = np.full(cfg.n_rays, cfg.max_range)
    rows, cols, entry_t, valid = traverse_batch(
        world.cells.shape, world.resolution, x0, y0, angles, limits
    )
    occupied = valid & (world.cells[rows, cols] == OBSTACLE)
    first = np.argmax(occupied, axis=1)
    lanes = np.arange(cfg.n_rays)
    hits = occupied[lanes, first]
    ranges = np.where(
        hits, np.minimum(entry_t[lanes, first], cfg.max_range), cfg.max_range
    )
    return LidarScan(ranges=np.ascontiguousarray(ranges), hit_flags=hits)


def perturb(
    pose: Pose, scan: LidarScan, noise: NoiseConfig, rng: np.random.Generator, max_range: float
) -> tuple[Pose, LidarScan]:
    """Independent zero-mean Gaussian noise on pose and per-ray ranges."""
    if not noise.enabled:
        return pose, scan
    nx = pose.x + rng.normal(0.0, noise.sigma_position) if noise.sigma_position else pose.x
    ny = pose.y + rng.normal(0.0, noise.sigma_position) if noise.sigma_position else pose.y
    nh = pose.heading
    if noise.sigma_heading:
        nh = wrap_angle(pose.heading + rng.normal(0.0, noise.sigma_heading))
    ranges = scan.ranges
    if noise.sigma_lidar:
        ranges = np.clip(ranges + rng.normal(0.0, noise.sigma_lidar, size=len(ranges)), 0.0, max_range)
    return Pose(nx, ny, nh), LidarScan(ranges=ranges, hit_flags=scan.hit_flags.copy())
