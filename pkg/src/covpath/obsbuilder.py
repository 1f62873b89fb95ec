"""Policy input assembly: egocentric multi-scale map crops, lidar vector, history.

Layer pipeline per scale: pool the world-frame grid (mean for coverage and
obstacle occupancy, OR for frontiers), then sample the pooled grid
nearest-neighbor at each egocentric pixel center so binary frontier semantics
survive rotation.  The agent sits between the two center pixels of every crop,
facing the top of the image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .belief import KNOWN_OBSTACLE, UNKNOWN, BeliefState, frontier_cells
from .lidar import LidarScan
from .worldmodel import Pose

DUMP_VERSION = 1

UNKNOWN_OCCUPANCY = 0.5  # M_o encoding for never-scanned cells
OUT_OF_MAP_OCCUPANCY = 1.0  # beyond the arena border counts as wall


@dataclass(frozen=True)
class MultiScaleConfig:
    m: int = 4
    s: int = 4
    grid: int = 32
    finest_resolution: float = 0.0375

    def __post_init__(self) -> None:
        if self.m < 1 or self.s < 2 or self.grid < 2:
            raise ValueError("degenerate multi-scale config")

    @property
    def scale_factors(self) -> tuple[int, ...]:
        return tuple(self.s**i for i in range(self.m))

    @property
    def scale_sides(self) -> tuple[float, ...]:
        """Metric side length of each scale's crop."""
        return tuple(self.grid * self.finest_resolution * f for f in self.scale_factors)


@dataclass(frozen=True)
class MultiScaleObservation:
    coverage: np.ndarray  # (m, grid, grid) float32 in [0, 1]
    obstacles: np.ndarray  # (m, grid, grid) float32 in [0, 1]
    frontiers: np.ndarray  # (m, grid, grid) float32 in {0, 1}
    lidar: np.ndarray  # (n_rays,) float32 in [0, 1]
    action_history: np.ndarray  # (2k,) float32, oldest first


def downscale_frontier(fine: np.ndarray, factor: int, window: int | None = None) -> np.ndarray:
    """OR-pool a binary mask: coarse cell is set iff any covered fine cell is set.

    window defaults to factor (non-overlapping blocks); a larger window ORs
    overlapping neighborhoods sampled at the same stride.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    fine = np.asarray(fine, dtype=bool)
    window = factor if window is None else window
    if window < factor:
        raise ValueError("window must cover the stride")
    h, w = fine.shape
    out_h = math.ceil(h / factor)
    out_w = math.ceil(w / factor)
    pad_h = (out_h - 1) * factor + window
    pad_w = (out_w - 1) * factor + window
    padded = np.zeros((pad_h, pad_w), dtype=bool)
    padded[:h, :w] = fine
    view = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    return view[::factor, ::factor].any(axis=(2, 3))


def _pool_mean(grid: np.ndarray, factor: int, pad_value: float) -> np.ndarray:
    if factor == 1:
        return grid
    h, w = grid.shape
    out_h = math.ceil(h / factor)
    out_w = math.ceil(w / factor)
    padded = np.full((out_h * factor, out_w * factor), pad_value, dtype=grid.dtype)
    padded[:h, :w] = grid
    return padded.reshape(out_h, factor, out_w, factor).mean(axis=(1, 3))


def _sample_points(pose: Pose, side: float, grid: int) -> tuple[np.ndarray, np.ndarray]:
    """World (x, y) of each egocentric pixel center for a crop of the given side."""
    px = side / grid
    half = (grid - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    forward = (half - rows) * px
    right = (cols - half) * px
    sin_h, cos_h = math.sin(pose.heading), math.cos(pose.heading)
    x = pose.x + forward * cos_h + right * sin_h
    y = pose.y + forward * sin_h - right * cos_h
    return x, y


def build_observation(
    b: BeliefState,
    pose: Pose,
    scan: LidarScan,
    cfg: MultiScaleConfig,
    history: np.ndarray | None = None,
    max_range: float = 3.5,
) -> MultiScaleObservation:
    res = b.resolution
    coverage_fine = b.coverage_map.astype(np.float64)
    obstacle_fine = np.full(b.shape, UNKNOWN_OCCUPANCY)
    obstacle_fine[b.obstacle_map == KNOWN_OBSTACLE] = 1.0
    obstacle_fine[(b.obstacle_map != KNOWN_OBSTACLE) & (b.obstacle_map != UNKNOWN)] = 0.0
    frontier_fine = frontier_cells(b)

    m, grid = cfg.m, cfg.grid
    cov = np.zeros((m, grid, grid), dtype=np.float32)
    obs = np.zeros((m, grid, grid), dtype=np.float32)
    fro = np.zeros((m, grid, grid), dtype=np.float32)
    for i, factor in enumerate(cfg.scale_factors):
        pooled_cov = _pool_mean(coverage_fine, factor, 0.0)
        pooled_obs = _pool_mean(obstacle_fine, factor, OUT_OF_MAP_OCCUPANCY)
        pooled_fro = downscale_frontier(frontier_fine, factor)
        x, y = _sample_points(pose, cfg.scale_sides[i], grid)
        block = res * factor
        br = np.floor(y / block).astype(np.int64)
        bc = np.floor(x / block).astype(np.int64)
        inside = (br >= 0) & (br < pooled_cov.shape[0]) & (bc >= 0) & (bc < pooled_cov.shape[1])
        br_c = np.clip(br, 0, pooled_cov.shape[0] - 1)
        bc_c = np.clip(bc, 0, pooled_cov.shape[1] - 1)
        cov[i] = np.where(inside, pooled_cov[br_c, bc_c], 0.0)
        obs[i] = np.where(inside, pooled_obs[br_c, bc_c], OUT_OF_MAP_OCCUPANCY)
        fro[i] = np.where(inside, pooled_fro[br_c, bc_c], False).astype(np.float32)

    lidar_vec = (np.asarray(scan.ranges, dtype=np.float32) / max_range).clip(0.0, 1.0)
    if history is None:
        history = np.zeros(0, dtype=np.float32)
    return MultiScaleObservation(
        coverage=cov,
        obstacles=obs,
        frontiers=fro,
        lidar=lidar_vec,
        action_history=np.asarray(history, dtype=np.float32).ravel(),
    )


def dump_observation(o: MultiScaleObservation, cfg: MultiScaleConfig) -> bytes:
    """Flat little-endian buffer: 5-int header, then [M_c, M_o, M_f, S, history]."""
    k = o.action_history.size // 2
    header = np.array([cfg.m, cfg.grid, o.lidar.size, k, DUMP_VERSION], dtype="<i4")
    body = np.concatenate(
        [
            o.coverage.ravel(),
            o.obstacles.ravel(),
            o.frontiers.ravel(),
            o.lidar,
            o.action_history,
        ]
    ).astype("<f4")
    return header.tobytes() + body.tobytes()


def load_observation(buf: bytes) -> tuple[dict, np.ndarray]:
    """Parse a dump back into (header dict, flat float32 body)."""
    header = np.frombuffer(buf[:20], dtype="<i4")
    m, grid, n_rays, k, version = (int(v) for v in header)
    body = np.frombuffer(buf[20:], dtype="<f4")
    expected = 3 * m * grid * grid + n_rays + 2 * k
    if version != DUMP_VERSION or body.size != expected:
        raise ValueError("corrupt observation dump")
    return {"m": m, "grid": grid, "n_rays": n_rays, "k": k, "version": version}, body
