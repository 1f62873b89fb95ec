"""Agent knowledge: incremental obstacle map, coverage map, frontier extraction.

The belief shares the world grid convention 1:1 (same resolution, same
indexing).  Knowledge only grows: unknown -> free -> obstacle upgrades are
allowed, downgrades never happen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .lidar import LidarConfig, LidarScan, traverse_batch
from .worldmodel import Pose, wrap_angle

UNKNOWN = 0
KNOWN_FREE = 1
KNOWN_OBSTACLE = 2

_TAU = 2.0 * math.pi
_BELIEF_MAGIC = "covpath-belief"


@dataclass
class BeliefState:
    obstacle_map: np.ndarray  # uint8: UNKNOWN / KNOWN_FREE / KNOWN_OBSTACLE
    coverage_map: np.ndarray  # bool
    resolution: float
    covered_cells: int = 0
    steps_since_new_coverage: int = 0

    @property
    def covered_area(self) -> float:
        return self.covered_cells * self.resolution**2

    @property
    def shape(self) -> tuple[int, int]:
        return self.obstacle_map.shape

    def copy(self) -> "BeliefState":
        return BeliefState(
            obstacle_map=self.obstacle_map.copy(),
            coverage_map=self.coverage_map.copy(),
            resolution=self.resolution,
            covered_cells=self.covered_cells,
            steps_since_new_coverage=self.steps_since_new_coverage,
        )


def new_belief(shape: tuple[int, int], resolution: float) -> BeliefState:
    return BeliefState(
        obstacle_map=np.zeros(shape, dtype=np.uint8),
        coverage_map=np.zeros(shape, dtype=bool),
        resolution=resolution,
    )


def integrate_scan(b: BeliefState, pose: Pose, scan: LidarScan, cfg: LidarConfig) -> BeliefState:
    """Mark ray-traversed cells free and hit endpoints obstacle.

    Free marks are applied before obstacle marks so a single scan is
    order-independent and replaying the same scan is a no-op.  A covered cell
    is never marked obstacle: the body already swept it (only reachable under
    measurement noise).
    """
    res = b.resolution
    ranges = np.asarray(scan.ranges, dtype=np.float64)
    rows, cols, entry_t, valid = traverse_batch(
        b.shape, res, pose.x, pose.y, cfg.ray_angles(pose.heading), ranges + res
    )
    # Exit distance of each cell = entry of the next real cell along its ray.
    probe = np.where(valid, entry_t, np.inf)
    next_entry = np.minimum.accumulate(probe[:, ::-1], axis=1)[:, ::-1]
    exit_t = np.concatenate(
        [next_entry[:, 1:], np.full((len(ranges), 1), np.inf)], axis=1
    )
    # Free up to and including the cell whose far boundary sits exactly at
    # the measured range; the next cell is the endpoint cell.
    before = valid & (exit_t <= ranges[:, None] + 1e-9)
    free_r = rows[before]
    free_c = cols[before]
    if len(free_r):
        upgrade = b.obstacle_map[free_r, free_c] == UNKNOWN
        b.obstacle_map[free_r[upgrade], free_c[upgrade]] = KNOWN_FREE
    past = valid & ~before
    first_past = np.argmax(past, axis=1)
    lanes = np.arange(len(ranges))
    endpoint = np.asarray(scan.hit_flags) & past[lanes, first_past]
    for i in np.nonzero(endpoint)[0]:
        r, c = int(rows[i, first_past[i]]), int(cols[i, first_past[i]])
        if not b.coverage_map[r, c]:
            b.obstacle_map[r, c] = KNOWN_OBSTACLE
    return b


def _poses_xy(pose: Pose | Sequence[Pose] | Iterable[Pose]) -> np.ndarray:
    if isinstance(pose, Pose):
        return np.array([[pose.x, pose.y]])
    return np.array([[p.x, p.y] for p in pose])


def update_coverage(
    b: BeliefState,
    pose: Pose | Sequence[Pose],
    d: float,
    fov: float,
    scan: LidarScan | None,
    agent_radius: float,
) -> tuple[BeliefState, float]:
    """Mark newly covered cells; returns (belief, newly covered area in m²).

    Mowing (d <= agent radius): the body sweep — the full disc around every
    pose of the swept path, no fov or occlusion test.  Exploration (d > agent
    radius): sensed area from the final pose, limited by fov and by the
    nearest-bearing ray's measured range (occlusion).
    """
    if d <= 0:
        raise ValueError("coverage radius must be positive")
    if d <= agent_radius:
        new_cells = _sweep_disc(b, _poses_xy(pose), d)
    else:
        end = pose if isinstance(pose, Pose) else list(pose)[-1]
        if scan is None:
            raise ValueError("exploration coverage needs the step's scan")
        new_cells = _sensed_region(b, end, d, fov, scan)
    if new_cells:
        b.covered_cells += new_cells
        b.steps_since_new_coverage = 0
    else:
        b.steps_since_new_coverage += 1
    return b, new_cells * b.resolution**2


def _sweep_disc(b: BeliefState, pts: np.ndarray, d: float) -> int:
    res = b.resolution
    h, w = b.shape
    rad = int(math.ceil(d / res)) + 1
    off = np.arange(-rad, rad + 1)
    orr, occ = np.meshgrid(off, off, indexing="ij")
    offsets = np.stack([orr.ravel(), occ.ravel()], axis=1)  # (K, 2)
    centers = np.floor(pts[:, ::-1] / res).astype(np.int64)  # (N, 2) as (row, col)
    cand = centers[:, None, :] + offsets[None, :, :]  # (N, K, 2)
    cand_xy = (cand[..., ::-1] + 0.5) * res
    within = ((cand_xy - pts[:, None, :]) ** 2).sum(axis=-1) <= d * d + 1e-12
    rows = cand[..., 0][within]
    cols = cand[..., 1][within]
    ok = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    rows, cols = rows[ok], cols[ok]
    fresh = (
        ~b.coverage_map[rows, cols] & (b.obstacle_map[rows, cols] != KNOWN_OBSTACLE)
    )
    rows, cols = rows[fresh], cols[fresh]
    if len(rows) == 0:
        return 0
    flat = np.unique(rows * w + cols)
    b.coverage_map.ravel()[flat] = True
    return len(flat)


def _sensed_region(b: BeliefState, pose: Pose, d: float, fov: float, scan: LidarScan) -> int:
    res = b.resolution
    h, w = b.shape
    rad = int(math.ceil(d / res)) + 1
    r0, c0 = int(pose.y / res), int(pose.x / res)
    rows = np.arange(max(0, r0 - rad), min(h, r0 + rad + 1))
    cols = np.arange(max(0, c0 - rad), min(w, c0 + rad + 1))
    cy = (rows[:, None] + 0.5) * res - pose.y
    cx = (cols[None, :] + 0.5) * res - pose.x
    dist = np.hypot(cx, cy)
    bearing = np.arctan2(cy, cx)
    rel = np.mod(bearing - pose.heading + math.pi, _TAU) - math.pi
    n = len(scan.ranges)
    omni = fov >= _TAU - 1e-9
    if omni:
        idx = np.mod(np.round(rel / (_TAU / n)).astype(np.int64), n)
        in_fov = np.ones_like(dist, dtype=bool)
    else:
        spacing = fov / (n - 1) if n > 1 else fov
        in_fov = np.abs(rel) <= fov / 2.0 + 1e-9
        idx = np.clip(np.round((rel + fov / 2.0) / spacing).astype(np.int64), 0, n - 1)
    limit = np.minimum(d, scan.ranges[idx])
    visible = in_fov & (dist <= limit + 1e-9)
    region = b.coverage_map[np.ix_(rows, cols)]
    blocked = b.obstacle_map[np.ix_(rows, cols)] == KNOWN_OBSTACLE
    fresh = visible & ~region & ~blocked
    count = int(fresh.sum())
    if count:
        b.coverage_map[np.ix_(rows, cols)] = region | fresh
    return count


def frontier_cells(b: BeliefState) -> np.ndarray:
    """Non-obstacle, non-covered cells with at least one covered 8-neighbor."""
    cov = b.coverage_map
    neigh = np.zeros_like(cov)
    neigh[1:, :] |= cov[:-1, :]
    neigh[:-1, :] |= cov[1:, :]
    neigh[:, 1:] |= cov[:, :-1]
    neigh[:, :-1] |= cov[:, 1:]
    neigh[1:, 1:] |= cov[:-1, :-1]
    neigh[1:, :-1] |= cov[:-1, 1:]
    neigh[:-1, 1:] |= cov[1:, :-1]
    neigh[:-1, :-1] |= cov[1:, 1:]
    return neigh & ~cov & (b.obstacle_map != KNOWN_OBSTACLE)


def save_belief(b: BeliefState) -> str:
    """Debug/golden serialization: obstacle layer, blank line, coverage layer."""
    h, w = b.shape
    header = f"{_BELIEF_MAGIC} v1 {w} {h} {b.resolution:g}"
    sym = {UNKNOWN: "?", KNOWN_FREE: ".", KNOWN_OBSTACLE: "#"}
    obstacle_rows = [
        "".join(sym[v] for v in b.obstacle_map[r]) for r in range(h - 1, -1, -1)
    ]
    coverage_rows = [
        "".join("c" if v else "." for v in b.coverage_map[r]) for r in range(h - 1, -1, -1)
    ]
    return "\n".join([header, *obstacle_rows, "", *coverage_rows]) + "\n"


def load_belief(text: str) -> BeliefState:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    parts = lines[0].split()
    if len(parts) != 5 or parts[0] != _BELIEF_MAGIC or parts[1] != "v1":
        raise ValueError(f"bad belief header: {lines[0]!r}")
    w, h, res = int(parts[2]), int(parts[3]), float(parts[4])
    sym = {"?": UNKNOWN, ".": KNOWN_FREE, "#": KNOWN_OBSTACLE}
    obstacle = np.zeros((h, w), dtype=np.uint8)
    coverage = np.zeros((h, w), dtype=bool)
    for i in range(h):
        obstacle[h - 1 - i] = [sym[ch] for ch in lines[1 + i]]
    for i in range(h):
        coverage[h - 1 - i] = [ch == "c" for ch in lines[2 + h + i]]
    return BeliefState(
        obstacle_map=obstacle,
        coverage_map=coverage,
        resolution=res,
        covered_cells=int(coverage.sum()),
    )
