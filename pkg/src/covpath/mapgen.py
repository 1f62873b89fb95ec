"""Procedural environments and the fixed-map curriculum.

Random square areas with optional grid-of-rooms floor plans (doors carved
between neighboring rooms, some closed again for variety) and scattered
circular obstacles kept far enough apart that the whole free space stays
reachable. Generation is geometric (wall rectangles, disc centers) and only
rasterized at the end, so every map is exactly reproducible from its seed.

Also hosts the shipped fixed maps grouped into difficulty tiers and the
progressive level schedule that consumes them.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .worldmodel import (
    FREE,
    OBSTACLE,
    RESOLUTION,
    WorldMap,
    load_map,
    radius_cells,
    save_map,
)

Rect = tuple[float, float, float, float]  # x0, y0, x1, y1


@dataclass(frozen=True)
class MapGenParams:
    task: str = "mowing"
    side_range: tuple[float, float] = (2.4, 7.5)
    p_floorplan: float = 0.7
    p_obstacles: float = 0.7
    room_side: tuple[float, float] = (1.5, 4.8)
    wall_thickness: tuple[float, float] = (0.075, 0.3)
    door: tuple[float, float] = (0.6, 1.2)
    p_wall: float = 0.9
    obstacle_radius: float = 0.25
    obstacle_every_m2: float = 4.0
    min_clearance: float = 0.6
    agent_radius: float = 0.15
    resolution: float = RESOLUTION

    @staticmethod
    def for_task(task: str) -> "MapGenParams":
        if task == "mowing":
            return MapGenParams(task="mowing", side_range=(2.4, 7.5))
        if task == "exploration":
            return MapGenParams(task="exploration", side_range=(9.6, 15.0))
        raise ValueError(f"unknown task {task!r}")


@dataclass(frozen=True)
class MapInfo:
    side: float
    has_floorplan: bool
    n_obstacles: int
    seed: int | None = None
    door_width: float | None = None
    n_obstacle_attempts: int = 0
    obstacle_centers: tuple[tuple[float, float], ...] = ()


class _Wall:
    """One map-spanning wall band plus its door bookkeeping.

    axis 0: vertical wall (band in x, doors carved along y);
    axis 1: horizontal wall (band in y, doors carved along x).
    """

    def __init__(self, axis: int, lo: float, hi: float, span: float):
        self.axis = axis
        self.lo = lo
        self.hi = hi
        self.solid: list[tuple[float, float]] = [(0.0, span)]
        self.openings: list[tuple[float, float]] = []

    def carve(self, a: float, b: float) -> None:
        pieces: list[tuple[float, float]] = []
        for s0, s1 in self.solid:
            if b <= s0 or a >= s1:
                pieces.append((s0, s1))
                continue
            if s0 < a:
                pieces.append((s0, a))
            if b < s1:
                pieces.append((b, s1))
        self.solid = pieces
        self.openings.append((a, b))

    def close_opening(self, index: int) -> None:
        self.solid.append(self.openings.pop(index))

    def rects(self) -> list[Rect]:
        out = []
        for s0, s1 in self.solid:
            if s1 - s0 <= 1e-12:
                continue
            if self.axis == 0:
                out.append((self.lo, s0, self.hi, s1))
            else:
                out.append((s0, self.lo, s1, self.hi))
        return out


def _floorplan_walls(
    rng: np.random.Generator, params: MapGenParams, side: float
) -> tuple[list[_Wall], float]:
    room = rng.uniform(*params.room_side)
    thick = rng.uniform(*params.wall_thickness)
    door = rng.uniform(*params.door)
    pitch = room + thick

    walls: list[_Wall] = []
    for axis in (0, 1):
        k = 1
        while k * pitch - thick <= side - 0.15:  # keep a sliver of room past the last wall
            if rng.random() < params.p_wall:
                walls.append(_Wall(axis, k * pitch - thick, k * pitch, side))
            k += 1

    # One door per neighboring room pair along each placed wall. Stub rooms at
    # the far edge too short for a full door get none; the connectivity
    # resample in generate() rejects the rare layout this seals off.
    for wall in walls:
        i = 0
        while i * pitch < side - 1e-9:
            seg0 = i * pitch
            seg1 = min(seg0 + room, side)
            i += 1
            if seg1 - seg0 < door - 1e-12:
                continue
            a = rng.uniform(seg0, seg1 - door)
            wall.carve(a, a + door)

    # Close one door per wall for one orientation only; a wall's sole door is
    # never closed since that would seal the rooms it connects.
    close_axis = 0 if rng.random() < 0.5 else 1
    for wall in walls:
        if wall.axis == close_axis and len(wall.openings) >= 2:
            wall.close_opening(int(rng.integers(len(wall.openings))))
    return walls, door


def _dist_point_rect(px: float, py: float, rect: Rect) -> float:
    x0, y0, x1, y1 = rect
    dx = max(x0 - px, 0.0, px - x1)
    dy = max(y0 - py, 0.0, py - y1)
    return math.hypot(dx, dy)


def _scatter_obstacles(
    rng: np.random.Generator, params: MapGenParams, side: float, wall_rects: Sequence[Rect]
) -> tuple[list[tuple[float, float]], int]:
    rad = params.obstacle_radius
    placed: list[tuple[float, float]] = []
    attempts = int(rng.poisson(side * side / params.obstacle_every_m2))
    for _ in range(attempts):
        cx = rng.uniform(0.0, side)
        cy = rng.uniform(0.0, side)
        # Nearest wall counts the border band too.
        gap = min(cx, cy, side - cx, side - cy) - params.resolution - rad
        for rect in wall_rects:
            gap = min(gap, _dist_point_rect(cx, cy, rect) - rad)
        for px, py in placed:
            gap = min(gap, math.hypot(cx - px, cy - py) - 2 * rad)
        if gap >= params.min_clearance:
            placed.append((cx, cy))
    return placed, attempts


def _rasterize(
    side: float,
    wall_rects: Sequence[Rect],
    obstacles: Sequence[tuple[float, float]],
    params: MapGenParams,
) -> WorldMap:
    res = params.resolution
    n = int(round(side / res))
    cells = np.full((n, n), FREE, dtype=np.uint8)
    centers = (np.arange(n) + 0.5) * res
    for x0, y0, x1, y1 in wall_rects:
        c0, c1 = np.searchsorted(centers, (x0, x1))
        r0, r1 = np.searchsorted(centers, (y0, y1))
        cells[r0:r1, c0:c1] = OBSTACLE
    rad = params.obstacle_radius
    for cx, cy in obstacles:
        c0, c1 = np.searchsorted(centers, (cx - rad, cx + rad))
        r0, r1 = np.searchsorted(centers, (cy - rad, cy + rad))
        sub_x = centers[c0:c1][None, :] - cx
        sub_y = centers[r0:r1][:, None] - cy
        cells[r0:r1, c0:c1][sub_x**2 + sub_y**2 <= rad * rad] = OBSTACLE
    return WorldMap(cells=cells, resolution=res)


def _fully_connected(world: WorldMap, agent_radius: float) -> bool:
    thr = radius_cells(agent_radius, world.resolution) * world.resolution
    clear = world.clearance_m() >= thr - 1e-12
    if not clear.any():
        return False
    _, count = ndimage.label(clear, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]]))
    return count == 1


def generate(rng: np.random.Generator, params: MapGenParams) -> tuple[WorldMap, MapInfo]:
    """Draw one map; redraw whenever rasterized clearance splits the free space."""
    while True:
        side = float(rng.uniform(*params.side_range))
        walls: list[_Wall] = []
        door_width = None
        has_floorplan = bool(rng.random() < params.p_floorplan)
        if has_floorplan:
            walls, door_width = _floorplan_walls(rng, params, side)
        wall_rects = [r for wall in walls for r in wall.rects()]
        obstacles: list[tuple[float, float]] = []
        attempts = 0
        if rng.random() < params.p_obstacles:
            obstacles, attempts = _scatter_obstacles(rng, params, side, wall_rects)
        world = _rasterize(side, wall_rects, obstacles, params)
        if _fully_connected(world, params.agent_radius):
            return world, MapInfo(
                side=side,
                has_floorplan=has_floorplan,
                n_obstacles=len(obstacles),
                door_width=door_width,
                n_obstacle_attempts=attempts,
                obstacle_centers=tuple(obstacles),
            )


def generate_map(rng: np.random.Generator, params: MapGenParams) -> WorldMap:
    return generate(rng, params)[0]


# ---------------------------------------------------------------------------
# Progressive levels


@dataclass(frozen=True)
class LevelSpec:
    index: int
    tiers: tuple[int, ...]
    random_maps: bool
    goal_coverage: float


MOWING_LEVELS: tuple[LevelSpec, ...] = (
    LevelSpec(1, (0,), False, 0.90),
    LevelSpec(2, (0, 1), False, 0.90),
    LevelSpec(3, (0, 1), False, 0.95),
    LevelSpec(4, (0, 1, 2), False, 0.95),
    LevelSpec(5, (0, 1, 2), False, 0.97),
    LevelSpec(6, (0, 1, 2), False, 0.99),
    LevelSpec(7, (0, 1, 2, 3), False, 0.99),
    LevelSpec(8, (0, 1, 2, 3), True, 0.99),
)

EXPLORATION_LEVELS: tuple[LevelSpec, ...] = (
    LevelSpec(1, (1, 2), False, 0.90),
    LevelSpec(2, (1, 2, 4), False, 0.90),
    LevelSpec(3, (1, 2, 4), False, 0.95),
    LevelSpec(4, (1, 2, 4), False, 0.97),
    LevelSpec(5, (1, 2, 4), False, 0.99),
    LevelSpec(6, (1, 2, 3, 4), False, 0.99),
    LevelSpec(7, (1, 2, 3, 4), True, 0.99),
    LevelSpec(8, (1, 2, 3, 4, 5), True, 0.99),
)


def levels_for_task(task: str) -> tuple[LevelSpec, ...]:
    if task == "mowing":
        return MOWING_LEVELS
    if task == "exploration":
        return EXPLORATION_LEVELS
    raise ValueError(f"unknown task {task!r}")


@dataclass
class CurriculumProgress:
    """Per-map completion record for the active level."""

    task: str
    level_index: int = 1
    completed_maps: set = field(default_factory=set)
    random_floorplan_done: bool = False
    random_obstacles_done: bool = False

    def level(self) -> LevelSpec:
        return levels_for_task(self.task)[self.level_index - 1]

    def record_fixed(self, map_name: str) -> None:
        self.completed_maps.add(map_name)

    def record_random(self, info: MapInfo) -> None:
        if info.has_floorplan:
            self.random_floorplan_done = True
        if info.n_obstacles > 0:
            self.random_obstacles_done = True


def curriculum_next(
    progress: CurriculumProgress, tier_maps: Mapping[int, Sequence[str]]
) -> LevelSpec:
    """Advance past a level once every one of its fixed maps is completed.

    Levels with random maps additionally require one completed random
    floor-plan map and one completed random obstacle map. Returns the active
    level after any advancement; completion state resets on promotion.
    """
    spec = progress.level()
    needed = [name for tier in spec.tiers for name in tier_maps.get(tier, ())]
    done = all(name in progress.completed_maps for name in needed)
    if spec.random_maps:
        done = done and progress.random_floorplan_done and progress.random_obstacles_done
    if done and progress.level_index < len(levels_for_task(progress.task)):
        progress.level_index += 1
        progress.completed_maps = set()
        progress.random_floorplan_done = False
        progress.random_obstacles_done = False
    return progress.level()


def choose_map_kind(rng: np.random.Generator, spec: LevelSpec) -> str:
    """Per-episode source: 50/50 fixed vs random once random maps unlock."""
    if spec.random_maps and rng.random() < 0.5:
        return "random"
    return "fixed"


# ---------------------------------------------------------------------------
# Shipped fixed maps


def _data_root():
    return resources.files("covpath").joinpath("data")


def map_registry() -> dict:
    """Parsed tiers.json: train tiers and eval rosters of shipped map names."""
    return json.loads(_data_root().joinpath("tiers.json").read_text())


def load_fixed_map(name: str) -> WorldMap:
    return load_map(_data_root().joinpath("maps", name).read_text())


def tier_map_names(task: str) -> dict[int, list[str]]:
    reg = map_registry()["train"][task]
    return {int(tier): list(names) for tier, names in reg.items()}


# ---------------------------------------------------------------------------
# CLI


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="covpath-gen",
        description="Generate procedural coverage maps and a JSON-lines manifest.",
    )
    parser.add_argument("--task", choices=("mowing", "exploration"), required=True)
    parser.add_argument("--seed", type=int, required=True, help="seed of the first map")
    parser.add_argument("--count", type=int, default=1, help="maps to generate (seeds seed..seed+count-1)")
    parser.add_argument("--out-dir", type=Path, required=True)
    args = parser.parse_args(argv)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    params = MapGenParams.for_task(args.task)
    manifest_lines = []
    for seed in range(args.seed, args.seed + args.count):
        world, info = generate(np.random.default_rng(seed), params)
        name = f"{args.task}_{seed:06d}.map"
        (args.out_dir / name).write_text(save_map(world))
        manifest_lines.append(
            json.dumps(
                {
                    "seed": seed,
                    "file": name,
                    "side": round(info.side, 6),
                    "has_floorplan": info.has_floorplan,
                    "n_obstacles": info.n_obstacles,
                }
            )
        )
    (args.out_dir / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n")
    print(f"wrote {args.count} maps to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
