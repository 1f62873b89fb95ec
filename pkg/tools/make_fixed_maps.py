"""Regenerate the fixed maps shipped under src/covpath/data/.

Maps are drawn from the procedural generator at pinned seeds so the data is
byte-reproducible; training maps are bucketed into four tiers by ascending
size and obstacle count. Run from the repository root:

    python3 tools/make_fixed_maps.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from covpath.mapgen import MapGenParams, generate
from covpath.worldmodel import OBSTACLE, RESOLUTION, Pose, WorldMap, reachable_free_space, save_map

DATA = Path(__file__).resolve().parent.parent / "src" / "covpath" / "data"

TRAIN_SEEDS = {"mowing": range(1000, 1016), "exploration": range(3000, 3008)}
EVAL_SEEDS = {"mowing": range(2000, 2004), "exploration": range(4000, 4004)}
N_TIERS = 4

README = """\
Fixed maps for the curriculum tiers and the evaluation roster.

Files named <task>_<seed>.map are produced by tools/make_fixed_maps.py from
the procedural generator at the seed encoded in the name, so the set is
reproducible from the code alone. Tier assignment in ../tiers.json orders
maps by size and obstacle count; it is plain config and may be edited.

The thirdparty_*.map files are hand-built approximations of floor plans from
an external benchmark suite. They are NOT authoritative reproductions; treat
results on them as indicative only.
"""


def _loop_map() -> WorldMap:
    """Square ring corridor: a 7.5 m arena around a 2.5 m central block."""
    n = round(7.5 / RESOLUTION)
    cells = np.zeros((n, n), dtype=np.uint8)
    lo, hi = round(2.5 / RESOLUTION), round(5.0 / RESOLUTION)
    cells[lo:hi, lo:hi] = OBSTACLE
    return WorldMap(cells=cells)


def _office_map() -> WorldMap:
    """Central corridor with three rooms above and below, one door each."""
    h, w = round(7.5 / RESOLUTION), round(11.25 / RESOLUTION)
    cells = np.zeros((h, w), dtype=np.uint8)
    c_lo, c_hi = round(3.0 / RESOLUTION), round(4.5 / RESOLUTION)
    thick = 4  # 0.15 m walls
    door = round(1.2 / RESOLUTION)
    # walls between rooms and corridor, one centered door per room
    for wall_rows in ((c_lo - thick, c_lo), (c_hi, c_hi + thick)):
        cells[wall_rows[0] : wall_rows[1], :] = OBSTACLE
        for room in range(3):
            mid = (2 * room + 1) * w // 6
            cells[wall_rows[0] : wall_rows[1], mid - door // 2 : mid + door // 2] = 0
    # dividers between adjacent rooms
    for col in (w // 3, 2 * w // 3):
        cells[: c_lo - thick, col - thick // 2 : col + thick // 2] = OBSTACLE
        cells[c_hi + thick :, col - thick // 2 : col + thick // 2] = OBSTACLE
    return WorldMap(cells=cells)


def _check_connected(world: WorldMap, name: str) -> None:
    free = np.argwhere(world.clearance_m() >= 0.15)
    r, c = free[0]
    start = Pose((c + 0.5) * RESOLUTION, (r + 0.5) * RESOLUTION, 0.0)
    index = reachable_free_space(world, start, 0.15)
    if index.reachable_mask.sum() != len(free):
        raise SystemExit(f"{name}: standable space is not connected")


def main() -> None:
    maps_dir = DATA / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)

    registry: dict = {"train": {}, "eval": {}}
    for task, seeds in TRAIN_SEEDS.items():
        params = MapGenParams.for_task(task)
        entries = []
        for seed in seeds:
            world, info = generate(np.random.default_rng(seed), params)
            name = f"{task}_{seed:06d}.map"
            (maps_dir / name).write_text(save_map(world))
            entries.append((round(info.side, 6), info.n_obstacles, name))
        entries.sort()
        per_tier = len(entries) // N_TIERS
        registry["train"][task] = {
            str(tier): [name for _, _, name in entries[tier * per_tier : (tier + 1) * per_tier]]
            for tier in range(N_TIERS)
        }

    for task, seeds in EVAL_SEEDS.items():
        params = MapGenParams.for_task(task)
        names = []
        for seed in seeds:
            world, _ = generate(np.random.default_rng(seed), params)
            name = f"{task}_{seed:06d}.map"
            (maps_dir / name).write_text(save_map(world))
            names.append(name)
        registry["eval"][task] = names

    registry["thirdparty"] = []
    for name, world in (("thirdparty_loop.map", _loop_map()),
                        ("thirdparty_office.map", _office_map())):
        _check_connected(world, name)
        (maps_dir / name).write_text(save_map(world))
        registry["thirdparty"].append(name)

    (DATA / "tiers.json").write_text(json.dumps(registry, indent=2) + "\n")
    (maps_dir / "README").write_text(README)
    total = sum(len(list(s)) for s in TRAIN_SEEDS.values()) + sum(
        len(list(s)) for s in EVAL_SEEDS.values()
    ) + len(registry["thirdparty"])
    print(f"wrote {total} maps and tiers.json under {DATA}")


if __name__ == "__main__":
    main()
