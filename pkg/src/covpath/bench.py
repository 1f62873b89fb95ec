"""Coverage metrics, the multi-map evaluation harness, and the covpath-bench CLI.

Metrics follow the usual coverage-benchmark conventions: T90/T99 are the
simulated seconds until 90%/99% of the reachable area is covered (linearly
interpolated between the two straddling steps), path length integrates the
true trajectory, and rotation counts accumulate wrapped heading deltas.
"""

from __future__ import annotations

import argparse
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .episode import Episode, MapSource, StepRecord, read_trace, task_config
from .planners import CONTROLLERS

_TAU = 2.0 * math.pi

# Benchmarks run to the strict goal unless told otherwise.
GOAL_DEFAULT = 0.99


@dataclass(frozen=True)
class CoverageMetrics:
    """Per-episode summary statistics.

    t90/t99 are None when the trace never reaches the threshold.
    """

    t90: float | None
    t99: float | None
    path_length: float
    full_rotations: float
    collisions_per_minute: float
    collisions_per_meter: float
    reached_goal: bool


def _crossing_time(times: np.ndarray, covered: np.ndarray, target: float) -> float | None:
    """Interpolated time at which the covered area first reaches target."""
    hits = np.flatnonzero(covered >= target - 1e-12)
    if hits.size == 0:
        return None
    k = int(hits[0])
    if k == 0:
        return float(times[0])
    t0, t1 = float(times[k - 1]), float(times[k])
    a0, a1 = float(covered[k - 1]), float(covered[k])
    return t0 + (t1 - t0) * (target - a0) / (a1 - a0)


def _rate(count: int, denom: float) -> float:
    if denom > 0.0:
        return count / denom
    return 0.0 if count == 0 else math.inf


def compute_metrics(
    records: Sequence[StepRecord], reachable_area: float, *, goal: float = GOAL_DEFAULT
) -> CoverageMetrics:
    """Reduce a step-record stream to CoverageMetrics.

    reachable_area is the denominator the trace's coverage fractions were
    taken against; thresholds are evaluated in absolute covered area.
    """
    records = list(records)
    if not records:
        return CoverageMetrics(None, None, 0.0, 0.0, 0.0, 0.0, False)

    times = np.array([rec.t for rec in records])
    covered = np.array([rec.coverage_fraction for rec in records]) * reachable_area
    xs = np.array([rec.pose.x for rec in records])
    ys = np.array([rec.pose.y for rec in records])
    headings = np.array([rec.pose.heading for rec in records])

    path_length = float(np.hypot(np.diff(xs), np.diff(ys)).sum())
    dh = np.diff(headings)
    dh = (dh + math.pi) % _TAU - math.pi
    full_rotations = float(np.abs(dh).sum() / _TAU)

    n_collisions = int(sum(rec.collided for rec in records))
    total_time = float(times[-1])

    return CoverageMetrics(
        t90=_crossing_time(times, covered, 0.90 * reachable_area),
        t99=_crossing_time(times, covered, 0.99 * reachable_area),
        path_length=path_length,
        full_rotations=full_rotations,
        collisions_per_minute=_rate(n_collisions, total_time / 60.0),
        collisions_per_meter=_rate(n_collisions, path_length),
        reached_goal=bool(covered[-1] >= goal * reachable_area - 1e-9),
    )


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeResult:
    map_name: str
    seed: int
    metrics: CoverageMetrics


def run_episode(
    task: str,
    source: MapSource,
    controller: str,
    seed: int,
    *,
    goal: float = GOAL_DEFAULT,
    max_steps: int | None = None,
    noise: str = "none",
) -> tuple[CoverageMetrics, Episode]:
    """Run one seeded episode under a named controller and score it."""
    cfg = task_config(
        task,
        source,
        goal_coverage=goal,
        max_steps=max_steps,
        noise=noise,
        build_observations=False,
    )
    episode = Episode(cfg, seed=seed)
    CONTROLLERS[controller](episode)
    metrics = compute_metrics(
        episode.records, episode.denominator.reachable_area, goal=goal
    )
    return metrics, episode


def _suite_job(job) -> EpisodeResult:
    task, name, source, controller, seed, goal, max_steps, noise = job
    metrics, _ = run_episode(
        task, source, controller, seed, goal=goal, max_steps=max_steps, noise=noise
    )
    return EpisodeResult(map_name=name, seed=seed, metrics=metrics)


def run_suite(
    task: str,
    maps: Sequence[tuple[str, MapSource]],
    controller: str,
    seeds: int | Sequence[int],
    *,
    base_seed: int = 0,
    jobs: int = 1,
    goal: float = GOAL_DEFAULT,
    max_steps: int | None = None,
    noise: str = "none",
) -> list[EpisodeResult]:
    """Evaluate a controller over every (map, seed) pair.

    Results are ordered by (map name, seed) regardless of the input order or
    of the parallel schedule, so downstream CSVs are byte-stable.
    """
    if controller not in CONTROLLERS:
        raise ValueError(f"unknown controller {controller!r}")
    seed_list = list(range(base_seed, base_seed + seeds)) if isinstance(seeds, int) else list(seeds)
    ordered = sorted(maps, key=lambda item: item[0])
    job_list = [
        (task, name, source, controller, seed, goal, max_steps, noise)
        for name, source in ordered
        for seed in seed_list
    ]
    if jobs <= 1:
        return [_suite_job(job) for job in job_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_suite_job, job_list))


_METRIC_FIELDS = (
    "t90",
    "t99",
    "path_length",
    "full_rotations",
    "collisions_per_minute",
    "collisions_per_meter",
)

EPISODES_CSV_HEADER = (
    "map,seed,T90,T99,path_length,full_rotations,"
    "collisions_per_minute,collisions_per_meter,reached_goal"
)

SUMMARY_CSV_HEADER = "map,episodes," + ",".join(
    f"{name}_{stat}"
    for name in ("T90", "T99", "path_length", "full_rotations",
                 "collisions_per_minute", "collisions_per_meter")
    for stat in ("mean", "std")
) + ",reached_goal_frac"


def _fmt(value: float | None) -> str:
    # repr round-trips floats exactly, keeping result files byte-stable
    return "nan" if value is None else repr(float(value))


def episodes_csv(results: Sequence[EpisodeResult]) -> str:
    lines = [EPISODES_CSV_HEADER]
    for res in results:
        m = res.metrics
        cells = [res.map_name, str(res.seed)]
        cells += [_fmt(getattr(m, name)) for name in _METRIC_FIELDS]
        cells.append(str(int(m.reached_goal)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def summary_csv(results: Sequence[EpisodeResult]) -> str:
    """Per-map mean/std over seeds plus a TOTAL row of summed means."""
    by_map: dict[str, list[CoverageMetrics]] = {}
    for res in results:
        by_map.setdefault(res.map_name, []).append(res.metrics)

    lines = [SUMMARY_CSV_HEADER]
    totals = {name: 0.0 for name in _METRIC_FIELDS}
    total_reached = 0.0
    for name in sorted(by_map):
        group = by_map[name]
        cells = [name, str(len(group))]
        for field in _METRIC_FIELDS:
            values = [getattr(m, field) for m in group]
            arr = np.array([math.nan if v is None else v for v in values])
            mean, std = float(arr.mean()), float(arr.std())
            totals[field] += mean
            cells += [_fmt(mean), _fmt(std)]
        reached = float(np.mean([m.reached_goal for m in group]))
        total_reached += reached
        cells.append(_fmt(reached))
        lines.append(",".join(cells))

    total_cells = ["TOTAL", str(len(results))]
    for field in _METRIC_FIELDS:
        total_cells += [_fmt(totals[field]), _fmt(0.0)]
    total_cells.append(_fmt(total_reached))
    lines.append(",".join(total_cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _dir_maps(directory: Path) -> list[tuple[str, MapSource]]:
    paths = sorted(set(directory.glob("*.map")) | set(directory.glob("*.txt")))
    if not paths:
        raise SystemExit(f"no .map or .txt files in {directory}")
    return [(p.stem, MapSource.from_file(p)) for p in paths]


def _add_run_args(parser: argparse.ArgumentParser, flat: bool) -> None:
    if flat:
        parser.add_argument("--planner", required=True, choices=sorted(CONTROLLERS))
    else:
        parser.add_argument("--controller", required=True, choices=sorted(CONTROLLERS))
    parser.add_argument("--task", default="mowing",
                        choices=("mowing", "exploration", "exploration-omni"))
    parser.add_argument("--maps", type=Path, required=True, help="directory of map files")
    parser.add_argument("--seeds", type=int, default=1, help="episodes per map")
    parser.add_argument("--seed", type=int, default=0, help="first episode seed")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--goal", type=float, default=GOAL_DEFAULT)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--noise", default="none")
    parser.add_argument("--out", type=Path, required=True)


def _cmd_run(argv: Sequence[str], flat: bool) -> int:
    parser = argparse.ArgumentParser(
        prog="covpath-bench" if flat else "covpath-bench run",
        description="Evaluate a coverage controller over a directory of maps.",
    )
    _add_run_args(parser, flat)
    args = parser.parse_args(argv)

    controller = args.planner if flat else args.controller
    results = run_suite(
        args.task,
        _dir_maps(args.maps),
        controller,
        args.seeds,
        base_seed=args.seed,
        jobs=args.jobs,
        goal=args.goal,
        max_steps=args.max_steps,
        noise=args.noise,
    )

    if flat:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(episodes_csv(results))
        written = [args.out]
    else:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "episodes.csv").write_text(episodes_csv(results))
        (args.out / "summary.csv").write_text(summary_csv(results))
        written = [args.out / "episodes.csv", args.out / "summary.csv"]

    missed = sum(not res.metrics.reached_goal for res in results)
    for path in written:
        print(f"wrote {path}")
    print(f"{len(results)} episodes, {missed} missed goal")
    return 1 if missed else 0


def _cmd_metrics(argv: Sequence[str]) -> int:
    parser = argparse.ArgumentParser(
        prog="covpath-bench metrics",
        description="Summarize a single-episode step trace.",
    )
    parser.add_argument("--trace", type=Path, required=True)
    parser.add_argument("--goal", type=float, default=GOAL_DEFAULT)
    args = parser.parse_args(argv)

    with args.trace.open() as fp:
        records = read_trace(fp)
    # traces store coverage as a fraction, so score against a unit area
    m = compute_metrics(records, 1.0, goal=args.goal)
    print(f"T90={_fmt(m.t90)}")
    print(f"T99={_fmt(m.t99)}")
    print(f"path_length={_fmt(m.path_length)}")
    print(f"full_rotations={_fmt(m.full_rotations)}")
    print(f"collisions_per_minute={_fmt(m.collisions_per_minute)}")
    print(f"collisions_per_meter={_fmt(m.collisions_per_meter)}")
    print(f"reached_goal={int(m.reached_goal)}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "metrics":
        return _cmd_metrics(argv[1:])
    if argv and argv[0] == "run":
        return _cmd_run(argv[1:], flat=False)
    return _cmd_run(argv, flat=True)


if __name__ == "__main__":
    raise SystemExit(main())
