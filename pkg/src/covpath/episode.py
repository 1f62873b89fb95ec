"""Environment loop binding world, sensing, belief, dynamics, observation, and reward.

An Episode owns one seeded run: reset places the agent, integrates a first
scan, and stamps initial coverage; each step executes exactly one control
interval (move, scan, perturb, map, cover, observe, reward, terminate, in
that order). Classical planners and the RL binding both drive episodes
through this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from . import mapgen
from .belief import integrate_scan, new_belief, update_coverage
from .dynamics import Action, DynamicsConfig, initial_state
from .dynamics import step as dynamics_step
from .lidar import NOISE_PRESETS, LidarConfig, LidarScan, NoiseConfig, cast_rays, perturb
from .obsbuilder import (
    MultiScaleConfig,
    MultiScaleObservation,
    build_observation,
    dump_observation,
)
from .reward import (
    RewardBreakdown,
    RewardConfig,
    Termination,
    check_termination,
    step_reward,
    total_variation,
)
from .worldmodel import (
    RESOLUTION,
    GeometryError,
    Pose,
    WorldMap,
    coverage_denominator,
    load_map,
    radius_cells,
)

TASKS = ("mowing", "exploration", "exploration-omni")


class SteppingFinishedEpisode(RuntimeError):
    """step() was called after the episode already reported goal or truncation."""


@dataclass(frozen=True, eq=False)
class MapSource:
    """Where the episode world comes from; build via one of the constructors."""

    kind: str  # "file" | "fixed" | "generated" | "world"
    path: str | None = None
    name: str | None = None
    map_seed: int | None = None
    world: WorldMap | None = None

    @staticmethod
    def from_file(path: str | Path) -> "MapSource":
        return MapSource(kind="file", path=str(path))

    @staticmethod
    def fixed(name: str) -> "MapSource":
        """A map shipped with the package (see mapgen.map_registry)."""
        return MapSource(kind="fixed", name=name)

    @staticmethod
    def generated(map_seed: int | None = None) -> "MapSource":
        """Task-preset random map; with map_seed None the episode seed drives it."""
        return MapSource(kind="generated", map_seed=map_seed)

    @staticmethod
    def of_world(world: WorldMap) -> "MapSource":
        return MapSource(kind="world", world=world)


def _resolve_world(source: MapSource, task: str, rng: np.random.Generator) -> WorldMap:
    if source.kind == "world":
        assert source.world is not None
        return source.world
    if source.kind == "file":
        assert source.path is not None
        return load_map(Path(source.path).read_text())
    if source.kind == "fixed":
        assert source.name is not None
        return mapgen.load_fixed_map(source.name)
    if source.kind == "generated":
        gen_task = "mowing" if task == "mowing" else "exploration"
        params = mapgen.MapGenParams.for_task(gen_task)
        map_rng = rng if source.map_seed is None else np.random.default_rng(source.map_seed)
        world, _ = mapgen.generate(map_rng, params)
        return world
    raise ValueError(f"unknown map source kind {source.kind!r}")


@dataclass(frozen=True)
class EpisodeConfig:
    """Full parameterization of one environment; see task_config for the presets."""

    task: str
    map_source: MapSource
    coverage_radius: float
    lidar: LidarConfig
    dynamics: DynamicsConfig
    reward: RewardConfig
    noise: NoiseConfig = NoiseConfig()
    obs: MultiScaleConfig = MultiScaleConfig()
    action_history_len: int = 0
    max_steps: int | None = None  # None -> 10x the truncation patience
    build_observations: bool = True

    def __post_init__(self) -> None:
        if self.coverage_radius <= 0:
            raise ValueError("coverage radius must be positive")
        if self.action_history_len < 0:
            raise ValueError("action history length must be >= 0")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")

    @property
    def effective_max_steps(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 10 * self.reward.truncation_steps


def task_config(
    task: str,
    map_source: MapSource,
    *,
    noise: str | NoiseConfig = "none",
    higher_order: bool = False,
    goal_coverage: float | None = None,
    max_steps: int | None = None,
    build_observations: bool = True,
) -> EpisodeConfig:
    """Physical dimensioning for the three task variants.

    mowing: d = r = 0.15 m body sweep, differential-drive speeds.
    exploration: d = 3.5 m sensed coverage, 180 deg 24-ray lidar.
    exploration-omni: d = 7 m, 360 deg 20-ray lidar, faster omni base.

    higher_order switches the dynamics to the real-robot model (acceleration
    limits, 50 ms actuation delay) and feeds the 10 latest actions into the
    observation.
    """
    if task == "mowing":
        lidar = LidarConfig(n_rays=24, fov=math.pi, max_range=3.5)
        d, r, v_max, tv_i = 0.15, 0.15, 0.26, 1.0
    elif task == "exploration":
        lidar = LidarConfig(n_rays=24, fov=math.pi, max_range=3.5)
        d, r, v_max, tv_i = 3.5, 0.15, 0.26, 0.2
    elif task == "exploration-omni":
        lidar = LidarConfig(n_rays=20, fov=math.tau, max_range=7.0)
        d, r, v_max, tv_i = 7.0, 0.08, 0.5, 0.2
    else:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")

    if higher_order:
        dynamics = DynamicsConfig(
            v_max=v_max,
            w_max=1.0,
            a_lin_max=0.5,
            a_ang_max=2.0,
            action_delay=0.05,
            dt=0.5,
            agent_radius=r,
        )
        history = 10
    else:
        dynamics = DynamicsConfig(v_max=v_max, w_max=1.0, dt=0.5, agent_radius=r)
        history = 0

    reward = RewardConfig(lambda_tv_incremental=tv_i)
    if goal_coverage is not None:
        reward = replace(reward, goal_coverage=goal_coverage)
    noise_cfg = NOISE_PRESETS[noise] if isinstance(noise, str) else noise
    return EpisodeConfig(
        task=task,
        map_source=map_source,
        coverage_radius=d,
        lidar=lidar,
        dynamics=dynamics,
        reward=reward,
        noise=noise_cfg,
        action_history_len=history,
        max_steps=max_steps,
        build_observations=build_observations,
    )


@dataclass(frozen=True)
class StepRecord:
    t: float  # episode clock after the step, seconds
    pose: Pose  # true pose (noise applies to the estimate, not the record)
    action: Action
    a_new: float
    reward: RewardBreakdown
    collided: bool
    coverage_fraction: float


class Episode:
    """One seeded coverage run; create via reset().

    The handle keeps the true dynamics state for motion and scanning, and a
    noise-perturbed pose estimate that drives mapping, coverage stamping, and
    observations. A single handle must not be stepped from two contexts at
    once.
    """

    def __init__(self, cfg: EpisodeConfig, seed: int) -> None:
        self.cfg = cfg
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.world = _resolve_world(cfg.map_source, cfg.task, self.rng)
        start = self._draw_start_pose()
        self.denominator = coverage_denominator(
            self.world, start, cfg.dynamics.agent_radius, cfg.coverage_radius
        )
        self._denominator_cells = int(np.count_nonzero(self.denominator.reachable_mask))
        self.belief = new_belief(self.world.cells.shape, self.world.resolution)
        self.state = initial_state(start)
        self.action_history = np.zeros((cfg.action_history_len, 2), dtype=np.float32)
        self.records: list[StepRecord] = []
        self.status = Termination.CONTINUE
        self.step_count = 0
        self._charged_time = 0.0
        self._obs_cache: MultiScaleObservation | None = None

        # The agent starts with one integrated scan and its standing footprint
        # covered, so the first observation already reflects a sensing pass.
        scan = cast_rays(self.world, start, cfg.lidar)
        self.pose_estimate, self.last_scan = perturb(
            start, scan, cfg.noise, self.rng, cfg.lidar.max_range
        )
        integrate_scan(self.belief, self.pose_estimate, self.last_scan, cfg.lidar)
        _, self.initial_covered_area = update_coverage(
            self.belief,
            [self.pose_estimate],
            cfg.coverage_radius,
            cfg.lidar.fov,
            self.last_scan,
            cfg.dynamics.agent_radius,
        )
        self._tv_cells = total_variation(self.belief.coverage_map)

    def _draw_start_pose(self) -> Pose:
        res = self.world.resolution
        need = radius_cells(self.cfg.dynamics.agent_radius, res) * res - 1e-12
        cells = np.argwhere(self.world.clearance_m() >= need)
        if len(cells) == 0:
            raise GeometryError("map admits no collision-free pose for the agent radius")
        row, col = cells[int(self.rng.integers(len(cells)))]
        heading = float(self.rng.uniform(-math.pi, math.pi))
        return Pose((col + 0.5) * res, (row + 0.5) * res, heading)

    @property
    def pose(self) -> Pose:
        """True pose of the agent."""
        return self.state.pose

    @property
    def elapsed_time(self) -> float:
        """Episode clock: simulated steps plus any charged controller compute."""
        return self.state.time + self._charged_time

    @property
    def finished(self) -> bool:
        return self.status is not Termination.CONTINUE

    @property
    def coverage_fraction(self) -> float:
        covered = int(
            np.count_nonzero(self.belief.coverage_map & self.denominator.reachable_mask)
        )
        return covered / self._denominator_cells

    def charge_time(self, seconds: float) -> None:
        """Add external compute time to the episode clock (online planner benches)."""
        if seconds < 0:
            raise ValueError("charged time must be >= 0")
        self._charged_time += float(seconds)

    def observation(self) -> MultiScaleObservation:
        """Multi-scale observation of the current belief; cached until the next step."""
        if self._obs_cache is None:
            self._obs_cache = build_observation(
                self.belief,
                self.pose_estimate,
                self.last_scan,
                self.cfg.obs,
                self.action_history,
                max_range=self.cfg.lidar.max_range,
            )
        return self._obs_cache

    def _coverage_window(self, poses: Sequence[Pose]) -> tuple[int, int, int, int]:
        """Cell window certain to contain every cell this step's stamp can touch."""
        d = self.cfg.coverage_radius
        res = self.belief.resolution
        h, w = self.belief.shape
        if d <= self.cfg.dynamics.agent_radius:
            xs = [p.x for p in poses]
            ys = [p.y for p in poses]
        else:
            xs = [poses[-1].x]
            ys = [poses[-1].y]
        r0 = max(int(math.floor((min(ys) - d) / res)) - 1, 0)
        r1 = min(int(math.ceil((max(ys) + d) / res)) + 2, h)
        c0 = max(int(math.floor((min(xs) - d) / res)) - 1, 0)
        c1 = min(int(math.ceil((max(xs) + d) / res)) + 2, w)
        return r0, r1, c0, c1

    def step(
        self, action: Action | tuple[float, float]
    ) -> tuple[MultiScaleObservation | None, RewardBreakdown, Termination, StepRecord]:
        """Advance one control interval; returns (observation, reward, status, record)."""
        if self.finished:
            raise SteppingFinishedEpisode(f"episode already ended with {self.status.value}")
        if not isinstance(action, Action):
            action = Action(*action)
        cfg = self.cfg

        self.state, collided, path = dynamics_step(self.state, action, cfg.dynamics, self.world)
        true_pose = self.state.pose
        scan = cast_rays(self.world, true_pose, cfg.lidar)
        noisy_pose, noisy_scan = perturb(true_pose, scan, cfg.noise, self.rng, cfg.lidar.max_range)
        # One pose-noise draw per step offsets the whole swept path.
        dx, dy = noisy_pose.x - true_pose.x, noisy_pose.y - true_pose.y
        noisy_path = [Pose(p.x + dx, p.y + dy, p.heading) for p in path] if (dx or dy) else list(path)
        noisy_path[-1] = noisy_pose

        integrate_scan(self.belief, noisy_pose, noisy_scan, cfg.lidar)

        # The TV delta is local to the stamped window: forward-difference terms
        # outside it are untouched, so slice TVs before/after cancel elsewhere.
        r0, r1, c0, c1 = self._coverage_window(noisy_path)
        er0, er1 = max(r0 - 1, 0), min(r1 + 1, self.belief.shape[0])
        ec0, ec1 = max(c0 - 1, 0), min(c1 + 1, self.belief.shape[1])
        window = self.belief.coverage_map[er0:er1, ec0:ec1]
        tv_before = total_variation(window)
        _, a_new = update_coverage(
            self.belief,
            noisy_path,
            cfg.coverage_radius,
            cfg.lidar.fov,
            noisy_scan,
            cfg.dynamics.agent_radius,
        )
        tv_prev_m = self._tv_cells * self.belief.resolution
        self._tv_cells += total_variation(window) - tv_before
        tv_m = self._tv_cells * self.belief.resolution

        self.pose_estimate, self.last_scan = noisy_pose, noisy_scan
        if cfg.action_history_len:
            self.action_history = np.roll(self.action_history, -1, axis=0)
            self.action_history[-1] = (action.a_v, action.a_w)
        self.step_count += 1
        self._obs_cache = None
        obs = self.observation() if cfg.build_observations else None

        breakdown = step_reward(
            a_new,
            tv_m,
            tv_prev_m,
            self.belief.covered_area,
            collided,
            cfg.reward,
            agent_radius=cfg.dynamics.agent_radius,
            v_max=cfg.dynamics.v_max,
            dt=cfg.dynamics.dt,
            resolution=self.belief.resolution,
        )
        fraction = self.coverage_fraction
        status = check_termination(fraction, cfg.reward, self.belief.steps_since_new_coverage)
        if status is Termination.CONTINUE and self.step_count >= cfg.effective_max_steps:
            status = Termination.TRUNCATED
        self.status = status

        record = StepRecord(
            t=self.elapsed_time,
            pose=true_pose,
            action=action,
            a_new=a_new,
            reward=breakdown,
            collided=collided,
            coverage_fraction=fraction,
        )
        self.records.append(record)
        return obs, breakdown, status, record


def reset(cfg: EpisodeConfig, seed: int) -> tuple[Episode, MultiScaleObservation]:
    """Instantiate the world and agent; the first observation includes one scan."""
    episode = Episode(cfg, seed)
    return episode, episode.observation()


STEP_CSV_COLUMNS = (
    "t",
    "x",
    "y",
    "heading",
    "a_v",
    "a_w",
    "A_new",
    "r_area",
    "r_tv_g",
    "r_tv_i",
    "r_coll",
    "r_const",
    "r_total",
    "collided",
    "coverage",
)


def _fmt(value: float) -> str:
    # repr round-trips floats exactly, keeping traces byte-stable across runs
    return repr(float(value))


def step_csv_row(rec: StepRecord) -> str:
    r = rec.reward
    values = [
        rec.t,
        rec.pose.x,
        rec.pose.y,
        rec.pose.heading,
        rec.action.a_v,
        rec.action.a_w,
        rec.a_new,
        r.r_area,
        r.r_tv_g,
        r.r_tv_i,
        r.r_coll,
        r.r_const,
        r.total,
    ]
    return ",".join([_fmt(v) for v in values] + [str(int(rec.collided)), _fmt(rec.coverage_fraction)])


def write_trace(records: Iterable[StepRecord], fp: IO[str]) -> None:
    fp.write(",".join(STEP_CSV_COLUMNS) + "\n")
    for rec in records:
        fp.write(step_csv_row(rec) + "\n")


def read_trace(fp: IO[str]) -> list[StepRecord]:
    header = fp.readline().strip()
    if header.split(",") != list(STEP_CSV_COLUMNS):
        raise ValueError("unrecognized trace header")
    out: list[StepRecord] = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(STEP_CSV_COLUMNS):
            raise ValueError(f"trace row has {len(parts)} fields, expected {len(STEP_CSV_COLUMNS)}")
        vals = [float(v) for v in parts[:13]]
        out.append(
            StepRecord(
                t=vals[0],
                pose=Pose(vals[1], vals[2], vals[3]),
                action=Action(vals[4], vals[5]),
                a_new=vals[6],
                reward=RewardBreakdown(vals[7], vals[8], vals[9], vals[10], vals[11]),
                collided=bool(int(parts[13])),
                coverage_fraction=float(parts[14]),
            )
        )
    return out


class EnvironmentBinding:
    """Flat reset/step surface for external training loops.

    Observations cross as dump_observation byte buffers, actions as two floats
    in [-1, 1], rewards as scalars, and termination as (goal_reached,
    truncated) flags.
    """

    def __init__(self, cfg: EpisodeConfig) -> None:
        if not cfg.build_observations:
            cfg = replace(cfg, build_observations=True)
        self.cfg = cfg
        self.episode: Episode | None = None

    def reset(self, seed: int) -> bytes:
        self.episode, obs = reset(self.cfg, seed)
        return dump_observation(obs, self.cfg.obs)

    def step(self, a_v: float, a_w: float) -> tuple[bytes, float, bool, bool]:
        if self.episode is None:
            raise RuntimeError("reset() must run before step()")
        obs, breakdown, status, _ = self.episode.step(Action(a_v, a_w))
        assert obs is not None
        return (
            dump_observation(obs, self.cfg.obs),
            breakdown.total,
            status is Termination.GOAL_REACHED,
            status is Termination.TRUNCATED,
        )
