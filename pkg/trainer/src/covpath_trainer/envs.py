"""Bridges between the engine's binding surface and the trainer.

The engine hands out observations as flat byte buffers; ``BoundEnv``
parses them into float vectors and tracks per-episode step counts so
evaluation can report coverage times in seconds.
"""

from __future__ import annotations

import math

import numpy as np
from covpath import mapgen
from covpath.episode import EnvironmentBinding, EpisodeConfig, MapSource, task_config
from covpath.obsbuilder import load_observation


class BoundEnv:
    """Flat-float view of one episode configuration."""

    def __init__(self, cfg: EpisodeConfig) -> None:
        self.cfg = cfg
        self.binding = EnvironmentBinding(cfg)
        self.meta: dict | None = None
        self.steps = 0

    @property
    def dt(self) -> float:
        return self.cfg.dynamics.dt

    @property
    def obs_dim(self) -> int:
        if self.meta is None:
            raise RuntimeError("reset the environment once to learn its shape")
        m, g = self.meta["m"], self.meta["grid"]
        return 3 * m * g * g + self.meta["n_rays"] + 2 * self.meta["k"]

    def reset(self, seed: int) -> np.ndarray:
        self.meta, body = load_observation(self.binding.reset(seed))
        self.steps = 0
        # frombuffer views are read-only; torch wants writable storage
        return body.copy()

    def step(self, action) -> tuple[np.ndarray, float, bool, bool]:
        buf, reward, goal, truncated = self.binding.step(float(action[0]), float(action[1]))
        _, body = load_observation(buf)
        self.steps += 1
        return body.copy(), reward, goal, truncated


def mowing_env(source: MapSource, **kwargs) -> BoundEnv:
    return BoundEnv(task_config("mowing", source, **kwargs))


def empty_room_source(side_m: float = 5.0) -> MapSource:
    """Obstacle-free square world of roughly the requested side length."""
    from covpath.worldmodel import RESOLUTION, WorldMap

    n = round(side_m / RESOLUTION)
    return MapSource.of_world(WorldMap(cells=np.zeros((n, n), dtype=bool)))


class Curriculum:
    """Level-driven environment picker for curriculum training.

    Wraps the engine's level schedule: each episode draws either a fixed
    training map or a freshly generated one from the active level, and
    episode outcomes feed the level-advancement rule.
    """

    def __init__(self, task: str, *, seed: int = 0) -> None:
        self.task = task
        self.progress = mapgen.CurriculumProgress(task)
        self.tier_maps = mapgen.tier_map_names(task)
        self.params = mapgen.MapGenParams.for_task(task)
        self._map_seed = int(np.random.default_rng(seed).integers(1 << 30))
        self._live: dict[int, tuple[str, object]] = {}

    def next_env(self, rng: np.random.Generator) -> BoundEnv:
        level = mapgen.curriculum_next(self.progress, self.tier_maps)
        if mapgen.choose_map_kind(rng, level) == "random":
            self._map_seed += 1
            world, info = mapgen.generate(np.random.default_rng(self._map_seed), self.params)
            source = MapSource.of_world(world)
            tag = ("random", info)
        else:
            names = [n for tier in level.tiers for n in self.tier_maps.get(tier, ())]
            name = names[int(rng.integers(len(names)))]
            source = MapSource.fixed(name)
            tag = ("fixed", name)
        env = BoundEnv(task_config(self.task, source, goal_coverage=level.goal_coverage))
        self._live[id(env)] = tag
        return env

    def record(self, env: BoundEnv, reached_goal: bool) -> None:
        kind, payload = self._live.pop(id(env))
        if not reached_goal:
            return
        if kind == "fixed":
            self.progress.record_fixed(payload)
        else:
            self.progress.record_random(payload)

    @property
    def level_index(self) -> int:
        return self.progress.level_index


def episode_t90(env: BoundEnv, policy, seed: int, max_steps: int | None = None) -> float:
    """Seconds until the coverage goal, or inf when the episode dies first.

    The mowing preset declares its goal at 90% coverage, so goal time is
    exactly the 90%-coverage time.
    """
    obs = env.reset(seed)
    limit = max_steps if max_steps is not None else 10 * env.cfg.reward.truncation_steps
    for _ in range(limit):
        obs, _, goal, truncated = env.step(policy(obs))
        if goal:
            return env.steps * env.dt
        if truncated:
            break
    return math.inf


def random_policy(seed: int):
    rng = np.random.default_rng(seed)

    def policy(obs: np.ndarray) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=2)

    return policy
