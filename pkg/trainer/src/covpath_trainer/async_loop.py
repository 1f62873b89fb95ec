"""Parallel environment-interaction / model-update loop.

Two activities run concurrently. The acting side steps the environment
once per loop period and stores the transition; the update side runs k
gradient steps per period against a private model copy. After each
(env step, k updates) pair both sides meet at a rendezvous where the
fresh policy weights are published to the acting side as an immutable
snapshot, so an inference pass never sees half-written weights. The
replay buffer is the only other shared state and carries its own lock.

Real deployments get their pacing from the environment itself; for
bench runs the measured per-stage costs can be simulated with sleeps.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AsyncLoopBudget:
    """Measured per-stage wall times of one loop period, in ms."""

    action_ms: float = 12.0
    state_ms: float = 450.0
    batch_ms: float = 15.0
    update_ms: float = 80.0
    overhead_ms: float = 38.0

    @property
    def action_delay_ms(self) -> float:
        """Command-to-actuation delay the dynamics should model."""
        return self.action_ms + self.overhead_ms

    @property
    def step_period_ms(self) -> float:
        """Acting-side cost of one period: act, sense, bookkeeping."""
        return self.action_ms + self.state_ms + self.overhead_ms

    @property
    def update_cycle_ms(self) -> float:
        return self.batch_ms + self.update_ms

    def max_updates_per_step(self) -> int:
        """Updates the budget fits inside one period without stretching it."""
        return int(self.step_period_ms // self.update_cycle_ms)


def async_finetune(
    env,
    trainer,
    replay,
    *,
    env_steps: int,
    k_updates: int | None = None,
    warmup: int | None = None,
    seed: int = 0,
    simulate: AsyncLoopBudget | None = None,
    time_scale: float = 1.0,
    checkpoint_path=None,
) -> dict:
    """Run the two-activity loop for ``env_steps`` periods.

    The first ``warmup`` steps are collection-only: the acting side
    samples uniform random actions and the update side idles. With
    ``simulate`` set, the acting side sleeps the budgeted step period
    and each update cycle sleeps its budgeted cost (scaled by
    ``time_scale``), standing in for real sensor and gradient latency.

    Raises on any lost or duplicated transition; returns counters and
    period timings.
    """
    if k_updates is None:
        k_updates = trainer.cfg.updates_per_env_step
    if warmup is None:
        warmup = trainer.cfg.warmup_collection_steps
    rng = np.random.default_rng(seed)
    added_before = replay.total_added

    published = [trainer.policy_snapshot()]

    def publish() -> None:
        published[0] = trainer.policy_snapshot()

    barrier = threading.Barrier(2, action=publish)
    counts = {"steps": 0, "updates": 0}
    periods: list[float] = []
    errors: list[BaseException] = []

    def acting() -> None:
        episode_seed = seed
        obs = env.reset(episode_seed)
        try:
            for step in range(env_steps):
                t0 = time.perf_counter()
                if step < warmup:
                    action = rng.uniform(-1.0, 1.0, size=2)
                else:
                    action = published[0](obs)
                if simulate is not None:
                    time.sleep(simulate.step_period_ms * time_scale / 1000.0)
                next_obs, reward, goal, truncated = env.step(action)
                replay.add(obs, action, reward, next_obs, goal)
                obs = next_obs
                if goal or truncated:
                    episode_seed += 1
                    obs = env.reset(episode_seed)
                counts["steps"] += 1
                barrier.wait()
                periods.append(time.perf_counter() - t0)
        except BaseException as exc:  # unblock the peer, then surface
            errors.append(exc)
            barrier.abort()

    def updating() -> None:
        try:
            for step in range(env_steps):
                if step >= warmup:
                    for _ in range(k_updates):
                        if simulate is not None:
                            time.sleep(simulate.update_cycle_ms * time_scale / 1000.0)
                        trainer.update(replay)
                        counts["updates"] += 1
                barrier.wait()
        except BaseException as exc:
            errors.append(exc)
            barrier.abort()

    threads = [threading.Thread(target=acting), threading.Thread(target=updating)]
    t_start = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    wall = time.perf_counter() - t_start
    if errors:
        raise errors[0]

    transitions = replay.total_added - added_before
    if transitions != env_steps or counts["steps"] != env_steps:
        raise RuntimeError(
            f"buffer integrity violated: {transitions} transitions for {env_steps} env steps"
        )
    if checkpoint_path is not None:
        trainer.save(checkpoint_path)
    return {
        "env_steps": counts["steps"],
        "updates": counts["updates"],
        "transitions": transitions,
        "wall_s": wall,
        "period_p50_ms": 1000.0 * float(np.median(periods)),
        "period_p95_ms": 1000.0 * float(np.quantile(periods, 0.95)),
    }
