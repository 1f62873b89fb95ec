"""Replay seeding from the engine's own coverage planners.

Uniform-random exploration never stumbles onto compact sweeping, the
one behavior this reward pays for (fresh area next to existing coverage
keeps the boundary short; isolated wandering loses to standing still).
Short desk-scale runs therefore seed the replay buffer with a few
planner-driven episodes: the spiral planner runs on a shadow episode to
record its actions, and the recorded actions are replayed through the
observation binding to capture full transitions.
"""

from __future__ import annotations

import numpy as np
from covpath.episode import Episode, task_config
from covpath.planners import run_bsa

from .envs import BoundEnv
from .replay import NStepQueue, ReplayBuffer


def demo_actions(env: BoundEnv, seed: int) -> list[tuple[float, float]]:
    """Planner actions for this environment's map and start pose.

    The shadow episode skips observation building, so planning is cheap;
    identical config and seed make the replayed trajectory exact.
    """
    cfg = env.cfg
    shadow = task_config(
        cfg.task,
        cfg.map_source,
        goal_coverage=cfg.reward.goal_coverage,
        max_steps=cfg.max_steps,
        build_observations=False,
    )
    episode = Episode(shadow, seed=seed)
    run_bsa(episode)
    return [(r.action.a_v, r.action.a_w) for r in episode.records]


def _replay_through_binding(
    env: BoundEnv,
    replay: ReplayBuffer,
    seed: int,
    actions,
    *,
    n_step: int,
    gamma: float,
    store_from: int = 0,
) -> tuple[int, bool]:
    """Replays recorded actions from reset(seed), storing transitions
    with index >= ``store_from`` as flagged demonstrations. Returns
    (stored count, goal reached)."""
    obs = env.reset(seed)
    nstep = NStepQueue(n_step, gamma)
    stored = 0
    reached = False
    for i, action in enumerate(actions):
        next_obs, reward, goal, truncated = env.step(action)
        if i >= store_from:
            a = np.asarray(action, dtype=np.float32)
            for part in nstep.push(obs, a, reward, next_obs, goal, flag=1.0):
                replay.add(*part[:5], horizon=part[5], flag=part[6])
                stored += 1
        obs = next_obs
        if goal or truncated:
            reached = goal
            break
    for part in nstep.flush():
        replay.add(*part[:5], horizon=part[5], flag=part[6])
        stored += 1
    return stored, reached


def seed_replay_with_demos(
    env: BoundEnv,
    replay: ReplayBuffer,
    seeds,
    *,
    n_step: int = 1,
    gamma: float = 0.99,
    require_goal: bool = True,
) -> int:
    """Feed planner episodes through the binding into the buffer.

    Transitions are stored flagged as demonstrations, aggregated over
    ``n_step`` windows when the trainer bootstraps that way. Returns the
    number of stored transitions. With ``require_goal`` the
    demonstration must actually reach the coverage goal, which guards
    against a planner regression silently seeding junk.
    """
    added = 0
    for seed in seeds:
        actions = demo_actions(env, seed)
        stored, reached = _replay_through_binding(env, replay, seed, actions, n_step=n_step, gamma=gamma)
        added += stored
        if require_goal and not reached:
            raise RuntimeError(f"demonstration on seed {seed} missed the coverage goal")
    return added


def rescue_demo(
    env: BoundEnv,
    replay: ReplayBuffer,
    seed: int,
    prefix_actions,
    *,
    n_step: int = 1,
    gamma: float = 0.99,
    prefix_cap: int = 800,
) -> int:
    """Stores a planner continuation of a failed episode.

    Demonstrations recorded from fresh starts stop helping once the
    learner's own coverage patterns drift away from them; the stall
    states it actually reaches are then unlabeled. This replays the
    episode's opening actions on a shadow episode, lets the planner
    finish the coverage job from that very state, and stores just the
    goal-reaching continuation. Returns the number of stored
    transitions, 0 when the planner cannot finish from there.
    """
    cfg = env.cfg
    prefix = [(float(a[0]), float(a[1])) for a in prefix_actions[:prefix_cap]]
    shadow = task_config(
        cfg.task,
        cfg.map_source,
        goal_coverage=cfg.reward.goal_coverage,
        build_observations=False,
    )
    episode = Episode(shadow, seed=seed)
    for action in prefix:
        episode.step(action)
        if episode.finished:
            return 0
    run_bsa(episode)
    if episode.coverage_fraction < cfg.reward.goal_coverage:
        return 0
    actions = [(r.action.a_v, r.action.a_w) for r in episode.records]
    # The training env may cap episodes shorter than prefix + rescue, so
    # the transitions are captured on an uncapped twin of the same task.
    wide = BoundEnv(task_config(cfg.task, cfg.map_source, goal_coverage=cfg.reward.goal_coverage))
    stored, reached = _replay_through_binding(
        wide, replay, seed, actions, n_step=n_step, gamma=gamma, store_from=len(prefix)
    )
    if not reached:
        raise RuntimeError(f"rescue on seed {seed} diverged from its shadow plan")
    return stored
