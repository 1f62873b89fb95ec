"""Differential-drive agent motion.

Actions are normalized twist commands. Stepping integrates an exact unicycle
arc per sub-step, optionally rate-limited by acceleration caps and delayed by
an action-latency queue. Collisions stop translation at the contact point but
never raise: the step reports contact and keeps the pose collision-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .worldmodel import Pose, WorldMap, wrap_angle

# Integration granularity, independent of the step duration.
SUBSTEP_DT = 0.01

_EPS_T = 1e-9


@dataclass(frozen=True)
class Action:
    """Normalized (linear, angular) command, each clamped into [-1, 1]."""

    a_v: float
    a_w: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "a_v", min(max(float(self.a_v), -1.0), 1.0))
        object.__setattr__(self, "a_w", min(max(float(self.a_w), -1.0), 1.0))


@dataclass(frozen=True)
class DynamicsConfig:
    """Motion model parameters.

    Defaults give first-order motion (unbounded acceleration, no delay);
    finite a_lin_max/a_ang_max plus action_delay give the higher-order model.
    """

    v_max: float = 0.26
    w_max: float = 1.0
    a_lin_max: float = math.inf
    a_ang_max: float = math.inf
    action_delay: float = 0.0
    dt: float = 0.5
    wheel_radius: float = 0.1225
    wheel_base: float = 0.465
    agent_radius: float = 0.15
    substep_dt: float = SUBSTEP_DT


@dataclass(frozen=True)
class DynamicsState:
    """Pose plus current twist and the pending delayed commands.

    delay_queue entries are (activation_time, v_cmd, w_cmd), oldest first.
    Before any command activates the agent tracks a (0, 0) twist.
    """

    pose: Pose
    v: float = 0.0
    w: float = 0.0
    time: float = 0.0
    delay_queue: tuple[tuple[float, float, float], ...] = ()


def initial_state(pose: Pose) -> DynamicsState:
    """Agent at rest at the given pose, clock at zero."""
    return DynamicsState(pose=pose)


def denormalize(action: Action, cfg: DynamicsConfig) -> tuple[float, float]:
    """Normalized action -> commanded (v, w); signs select direction."""
    return action.a_v * cfg.v_max, action.a_w * cfg.w_max


def wheel_speeds(v: float, w: float, wheel_radius: float, wheel_base: float) -> tuple[float, float]:
    """Body twist -> (right, left) wheel angular velocities."""
    if wheel_radius <= 0 or wheel_base <= 0:
        raise ValueError("wheel geometry must be positive")
    half = w * wheel_base / 2.0
    return (v + half) / wheel_radius, (v - half) / wheel_radius


def _advance(x: float, y: float, h: float, v: float, w: float, t: float) -> tuple[float, float, float]:
    """Exact constant-twist arc for duration t."""
    if abs(w) < 1e-12:
        return x + v * t * math.cos(h), y + v * t * math.sin(h), h
    h1 = h + w * t
    ratio = v / w
    return x + ratio * (math.sin(h1) - math.sin(h)), y - ratio * (math.cos(h1) - math.cos(h)), h1


def _toward(current: float, target: float, rate: float, dt: float) -> float:
    """Move current toward target, at most rate*dt per call."""
    if math.isinf(rate):
        return target
    step = rate * dt
    return current + min(max(target - current, -step), step)


def _substep_durations(dt: float, sub_dt: float) -> list[float]:
    n_full = int(dt / sub_dt + _EPS_T)
    durations = [sub_dt] * n_full
    remainder = dt - n_full * sub_dt
    if remainder > _EPS_T:
        durations.append(remainder)
    return durations if durations else [dt]


def step(
    state: DynamicsState,
    action: Action,
    cfg: DynamicsConfig,
    world: WorldMap,
) -> tuple[DynamicsState, bool, list[Pose]]:
    """Advance one control period of cfg.dt seconds.

    The new action is enqueued at time+action_delay; within each sub-step the
    most recently activated command is tracked under the acceleration caps and
    the pose follows the exact arc. On contact the sub-step is bisected to the
    boundary, linear velocity drops to zero, and rotation continues.

    Returns (new state, whether any sub-step made contact, sub-step poses
    including the start pose).
    """
    v_cmd_new, w_cmd_new = denormalize(action, cfg)
    queue = list(state.delay_queue)
    queue.append((state.time + cfg.action_delay, v_cmd_new, w_cmd_new))
    hits = world.collision_fn(cfg.agent_radius)

    x, y, h = state.pose.x, state.pose.y, state.pose.heading
    v, w = state.v, state.w
    t = state.time
    path = [state.pose]
    collided = False

    for sub_dt in _substep_durations(cfg.dt, cfg.substep_dt):
        active = -1
        for i, (t_act, _, _) in enumerate(queue):
            if t_act <= t + _EPS_T:
                active = i
        if active >= 0:
            _, v_cmd, w_cmd = queue[active]
            del queue[:active]  # superseded entries can never activate again
        else:
            v_cmd, w_cmd = 0.0, 0.0

        v = _toward(v, v_cmd, cfg.a_lin_max, sub_dt)
        w = _toward(w, w_cmd, cfg.a_ang_max, sub_dt)
        v = min(max(v, -cfg.v_max), cfg.v_max)
        w = min(max(w, -cfg.w_max), cfg.w_max)

        nx, ny, nh = _advance(x, y, h, v, w, sub_dt)
        if hits(nx, ny):
            collided = True
            lo, hi = 0.0, sub_dt
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                mx, my, _ = _advance(x, y, h, v, w, mid)
                if hits(mx, my):
                    hi = mid
                else:
                    lo = mid
            x, y, _ = _advance(x, y, h, v, w, lo)
            h = wrap_angle(h + w * sub_dt)  # the body can still spin in place
            v = 0.0
        else:
            x, y, h = nx, ny, nh
        t += sub_dt
        path.append(Pose(x, y, h))

    new_state = DynamicsState(
        pose=Pose(x, y, h),
        v=v,
        w=w,
        time=state.time + cfg.dt,
        delay_queue=tuple(queue),
    )
    return new_state, collided, path
