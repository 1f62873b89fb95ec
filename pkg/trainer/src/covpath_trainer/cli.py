"""Command line front end: simulation training and the smoke run."""

from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from .demos import rescue_demo, seed_replay_with_demos
from .envs import BoundEnv, Curriculum, empty_room_source, episode_t90, mowing_env, random_policy
from .networks import NetworkSpec
from .replay import ReplayBuffer
from .sac import SACTrainer, TrainerConfig, train


def _spec_for(env: BoundEnv, variant: str, seed: int) -> NetworkSpec:
    env.reset(seed)
    return NetworkSpec.from_meta(env.meta, variant=variant)


def cmd_train(args: argparse.Namespace) -> int:
    curriculum = Curriculum(args.task, seed=args.seed)
    env = curriculum.next_env(np.random.default_rng(args.seed))
    spec = _spec_for(env, args.variant, args.seed)
    cfg = TrainerConfig(replay_capacity=args.replay_capacity)
    trainer = SACTrainer(spec, cfg, seed=args.seed)
    stats = train(
        env,
        trainer,
        steps=args.steps,
        warmup=args.warmup,
        updates_per_step=args.updates_per_step,
        curriculum=curriculum,
        seed=args.seed,
        log_path=args.out_dir / "train_log.jsonl",
        checkpoint_dir=args.out_dir,
        checkpoint_every=args.checkpoint_every,
    )
    print(f"trained {stats['steps']} steps, {stats['episodes']} episodes, {stats['updates']} updates")
    return 0


def cmd_smoke(args: argparse.Namespace) -> int:
    """Short run on an empty room, judged against a random policy.

    Seeds the replay buffer with a few planner-driven episodes (compact
    sweeping is the only positive-reward behavior and random exploration
    never finds it on a short budget), trains on the one fixed map, then
    compares the greedy policy's time to the coverage goal against a
    uniform-random policy's median. Writes the checkpoint, the training
    log and a summary JSON.
    """
    args.out_dir.mkdir(parents=True, exist_ok=True)
    source = empty_room_source(args.side)
    env = mowing_env(source, max_steps=args.episode_cap)
    spec = _spec_for(env, args.variant, args.seed)
    capacity = min(
        args.steps + (args.demos + args.rescues) * args.episode_cap, args.replay_capacity
    )
    cfg = TrainerConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        replay_capacity=capacity,
        n_step=args.n_step,
        bc_weight=args.bc_weight,
    )
    trainer = SACTrainer(spec, cfg, seed=args.seed)
    replay = ReplayBuffer(cfg.replay_capacity, env.obs_dim, seed=args.seed, obs_dtype=np.float16)
    n_demo = seed_replay_with_demos(
        env, replay, seeds=range(100, 100 + args.demos), n_step=cfg.n_step, gamma=cfg.gamma
    )
    print(f"seeded {n_demo} demonstration transitions from {args.demos} planner episodes")

    rescues_left = args.rescues

    def rescue_failed_episode(ep_env, ep_seed, actions, reached_goal):
        nonlocal rescues_left
        if reached_goal or rescues_left <= 0:
            return
        # half the failed episode keeps the handoff state well before the
        # stall that killed it
        stored = rescue_demo(
            ep_env,
            replay,
            ep_seed,
            actions[: max(1, len(actions) // 2)],
            n_step=cfg.n_step,
            gamma=cfg.gamma,
        )
        if stored:
            rescues_left -= 1
            print(f"rescued episode seed {ep_seed}: {stored} planner transitions")

    train(
        env,
        trainer,
        steps=args.steps,
        replay=replay,
        warmup=args.warmup,
        updates_per_step=args.updates_per_step,
        seed=args.seed,
        log_path=args.out_dir / "train_log.jsonl",
        checkpoint_dir=args.out_dir,
        on_episode_end=rescue_failed_episode,
    )

    eval_env = mowing_env(source)
    random_t90 = [
        episode_t90(eval_env, random_policy(1000 + k), seed=2000 + k)
        for k in range(args.eval_episodes)
    ]
    greedy = lambda obs: trainer.act(obs, greedy=True)
    greedy_t90 = [
        episode_t90(eval_env, greedy, seed=3000 + k) for k in range(args.eval_episodes)
    ]
    g_med = statistics.median(greedy_t90)
    r_med = statistics.median(random_t90)
    summary = {
        "greedy_t90_s": [t if t != float("inf") else None for t in greedy_t90],
        "random_t90_s": [t if t != float("inf") else None for t in random_t90],
        "greedy_median_s": None if g_med == float("inf") else g_med,
        "random_median_s": None if r_med == float("inf") else r_med,
        "beats_random_2x": g_med != float("inf") and 2.0 * g_med <= r_med,
    }
    (args.out_dir / "smoke_summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="covtrain", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="curriculum training in simulation")
    p_train.add_argument("--task", choices=("mowing", "exploration"), default="mowing")
    p_train.add_argument("--variant", choices=("mlp", "cnn", "sgcnn"), default="sgcnn")
    p_train.add_argument("--steps", type=int, default=2_000_000)
    p_train.add_argument("--warmup", type=int, default=1000)
    p_train.add_argument("--updates-per-step", type=float, default=1.0)
    p_train.add_argument("--replay-capacity", type=int, default=500_000)
    p_train.add_argument("--checkpoint-every", type=int, default=50_000)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out-dir", type=Path, required=True)
    p_train.set_defaults(func=cmd_train)

    p_smoke = sub.add_parser("smoke", help="short empty-room run vs a random policy")
    p_smoke.add_argument("--variant", choices=("mlp", "cnn", "sgcnn"), default="sgcnn")
    p_smoke.add_argument("--side", type=float, default=5.0, help="room side length in meters")
    p_smoke.add_argument("--steps", type=int, default=20_000)
    p_smoke.add_argument("--warmup", type=int, default=0)
    p_smoke.add_argument("--updates-per-step", type=float, default=0.5)
    p_smoke.add_argument("--replay-capacity", type=int, default=40_000)
    p_smoke.add_argument("--demos", type=int, default=12, help="planner episodes seeded into replay")
    # Desk-scale knobs: the config defaults are the large-budget values,
    # a short run wants a livelier optimizer, shorter episodes, faster
    # value propagation along the demos and a cloning anchor on them.
    p_smoke.add_argument("--n-step", type=int, default=10)
    p_smoke.add_argument("--bc-weight", type=float, default=0.5)
    p_smoke.add_argument("--rescues", type=int, default=12,
                         help="failed episodes completed by the planner into the replay")
    p_smoke.add_argument("--lr", type=float, default=3e-4)
    p_smoke.add_argument("--batch-size", type=int, default=128)
    p_smoke.add_argument("--episode-cap", type=int, default=1500, help="training episode step cap")
    p_smoke.add_argument("--eval-episodes", type=int, default=5)
    p_smoke.add_argument("--seed", type=int, default=0)
    p_smoke.add_argument("--out-dir", type=Path, required=True)
    p_smoke.set_defaults(func=cmd_smoke)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
