"""Learning stack for the coverage engine: networks, SAC, async loop."""

from .async_loop import AsyncLoopBudget, async_finetune
from .demos import demo_actions, rescue_demo, seed_replay_with_demos
from .envs import BoundEnv, Curriculum, empty_room_source, episode_t90, mowing_env, random_policy
from .networks import NetworkSpec, build_networks, count_parameters, split_maps
from .replay import NStepQueue, ReplayBuffer
from .sac import SACTrainer, TrainerConfig, train

__all__ = [
    "AsyncLoopBudget",
    "BoundEnv",
    "Curriculum",
    "NetworkSpec",
    "NStepQueue",
    "ReplayBuffer",
    "SACTrainer",
    "TrainerConfig",
    "async_finetune",
    "build_networks",
    "count_parameters",
    "demo_actions",
    "empty_room_source",
    "episode_t90",
    "mowing_env",
    "random_policy",
    "rescue_demo",
    "seed_replay_with_demos",
    "split_maps",
    "train",
]
