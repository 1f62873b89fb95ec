"""Soft actor-critic with twin critics, EMA targets and a learned
entropy coefficient.

The configured defaults are the simulation-phase training settings; the
fine-tuning phase keeps everything but drops the learning rate and
prepends a pure-collection warmup (see ``async_loop``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .networks import Actor, NetworkSpec, TwinCritic, build_networks, ema_update
from .replay import NStepQueue, ReplayBuffer


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.99
    lr: float = 2e-5
    lr_finetune: float = 5e-6
    batch_size: int = 256
    replay_capacity: int = 500_000
    # Simulation-phase budgets run into the millions of steps; desk runs
    # pass something far smaller.
    total_steps: int = 2_000_000
    warmup_collection_steps: int = 5000
    updates_per_env_step: int = 4
    # Standard SAC constants, exposed rather than hard-coded: EMA weight
    # for the target critics, entropy target for two action dimensions,
    # and the usual fast learning rate for the entropy coefficient.
    tau: float = 0.005
    target_entropy: float = -2.0
    alpha_lr: float = 3e-4
    # Learning-from-demonstration knobs for short runs: bootstrap over
    # n-step windows (value from a goal-reaching demo needs ~horizon/n
    # passes to reach its start) and keep the actor anchored to
    # demonstration actions on flagged samples.
    n_step: int = 1
    bc_weight: float = 0.0

    def learning_rate(self, finetune: bool) -> float:
        return self.lr_finetune if finetune else self.lr


class SACTrainer:
    """Owns the networks, optimizers and the update rule."""

    def __init__(
        self,
        spec: NetworkSpec,
        cfg: TrainerConfig | None = None,
        *,
        seed: int = 0,
        finetune: bool = False,
    ) -> None:
        self.spec = spec
        self.cfg = cfg or TrainerConfig()
        torch.manual_seed(seed)
        self.actor, self.critic, self.target = build_networks(spec)
        lr = self.cfg.learning_rate(finetune)
        self.actor_opt = torch.optim.Adam(self.actor.parameters(), lr=lr)
        self.critic_opt = torch.optim.Adam(self.critic.parameters(), lr=lr)
        self.log_alpha = torch.zeros(1, requires_grad=True)
        self.alpha_opt = torch.optim.Adam([self.log_alpha], lr=self.cfg.alpha_lr)
        self.updates_done = 0

    @property
    def alpha(self) -> float:
        return float(self.log_alpha.detach().exp())

    # ------------------------------------------------------------------
    # acting

    def act(self, obs: np.ndarray, greedy: bool = False) -> np.ndarray:
        """Single-observation action in [-1, 1]^2."""
        with torch.no_grad():
            x = torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0)
            if greedy:
                a = self.actor.greedy(x)
            else:
                a, _ = self.actor.sample(x)
        return a.squeeze(0).numpy()

    def policy_snapshot(self):
        """Frozen copy of the current policy as a plain callable.

        The returned function owns its own weights, so later updates to
        the trainer never affect it; the act/update loop publishes these
        at its sync points.
        """
        frozen = Actor(self.spec)
        frozen.load_state_dict(self.actor.state_dict())
        frozen.requires_grad_(False)

        def policy(obs: np.ndarray, greedy: bool = False) -> np.ndarray:
            with torch.no_grad():
                x = torch.as_tensor(obs, dtype=torch.float32).unsqueeze(0)
                a = frozen.greedy(x) if greedy else frozen.sample(x)[0]
            return a.squeeze(0).numpy()

        return policy

    # ------------------------------------------------------------------
    # updating

    def critic_targets(self, batch: dict[str, np.ndarray]) -> torch.Tensor:
        """Bellman targets r + gamma^h * (1 - done) * (min Q' - alpha log pi).

        ``r`` is already the discounted sum over the transition's horizon
        ``h`` (1 for plain transitions), so the bootstrap discount is
        gamma^h.
        """
        rewards = torch.as_tensor(batch["rewards"]).unsqueeze(1)
        dones = torch.as_tensor(batch["dones"]).unsqueeze(1)
        next_obs = torch.as_tensor(batch["next_obs"])
        horizons = torch.as_tensor(batch["horizons"]).unsqueeze(1)
        with torch.no_grad():
            next_action, next_logp = self.actor.sample(next_obs)
            next_q = self.target.min_q(next_obs, next_action)
            soft = next_q - self.log_alpha.exp() * next_logp
        return rewards + torch.pow(self.cfg.gamma, horizons) * (1.0 - dones) * soft

    def update(self, replay: ReplayBuffer) -> dict[str, float]:
        """One gradient step on critics, actor and entropy coefficient."""
        cfg = self.cfg
        batch = replay.sample(cfg.batch_size)
        obs = torch.as_tensor(batch["obs"])
        actions = torch.as_tensor(batch["actions"])

        targets = self.critic_targets(batch)
        q1, q2 = self.critic(obs, actions)
        critic_loss = nn.functional.mse_loss(q1, targets) + nn.functional.mse_loss(q2, targets)
        self.critic_opt.zero_grad()
        critic_loss.backward()
        self.critic_opt.step()

        new_action, logp = self.actor.sample(obs)
        actor_loss = (self.log_alpha.exp().detach() * logp - self.critic.min_q(obs, new_action)).mean()
        bc_loss = 0.0
        if cfg.bc_weight > 0.0:
            flags = torch.as_tensor(batch["flags"]).unsqueeze(1)
            n_flagged = flags.sum()
            if float(n_flagged) > 0.0:
                mean, _ = self.actor(obs)
                sq = (torch.tanh(mean) - actions) ** 2
                bc = (sq * flags).sum() / (n_flagged * actions.shape[1])
                actor_loss = actor_loss + cfg.bc_weight * bc
                bc_loss = float(bc.detach())
        self.actor_opt.zero_grad()
        actor_loss.backward()
        self.actor_opt.step()

        alpha_loss = -(self.log_alpha * (logp.detach() + cfg.target_entropy)).mean()
        self.alpha_opt.zero_grad()
        alpha_loss.backward()
        self.alpha_opt.step()

        ema_update(self.target, self.critic, cfg.tau)
        self.updates_done += 1
        return {
            "critic_loss": float(critic_loss.detach()),
            "actor_loss": float(actor_loss.detach()),
            "bc_loss": bc_loss,
            "alpha": self.alpha,
        }

    # ------------------------------------------------------------------
    # checkpoints

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "spec": asdict(self.spec),
                "actor": self.actor.state_dict(),
                "critic": self.critic.state_dict(),
                "target": self.target.state_dict(),
                "log_alpha": self.log_alpha.detach(),
                "updates_done": self.updates_done,
            },
            path,
        )
        return path

    def load(self, path: str | Path) -> None:
        state = torch.load(path, weights_only=True)
        self.actor.load_state_dict(state["actor"])
        self.critic.load_state_dict(state["critic"])
        self.target.load_state_dict(state["target"])
        with torch.no_grad():
            self.log_alpha.copy_(state["log_alpha"])
        self.updates_done = int(state["updates_done"])


def train(
    env,
    trainer: SACTrainer,
    *,
    steps: int,
    replay: ReplayBuffer | None = None,
    warmup: int = 1000,
    updates_per_step: float = 1.0,
    curriculum=None,
    seed: int = 0,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    checkpoint_every: int = 0,
    log_every: int = 500,
    on_episode_end=None,
) -> dict:
    """Synchronous collect-and-update loop for the simulation phase.

    ``env`` follows the bound-environment surface (reset/step on flat
    float observations). With a curriculum the environment is re-drawn
    from the active level after every episode and episode outcomes feed
    level advancement. Fractional ``updates_per_step`` spreads updates
    evenly (0.5 updates one net every second step).

    ``on_episode_end(env, episode_seed, actions, reached_goal)`` fires
    after every finished episode, before the next reset; demonstration
    schemes use it to grow the replay from the episodes the policy
    failed.

    Returns summary stats; writes a JSON-lines log with losses and the
    entropy coefficient when ``log_path`` is given.
    """
    cfg = trainer.cfg
    if replay is None:
        replay = ReplayBuffer(cfg.replay_capacity, env.obs_dim, trainer.spec.action_dim, seed=seed)
    rng = np.random.default_rng(seed)
    log_file = open(log_path, "w") if log_path else None
    checkpoints: list[Path] = []
    episode_seed = seed
    if curriculum is not None:
        env = curriculum.next_env(rng)
    obs = env.reset(episode_seed)
    episode_return = 0.0
    episode_actions: list = []
    episodes = 0
    returns: list[float] = []
    update_debt = 0.0
    nstep = NStepQueue(cfg.n_step, cfg.gamma)
    last = {"critic_loss": float("nan"), "actor_loss": float("nan"), "alpha": trainer.alpha}

    for step in range(1, steps + 1):
        if step <= warmup:
            action = rng.uniform(-1.0, 1.0, size=trainer.spec.action_dim)
        else:
            action = trainer.act(obs)
        next_obs, reward, goal, truncated = env.step(action)
        # Truncation is a bookkeeping stop, not a real terminal state.
        for part in nstep.push(obs, action, reward, next_obs, goal):
            replay.add(*part[:5], horizon=part[5], flag=part[6])
        episode_return += reward
        episode_actions.append(action)
        obs = next_obs

        if goal or truncated:
            if truncated and not goal:
                for part in nstep.flush():
                    replay.add(*part[:5], horizon=part[5], flag=part[6])
            if on_episode_end is not None:
                on_episode_end(env, episode_seed, episode_actions, goal)
            if curriculum is not None:
                curriculum.record(env, goal)
                env = curriculum.next_env(rng)
            episodes += 1
            returns.append(episode_return)
            episode_return = 0.0
            episode_actions = []
            episode_seed += 1
            obs = env.reset(episode_seed)

        if step > warmup:
            update_debt += updates_per_step
            # n-step windows delay the first insert a few steps.
            while update_debt >= 1.0 and len(replay) > 0:
                last = trainer.update(replay)
                update_debt -= 1.0

        if log_file and step % log_every == 0:
            row = {
                "step": step,
                "episodes": episodes,
                "alpha": trainer.alpha,
                "critic_loss": last["critic_loss"],
                "actor_loss": last["actor_loss"],
                "mean_return": float(np.mean(returns[-10:])) if returns else None,
            }
            log_file.write(json.dumps(row) + "\n")
            log_file.flush()
        if checkpoint_dir and checkpoint_every and step % checkpoint_every == 0:
            checkpoints.append(trainer.save(Path(checkpoint_dir) / f"step_{step:08d}.pt"))

    if checkpoint_dir:
        checkpoints.append(trainer.save(Path(checkpoint_dir) / "final.pt"))
    if log_file:
        log_file.close()
    return {
        "steps": steps,
        "episodes": episodes,
        "updates": trainer.updates_done,
        "returns": returns,
        "checkpoints": checkpoints,
    }
