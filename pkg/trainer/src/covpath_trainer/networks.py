"""Policy and critic networks for the coverage tasks.

Three encoder variants share one fusion trunk:

* ``mlp``: the flat observation vector feeds the fusion stack directly.
* ``cnn``: the multi-scale egocentric maps run through a shared
  convolution stack before fusion.
* ``sgcnn``: the same stack with scale-grouped convolutions, so each map
  scale is encoded independently of the others up to the map feature
  layer.

Observation vectors follow the engine's dump layout: coverage maps,
obstacle maps and frontier maps (``m`` scales each, ``grid**2`` cells),
then the lidar returns, then the recent-action history.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
from torch import nn

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0

VARIANTS = ("mlp", "cnn", "sgcnn")


@dataclass(frozen=True)
class NetworkSpec:
    """Shapes shared by the actor and the critics."""

    variant: str = "sgcnn"
    m: int = 4
    grid: int = 32
    n_rays: int = 24
    history: int = 0
    action_dim: int = 2
    conv_channels: int = 24
    feature_width: int = 256

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.conv_channels % self.m:
            raise ValueError("conv channels must split evenly across scales")

    @staticmethod
    def from_meta(meta: dict, variant: str = "sgcnn") -> "NetworkSpec":
        """Spec matching an observation buffer header."""
        return NetworkSpec(
            variant=variant,
            m=int(meta["m"]),
            grid=int(meta["grid"]),
            n_rays=int(meta["n_rays"]),
            history=int(meta["k"]),
        )

    @property
    def map_dim(self) -> int:
        return 3 * self.m * self.grid * self.grid

    @property
    def history_dim(self) -> int:
        return self.action_dim * self.history

    @property
    def obs_dim(self) -> int:
        return self.map_dim + self.n_rays + self.history_dim

    @property
    def conv_side(self) -> int:
        # 2x2 stride-2 halves the grid, then three 3x3 valid convs trim 6.
        return self.grid // 2 - 6


def split_maps(spec: NetworkSpec, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split a batch of flat observations into map stack and tail.

    Maps come back as (batch, 3*m, grid, grid) with the channels grouped
    by scale: channel 3*i+j holds map type j of scale i. The tail is the
    lidar block followed by the action history.
    """
    maps = obs[:, : spec.map_dim].reshape(-1, 3, spec.m, spec.grid, spec.grid)
    maps = maps.transpose(1, 2).reshape(-1, 3 * spec.m, spec.grid, spec.grid)
    return maps, obs[:, spec.map_dim :]


class MapEncoder(nn.Module):
    """Convolution stack plus the map feature layer."""

    def __init__(self, spec: NetworkSpec, groups: int) -> None:
        super().__init__()
        c = spec.conv_channels
        self.conv = nn.Sequential(
            nn.Conv2d(3 * spec.m, c, kernel_size=2, stride=2, groups=groups),
            nn.ReLU(),
            nn.Conv2d(c, c, kernel_size=3, groups=groups),
            nn.ReLU(),
            nn.Conv2d(c, c, kernel_size=3, groups=groups),
            nn.ReLU(),
            nn.Conv2d(c, c, kernel_size=3, groups=groups),
            nn.ReLU(),
        )
        self.fc = nn.Linear(c * spec.conv_side**2, spec.feature_width)

    def conv_features(self, maps: torch.Tensor) -> torch.Tensor:
        """Per-scale features before anything mixes across scales."""
        return self.conv(maps)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.fc(self.conv(maps).flatten(1)))


class Trunk(nn.Module):
    """Encoder plus the two fused hidden layers."""

    def __init__(self, spec: NetworkSpec, extra_dim: int = 0) -> None:
        super().__init__()
        self.spec = spec
        if spec.variant == "mlp":
            self.maps = None
            self.lidar = None
            fused_in = spec.obs_dim + extra_dim
        else:
            groups = spec.m if spec.variant == "sgcnn" else 1
            self.maps = MapEncoder(spec, groups)
            self.lidar = nn.Sequential(
                nn.Linear(spec.n_rays, spec.n_rays), nn.ReLU()
            )
            fused_in = spec.feature_width + spec.n_rays + spec.history_dim + extra_dim
        w = spec.feature_width
        self.fusion = nn.Sequential(
            nn.Linear(fused_in, w), nn.ReLU(), nn.Linear(w, w), nn.ReLU()
        )

    def forward(self, obs: torch.Tensor, action: torch.Tensor | None = None) -> torch.Tensor:
        spec = self.spec
        if self.maps is None:
            parts = [obs]
        else:
            maps, tail = split_maps(spec, obs)
            parts = [self.maps(maps), self.lidar(tail[:, : spec.n_rays])]
            if spec.history_dim:
                parts.append(tail[:, spec.n_rays :])
        if action is not None:
            parts.append(action)
        x = parts[0] if len(parts) == 1 else torch.cat(parts, dim=1)
        return self.fusion(x)


class Actor(nn.Module):
    """Squashed-Gaussian policy head over (v, w) in [-1, 1]."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__()
        self.spec = spec
        self.trunk = Trunk(spec)
        self.head = nn.Linear(spec.feature_width, 2 * spec.action_dim)

    def forward(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mean, log_std = self.head(self.trunk(obs)).chunk(2, dim=1)
        return mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, obs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Reparameterized action and its tanh-corrected log density."""
        mean, log_std = self(obs)
        dist = torch.distributions.Normal(mean, log_std.exp())
        raw = dist.rsample()
        action = torch.tanh(raw)
        log_prob = dist.log_prob(raw) - torch.log1p(-action.square() + 1e-6)
        return action, log_prob.sum(dim=1, keepdim=True)

    def greedy(self, obs: torch.Tensor) -> torch.Tensor:
        mean, _ = self(obs)
        return torch.tanh(mean)


class QNetwork(nn.Module):
    """State-action value head; the action joins at the fusion input."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__()
        self.trunk = Trunk(spec, extra_dim=spec.action_dim)
        self.head = nn.Linear(spec.feature_width, 1)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(obs, action))


class TwinCritic(nn.Module):
    """Two independently trained Q-functions."""

    def __init__(self, spec: NetworkSpec) -> None:
        super().__init__()
        self.q1 = QNetwork(spec)
        self.q2 = QNetwork(spec)

    def forward(self, obs: torch.Tensor, action: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.q1(obs, action), self.q2(obs, action)

    def min_q(self, obs: torch.Tensor, action: torch.Tensor) -> torch.Tensor:
        q1, q2 = self(obs, action)
        return torch.minimum(q1, q2)


def build_networks(spec: NetworkSpec) -> tuple[Actor, TwinCritic, TwinCritic]:
    """Actor, twin critics and frozen EMA target critics."""
    actor = Actor(spec)
    critic = TwinCritic(spec)
    target = copy.deepcopy(critic)
    target.requires_grad_(False)
    return actor, critic, target


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def ema_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    """target <- (1 - tau) * target + tau * source, in place."""
    with torch.no_grad():
        for t, s in zip(target.parameters(), source.parameters()):
            t.lerp_(s, tau)
