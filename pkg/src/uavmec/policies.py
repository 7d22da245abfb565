"""
Scheduling policies: the common interface and the baseline schemes.
"""

from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import SystemConfig
from .env import IDLE, Action, LinkSnapshot, LocalState
from .exceptions import ConfigError


def local_policy(state: LocalState) -> Action:
    """Process every task on the device."""
    if state.queue_len > 0 and state.cpu_free:
        return Action(1, 0)
    return IDLE


def cloud_policy(state: LocalState, gains: Sequence[float]) -> Action:
    """Offload through the base station with the best gain (lowest index on ties)."""
    if state.queue_len > 0 and not state.remote_in_flight:
        return Action(0, int(np.argmax(gains)) + 1)
    return IDLE


def uav_policy(state: LocalState, num_bs: int) -> Action:
    """Offload every task to the UAV."""
    if state.queue_len > 0 and not state.remote_in_flight:
        return Action(0, num_bs + 1)
    return IDLE


def greedy_remote_target(state: LocalState, link: LinkSnapshot, cfg: SystemConfig) -> int:
    """Remote target minimising transfer time plus any handover delay.

    Ties go to the current association, then to the lowest index.
    """
    rates = list(link.bs_rates) + [link.uav_rate]
    best, best_cost = 0, float("inf")
    for target, r in enumerate(rates, start=1):
        cost = cfg.task_bits / r + (cfg.handover_seconds if target != state.assoc else 0.0)
        if cost < best_cost or (cost == best_cost and target == state.assoc):
            best, best_cost = target, cost
    return best


def greedy_policy(state: LocalState, link: LinkSnapshot, cfg: SystemConfig) -> Action:
    """Engage the local CPU first, then one remote channel, while tasks remain."""
    local = 1 if state.queue_len > 0 and state.cpu_free else 0
    remote = 0
    if state.queue_len - local >= 1 and not state.remote_in_flight:
        remote = greedy_remote_target(state, link, cfg)
    return Action(local, remote)


class Policy:
    """Joint scheduler: one action per mobile user from that user's own information."""

    name = "policy"

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg

    def reset(self):
        """Forget per-run state; called before each simulation."""

    def act(
        self,
        states: Sequence[LocalState],
        observations: Sequence[float],
        links: Sequence[LinkSnapshot],
    ) -> List[Action]:
        return [self.decide(s, o, lk) for s, o, lk in zip(states, observations, links)]

    def decide(self, state: LocalState, observation: float, link: LinkSnapshot) -> Action:
        raise NotImplementedError


class LocalPolicy(Policy):
    name = "local"

    def decide(self, state, observation, link):
        return local_policy(state)


class CloudPolicy(Policy):
    name = "cloud"

    def decide(self, state, observation, link):
        return cloud_policy(state, link.bs_gains)


class UavPolicy(Policy):
    name = "uav"

    def decide(self, state, observation, link):
        return uav_policy(state, self.cfg.num_bs)


class GreedyPolicy(Policy):
    name = "greedy"

    def decide(self, state, observation, link):
        return greedy_policy(state, link, self.cfg)


BASELINES: Dict[str, Callable[[SystemConfig], Policy]] = {
    "local": LocalPolicy,
    "cloud": CloudPolicy,
    "uav": UavPolicy,
    "greedy": GreedyPolicy,
}

SCHEMES = tuple(BASELINES) + ("drqn",)


def make_policy(
    name: str,
    cfg: SystemConfig,
    checkpoint: Optional[str] = None,
    rng: Optional[np.random.Generator] = None,
) -> Policy:
    """Build a scheme by name; ``drqn`` needs a trained checkpoint."""
    if name in BASELINES:
        return BASELINES[name](cfg)
    if name == "drqn":
        from .drqn import DrqnPolicy

        if checkpoint is None:
            raise ConfigError("scheme 'drqn' requires a checkpoint")
        return DrqnPolicy.from_checkpoint(checkpoint, cfg, rng=rng)
    raise ConfigError(f"unknown scheme '{name}' (choose from {', '.join(SCHEMES)})")
