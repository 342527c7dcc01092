"""Generalized advantage estimation and constraint bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap: np.ndarray,
    dones: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted TD-error advantages over [streams, steps] arrays.

    dones[s, t] marks that the episode ended at step t (the next state is a
    reset); bootstrapping is cut there. Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    bootstrap = np.asarray(bootstrap, dtype=np.float64)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ContractError("rewards, values, and dones must share a shape")
    if bootstrap.shape != rewards.shape[:-1]:
        raise ContractError("bootstrap must match the stream dimension")

    n_steps = rewards.shape[-1]
    adv = np.zeros_like(rewards)
    running = np.zeros_like(bootstrap)
    next_value = bootstrap
    for t in range(n_steps - 1, -1, -1):
        not_done = 1.0 - dones[..., t]
        delta = rewards[..., t] + gamma * next_value * not_done - values[..., t]
        running = delta + gamma * lam * not_done * running
        adv[..., t] = running
        next_value = values[..., t]
    return adv, adv + values


def episode_slices(dones: np.ndarray) -> list[tuple[int, int]]:
    """(start, stop) index pairs of completed episodes in one stream."""
    ends = np.flatnonzero(np.asarray(dones))
    out = []
    start = 0
    for end in ends:
        out.append((start, int(end) + 1))
        start = int(end) + 1
    return out


@dataclass
class ConstraintState:
    """Discounted-cost estimates against per-agent limits."""

    j_c: np.ndarray  # [n_agents, n_constraints] discounted episode cost
    episode_cost: np.ndarray  # [n_agents, n_constraints] undiscounted mean
    limits: np.ndarray  # [n_agents, n_constraints]

    @property
    def slacks(self) -> np.ndarray:
        return self.j_c - self.limits


def estimate_constraint_state(
    costs: np.ndarray,
    dones: np.ndarray,
    limits: np.ndarray,
    cost_gamma: float,
) -> ConstraintState:
    """Average per-episode discounted costs over completed episodes.

    costs is [envs, steps, agents, constraints]; dones is [envs, steps].
    """
    costs = np.asarray(costs, dtype=np.float64)
    n_envs, n_steps, n_agents, n_constraints = costs.shape
    disc_sums = []
    raw_sums = []
    for env in range(n_envs):
        for start, stop in episode_slices(dones[env]):
            ep = costs[env, start:stop]
            weights = cost_gamma ** np.arange(stop - start)
            disc_sums.append(np.tensordot(weights, ep, axes=(0, 0)))
            raw_sums.append(ep.sum(axis=0))
    if not disc_sums:
        raise ContractError("constraint estimation requires completed episodes")
    j_c = np.mean(disc_sums, axis=0)
    episode_cost = np.mean(raw_sums, axis=0)
    limits = np.broadcast_to(np.asarray(limits, dtype=np.float64), (n_agents, n_constraints)).copy()
    return ConstraintState(j_c=j_c, episode_cost=episode_cost, limits=limits)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Standardize to zero mean, unit variance (reward advantages)."""
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def center_advantages(adv: np.ndarray) -> np.ndarray:
    """Subtract the mean only; scale carries constraint meaning (cost advantages)."""
    return adv - adv.mean()
