"""Exact dynamic programming on small constrained Markov games.

Small enough instances admit exact state values by linear solve, which turns
the sequential-advantage decomposition into a checkable identity and gives
the optimizer tests an oracle for joint returns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

MAX_STATES = 20
MAX_AGENTS = 3
MAX_ACTIONS = 3


@dataclass
class TabularCMG:
    """Shared-reward Markov game with per-agent action-dependent costs."""

    transitions: np.ndarray  # [S, A_joint, S]
    rewards: np.ndarray  # [S, A_joint]
    action_counts: tuple[int, ...]  # actions per agent
    gamma: float = 0.95
    initial_dist: np.ndarray | None = None
    costs: list[np.ndarray] = field(default_factory=list)  # per agent [S, A_i]
    cost_gamma: float = 0.95

    def __post_init__(self):
        n_joint = int(np.prod(self.action_counts))
        s = self.transitions.shape[0]
        if self.transitions.shape != (s, n_joint, s):
            raise ContractError("transition tensor shape mismatch")
        if self.rewards.shape != (s, n_joint):
            raise ContractError("reward table shape mismatch")
        if self.initial_dist is None:
            self.initial_dist = np.full(s, 1.0 / s)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_agents(self) -> int:
        return len(self.action_counts)

    def joint_index(self, actions: tuple[int, ...]) -> int:
        idx = 0
        for count, a in zip(self.action_counts, actions):
            idx = idx * count + a
        return idx

    def joint_actions(self):
        return np.ndindex(*self.action_counts)


def joint_policy_table(cmg: TabularCMG, policies: list[np.ndarray]) -> np.ndarray:
    """pi(joint action | state) as an [S, A_joint] table."""
    s = cmg.n_states
    table = np.ones((s, int(np.prod(cmg.action_counts))))
    for state in range(s):
        for j, actions in enumerate(cmg.joint_actions()):
            for agent, a in enumerate(actions):
                table[state, j] *= policies[agent][state, a]
    return table


def exact_state_values(cmg: TabularCMG, policies: list[np.ndarray]) -> np.ndarray:
    """V_pi from the linear Bellman system (I - gamma P_pi) V = R_pi."""
    table = joint_policy_table(cmg, policies)
    p_pi = np.einsum("sa,sat->st", table, cmg.transitions)
    r_pi = np.einsum("sa,sa->s", table, cmg.rewards)
    return np.linalg.solve(np.eye(cmg.n_states) - cmg.gamma * p_pi, r_pi)


def joint_q_values(cmg: TabularCMG, values: np.ndarray) -> np.ndarray:
    """Q(s, joint a) = R + gamma * E[V'] as an [S, A_joint] table."""
    return cmg.rewards + cmg.gamma * np.einsum("sat,t->sa", cmg.transitions, values)


def subset_q(
    cmg: TabularCMG,
    policies: list[np.ndarray],
    q_joint: np.ndarray,
    agents: tuple[int, ...],
    actions: tuple[int, ...],
    state: int,
) -> float:
    """Q for a subset's actions, remaining agents following their policies."""
    fixed = dict(zip(agents, actions))
    total = 0.0
    for j, joint in enumerate(cmg.joint_actions()):
        prob = 1.0
        for agent, a in enumerate(joint):
            if agent in fixed:
                if fixed[agent] != a:
                    prob = 0.0
                    break
            else:
                prob *= policies[agent][state, a]
        if prob:
            total += prob * q_joint[state, j]
    return total


def exact_return(cmg: TabularCMG, policies: list[np.ndarray]) -> float:
    """J(pi) = E_{s0}[V(s0)]."""
    return float(cmg.initial_dist @ exact_state_values(cmg, policies))


def verify_maad(
    cmg: TabularCMG,
    policies: list[np.ndarray],
    ordering: tuple[int, ...] | None = None,
) -> float:
    """Max deviation of the sequential advantage decomposition.

    Checks, for every state and joint action of the ordered agents, that the
    group advantage equals the telescoped sum of one-agent advantages
    conditioned on the predecessors' actions.
    """
    if cmg.n_states > MAX_STATES or cmg.n_agents > MAX_AGENTS or max(cmg.action_counts) > MAX_ACTIONS:
        raise ContractError("instance too large for exact enumeration")
    if ordering is None:
        ordering = tuple(range(cmg.n_agents))
    values = exact_state_values(cmg, policies)
    q_joint = joint_q_values(cmg, values)

    worst = 0.0
    h = len(ordering)
    sub_counts = [cmg.action_counts[a] for a in ordering]
    for state in range(cmg.n_states):
        for actions in np.ndindex(*sub_counts):
            joint_adv = subset_q(cmg, policies, q_joint, tuple(ordering), tuple(actions), state) - values[state]
            total = 0.0
            for j in range(h):
                with_j = subset_q(
                    cmg, policies, q_joint, tuple(ordering[: j + 1]), tuple(actions[: j + 1]), state
                )
                without_j = (
                    subset_q(cmg, policies, q_joint, tuple(ordering[:j]), tuple(actions[:j]), state)
                    if j
                    else values[state]
                )
                total += with_j - without_j
            worst = max(worst, abs(joint_adv - total))
    return worst


def random_cmg(
    rng: np.random.Generator,
    n_states: int,
    action_counts: tuple[int, ...],
    gamma: float = 0.9,
    n_costs_per_agent: int = 1,
) -> TabularCMG:
    n_joint = int(np.prod(action_counts))
    raw = rng.uniform(0.05, 1.0, size=(n_states, n_joint, n_states))
    transitions = raw / raw.sum(axis=2, keepdims=True)
    rewards = rng.uniform(-1.0, 1.0, size=(n_states, n_joint))
    dist = rng.uniform(0.05, 1.0, size=n_states)
    costs = [
        rng.uniform(0.0, 1.0, size=(n_states, count)) for count in action_counts for _ in range(n_costs_per_agent)
    ][: len(action_counts)]
    return TabularCMG(
        transitions=transitions,
        rewards=rewards,
        action_counts=action_counts,
        gamma=gamma,
        initial_dist=dist / dist.sum(),
        costs=costs,
    )


def random_policies(rng: np.random.Generator, cmg: TabularCMG) -> list[np.ndarray]:
    out = []
    for count in cmg.action_counts:
        raw = rng.uniform(0.05, 1.0, size=(cmg.n_states, count))
        out.append(raw / raw.sum(axis=1, keepdims=True))
    return out
