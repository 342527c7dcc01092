"""Bundled actor/critic parameters plus the settings they were built for."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graphs import RadiiConfig
from .nets import NetConfig, init_actor_params, init_critic_params
from .world import ScenarioSpec, World


@dataclass
class PolicyBundle:
    cfg: NetConfig
    scenario: ScenarioSpec
    radii: RadiiConfig
    share_policy: bool
    actor_params: list[dict[str, np.ndarray]]  # one entry when shared
    critic_params: dict[str, np.ndarray]
    cost_critic_params: list[dict[str, np.ndarray]]  # one per constraint

    @classmethod
    def create(
        cls,
        cfg: NetConfig,
        scenario: ScenarioSpec,
        radii: RadiiConfig,
        share_policy: bool,
        seed: int,
        n_constraints: int = World.N_CONSTRAINTS,
    ) -> "PolicyBundle":
        rng = np.random.default_rng(seed)
        n_actor_sets = 1 if share_policy else scenario.n_agents
        actors = [init_actor_params(cfg, rng) for _ in range(n_actor_sets)]
        critic = init_critic_params(cfg, rng)
        cost_critics = [init_critic_params(cfg, rng) for _ in range(n_constraints)]
        return cls(cfg, scenario, radii, share_policy, actors, critic, cost_critics)

    @property
    def n_constraints(self) -> int:
        return len(self.cost_critic_params)

    def actor_for(self, agent: int) -> dict[str, np.ndarray]:
        return self.actor_params[0 if self.share_policy else agent]

    def actor_set_index(self, agent: int) -> int:
        return 0 if self.share_policy else agent
