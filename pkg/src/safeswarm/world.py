"""Cost-constrained multi-agent particle world.

Double-integrator point masses on a soft-bounded square. Agents earn dense
goal-seeking rewards and pay one cost unit per overlapping agent or obstacle
each step. Three task flavors: per-agent goals (coop_nav), a regular polygon
around one landmark (formation), and even spacing between two landmarks
(line). Formation and line retarget each agent every step by solving a
linear assignment over agent-to-slot distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .assignment import linear_sum_assignment
from .errors import ContractError, DimensionError, PlacementError

KIND_OBSTACLE = 0
KIND_AGENT = 1
KIND_GOAL = 2

SCENARIO_NAMES = ("coop_nav", "formation", "line")

DT = 0.1
DAMPING = 0.25
MAX_SPEED = 1.0
SPAWN_MARGIN = 0.05
MAX_PLACEMENT_TRIES = 10_000


def world_size(n_agents: int) -> float:
    """Side length of the square world for n agents."""
    if n_agents < 1:
        raise ContractError("need at least one agent")
    return 4.0 * math.sqrt(n_agents / 3.0)


@dataclass
class ScenarioSpec:
    name: str = "coop_nav"
    n_agents: int = 3
    n_obstacles: int = -1  # -1: scenario default (n for coop_nav, 0 otherwise)
    cost_limit: float = 1.0
    episode_length: int = 100
    agent_radius: float = 0.05
    obstacle_radius: float = 0.10
    goal_radius: float = 0.05
    arrival_bonus: float = 5.0
    target_radius: float = 0.5  # formation polygon circumradius

    def __post_init__(self):
        if self.name not in SCENARIO_NAMES:
            raise ContractError(f"unknown scenario {self.name!r}")
        if self.n_agents < 1:
            raise ContractError("n_agents must be >= 1")
        if self.cost_limit < 0:
            raise ContractError("cost_limit must be >= 0")
        if self.n_obstacles < 0:
            self.n_obstacles = self.n_agents if self.name == "coop_nav" else 0

    @property
    def arrival_threshold(self) -> float:
        return self.agent_radius + self.goal_radius

    @property
    def step_cost_target(self) -> float:
        """Average per-step cost implied by the episode cost limit."""
        return self.cost_limit / self.episode_length

    @property
    def n_landmarks(self) -> int:
        return {"coop_nav": 0, "formation": 1, "line": 2}[self.name]

    def with_agents(self, n_agents: int) -> "ScenarioSpec":
        n_obs = n_agents if self.name == "coop_nav" else self.n_obstacles
        return replace(self, n_agents=n_agents, n_obstacles=n_obs)


@dataclass
class Entity:
    kind: int
    position: np.ndarray
    velocity: np.ndarray
    radius: float
    owner: int | None = None


@dataclass
class StepOutcome:
    rewards: np.ndarray  # [n]
    costs: np.ndarray  # [n, n_constraints]
    done: bool
    reached: np.ndarray  # [n] cumulative first-arrival flags


class World:
    """Mutable simulator state; advance only through step()."""

    N_CONSTRAINTS = 1  # collision count is the single shipped cost

    def __init__(self, spec: ScenarioSpec, seed: int):
        self.spec = spec
        self.half_extent = world_size(spec.n_agents) / 2.0
        self.rng = np.random.default_rng(seed)
        n, m = spec.n_agents, spec.n_obstacles
        total = 2 * n + m
        self.pos = np.zeros((total, 2))
        self.vel = np.zeros((total, 2))
        self.radius = np.concatenate(
            [
                np.full(n, spec.agent_radius),
                np.full(n, spec.goal_radius),
                np.full(m, spec.obstacle_radius),
            ]
        )
        self.kind = np.concatenate(
            [
                np.full(n, KIND_AGENT, dtype=np.int64),
                np.full(n, KIND_GOAL, dtype=np.int64),
                np.full(m, KIND_OBSTACLE, dtype=np.int64),
            ]
        )
        self.owner = np.concatenate(
            [
                np.full(n, -1, dtype=np.int64),
                np.arange(n, dtype=np.int64),
                np.full(m, -1, dtype=np.int64),
            ]
        )
        self.landmarks = np.zeros((spec.n_landmarks, 2))
        self.t = 0
        self.reached = np.zeros(n, dtype=bool)
        self.reset_episode()

    # -- layout helpers ---------------------------------------------------

    @property
    def n_agents(self) -> int:
        return self.spec.n_agents

    @property
    def n_entities(self) -> int:
        return self.pos.shape[0]

    def agent_slice(self) -> slice:
        return slice(0, self.n_agents)

    def goal_slice(self) -> slice:
        return slice(self.n_agents, 2 * self.n_agents)

    def obstacle_slice(self) -> slice:
        return slice(2 * self.n_agents, self.n_entities)

    @property
    def entities(self) -> list[Entity]:
        out = []
        for i in range(self.n_entities):
            owner = int(self.owner[i]) if self.owner[i] >= 0 else None
            out.append(
                Entity(int(self.kind[i]), self.pos[i].copy(), self.vel[i].copy(), float(self.radius[i]), owner)
            )
        return out

    # -- reset ------------------------------------------------------------

    def _place(self, radii: np.ndarray) -> np.ndarray:
        placed: list[np.ndarray] = []
        placed_r: list[float] = []
        for r in radii:
            for attempt in range(MAX_PLACEMENT_TRIES):
                p = self.rng.uniform(-self.half_extent, self.half_extent, size=2)
                ok = True
                for q, rq in zip(placed, placed_r):
                    if np.linalg.norm(p - q) <= r + rq + SPAWN_MARGIN:
                        ok = False
                        break
                if ok:
                    placed.append(p)
                    placed_r.append(float(r))
                    break
            else:
                raise PlacementError(
                    f"could not place entity after {MAX_PLACEMENT_TRIES} attempts; scenario too dense"
                )
        return np.array(placed).reshape(len(radii), 2)

    def reset_episode(self) -> None:
        """Fresh episode from this world's RNG stream."""
        spec = self.spec
        n, m = spec.n_agents, spec.n_obstacles
        if spec.name == "coop_nav":
            radii = np.concatenate(
                [np.full(n, spec.agent_radius), np.full(n, spec.goal_radius), np.full(m, spec.obstacle_radius)]
            )
            pts = self._place(radii)
            self.pos[self.agent_slice()] = pts[:n]
            self.pos[self.goal_slice()] = pts[n : 2 * n]
            self.pos[self.obstacle_slice()] = pts[2 * n :]
        else:
            k = spec.n_landmarks
            radii = np.concatenate(
                [np.full(n, spec.agent_radius), np.full(k, spec.goal_radius), np.full(m, spec.obstacle_radius)]
            )
            pts = self._place(radii)
            self.pos[self.agent_slice()] = pts[:n]
            self.landmarks = pts[n : n + k]
            self.pos[self.obstacle_slice()] = pts[n + k :]
        self.vel[:] = 0.0
        self.t = 0
        self.reached[:] = False
        if spec.name != "coop_nav":
            self._assign_targets()

    # -- task targets -----------------------------------------------------

    def _target_points(self) -> np.ndarray:
        spec = self.spec
        n = spec.n_agents
        if spec.name == "formation":
            angles = 2.0 * np.pi * np.arange(n) / n
            ring = spec.target_radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
            return self.landmarks[0] + ring
        if spec.name == "line":
            if n == 1:
                fractions = np.array([0.5])
            else:
                fractions = np.arange(n) / (n - 1)
            return self.landmarks[0] + fractions[:, None] * (self.landmarks[1] - self.landmarks[0])
        raise ContractError("coop_nav goals are sampled, not assigned")

    def _assign_targets(self) -> None:
        targets = self._target_points()
        agents = self.pos[self.agent_slice()]
        dists = np.linalg.norm(agents[:, None, :] - targets[None, :, :], axis=2)
        perm = linear_sum_assignment(dists)
        self.pos[self.goal_slice()] = targets[perm]

    # -- dynamics ---------------------------------------------------------

    def step(self, actions: np.ndarray) -> StepOutcome:
        n = self.n_agents
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (n, 2):
            raise DimensionError(f"expected actions of shape ({n}, 2), got {actions.shape}")
        if not np.all(np.isfinite(actions)):
            raise ContractError("actions contain NaN or Inf")
        a = np.clip(actions, -1.0, 1.0)

        ag = self.agent_slice()
        vel = (1.0 - DAMPING) * self.vel[ag] + a * DT
        speed = np.linalg.norm(vel, axis=1)
        over = speed > MAX_SPEED
        if np.any(over):
            vel[over] *= (MAX_SPEED / speed[over])[:, None]
        self.vel[ag] = vel
        self.pos[ag] += vel * DT
        self.t += 1

        if self.spec.name != "coop_nav":
            self._assign_targets()

        rewards = self._rewards()
        costs = self._collision_costs()[:, None]
        dists = self._goal_distances()
        self.reached |= dists < self.spec.arrival_threshold
        done = self.t >= self.spec.episode_length
        return StepOutcome(rewards=rewards, costs=costs, done=bool(done), reached=self.reached.copy())

    def _goal_distances(self) -> np.ndarray:
        return np.linalg.norm(self.pos[self.agent_slice()] - self.pos[self.goal_slice()], axis=1)

    def _rewards(self) -> np.ndarray:
        dists = self._goal_distances()
        return -dists + self.spec.arrival_bonus * (dists < self.spec.arrival_threshold)

    def _collision_costs(self) -> np.ndarray:
        """Per-agent count of overlapping agents and obstacles (never goals)."""
        n = self.n_agents
        solid = np.concatenate([np.arange(n), np.arange(2 * n, self.n_entities)])
        pos = self.pos[solid]
        rad = self.radius[solid]
        diff = self.pos[:n, None, :] - pos[None, :, :]
        dist = np.linalg.norm(diff, axis=2)
        limit = self.radius[:n, None] + rad[None, :]
        hit = dist < limit
        hit[np.arange(n), np.arange(n)] = False  # self pairs
        return hit.sum(axis=1).astype(np.float64)

    # -- observations -----------------------------------------------------

    def flat_observation(self, agent: int) -> np.ndarray:
        """Own state followed by relative states of every other entity."""
        if not 0 <= agent < self.n_agents:
            raise DimensionError(f"agent index {agent} out of range")
        own = np.concatenate([self.pos[agent], self.vel[agent]])
        others = [i for i in range(self.n_entities) if i != agent]
        rel = np.concatenate(
            [np.concatenate([self.pos[i] - self.pos[agent], self.vel[i] - self.vel[agent]]) for i in others]
        )
        return np.concatenate([own, rel])


def success(outcome: StepOutcome) -> bool:
    """True when every agent has arrived at its goal at some step."""
    return bool(np.all(outcome.reached))
