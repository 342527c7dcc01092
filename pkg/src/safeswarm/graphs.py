"""Typed observation/communication graphs over world entities.

Vertices are entities (kind-coded); directed edges carry the 4-vector state
difference source-minus-target (position then velocity). Obstacles within
sensing range and communicating agents point at the perceiving agent; each
agent's own goal always points at it regardless of range.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError
from .world import KIND_AGENT, KIND_GOAL, KIND_OBSTACLE, World


@dataclass(frozen=True)
class RadiiConfig:
    sensing_radius: float = 1.0
    communication_radius: float = 1.0

    def __post_init__(self):
        if self.sensing_radius <= 0 or self.communication_radius <= 0:
            raise ContractError("radii must be positive")


@dataclass
class ObsGraph:
    kinds: np.ndarray  # [V] entity kind codes
    entity_index: np.ndarray  # [V] originating entity index
    edge_src: np.ndarray  # [E] source vertex
    edge_dst: np.ndarray  # [E] target vertex
    edge_feat: np.ndarray  # [E, 4] source state minus target state
    agent_index: int | None = None  # centered agent (subgraphs only)
    orig_vertices: np.ndarray | None = None  # parent-graph vertex ids (subgraphs)

    @property
    def n_vertices(self) -> int:
        return self.kinds.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_src.shape[0]

    def agent_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.kinds == KIND_AGENT)


def _sorted_edges(src, dst, feat):
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    feat = np.asarray(feat, dtype=np.float64).reshape(len(src), 4)
    order = np.lexsort((src, dst))
    return src[order], dst[order], feat[order]


def build_graph(world: World, radii: RadiiConfig) -> ObsGraph:
    n = world.n_agents
    pos, vel = world.pos, world.vel
    state = np.concatenate([pos, vel], axis=1)

    src_list: list[int] = []
    dst_list: list[int] = []

    agents = np.arange(n)
    goals = np.arange(n, 2 * n)
    obstacles = np.arange(2 * n, world.n_entities)

    if len(obstacles):
        d = np.linalg.norm(pos[obstacles][:, None, :] - pos[agents][None, :, :], axis=2)
        ob, ag = np.nonzero(d <= radii.sensing_radius)
        src_list.extend(obstacles[ob])
        dst_list.extend(agents[ag])

    if n > 1:
        d = np.linalg.norm(pos[agents][:, None, :] - pos[agents][None, :, :], axis=2)
        a, b = np.nonzero((d <= radii.communication_radius) & ~np.eye(n, dtype=bool))
        src_list.extend(agents[a])
        dst_list.extend(agents[b])

    src_list.extend(goals)
    dst_list.extend(agents)

    src = np.asarray(src_list, dtype=np.int64)
    dst = np.asarray(dst_list, dtype=np.int64)
    feat = state[src] - state[dst]
    src, dst, feat = _sorted_edges(src, dst, feat)
    return ObsGraph(
        kinds=world.kind.copy(),
        entity_index=np.arange(world.n_entities, dtype=np.int64),
        edge_src=src,
        edge_dst=dst,
        edge_feat=feat,
    )


def khop_subgraph(graph: ObsGraph, agent_vertex: int, k: int) -> ObsGraph:
    """Induced subgraph on vertices within k reverse hops of the agent."""
    if k < 1:
        raise ContractError("k must be >= 1")
    if not 0 <= agent_vertex < graph.n_vertices:
        raise IndexError(f"vertex {agent_vertex} not in graph")
    frontier = {int(agent_vertex)}
    keep = {int(agent_vertex)}
    for _ in range(k):
        if not frontier:
            break
        mask = np.isin(graph.edge_dst, list(frontier))
        frontier = set(graph.edge_src[mask].tolist()) - keep
        keep |= frontier
    vertices = np.array(sorted(keep), dtype=np.int64)
    remap = {int(v): i for i, v in enumerate(vertices)}
    emask = np.isin(graph.edge_src, vertices) & np.isin(graph.edge_dst, vertices)
    src = np.array([remap[int(s)] for s in graph.edge_src[emask]], dtype=np.int64)
    dst = np.array([remap[int(d)] for d in graph.edge_dst[emask]], dtype=np.int64)
    feat = graph.edge_feat[emask]
    src, dst, feat = _sorted_edges(src, dst, feat)
    return ObsGraph(
        kinds=graph.kinds[vertices].copy(),
        entity_index=graph.entity_index[vertices].copy(),
        edge_src=src,
        edge_dst=dst,
        edge_feat=feat,
        agent_index=remap[int(agent_vertex)],
        orig_vertices=vertices,
    )


def graph_checksum(graph: ObsGraph) -> int:
    """Order-independent 64-bit digest of the vertex and edge multisets."""

    def h(payload: bytes) -> int:
        return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")

    total = (graph.n_vertices * 0x9E3779B97F4A7C15 + graph.n_edges) & 0xFFFFFFFFFFFFFFFF
    ent = graph.entity_index
    for i in range(graph.n_vertices):
        total = (total + h(b"v" + int(graph.kinds[i]).to_bytes(8, "little", signed=True) + int(ent[i]).to_bytes(8, "little", signed=True))) & 0xFFFFFFFFFFFFFFFF
    for e in range(graph.n_edges):
        payload = (
            b"e"
            + int(ent[graph.edge_src[e]]).to_bytes(8, "little", signed=True)
            + int(ent[graph.edge_dst[e]]).to_bytes(8, "little", signed=True)
            + graph.edge_feat[e].tobytes()
        )
        total = (total + h(payload)) & 0xFFFFFFFFFFFFFFFF
    return total


def dump_graph(graph: ObsGraph) -> str:
    """Line-oriented text form, one vertex or edge per line."""
    lines = []
    for i in range(graph.n_vertices):
        lines.append(f"v {i} kind={int(graph.kinds[i])} entity={int(graph.entity_index[i])}")
    for e in range(graph.n_edges):
        f = " ".join(f"{x!r}" for x in graph.edge_feat[e])
        lines.append(f"e {int(graph.edge_src[e])} {int(graph.edge_dst[e])} {f}")
    return "\n".join(lines) + "\n"
