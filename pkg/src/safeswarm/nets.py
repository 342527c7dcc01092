"""Attention message-passing networks with recurrent actor/critic heads.

All forwards run over a GraphBatch: the disjoint union of per-sample
observation graphs, with one self-loop (zero edge feature) per vertex so
every vertex retains its own information. The actor selects its agent's
vertex feature (agent aggregation); critics pool every agent vertex of a
sample through a learned attention layer (graph aggregation). Both feed a
single-layer LSTM and an MLP head, so output sizes never depend on how many
entities a sample contains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .graphs import ObsGraph
from .params import orthogonal_init
from .tensor import Tensor
from .world import KIND_AGENT

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0


@dataclass(frozen=True)
class GnnConfig:
    n_kinds: int = 3
    embed_dim: int = 4
    edge_dim: int = 4
    msg_hidden: int = 16
    msg_dim: int = 16
    heads: int = 2
    layers: int = 2
    out_dim: int = 64

    def __post_init__(self):
        if self.out_dim % self.heads != 0:
            raise ContractError("out_dim must be divisible by heads")

    def msg_input_dim(self, layer: int) -> int:
        width = self.embed_dim if layer == 0 else self.out_dim
        return 2 * width + self.edge_dim


@dataclass(frozen=True)
class NetConfig:
    gnn: GnnConfig = field(default_factory=GnnConfig)
    lstm_hidden: int = 64
    head_hidden: int = 64
    action_dim: int = 2
    log_std_init: float = 0.0

    @property
    def khop(self) -> int:
        # information propagates one hop per message-passing layer
        return self.gnn.layers


# ---------------------------------------------------------------------------
# parameter construction


def init_gnn_params(cfg: GnnConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    p["gnn.embed"] = orthogonal_init((cfg.n_kinds, cfg.embed_dim), 1.0, rng)
    gain = np.sqrt(2.0)
    per_head = cfg.out_dim // cfg.heads
    for layer in range(cfg.layers):
        din = cfg.msg_input_dim(layer)
        for head in range(cfg.heads):
            pre = f"gnn.l{layer}.h{head}."
            p[pre + "msg_w1"] = orthogonal_init((din, cfg.msg_hidden), gain, rng)
            p[pre + "msg_b1"] = np.zeros(cfg.msg_hidden)
            p[pre + "msg_w2"] = orthogonal_init((cfg.msg_hidden, cfg.msg_dim), gain, rng)
            p[pre + "msg_b2"] = np.zeros(cfg.msg_dim)
            p[pre + "att_w"] = orthogonal_init((cfg.msg_dim, 1), 1.0, rng)
            p[pre + "att_b"] = np.zeros(1)
            p[pre + "val_w"] = orthogonal_init((cfg.msg_dim, per_head), gain, rng)
            p[pre + "val_b"] = np.zeros(per_head)
        p[f"gnn.l{layer}.combine_w"] = orthogonal_init((cfg.out_dim, cfg.out_dim), gain, rng)
        p[f"gnn.l{layer}.combine_b"] = np.zeros(cfg.out_dim)
    return p


def _init_lstm(p: dict[str, np.ndarray], in_dim: int, hidden: int, rng) -> None:
    p["lstm.wx"] = orthogonal_init((in_dim, 4 * hidden), 1.0, rng)
    p["lstm.wh"] = orthogonal_init((hidden, 4 * hidden), 1.0, rng)
    p["lstm.b"] = np.zeros(4 * hidden)


def init_actor_params(cfg: NetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = init_gnn_params(cfg.gnn, rng)
    _init_lstm(p, cfg.gnn.out_dim, cfg.lstm_hidden, rng)
    p["head.w1"] = orthogonal_init((cfg.lstm_hidden, cfg.head_hidden), np.sqrt(2.0), rng)
    p["head.b1"] = np.zeros(cfg.head_hidden)
    p["head.w2"] = orthogonal_init((cfg.head_hidden, cfg.action_dim), 0.01, rng)
    p["head.b2"] = np.zeros(cfg.action_dim)
    p["log_std"] = np.full(cfg.action_dim, cfg.log_std_init)
    return p


def init_critic_params(cfg: NetConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    p = init_gnn_params(cfg.gnn, rng)
    p["ga.score_w"] = orthogonal_init((cfg.gnn.out_dim, 1), 1.0, rng)
    p["ga.score_b"] = np.zeros(1)
    p["ga.value_w"] = orthogonal_init((cfg.gnn.out_dim, cfg.gnn.out_dim), 1.0, rng)
    p["ga.value_b"] = np.zeros(cfg.gnn.out_dim)
    _init_lstm(p, cfg.gnn.out_dim, cfg.lstm_hidden, rng)
    p["head.w1"] = orthogonal_init((cfg.lstm_hidden, cfg.head_hidden), np.sqrt(2.0), rng)
    p["head.b1"] = np.zeros(cfg.head_hidden)
    p["head.w2"] = orthogonal_init((cfg.head_hidden, 1), 1.0, rng)
    p["head.b2"] = np.zeros(1)
    return p


def bind_params(arrays: dict[str, np.ndarray], requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad) for k, v in arrays.items()}


def flatten_arrays(arrays: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(v).reshape(-1) for v in arrays.values()])


def unflatten_arrays(template: dict[str, np.ndarray], flat: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for k, v in template.items():
        n = v.size
        out[k] = flat[offset : offset + n].reshape(v.shape).copy()
        offset += n
    if offset != flat.size:
        raise DimensionError("flat vector length does not match parameter template")
    return out


# ---------------------------------------------------------------------------
# batched graphs


@dataclass
class GraphBatch:
    """Disjoint union of sample graphs prepared for one GNN forward."""

    kinds: np.ndarray  # [V]
    edge_src: np.ndarray  # [E] sorted by (dst, src)
    edge_dst: np.ndarray  # [E]
    edge_feat: np.ndarray  # [E, edge_dim]
    n_vertices: int
    n_samples: int
    aa_rows: np.ndarray | None  # [n_samples] actor vertex per sample
    ga_rows: np.ndarray  # agent vertices across the union
    ga_segments: np.ndarray  # sample id per ga_row


def make_graph_batch(
    graphs: list[ObsGraph],
    agent_indices: list[int] | None = None,
    add_self_loops: bool = True,
) -> GraphBatch:
    counts = np.array([g.n_vertices for g in graphs], dtype=np.int64)
    offsets = np.zeros(len(graphs), dtype=np.int64)
    np.cumsum(counts[:-1], out=offsets[1:])
    total_v = int(counts.sum())

    kinds = np.concatenate([g.kinds for g in graphs])
    src_parts = [g.edge_src + off for g, off in zip(graphs, offsets)]
    dst_parts = [g.edge_dst + off for g, off in zip(graphs, offsets)]
    feat_parts = [g.edge_feat for g in graphs]
    if add_self_loops:
        loops = np.arange(total_v, dtype=np.int64)
        src_parts.append(loops)
        dst_parts.append(loops)
        feat_parts.append(np.zeros((total_v, graphs[0].edge_feat.shape[1])))
    src = np.concatenate(src_parts)
    dst = np.concatenate(dst_parts)
    feat = np.concatenate(feat_parts, axis=0)
    order = np.lexsort((src, dst))
    src, dst, feat = src[order], dst[order], np.ascontiguousarray(feat[order])

    aa_rows = None
    if agent_indices is not None:
        aa_rows = offsets + np.asarray(agent_indices, dtype=np.int64)

    ga_rows = np.flatnonzero(kinds == KIND_AGENT)
    ga_segments = np.repeat(np.arange(len(graphs), dtype=np.int64), counts)[ga_rows]
    return GraphBatch(
        kinds=kinds,
        edge_src=src,
        edge_dst=dst,
        edge_feat=feat,
        n_vertices=total_v,
        n_samples=len(graphs),
        aa_rows=aa_rows,
        ga_rows=ga_rows,
        ga_segments=ga_segments,
    )


# ---------------------------------------------------------------------------
# message passing


def message_passing_layer(
    p: dict[str, Tensor],
    cfg: GnnConfig,
    layer: int,
    batch: GraphBatch,
    feats: Tensor,
    return_attention: bool = False,
):
    """One round of scored, softmax-weighted message aggregation."""
    efeat = Tensor(batch.edge_feat)
    h_src = T.gather_rows(feats, batch.edge_src)
    h_dst = T.gather_rows(feats, batch.edge_dst)
    m_in = T.concat([h_src, efeat, h_dst], axis=1)
    head_outs = []
    attentions = []
    for head in range(cfg.heads):
        pre = f"gnn.l{layer}.h{head}."
        mid = T.relu(T.linear(m_in, p[pre + "msg_w1"], p[pre + "msg_b1"]))
        msg = T.linear(mid, p[pre + "msg_w2"], p[pre + "msg_b2"])
        score = T.linear(msg, p[pre + "att_w"], p[pre + "att_b"])
        val = T.linear(msg, p[pre + "val_w"], p[pre + "val_b"])
        alpha = T.segment_softmax(score, batch.edge_dst, batch.n_vertices)
        contrib = T.mul(val, T.broadcast_to(alpha, val.data.shape))
        head_outs.append(T.scatter_add_rows(contrib, batch.edge_dst, batch.n_vertices))
        if return_attention:
            attentions.append(alpha)
    out = T.relu(
        T.linear(
            T.concat(head_outs, axis=1),
            p[f"gnn.l{layer}.combine_w"],
            p[f"gnn.l{layer}.combine_b"],
        )
    )
    if return_attention:
        return out, attentions
    return out


def gnn_forward(p: dict[str, Tensor], cfg: GnnConfig, batch: GraphBatch) -> Tensor:
    feats = T.gather_rows(p["gnn.embed"], batch.kinds)
    for layer in range(cfg.layers):
        feats = message_passing_layer(p, cfg, layer, batch, feats)
    return feats


def agent_aggregate(vertex_feats: Tensor, agent_vertex: int) -> Tensor:
    if not 0 <= agent_vertex < vertex_feats.data.shape[0]:
        raise IndexError(f"vertex {agent_vertex} out of range")
    return T.gather_rows(vertex_feats, np.array([agent_vertex], dtype=np.int64))


def graph_aggregate(p: dict[str, Tensor], vertex_feats: Tensor, agent_vertices: np.ndarray) -> Tensor:
    agent_vertices = np.asarray(agent_vertices, dtype=np.int64)
    if agent_vertices.size == 0:
        raise ContractError("graph aggregation over an empty agent set")
    batch_like = GraphBatch(
        kinds=np.zeros(0),
        edge_src=np.zeros(0, dtype=np.int64),
        edge_dst=np.zeros(0, dtype=np.int64),
        edge_feat=np.zeros((0, 4)),
        n_vertices=vertex_feats.data.shape[0],
        n_samples=1,
        aa_rows=None,
        ga_rows=agent_vertices,
        ga_segments=np.zeros(agent_vertices.size, dtype=np.int64),
    )
    return _graph_aggregate_batch(p, vertex_feats, batch_like)


def _graph_aggregate_batch(p: dict[str, Tensor], feats: Tensor, batch: GraphBatch) -> Tensor:
    present = np.zeros(batch.n_samples, dtype=np.int64)
    np.add.at(present, batch.ga_segments, 1)
    if np.any(present == 0):
        raise ContractError("every sample needs at least one agent vertex")
    agent_feats = T.gather_rows(feats, batch.ga_rows)
    scores = T.linear(agent_feats, p["ga.score_w"], p["ga.score_b"])
    alpha = T.segment_softmax(scores, batch.ga_segments, batch.n_samples)
    vals = T.linear(agent_feats, p["ga.value_w"], p["ga.value_b"])
    weighted = T.mul(vals, T.broadcast_to(alpha, vals.data.shape))
    return T.scatter_add_rows(weighted, batch.ga_segments, batch.n_samples)


# ---------------------------------------------------------------------------
# recurrence


def lstm_step(p: dict[str, Tensor], x: Tensor, h: Tensor, c: Tensor):
    hidden = h.data.shape[1]
    gates = T.add(T.linear(x, p["lstm.wx"], p["lstm.b"]), T.matmul(h, p["lstm.wh"]))
    i = T.sigmoid(T.slice_axis(gates, 1, 0, hidden))
    f = T.sigmoid(T.slice_axis(gates, 1, hidden, 2 * hidden))
    g = T.tanh(T.slice_axis(gates, 1, 2 * hidden, 3 * hidden))
    o = T.sigmoid(T.slice_axis(gates, 1, 3 * hidden, 4 * hidden))
    c_next = T.add(T.mul(f, c), T.mul(i, g))
    h_next = T.mul(o, T.tanh(c_next))
    return h_next, c_next


def lstm_chunks(p: dict[str, Tensor], seq: Tensor, chunk_len: int, h0: Tensor, c0: Tensor):
    """Run chunk-parallel recurrence over rows ordered (chunk, step).

    seq is [n_chunks * chunk_len, in_dim]; h0/c0 are [n_chunks, hidden].
    Returns (outputs in the input row order, final h, final c).
    """
    n_rows = seq.data.shape[0]
    if n_rows % chunk_len != 0:
        raise ContractError("sequence length must divide into chunks")
    n_chunks = n_rows // chunk_len
    h, c = h0, c0
    outs = []
    base = np.arange(n_chunks, dtype=np.int64) * chunk_len
    for step in range(chunk_len):
        x = T.gather_rows(seq, base + step)
        h, c = lstm_step(p, x, h, c)
        outs.append(h)
    stacked = T.concat(outs, axis=0)  # ordered (step, chunk)
    back = (np.arange(n_rows, dtype=np.int64) % chunk_len) * n_chunks + (
        np.arange(n_rows, dtype=np.int64) // chunk_len
    )
    return T.gather_rows(stacked, back), h, c


# ---------------------------------------------------------------------------
# actor / critic stacks


def actor_outputs(
    p: dict[str, Tensor],
    cfg: NetConfig,
    batch: GraphBatch,
    h0: Tensor,
    c0: Tensor,
    chunk_len: int,
):
    """Batched actor pass: (means, log_stds, final h, final c)."""
    if batch.aa_rows is None:
        raise ContractError("actor batches need aa_rows")
    feats = gnn_forward(p, cfg.gnn, batch)
    x = T.gather_rows(feats, batch.aa_rows)
    seq, h, c = lstm_chunks(p, x, chunk_len, h0, c0)
    hh = T.relu(T.linear(seq, p["head.w1"], p["head.b1"]))
    means = T.linear(hh, p["head.w2"], p["head.b2"])
    ls = T.clip(p["log_std"], LOG_STD_MIN, LOG_STD_MAX)
    log_stds = T.broadcast_to(T.reshape(ls, (1, cfg.action_dim)), means.data.shape)
    return means, log_stds, h, c


def critic_outputs(
    p: dict[str, Tensor],
    cfg: NetConfig,
    batch: GraphBatch,
    h0: Tensor,
    c0: Tensor,
    chunk_len: int,
):
    """Batched critic pass: (values [n_samples], final h, final c)."""
    feats = gnn_forward(p, cfg.gnn, batch)
    pooled = _graph_aggregate_batch(p, feats, batch)
    seq, h, c = lstm_chunks(p, pooled, chunk_len, h0, c0)
    hh = T.relu(T.linear(seq, p["head.w1"], p["head.b1"]))
    values = T.reshape(T.linear(hh, p["head.w2"], p["head.b2"]), (batch.n_samples,))
    return values, h, c


def zero_hidden(n: int, hidden: int) -> tuple[np.ndarray, np.ndarray]:
    return np.zeros((n, hidden)), np.zeros((n, hidden))


def actor_forward(
    params: dict[str, np.ndarray],
    cfg: NetConfig,
    subgraph: ObsGraph,
    hidden: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Single-sample decentralized actor step on a k-hop subgraph.

    Returns (mean [action_dim], std [action_dim], (h, c)).
    """
    if subgraph.agent_index is None:
        raise ContractError("subgraph must record its centered agent index")
    if hidden is None:
        hidden = zero_hidden(1, cfg.lstm_hidden)
    batch = make_graph_batch([subgraph], agent_indices=[subgraph.agent_index])
    with T.no_grad():
        pt = bind_params(params)
        means, log_stds, h, c = actor_outputs(
            pt, cfg, batch, Tensor(hidden[0]), Tensor(hidden[1]), chunk_len=1
        )
    std = np.exp(log_stds.data[0])
    return means.data[0].copy(), std, (h.data.copy(), c.data.copy())


def critic_forward(
    params: dict[str, np.ndarray],
    cfg: NetConfig,
    graph: ObsGraph,
    hidden: tuple[np.ndarray, np.ndarray] | None = None,
):
    """Single-sample centralized value estimate on a full graph."""
    if hidden is None:
        hidden = zero_hidden(1, cfg.lstm_hidden)
    batch = make_graph_batch([graph])
    with T.no_grad():
        pt = bind_params(params)
        values, h, c = critic_outputs(
            pt, cfg, batch, Tensor(hidden[0]), Tensor(hidden[1]), chunk_len=1
        )
    return float(values.data[0]), (h.data.copy(), c.data.copy())
