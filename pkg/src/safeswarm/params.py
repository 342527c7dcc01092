"""Flat parameter vectors, Adam, gradient clipping, and orthogonal init."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class Segment:
    name: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1


class ParamVector:
    """Named parameter arrays flattened into one contiguous float64 vector.

    Flatten/unflatten round-trips are bit-exact; the segment layout is the
    canonical ordering used by trust-region steps and checkpoints.
    """

    def __init__(self, segments: list[Segment], data: np.ndarray):
        total = sum(s.size for s in segments)
        if data.shape != (total,):
            raise DimensionError(f"flat data length {data.shape} != segment total {total}")
        self.segments = segments
        self.data = np.asarray(data, dtype=np.float64)

    @classmethod
    def from_arrays(cls, named: dict[str, np.ndarray]) -> "ParamVector":
        segments = []
        chunks = []
        offset = 0
        for name, arr in named.items():
            arr = np.asarray(arr, dtype=np.float64)
            segments.append(Segment(name, tuple(arr.shape), offset))
            chunks.append(arr.reshape(-1))
            offset += arr.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(segments, data)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for seg in self.segments:
            out[seg.name] = self.data[seg.offset : seg.offset + seg.size].reshape(seg.shape).copy()
        return out

    def copy(self) -> "ParamVector":
        return ParamVector(self.segments, self.data.copy())

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return self.data.size


@dataclass
class AdamState:
    """First/second moment accumulators for one ParamVector layout."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), step=0)


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    eps: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
) -> np.ndarray:
    """One bias-corrected Adam update; mutates `state`, returns new params."""
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise DimensionError("params, grads, and state shapes must agree")
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grads
    state.v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_grad_norm(grads: np.ndarray, max_norm: float = 10.0) -> np.ndarray:
    """Rescale so the global L2 norm does not exceed max_norm."""
    norm = float(np.linalg.norm(grads))
    if norm <= max_norm or norm == 0.0:
        return grads
    return grads * (max_norm / norm)


def orthogonal_init(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal 2-D initialization scaled by `gain`.

    The smaller of (rows, columns) is orthonormal; deterministic given rng.
    """
    shape = tuple(shape)
    if len(shape) != 2:
        raise DimensionError("orthogonal_init requires a 2-D shape")
    rows, cols = shape
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]
