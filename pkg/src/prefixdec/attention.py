"""Streaming-softmax attention primitives.

pac computes attention between a query set and one KV chunk, returning a
normalized partial output plus the (running max, exp-sum) state that
makes partials mergeable. por merges two partials in a common
log-sum-exp frame; it is associative and commutative up to rounding,
with empty_partial as its neutral element. naive_attention is the
single-softmax reference oracle.

The hot pac loop dispatches to a compiled extension when it is
available; set PREFIXDEC_KERNEL=python|compiled to force a backend.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels_py
from .errors import DimensionMismatch, EmptyVisibleSet, NoVisibleTokens, ShapeMismatch
from .forest import Forest, QueryBatch, prefix_path

try:
    from . import _kernels
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None


def available_backends() -> tuple[str, ...]:
    return ("python", "compiled") if _kernels is not None else ("python",)


def active_backend() -> str:
    forced = os.environ.get("PREFIXDEC_KERNEL", "").strip().lower()
    if forced:
        if forced not in ("python", "compiled"):
            raise ValueError(f"PREFIXDEC_KERNEL must be python or compiled, got {forced!r}")
        if forced == "compiled" and _kernels is None:
            raise ValueError("PREFIXDEC_KERNEL=compiled but the extension is not built")
        return forced
    return "compiled" if _kernels is not None else "python"


@dataclass
class PartialResult:
    """Partial attention state per (query, head): normalized output plus
    the running max m and exp-sum s in the m-frame. s = 0 (and m = -inf)
    marks an empty entry."""

    out: np.ndarray        # [n_q, h_q, d]
    max_score: np.ndarray  # [n_q, h_q]
    exp_sum: np.ndarray    # [n_q, h_q]

    @property
    def n_q(self) -> int:
        return self.out.shape[0]

    def copy(self) -> "PartialResult":
        return PartialResult(self.out.copy(), self.max_score.copy(), self.exp_sum.copy())

    def row(self, i: int) -> "PartialResult":
        """Single-query view (no copy) for per-request reduction."""
        return PartialResult(self.out[i : i + 1], self.max_score[i : i + 1], self.exp_sum[i : i + 1])


def _run_pac_kernel(q, k, v, visible, scale):
    if active_backend() == "compiled":
        n_q, h_q, d = q.shape
        out = np.empty((n_q, h_q, d), dtype=q.dtype)
        m = np.empty((n_q, h_q), dtype=q.dtype)
        s = np.empty((n_q, h_q), dtype=q.dtype)
        _kernels.pac_kernel(
            np.ascontiguousarray(q),
            np.ascontiguousarray(k),
            np.ascontiguousarray(v),
            np.ascontiguousarray(visible, dtype=np.int64),
            scale,
            out,
            m,
            s,
        )
        return out, m, s
    return _kernels_py.pac_kernel(q, k, v, visible, scale)


def pac(queries: np.ndarray, keys: np.ndarray, values: np.ndarray,
        visible=None) -> PartialResult:
    """Partial attention of queries [n_q, h_q, d] against one KV chunk
    [n, h_kv, d]; scores are q·k/sqrt(d) over token j < visible[i].
    Query head h reads kv head floor(h/g) with g = h_q/h_kv."""
    q = np.asarray(queries)
    k = np.asarray(keys)
    v = np.asarray(values)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3 or k.shape != v.shape:
        raise DimensionMismatch(
            f"expected q [n_q,h_q,d], k/v [n,h_kv,d]; got {q.shape}, {k.shape}, {v.shape}"
        )
    if q.shape[2] != k.shape[2]:
        raise DimensionMismatch(f"head dim mismatch: q d={q.shape[2]}, k d={k.shape[2]}")
    if k.shape[0] < 1 or q.shape[0] < 1:
        raise DimensionMismatch("need n >= 1 tokens and n_q >= 1 queries")
    if k.shape[1] < 1 or q.shape[1] % k.shape[1] != 0:
        raise DimensionMismatch(f"h_q={q.shape[1]} not a multiple of h_kv={k.shape[1]}")

    n = k.shape[0]
    if visible is None:
        vis = np.full(q.shape[0], n, dtype=np.int64)
    else:
        vis = np.asarray(visible, dtype=np.int64).reshape(q.shape[0])
        if (vis < 1).any() or (vis > n).any():
            raise EmptyVisibleSet(f"visible counts must lie in 1..{n}, got {vis.tolist()}")

    scale = 1.0 / math.sqrt(q.shape[2])
    out, m, s = _run_pac_kernel(q, k, v, vis, scale)
    return PartialResult(out, m, s)


def empty_partial(n_q: int, h_q: int, d: int, dtype=np.float64) -> PartialResult:
    """Neutral element of por: no tokens seen yet."""
    if n_q < 1 or h_q < 1 or d < 1:
        raise DimensionMismatch(f"dimensions must be positive, got ({n_q}, {h_q}, {d})")
    return PartialResult(
        out=np.zeros((n_q, h_q, d), dtype=dtype),
        max_score=np.full((n_q, h_q), -np.inf, dtype=dtype),
        exp_sum=np.zeros((n_q, h_q), dtype=dtype),
    )


def por(a: PartialResult, b: PartialResult) -> PartialResult:
    """Merge two partials: m = max, exp-sums rebased into the new frame,
    outputs combined with weights s·e^(m_side − m). An entirely empty
    side returns the other verbatim, which keeps the identity law exact;
    per-entry emptiness (from visibility masking) merges elementwise."""
    if a.out.shape != b.out.shape or a.max_score.shape != b.max_score.shape:
        raise ShapeMismatch(f"partial shapes differ: {a.out.shape} vs {b.out.shape}")
    if not b.exp_sum.any():
        return a.copy()
    if not a.exp_sum.any():
        return b.copy()

    m = np.maximum(a.max_score, b.max_score)
    with np.errstate(invalid="ignore"):
        wa = np.where(a.exp_sum > 0, a.exp_sum * np.exp(a.max_score - m), 0.0)
        wb = np.where(b.exp_sum > 0, b.exp_sum * np.exp(b.max_score - m), 0.0)
    s = wa + wb
    safe = np.where(s > 0, s, 1.0)
    num = a.out * wa[:, :, None] + b.out * wb[:, :, None]
    out = np.where(s[:, :, None] > 0, num / safe[:, :, None], 0.0)
    m = np.where(s > 0, m, -np.inf)
    dt = a.out.dtype
    return PartialResult(out.astype(dt, copy=False), m.astype(dt, copy=False), s.astype(dt, copy=False))


def finalize(p: PartialResult) -> np.ndarray:
    """Extract the output matrix; the normalized-partial convention means
    out is already final whenever every entry has seen a token."""
    if (p.exp_sum <= 0).any():
        raise NoVisibleTokens("some (query, head) saw no visible tokens")
    return p.out.copy()


def naive_attention(queries: QueryBatch, forest: Forest) -> np.ndarray:
    """Reference oracle: per request, materialize the visible prefix K/V
    by walking its path and run one shift-stabilized softmax."""
    bs, h_q, d = queries.bs, queries.h_q, queries.d
    g = queries.group_size
    kvmap = np.arange(h_q) // g
    out = np.zeros((bs, h_q, d), dtype=queries.dtype)
    scale = 1.0 / math.sqrt(d)
    for r in range(bs):
        ks, vs = [], []
        for nid in prefix_path(forest, r):
            node = forest.node(nid)
            cnt = forest.visible_count(nid, r)
            ks.append(node.keys[:cnt])
            vs.append(node.values[:cnt])
        k = np.concatenate(ks, axis=0)[:, kvmap, :]   # [L, h_q, d]
        v = np.concatenate(vs, axis=0)[:, kvmap, :]
        if k.shape[0] < 1:
            raise NoVisibleTokens(f"request {r} has no visible tokens")
        scores = np.einsum("hd,lhd->hl", queries.queries[r], k) * scale
        m = scores.max(axis=1, keepdims=True)
        w = np.exp(scores - m)
        out[r] = np.einsum("hl,lhd->hd", w, v) / w.sum(axis=1)[:, None]
    return out
