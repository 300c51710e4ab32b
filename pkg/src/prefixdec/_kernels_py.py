"""Pure-numpy fallback for the split-attention kernel.

Streams over the token axis in fixed ascending chunks, carrying the
running (max, exp-sum, normalized accumulator) per (query, head) —
bounded memory for long contexts and deterministic summation order.
The compiled kernel walks tokens one by one; this one vectorizes inside
a chunk, which changes results only at rounding level.
"""
from __future__ import annotations

import numpy as np

CHUNK = 2048


def pac_kernel(q: np.ndarray, k: np.ndarray, v: np.ndarray,
               visible: np.ndarray, scale: float):
    """Split attention over one KV chunk.

    q: [n_q, h_q, d]; k, v: [n, h_kv, d]; visible: [n_q] int64, each in
    1..n. Returns (out [n_q,h_q,d], max_score [n_q,h_q], exp_sum [n_q,h_q])
    with out already normalized by exp_sum.
    """
    n_q, h_q, d = q.shape
    n, h_kv, _ = k.shape
    g = h_q // h_kv
    kvmap = np.arange(h_q) // g
    dtype = q.dtype

    m = np.full((n_q, h_q), -np.inf, dtype=dtype)
    s = np.zeros((n_q, h_q), dtype=dtype)
    acc = np.zeros((n_q, h_q, d), dtype=dtype)

    limit = int(visible.max())
    for lo in range(0, limit, CHUNK):
        hi = min(lo + CHUNK, limit)
        kc = k[lo:hi][:, kvmap, :]                       # [c, h_q, d]
        vc = v[lo:hi][:, kvmap, :]
        scores = np.einsum("qhd,chd->qhc", q, kc) * dtype.type(scale)
        masked = np.arange(lo, hi)[None, :] >= visible[:, None]   # [n_q, c]
        scores = np.where(masked[:, None, :], dtype.type(-np.inf), scores)
        cm = np.maximum(m, scores.max(axis=2))
        # first chunk always holds >= 1 visible token, so cm is finite
        # from here on and the rescale factor exp(m - cm) is well defined
        w = np.exp(scores - cm[:, :, None])
        r = np.exp(m - cm)
        s = s * r + w.sum(axis=2)
        acc = acc * r[:, :, None] + np.einsum("qhc,chd->qhd", w, vc)
        m = cm

    out = acc / s[:, :, None]
    return out, m, s
