"""Shared fixtures: the bundled cost profile and a seeded random-forest
factory used by the oracle-equivalence and acceptance suites."""
from __future__ import annotations

import math

import numpy as np
import pytest

from prefixdec.cost_model import load_default_profile
from prefixdec.forest import QueryBatch, build_forest
from prefixdec.scheduler import Task, division_caps, lower_bound


def rel_err(out: np.ndarray, ref: np.ndarray) -> float:
    """Max-norm relative error, guarded for all-zero references."""
    scale = max(float(np.max(np.abs(ref))), 1e-300)
    return float(np.max(np.abs(np.asarray(out) - np.asarray(ref))) / scale)


def random_forest(seed: int, *, max_depth: int = 6, max_arity: int = 5,
                  max_len: int = 64, max_bs: int = 16, with_masks: bool = False):
    """Random forest within the oracle-equivalence envelope: depth <= 6,
    arity <= 5, node len <= 64, bs <= 16, d in {4,16,64}, g in {1,2,4}.
    Nodes off every request path (empty query sets) are kept to exercise
    the skip logic; with_masks sprinkles per-request visible_len cuts."""
    rng = np.random.default_rng(seed)
    d = int(rng.choice([4, 16, 64]))
    g = int(rng.choice([1, 2, 4]))
    h_kv = int(rng.integers(1, 3))
    h_q = h_kv * g
    scale = 1.0 / math.sqrt(d)
    depth = int(rng.integers(1, max_depth + 1))

    specs = []
    parents = [None]  # index by node id; 0 is the virtual root

    def add_node(parent: int) -> int:
        n = int(rng.integers(1, max_len + 1))
        k = rng.standard_normal((n, h_kv, d)) * scale
        v = rng.standard_normal((n, h_kv, d)) * scale
        specs.append((parent, k, v))
        parents.append(parent)
        return len(specs)

    frontier = [add_node(0)]
    for _ in range(depth - 1):
        nxt = []
        for nid in frontier:
            for _ in range(int(rng.integers(0, max_arity + 1))):
                nxt.append(add_node(nid))
        if not nxt:
            break
        frontier = nxt

    have_children = set(p for p in parents[1:])
    leaves = [nid for nid in range(1, len(specs) + 1) if nid not in have_children]
    bs = int(rng.integers(1, min(max_bs, len(leaves)) + 1))
    chosen = sorted(rng.choice(len(leaves), size=bs, replace=False).tolist())

    paths = []
    for idx in chosen:
        path = []
        cur = leaves[idx]
        while cur != 0:
            path.append(cur)
            cur = parents[cur]
        paths.append(tuple(reversed(path)))

    if with_masks:
        masks: dict[int, dict[int, int]] = {}
        for rid, path in enumerate(paths):
            for nid in path:
                node_len = specs[nid - 1][1].shape[0]
                if node_len > 1 and rng.random() < 0.25:
                    masks.setdefault(nid, {})[rid] = int(rng.integers(1, node_len + 1))
        specs = [
            (p, k, v, masks.get(nid + 1)) for nid, (p, k, v) in enumerate(specs)
        ]

    queries = QueryBatch(rng.standard_normal((bs, h_q, d)) * scale, h_kv)
    return build_forest(specs, paths, queries), queries


def random_micro_instance(seed, table):
    """Small scheduling instance plus its bound and caps. Callers that
    need the exact-oracle envelope should skip instances whose caps
    exceed 8."""
    gen = np.random.default_rng(seed)
    t = int(gen.integers(1, 5))
    m = int(gen.integers(1, 5))
    tasks = [
        Task(j + 1, int(gen.integers(1, 9)), int(gen.integers(1, 20001)))
        for j in range(t)
    ]
    cost_l = lower_bound(tasks, table, m)
    caps = division_caps(tasks, table, cost_l)
    return tasks, m, cost_l, caps


@pytest.fixture(scope="session")
def table():
    return load_default_profile()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
