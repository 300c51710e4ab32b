"""Deterministic synthetic workload generators.

Four tree families cover the benchmark axes: a two-level tree with one
prefix shared by the whole batch, complete a-ary trees, a maximally
imbalanced degenerate tree, and a two-level tree parameterized by the
shared-token ratio. Tensor entries are seeded standard normal scaled by
1/sqrt(d) so pre-softmax scores stay O(1); generation is a pure function
of (spec, seed).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RemainderInfeasible, SpecError
from .forest import Forest, QueryBatch, build_forest

FAMILIES = ("two_level", "full_tree", "degenerate", "shared_ratio")

FAMILY_PARAMS = {
    "two_level": ("shared_len", "leaf_len", "batch"),
    "full_tree": ("arity", "depth", "node_len"),
    "degenerate": ("depth", "node_len"),
    "shared_ratio": ("total_len", "ratio", "batch"),
}


@dataclass(frozen=True)
class Dims:
    h_q: int = 1
    h_kv: int = 1
    d: int = 16

    def __post_init__(self):
        if min(self.h_q, self.h_kv, self.d) < 1 or self.h_q % self.h_kv != 0:
            raise SpecError(f"bad dims: h_q={self.h_q} h_kv={self.h_kv} d={self.d}")

    def to_dict(self) -> dict:
        return {"h_q": self.h_q, "h_kv": self.h_kv, "d": self.d}


@dataclass(frozen=True)
class WorkloadSpec:
    family: str
    params: dict
    seed: int
    dims: Dims

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": dict(self.params),
            "seed": self.seed,
            "dims": self.dims.to_dict(),
        }

    def with_params(self, **updates) -> "WorkloadSpec":
        return WorkloadSpec(self.family, {**self.params, **updates}, self.seed, self.dims)

    def with_seed(self, seed: int) -> "WorkloadSpec":
        return WorkloadSpec(self.family, dict(self.params), seed, self.dims)


def spec_from_dict(doc: dict) -> WorkloadSpec:
    """Parse and fully validate a workload spec document; every problem
    raises SpecError (the CLI maps these to the usage exit code)."""
    if not isinstance(doc, dict):
        raise SpecError(f"workload spec must be an object, got {type(doc).__name__}")
    family = doc.get("family")
    if family not in FAMILIES:
        raise SpecError(f"family must be one of {FAMILIES}, got {family!r}")
    params = doc.get("params")
    if not isinstance(params, dict):
        raise SpecError("params must be an object")
    expected = FAMILY_PARAMS[family]
    if set(params) != set(expected):
        raise SpecError(f"{family} needs params {expected}, got {tuple(sorted(params))}")
    seed = doc.get("seed")
    if not isinstance(seed, int) or seed < 0:
        raise SpecError(f"seed must be a non-negative integer, got {seed!r}")
    dims_doc = doc.get("dims")
    if not isinstance(dims_doc, dict) or set(dims_doc) != {"h_q", "h_kv", "d"}:
        raise SpecError("dims must be an object with h_q, h_kv, d")

    for key, value in params.items():
        if key == "ratio":
            if not isinstance(value, (int, float)) or not 0 < value <= 1:
                raise SpecError(f"ratio must lie in (0, 1], got {value!r}")
        else:
            if not isinstance(value, int) or value < 1:
                raise SpecError(f"param {key} must be a positive integer, got {value!r}")
    if family == "full_tree" and not 2 <= params["arity"] <= 5:
        raise SpecError(f"arity must lie in 2..5, got {params['arity']}")
    if family == "degenerate" and params["depth"] < 2:
        raise SpecError(f"degenerate depth must be >= 2, got {params['depth']}")
    for key, value in dims_doc.items():
        if not isinstance(value, int) or value < 1:
            raise SpecError(f"dims.{key} must be a positive integer, got {value!r}")
    return WorkloadSpec(family, dict(params), seed, Dims(**dims_doc))


class _TensorSource:
    """Draw order is fixed (per node: keys then values; queries last) so
    equal seeds give bit-identical workloads."""

    def __init__(self, dims: Dims, seed: int):
        self.rng = np.random.default_rng(seed)
        self.dims = dims
        self.scale = 1.0 / math.sqrt(dims.d)

    def kv(self, n: int):
        shape = (n, self.dims.h_kv, self.dims.d)
        return (
            self.rng.standard_normal(shape) * self.scale,
            self.rng.standard_normal(shape) * self.scale,
        )

    def queries(self, batch: int) -> QueryBatch:
        q = self.rng.standard_normal((batch, self.dims.h_q, self.dims.d)) * self.scale
        return QueryBatch(q, self.dims.h_kv)


def gen_two_level(shared_len: int, leaf_len: int, batch: int,
                  dims: Dims = Dims(), seed: int = 0):
    """One root prefix shared by the whole batch, one private leaf per
    request."""
    if min(shared_len, leaf_len, batch) < 1:
        raise ValueError("shared_len, leaf_len, batch must all be >= 1")
    src = _TensorSource(dims, seed)
    specs = [(0, *src.kv(shared_len))]
    paths = []
    for r in range(batch):
        specs.append((1, *src.kv(leaf_len)))
        paths.append((1, 2 + r))
    queries = src.queries(batch)
    return build_forest(specs, paths, queries), queries


def gen_full_tree(arity: int, depth: int, node_len: int,
                  dims: Dims = Dims(), seed: int = 0):
    """Complete arity-ary tree of `depth` levels, every node node_len
    tokens, one request per leaf: (arity^depth - 1)/(arity - 1) nodes,
    arity^(depth-1) requests."""
    if not 2 <= arity <= 5:
        raise ValueError(f"arity must lie in 2..5, got {arity}")
    if depth < 1 or node_len < 1:
        raise ValueError("depth and node_len must be >= 1")
    src = _TensorSource(dims, seed)
    # build level by level; the root level has a single node under the
    # virtual root, deeper levels fan out by arity
    specs = []
    parents = {}
    specs.append((0, *src.kv(node_len)))
    parents[1] = 0
    current = [1]
    nid = 2
    for _ in range(depth - 1):
        nxt = []
        for p in current:
            for _ in range(arity):
                specs.append((p, *src.kv(node_len)))
                parents[nid] = p
                nxt.append(nid)
                nid += 1
        current = nxt
    leaves = current
    paths = []
    for leaf in leaves:
        path = []
        cur = leaf
        while cur != 0:
            path.append(cur)
            cur = parents[cur]
        paths.append(tuple(reversed(path)))
    queries = src.queries(len(leaves))
    return build_forest(specs, paths, queries), queries


def gen_degenerate(depth: int, node_len: int, dims: Dims = Dims(), seed: int = 0):
    """Maximally imbalanced binary tree: a spine of depth-1 nodes where
    each spine node hangs one leaf (the last hangs two). Request paths
    range from length 2 to `depth`; 2*depth - 1 nodes, depth requests."""
    if depth < 2 or node_len < 1:
        raise ValueError("need depth >= 2 and node_len >= 1")
    src = _TensorSource(dims, seed)
    specs = []
    # spine nodes 1..depth-1, each the child of the previous
    for i in range(depth - 1):
        specs.append((i, *src.kv(node_len)))
    paths = []
    nid = depth  # leaves take ids depth..2*depth-2
    for i in range(1, depth - 1):
        specs.append((i, *src.kv(node_len)))
        paths.append(tuple(range(1, i + 1)) + (nid,))
        nid += 1
    for _ in range(2):
        specs.append((depth - 1, *src.kv(node_len)))
        paths.append(tuple(range(1, depth)) + (nid,))
        nid += 1
    queries = src.queries(depth)
    return build_forest(specs, paths, queries), queries


def gen_shared_ratio(total_len: int, ratio: float, batch: int,
                     dims: Dims = Dims(), seed: int = 0):
    """Two-level tree sized by the shared-token fraction: the root holds
    floor(total_len * ratio) tokens, leaves split the remainder evenly
    (+-1). ratio = 1 elides the leaves entirely."""
    if total_len < 1 or batch < 1 or not 0 < ratio <= 1:
        raise ValueError("need total_len, batch >= 1 and 0 < ratio <= 1")
    shared = math.floor(total_len * ratio + 1e-9)  # absorb fp dust at exact fractions
    if shared < 1:
        raise ValueError(f"floor(total_len * ratio) = {shared} leaves no shared tokens")
    rest = total_len - shared
    src = _TensorSource(dims, seed)
    specs = [(0, *src.kv(shared))]
    if rest == 0:
        paths = [(1,)] * batch
    else:
        if rest < batch:
            raise RemainderInfeasible(
                f"{rest} non-shared tokens cannot give {batch} leaves >= 1 token each"
            )
        base, extra = divmod(rest, batch)
        paths = []
        for r in range(batch):
            leaf_len = base + (1 if r < extra else 0)
            specs.append((1, *src.kv(leaf_len)))
            paths.append((1, 2 + r))
    queries = src.queries(batch)
    return build_forest(specs, paths, queries), queries


def generate(spec: WorkloadSpec):
    """Dispatch a validated spec to its family generator."""
    gens = {
        "two_level": gen_two_level,
        "full_tree": gen_full_tree,
        "degenerate": gen_degenerate,
        "shared_ratio": gen_shared_ratio,
    }
    return gens[spec.family](**spec.params, dims=spec.dims, seed=spec.seed)


def cast_workload(forest: Forest, queries: QueryBatch, dtype):
    """Rebuild a generated workload at another element type (the 32-bit
    stress mode casts after generation so draws stay identical)."""
    dtype = np.dtype(dtype)
    if forest.dtype == dtype and queries.dtype == dtype:
        return forest, queries
    specs = [
        (n.parent, n.keys.astype(dtype), n.values.astype(dtype), n.visible_len)
        for n in forest.nodes[1:]
    ]
    queries = QueryBatch(queries.queries.astype(dtype), queries.h_kv)
    return build_forest(specs, list(forest.paths), queries), queries
