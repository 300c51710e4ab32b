"""Tree-of-tensors KV cache model.

Requests that share a prompt prefix share the tree nodes that hold it.
Node 0 is a virtual root carrying no tokens; every real node stores the
K/V rows of its token span plus the ordered set of request ids whose
prefix runs through it. The forest is immutable after construction and
safe for concurrent reads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CycleDetected,
    DanglingParent,
    DimensionMismatch,
    PathNotPrefixChain,
    UnknownNode,
    UnknownRequest,
)

ROOT = 0


@dataclass(frozen=True)
class QueryBatch:
    """One decode-step query row per request, [bs, h_q, d], plus the KV
    head count needed to resolve grouped-query head mapping."""

    queries: np.ndarray
    h_kv: int

    def __post_init__(self):
        q = np.asarray(self.queries)
        if q.ndim != 3:
            raise DimensionMismatch(f"queries must be [bs, h_q, d], got shape {q.shape}")
        if self.h_kv < 1 or q.shape[1] % self.h_kv != 0:
            raise DimensionMismatch(
                f"h_q={q.shape[1]} must be a positive multiple of h_kv={self.h_kv}"
            )
        object.__setattr__(self, "queries", q)

    @property
    def bs(self) -> int:
        return self.queries.shape[0]

    @property
    def h_q(self) -> int:
        return self.queries.shape[1]

    @property
    def d(self) -> int:
        return self.queries.shape[2]

    @property
    def group_size(self) -> int:
        return self.h_q // self.h_kv

    @property
    def dtype(self):
        return self.queries.dtype


@dataclass
class KvNode:
    """One tree node: a contiguous run of tokens with K/V tensors
    [len, h_kv, d] and the ascending ids of the requests sharing it.

    visible_len, when set for a request, truncates how many leading
    tokens of this node that request may attend to (1..len)."""

    id: int
    parent: int
    keys: np.ndarray
    values: np.ndarray
    query_set: tuple[int, ...] = ()
    visible_len: dict[int, int] | None = None

    @property
    def len(self) -> int:
        return self.keys.shape[0]


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    node: int | None = None
    request: int | None = None


@dataclass
class Forest:
    nodes: list[KvNode]
    children: list[list[int]]
    paths: list[tuple[int, ...]]
    h_kv: int
    d: int
    # global token index of each node's first token under preorder flattening
    token_offset: list[int] = field(default_factory=list)

    @property
    def bs(self) -> int:
        return len(self.paths)

    @property
    def total_tokens(self) -> int:
        return sum(n.len for n in self.nodes)

    @property
    def dtype(self):
        for n in self.nodes[1:]:
            return n.keys.dtype
        return np.dtype(np.float64)

    def node(self, node_id: int) -> KvNode:
        if not 0 <= node_id < len(self.nodes):
            raise UnknownNode(f"no node {node_id}")
        return self.nodes[node_id]

    def non_root_ids(self) -> list[int]:
        return [n.id for n in self.nodes[1:]]

    def visible_count(self, node_id: int, request: int) -> int:
        node = self.node(node_id)
        if node.visible_len and request in node.visible_len:
            return node.visible_len[request]
        return node.len

    def request_len(self, request: int) -> int:
        """Visible context length of one request along its prefix path."""
        path = prefix_path(self, request)
        return sum(self.visible_count(n, request) for n in path)

    def flatten_index(self, node_id: int, local: int) -> int:
        """Global 1-based token index of token `local` of a node; nodes
        occupy contiguous ranges in preorder."""
        node = self.node(node_id)
        if node_id == ROOT or not 0 <= local < node.len:
            raise UnknownNode(f"token {local} not in node {node_id}")
        return self.token_offset[node_id] + local + 1


def _preorder_offsets(nodes: list[KvNode], children: list[list[int]]) -> list[int]:
    offsets = [0] * len(nodes)
    pos = 0
    stack = [ROOT]
    while stack:
        nid = stack.pop()
        offsets[nid] = pos
        pos += nodes[nid].len
        stack.extend(reversed(children[nid]))
    return offsets


def build_forest(node_specs, request_paths, queries: QueryBatch | None = None) -> Forest:
    """Assemble a forest from per-node (parent, keys, values) specs and
    per-request root-to-leaf node paths.

    Node ids are assigned 1..N in spec order; parents must already be
    declared (the virtual root 0 is implicit). A spec tuple may carry a
    fourth element, a {request: visible_len} dict.
    """
    if not node_specs:
        raise DimensionMismatch("forest needs at least one node")

    first_k = np.asarray(node_specs[0][1])
    if first_k.ndim != 3:
        raise DimensionMismatch(f"keys must be [len, h_kv, d], got shape {first_k.shape}")
    h_kv, d = first_k.shape[1], first_k.shape[2]
    dtype = first_k.dtype

    root = KvNode(
        id=ROOT,
        parent=ROOT,
        keys=np.zeros((0, h_kv, d), dtype=dtype),
        values=np.zeros((0, h_kv, d), dtype=dtype),
    )
    nodes = [root]
    children: list[list[int]] = [[]]

    for spec in node_specs:
        parent, keys, values = spec[0], np.asarray(spec[1]), np.asarray(spec[2])
        visible = spec[3] if len(spec) > 3 else None
        nid = len(nodes)
        if parent == nid:
            raise CycleDetected(f"node {nid} is its own parent")
        if not 0 <= parent < nid:
            raise DanglingParent(f"node {nid} references undeclared parent {parent}")
        if keys.shape != values.shape or keys.ndim != 3:
            raise DimensionMismatch(
                f"node {nid}: keys {keys.shape} and values {values.shape} must be equal 3-d shapes"
            )
        if keys.shape[1:] != (h_kv, d) or keys.dtype != dtype:
            raise DimensionMismatch(
                f"node {nid}: expected [*, {h_kv}, {d}] {dtype}, got {keys.shape} {keys.dtype}"
            )
        if keys.shape[0] < 1:
            raise DimensionMismatch(f"node {nid} has no tokens")
        nodes.append(KvNode(nid, parent, keys, values, visible_len=visible))
        children.append([])
        children[parent].append(nid)

    if queries is not None:
        if queries.bs != len(request_paths):
            raise DimensionMismatch(
                f"{queries.bs} query rows for {len(request_paths)} request paths"
            )
        if queries.d != d or queries.h_kv != h_kv:
            raise DimensionMismatch(
                f"queries d={queries.d} h_kv={queries.h_kv} vs forest d={d} h_kv={h_kv}"
            )

    paths: list[tuple[int, ...]] = []
    per_node_requests: list[set[int]] = [set() for _ in nodes]
    for rid, path in enumerate(request_paths):
        path = tuple(path)
        if not path:
            raise PathNotPrefixChain(f"request {rid} has an empty path")
        prev = ROOT
        for nid in path:
            if not 1 <= nid < len(nodes):
                raise PathNotPrefixChain(f"request {rid} path references missing node {nid}")
            if nodes[nid].parent != prev:
                raise PathNotPrefixChain(
                    f"request {rid}: {prev}->{nid} is not a parent->child edge"
                )
            per_node_requests[nid].add(rid)
            prev = nid
        paths.append(path)

    for node in nodes[1:]:
        node.query_set = tuple(sorted(per_node_requests[node.id]))
        if node.visible_len:
            for rid, count in node.visible_len.items():
                if rid not in per_node_requests[node.id]:
                    raise PathNotPrefixChain(
                        f"visible_len on node {node.id} names request {rid} not routed through it"
                    )
                if not 1 <= count <= node.len:
                    raise DimensionMismatch(
                        f"node {node.id}: visible_len[{rid}]={count} outside 1..{node.len}"
                    )

    forest = Forest(nodes=nodes, children=children, paths=paths, h_kv=h_kv, d=d)
    forest.token_offset = _preorder_offsets(nodes, children)
    return forest


def prefix_path(forest: Forest, request: int) -> tuple[int, ...]:
    if not 0 <= request < forest.bs:
        raise UnknownRequest(f"no request {request}")
    return forest.paths[request]


def node_query_set(forest: Forest, node: int) -> tuple[int, ...]:
    if node == ROOT:
        raise UnknownNode("virtual root has no query set")
    return forest.node(node).query_set


def validate(forest: Forest) -> list[Violation]:
    """Check every structural invariant; returns violations instead of
    raising so callers can report them all at once."""
    out: list[Violation] = []
    nodes = forest.nodes

    for i, node in enumerate(nodes):
        if node.id != i:
            out.append(Violation("BadNodeIndex", f"nodes[{i}] has id {node.id}", node=i))

    if nodes and nodes[ROOT].len != 0:
        out.append(Violation("NonEmptyRoot", "virtual root must hold no tokens", node=ROOT))
    for node in nodes[1:]:
        if node.len < 1:
            out.append(Violation("EmptyNonRootNode", f"node {node.id} has len 0", node=node.id))
        if node.keys.shape != node.values.shape:
            out.append(Violation("DimensionMismatch", f"node {node.id} K/V shapes differ", node=node.id))
        elif node.keys.shape[1:] != (forest.h_kv, forest.d):
            out.append(
                Violation(
                    "DimensionMismatch",
                    f"node {node.id} is {node.keys.shape[1:]}, forest is ({forest.h_kv}, {forest.d})",
                    node=node.id,
                )
            )

    # parent links must reach the root without repeating a node
    for node in nodes[1:]:
        seen = {node.id}
        cur = node.parent
        ok = True
        while cur != ROOT:
            if cur in seen or not 0 <= cur < len(nodes):
                out.append(Violation("CycleDetected", f"parent chain of node {node.id} never reaches root", node=node.id))
                ok = False
                break
            seen.add(cur)
            cur = nodes[cur].parent
        if ok and node.parent >= len(nodes):
            out.append(Violation("DanglingParent", f"node {node.id} parent {node.parent} missing", node=node.id))

    adjacency = {(nodes[c].parent, c) for kids in forest.children for c in kids}
    declared = {(n.parent, n.id) for n in nodes[1:]}
    if adjacency != declared:
        out.append(Violation("AdjacencyMismatch", "children lists disagree with parent fields"))

    for rid, path in enumerate(forest.paths):
        prev = ROOT
        for nid in path:
            if not 1 <= nid < len(nodes) or nodes[nid].parent != prev:
                out.append(Violation("PathNotPrefixChain", f"request {rid} path {path} breaks at {nid}", request=rid))
                break
            prev = nid

    # bidirectional index consistency: r in I_n  <=>  n in path(r)
    for node in nodes[1:]:
        if list(node.query_set) != sorted(set(node.query_set)):
            out.append(Violation("QuerySetUnsorted", f"node {node.id} query_set not ascending", node=node.id))
        for rid in node.query_set:
            if rid >= forest.bs or node.id not in forest.paths[rid]:
                out.append(
                    Violation(
                        "QuerySetPathMismatch",
                        f"node {node.id} lists request {rid} whose path misses it",
                        node=node.id,
                        request=rid,
                    )
                )
    for rid, path in enumerate(forest.paths):
        for nid in path:
            if 0 <= nid < len(nodes) and rid not in nodes[nid].query_set:
                out.append(
                    Violation(
                        "QuerySetPathMismatch",
                        f"request {rid} runs through node {nid} but is not in its query_set",
                        node=nid,
                        request=rid,
                    )
                )

    for node in nodes[1:]:
        if node.visible_len:
            for rid, count in node.visible_len.items():
                if not 1 <= count <= node.len:
                    out.append(
                        Violation(
                            "VisibleLenOutOfRange",
                            f"node {node.id} visible_len[{rid}]={count} outside 1..{node.len}",
                            node=node.id,
                            request=rid,
                        )
                    )

    # flattening must be a contiguous preorder bijection onto 1..L_tot
    if forest.token_offset != _preorder_offsets(nodes, forest.children):
        out.append(Violation("FlattenMismatch", "token offsets are not the preorder prefix sums"))

    return out


# ---- serialization ----


def unshare(forest: Forest) -> Forest:
    """Collapse each request's visible prefix into a private single-node
    chain: the no-sharing version of the same batch."""
    specs = []
    paths = []
    for rid in range(forest.bs):
        ks, vs = [], []
        for nid in prefix_path(forest, rid):
            node = forest.node(nid)
            vis = forest.visible_count(nid, rid)
            ks.append(node.keys[:vis])
            vs.append(node.values[:vis])
        specs.append((ROOT, np.concatenate(ks, axis=0), np.concatenate(vs, axis=0)))
        paths.append((rid + 1,))
    return build_forest(specs, paths)


def dump_forest(forest: Forest, path, tensors: str = "sidecar") -> None:
    """Write the forest as a JSON document; K/V matrices go either inline
    (nested row-major lists) or into a .npz sidecar next to the file."""
    path = Path(path)
    doc = {
        "dims": {"h_kv": forest.h_kv, "d": forest.d, "dtype": str(forest.dtype)},
        "nodes": [
            {
                "id": n.id,
                "parent": n.parent,
                "len": n.len,
                **({"visible_len": {str(k): v for k, v in n.visible_len.items()}} if n.visible_len else {}),
            }
            for n in forest.nodes[1:]
        ],
        "paths": [list(p) for p in forest.paths],
    }
    if tensors == "inline":
        doc["tensors"] = {
            str(n.id): {"keys": n.keys.tolist(), "values": n.values.tolist()}
            for n in forest.nodes[1:]
        }
    elif tensors == "sidecar":
        sidecar = path.with_suffix(".npz")
        arrays = {}
        for n in forest.nodes[1:]:
            arrays[f"k{n.id}"] = n.keys
            arrays[f"v{n.id}"] = n.values
        np.savez(sidecar, **arrays)
        doc["tensor_file"] = sidecar.name
    else:
        raise ValueError(f"tensors must be 'inline' or 'sidecar', got {tensors!r}")
    path.write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_forest(path) -> Forest:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    dtype = np.dtype(doc["dims"]["dtype"])
    npz = None
    if "tensor_file" in doc:
        npz = np.load(path.parent / doc["tensor_file"])
    specs = []
    for entry in sorted(doc["nodes"], key=lambda e: e["id"]):
        nid = entry["id"]
        if npz is not None:
            keys, values = npz[f"k{nid}"], npz[f"v{nid}"]
        else:
            tens = doc["tensors"][str(nid)]
            keys = np.asarray(tens["keys"], dtype=dtype)
            values = np.asarray(tens["values"], dtype=dtype)
        visible = entry.get("visible_len")
        if visible is not None:
            visible = {int(k): v for k, v in visible.items()}
        specs.append((entry["parent"], keys.astype(dtype, copy=False), values.astype(dtype, copy=False), visible))
    return build_forest(specs, [tuple(p) for p in doc["paths"]])
