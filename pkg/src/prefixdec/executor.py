"""Simulated multi-block execution.

Runs a division plan in two phases: a parallel split-attention pass over
all plan subtasks, one global barrier, then a per-request balanced
binary reduction of the partial results. Real numerics execute on a
thread pool; block timing is simulated from the plan's subtask costs so
traces are reproducible regardless of actual wall clock or worker count.

Determinism contract: with deterministic=true, outputs and traces are
bit-identical across runs and across worker counts, because subtask
math, the merge schedule, and trace assembly order are all fixed.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import PartialResult, finalize, pac, por
from .errors import (
    DimensionMismatch,
    IncompletePartials,
    NoVisibleTokens,
    PlanForestMismatch,
)
from .forest import Forest, QueryBatch, prefix_path
from .scheduler import DivisionPlan

POR_TICK_MS = 0.001  # simulated duration of one reduction round


@dataclass
class BlockPool:
    """Simulates m GPU thread blocks with a host-side thread pool."""

    worker_count: int = 1
    deterministic: bool = True

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")


class EventTrace:
    """Ordered simulated-time event log (JSON-lines serializable).

    Every event carries at least {phase, worker, subtask, t_start_sim,
    t_end_sim}; pac events add node/slice/queries and por events add
    query/round/inputs so reduction ordering is checkable."""

    def __init__(self):
        self.events: list[dict] = []

    def add(self, **event) -> None:
        self.events.append(event)

    def extend(self, events) -> None:
        self.events.extend(events)

    def by_phase(self, phase: str) -> list[dict]:
        return [e for e in self.events if e["phase"] == phase]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def dump(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


@dataclass
class PartialTree:
    """Write-once results of the split phase, keyed by (node, slice).

    rows records which requests participate in each partial (ascending,
    matching the partial's row order); slice_count records how many
    slices each node was divided into."""

    entries: dict[tuple[int, int], PartialResult] = field(default_factory=dict)
    rows: dict[tuple[int, int], tuple[int, ...]] = field(default_factory=dict)
    slice_count: dict[int, int] = field(default_factory=dict)


def merge_schedule(path_len: int, slices_per_node) -> list[list[tuple[int, int]]]:
    """Balanced binary combination schedule over one request's partials.

    Partials are numbered 0..P-1 in path-then-slice order; each round
    pairs adjacent survivors (labels keep the left member), giving
    exactly ceil(log2 P) rounds. Returns a list of rounds, each a list
    of (left_label, right_label) merges."""
    if path_len < 1:
        raise ValueError("path_len must be >= 1")
    slices_per_node = list(slices_per_node)
    if len(slices_per_node) != path_len:
        raise ValueError(f"expected {path_len} per-node slice counts, got {len(slices_per_node)}")
    total = sum(slices_per_node)
    labels = list(range(total))
    rounds: list[list[tuple[int, int]]] = []
    while len(labels) > 1:
        pairs = []
        survivors = []
        for i in range(0, len(labels) - 1, 2):
            pairs.append((labels[i], labels[i + 1]))
            survivors.append(labels[i])
        if len(labels) % 2:
            survivors.append(labels[-1])
        rounds.append(pairs)
        labels = survivors
    return rounds


def sequential_schedule(total: int) -> list[list[tuple[int, int]]]:
    """Left fold: P-1 single-merge rounds; the parallel-reduction
    ablation baseline."""
    return [[(0, i)] for i in range(1, total)]


def _plan_slices(forest: Forest, plan: DivisionPlan) -> dict[int, list[tuple[int, int]]]:
    """Validate plan-forest agreement and return per-node slice bounds."""
    per_node: dict[int, list[tuple[int, int]]] = {}
    for st in plan.subtasks:
        per_node.setdefault(st.node, []).append((st.start, st.stop))

    want = {n.id for n in forest.nodes[1:] if n.query_set}
    have = set(per_node)
    if have != want:
        raise PlanForestMismatch(
            f"plan covers nodes {sorted(have)}, forest needs {sorted(want)}"
        )
    for nid, ranges in per_node.items():
        ranges.sort()
        n = forest.node(nid).len
        pos = 0
        for start, stop in ranges:
            if start != pos or stop <= start:
                raise PlanForestMismatch(f"node {nid} slices {ranges} do not tile 0..{n}")
            pos = stop
        if pos != n:
            raise PlanForestMismatch(f"node {nid} slices {ranges} do not tile 0..{n}")
    return per_node


def _split_phase(forest, queries, plan, pool, trace):
    """Run every plan subtask (possibly on threads), record simulated
    per-block timing, and return the PartialTree plus barrier time."""
    per_node = _plan_slices(forest, plan)

    jobs = []  # (key, rows, start, stop, cost)
    slice_index: dict[int, int] = {}
    for st in plan.subtasks:
        si = slice_index.get(st.node, 0)
        slice_index[st.node] = si + 1
        node = forest.node(st.node)
        rows = tuple(r for r in node.query_set if forest.visible_count(st.node, r) > st.start)
        jobs.append(((st.node, si), rows, st.start, st.stop, st.cost_ms))

    clock = [0.0] * plan.blocks
    barrier = 0.0
    for idx, (key, rows, start, stop, cost) in enumerate(jobs):
        b = plan.assignment.block_of[idx]
        t0 = clock[b]
        clock[b] = t0 + (cost if cost > 0 else 1.0)
        barrier = max(barrier, clock[b])
        if trace is not None:
            trace.add(
                phase="pac",
                worker=b,
                subtask=f"n{key[0]}s{key[1]}",
                t_start_sim=t0,
                t_end_sim=clock[b],
                node=key[0],
                slice=key[1],
                queries=list(rows),
            )
    if trace is not None:
        trace.add(phase="barrier", worker=-1, subtask="barrier",
                  t_start_sim=barrier, t_end_sim=barrier)

    def run(job):
        key, rows, start, stop, _ = job
        if not rows:
            return key, rows, None
        node = forest.node(key[0])
        q = queries.queries[list(rows)]
        vis = np.array(
            [min(forest.visible_count(key[0], r), stop) - start for r in rows],
            dtype=np.int64,
        )
        part = pac(q, node.keys[start:stop], node.values[start:stop], vis)
        return key, rows, part

    if pool.worker_count > 1:
        with ThreadPoolExecutor(max_workers=pool.worker_count) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    ptree = PartialTree()
    ptree.slice_count = {nid: len(ranges) for nid, ranges in per_node.items()}
    for key, rows, part in results:
        if part is not None:
            ptree.entries[key] = part
            ptree.rows[key] = rows
    return ptree, barrier


def _reduce_one(forest, partials, r, mode, t0):
    """Fold one request's partials; returns (final row, events)."""
    units = []
    for nid in prefix_path(forest, r):
        cnt = partials.slice_count.get(nid)
        if cnt is None:
            raise IncompletePartials(f"no subtasks recorded for node {nid}")
        for si in range(cnt):
            key = (nid, si)
            rows = partials.rows.get(key)
            if rows is not None and r in rows:
                if key not in partials.entries:
                    raise IncompletePartials(f"partial {key} missing for request {r}")
                units.append(key)
    if not units:
        raise NoVisibleTokens(f"request {r} has no visible tokens anywhere on its path")

    parts = {}
    labels = {}
    for i, key in enumerate(units):
        rows = partials.rows[key]
        parts[i] = partials.entries[key].row(rows.index(r))
        labels[i] = f"n{key[0]}s{key[1]}"

    if mode == "sequential":
        schedule = sequential_schedule(len(units))
    else:
        path = prefix_path(forest, r)
        counts = [sum(1 for key in units if key[0] == nid) for nid in path]
        schedule = merge_schedule(len(path), counts)

    events = []
    t = t0
    for round_idx, pairs in enumerate(schedule, start=1):
        for slot, (i, j) in enumerate(pairs):
            parts[i] = por(parts[i], parts[j])
            merged = f"q{r}.{round_idx}.{slot}"
            events.append(
                {
                    # worker is a simulated merge lane, deliberately
                    # independent of the host thread count
                    "phase": "por",
                    "worker": slot,
                    "subtask": merged,
                    "t_start_sim": t,
                    "t_end_sim": t + POR_TICK_MS,
                    "query": r,
                    "round": round_idx,
                    "inputs": [labels[i], labels[j]],
                }
            )
            labels[i] = merged
        t += POR_TICK_MS

    # label 0 survives every round (adjacent pairing keeps the left member)
    return finalize(parts[0])[0], events


def reduce_tree(partials: PartialTree, forest: Forest, pool: BlockPool,
                trace: EventTrace | None = None, t0: float = 0.0,
                mode: str = "balanced") -> np.ndarray:
    """Merge the split-phase partials per request and finalize. Requests
    reduce independently (parallel across the pool); within a request
    the balanced schedule pairs adjacent survivors per round."""
    if mode not in ("balanced", "sequential"):
        raise ValueError(f"mode must be balanced or sequential, got {mode!r}")
    some = next(iter(partials.entries.values()), None)
    if some is None:
        raise IncompletePartials("partial tree is empty")
    h_q, d = some.out.shape[1], some.out.shape[2]
    out = np.zeros((forest.bs, h_q, d), dtype=some.out.dtype)

    if pool.worker_count > 1:
        with ThreadPoolExecutor(max_workers=pool.worker_count) as ex:
            folded = list(
                ex.map(lambda r: _reduce_one(forest, partials, r, mode, t0), range(forest.bs))
            )
    else:
        folded = [_reduce_one(forest, partials, r, mode, t0) for r in range(forest.bs)]

    for r, (row, events) in enumerate(folded):
        out[r] = row
        if trace is not None:
            trace.extend(events)
    return out


def execute(forest: Forest, queries: QueryBatch, plan: DivisionPlan, pool: BlockPool,
            trace: EventTrace | None = None, reduce_mode: str = "balanced") -> np.ndarray:
    """Run the full pipeline: split phase per the plan's assignment,
    barrier, tree reduction. Returns [bs, h_q, d], equal to
    naive_attention within streaming-merge rounding."""
    if queries.bs != forest.bs:
        raise DimensionMismatch(f"{queries.bs} queries for {forest.bs} requests")
    if queries.d != forest.d or queries.h_kv != forest.h_kv:
        raise DimensionMismatch(
            f"queries d={queries.d} h_kv={queries.h_kv} vs forest d={forest.d} h_kv={forest.h_kv}"
        )
    ptree, barrier = _split_phase(forest, queries, plan, pool, trace)
    return reduce_tree(ptree, forest, pool, trace=trace, t0=barrier, mode=reduce_mode)
