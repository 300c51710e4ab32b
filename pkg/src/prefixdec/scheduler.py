"""Task division and block scheduling.

Each non-root forest node is a task (n_q sharing queries, n tokens).
Tasks are split along the token axis into b_k contiguous slices (the
query axis is never split: b_q = 1 throughout) and slices are packed
onto m simulated blocks to minimize the makespan. The search is pruned
the practical way: a bisected average-cost lower bound, per-task division
caps derived from it, a grid search over capped divisions scored by LPT
greedy assignment, plus an exact branch-and-bound oracle for
micro-instances.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

from .cost_model import CostTable, estimate
from .errors import InstanceTooLarge, SearchSpaceOverflow
from .forest import Forest

DEFAULT_SEARCH_LIMIT = 10**6
DEFAULT_REPLAN_EVERY = 4  # decode steps between re-plans; planning here is single-shot


@dataclass(frozen=True)
class Task:
    node: int
    n_q: int
    n: int

    def __post_init__(self):
        if self.n < 1 or self.n_q < 1:
            raise ValueError(f"task ({self.n_q}, {self.n}) must have n, n_q >= 1")


@dataclass(frozen=True)
class Subtask:
    task_index: int
    node: int
    start: int
    stop: int
    cost_ms: float


@dataclass(frozen=True)
class Assignment:
    block_of: tuple[int, ...]
    loads: tuple[float, ...]

    @property
    def makespan_ms(self) -> float:
        return max(self.loads) if self.loads else 0.0


@dataclass(frozen=True)
class DivisionPlan:
    tasks: tuple[Task, ...]
    b_q: tuple[int, ...]
    b_k: tuple[int, ...]
    subtasks: tuple[Subtask, ...]
    assignment: Assignment
    blocks: int
    makespan_ms: float
    cost_l_ms: float | None = None
    search_truncated: bool = False

    def to_dict(self) -> dict:
        return {
            "tasks": [
                {"node": t.node, "b_q": bq, "b_k": bk}
                for t, bq, bk in zip(self.tasks, self.b_q, self.b_k)
            ],
            "assignment": {str(i): b for i, b in enumerate(self.assignment.block_of)},
            "blocks": self.blocks,
            "makespan_ms": self.makespan_ms,
            "cost_l_ms": self.cost_l_ms,
        }


def slice_ranges(n: int, b: int) -> list[tuple[int, int]]:
    """Contiguous token slices of size ceil(n/b), last one shorter; b is
    clamped to 1..n so no slice is ever empty."""
    b = max(1, min(b, n))
    size = -(-n // b)
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def canonical_division(n: int, b: int) -> int:
    """Actual slice count produced by requesting b slices of n tokens
    (distinct b can collapse to the same slicing)."""
    return len(slice_ranges(n, b))


def tasks_from_forest(forest: Forest, head_multiplicity: int = 1) -> list[Task]:
    """One task per non-root node carrying work. Nodes outside every
    request path have no queries and are skipped. head_multiplicity
    optionally scales n_q for per-head task expansion."""
    tasks = []
    for node in forest.nodes[1:]:
        if node.query_set:
            tasks.append(Task(node.id, len(node.query_set) * head_multiplicity, node.len))
    return tasks


def lower_bound(tasks, table: CostTable, m: int, tol: float = 1e-4) -> float:
    """Bisected average-cost bound: smallest c such that dividing every
    task into ceil(full_cost/c) slices keeps the per-block average at or
    below c. Bracketed by [max single-slice floor, total cost]; the
    floor (cost of a maximally divided slice) is itself a valid bound
    because some block must run at least one slice of every task."""
    full = [estimate(table, t.n_q, t.n) for t in tasks]
    hi = sum(full)
    lo = max(estimate(table, t.n_q, 1) for t in tasks)

    def feasible(c: float) -> bool:
        vol = 0.0
        for t, f in zip(tasks, full):
            b = math.ceil(f / c)
            vol += sum(estimate(table, t.n_q, stop - start) for start, stop in slice_ranges(t.n, b))
        return vol / m <= c

    if feasible(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def division_caps(tasks, table: CostTable, cost_l: float) -> list[int]:
    """Per-task division ceiling: splitting past cost/cost_l slices only
    adds launch overhead below the average-cost floor."""
    if cost_l <= 0:
        raise ValueError(f"cost_l must be positive, got {cost_l}")
    return [math.ceil(estimate(table, t.n_q, t.n) / cost_l) for t in tasks]


def greedy_assign(subtask_costs, m: int) -> Assignment:
    """Longest-processing-time-first: costs descending (ties by original
    index), each placed on the least-loaded block (ties by lowest block
    index). Canonical sort makes the result input-order invariant."""
    if m < 1:
        raise ValueError(f"need m >= 1 blocks, got {m}")
    order = sorted(range(len(subtask_costs)), key=lambda i: (-subtask_costs[i], i))
    loads = [0.0] * m
    block_of = [0] * len(subtask_costs)
    for i in order:
        b = min(range(m), key=lambda j: (loads[j], j))
        block_of[i] = b
        loads[b] += subtask_costs[i]
    return Assignment(tuple(block_of), tuple(loads))


def _expand(tasks, b_k, table: CostTable) -> tuple[Subtask, ...]:
    subtasks = []
    for j, (task, b) in enumerate(zip(tasks, b_k)):
        for start, stop in slice_ranges(task.n, b):
            subtasks.append(Subtask(j, task.node, start, stop, estimate(table, task.n_q, stop - start)))
    return tuple(subtasks)


def _plan_for(tasks, b_k, table, m, cost_l, truncated=False) -> DivisionPlan:
    b_k = tuple(canonical_division(t.n, b) for t, b in zip(tasks, b_k))
    subtasks = _expand(tasks, b_k, table)
    assignment = greedy_assign([st.cost_ms for st in subtasks], m)
    return DivisionPlan(
        tasks=tuple(tasks),
        b_q=(1,) * len(tasks),
        b_k=b_k,
        subtasks=subtasks,
        assignment=assignment,
        blocks=m,
        makespan_ms=assignment.makespan_ms,
        cost_l_ms=cost_l,
        search_truncated=truncated,
    )


def _plan_key(plan: DivisionPlan):
    return (plan.makespan_ms, len(plan.subtasks), plan.b_k)


def divide_and_schedule(tasks, table: CostTable, m: int,
                        search_limit: int = DEFAULT_SEARCH_LIMIT,
                        on_overflow: str = "fallback") -> DivisionPlan:
    """Grid search over per-task divisions within the caps, each scored
    by greedy assignment; minimum makespan wins, ties toward fewer
    subtasks then lexicographic b_k. When the candidate product exceeds
    search_limit the search degrades to {identity, all-at-cap} (or
    raises, with on_overflow="raise")."""
    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks to schedule")
    cost_l = lower_bound(tasks, table, m)
    caps = division_caps(tasks, table, cost_l)

    options = [
        sorted({canonical_division(t.n, b) for b in range(1, max(1, min(cap, t.n)) + 1)})
        for t, cap in zip(tasks, caps)
    ]
    total = math.prod(len(o) for o in options)
    if total > search_limit:
        if on_overflow == "raise":
            raise SearchSpaceOverflow(
                f"{total} division candidates exceed the limit of {search_limit}"
            )
        combos = [(1,) * len(tasks), tuple(o[-1] for o in options)]
        truncated = True
    else:
        combos = itertools.product(*options)
        truncated = False

    best = None
    for b_k in combos:
        plan = _plan_for(tasks, b_k, table, m, cost_l, truncated)
        if best is None or _plan_key(plan) < _plan_key(best):
            best = plan
    return best


def plan_uniform_bk(tasks, table: CostTable, m: int, bk: int,
                    cost_l: float | None = None) -> DivisionPlan:
    """Fixed division count for every task (bk=1 is the no-division
    identity plan); used for forced-granularity studies and as the
    never-worse baseline."""
    tasks = list(tasks)
    if bk < 1:
        raise ValueError(f"b_k must be >= 1, got {bk}")
    return _plan_for(tasks, (bk,) * len(tasks), table, m, cost_l)


def makespan(plan: DivisionPlan, table: CostTable) -> float:
    """Recompute the maximum per-block load of a plan from its table."""
    loads = [0.0] * plan.blocks
    for st, b in zip(plan.subtasks, plan.assignment.block_of):
        task = plan.tasks[st.task_index]
        loads[b] += estimate(table, task.n_q, st.stop - st.start)
    return max(loads) if loads else 0.0


def _optimal_assignment(costs, m: int):
    """Exact minimum-makespan assignment by branch and bound: LPT upper
    bound, equal-load block dedup, equal-cost adjacency symmetry break,
    and the average-completion bound."""
    order = sorted(range(len(costs)), key=lambda i: (-costs[i], i))
    svals = [costs[i] for i in order]
    lpt = greedy_assign(costs, m)
    best_make = lpt.makespan_ms
    best_assign = list(lpt.block_of)

    suffix = [0.0] * (len(svals) + 1)
    for i in range(len(svals) - 1, -1, -1):
        suffix[i] = suffix[i + 1] + svals[i]

    loads = [0.0] * m
    chosen = [0] * len(svals)

    def rec(pos: int):
        nonlocal best_make, best_assign
        if pos == len(svals):
            mk = max(loads) if loads else 0.0
            if mk < best_make:
                best_make = mk
                assign = [0] * len(costs)
                for p, oi in enumerate(order):
                    assign[oi] = chosen[p]
                best_assign = assign
            return
        bound = max(max(loads), (sum(loads) + suffix[pos]) / m)
        if bound >= best_make:
            return
        first = chosen[pos - 1] if pos > 0 and svals[pos] == svals[pos - 1] else 0
        seen = set()
        for b in range(first, m):
            if loads[b] in seen or loads[b] + svals[pos] >= best_make:
                continue
            seen.add(loads[b])
            loads[b] += svals[pos]
            chosen[pos] = b
            rec(pos + 1)
            loads[b] -= svals[pos]

    rec(0)
    loads = [0.0] * m
    for i, b in enumerate(best_assign):
        loads[b] += costs[i]
    return best_make, tuple(best_assign), tuple(loads)


def brute_force_optimal(tasks, table: CostTable, m: int, caps) -> DivisionPlan:
    """Test oracle: enumerate every capped division and solve each
    assignment exactly. Guarded to micro-instances."""
    tasks = list(tasks)
    caps = list(caps)
    if len(tasks) > 4 or m > 4 or any(c > 8 for c in caps):
        raise InstanceTooLarge(
            f"brute force needs t <= 4, m <= 4, caps <= 8; got t={len(tasks)}, m={m}, caps={caps}"
        )
    options = [
        sorted({canonical_division(t.n, b) for b in range(1, max(1, min(cap, t.n)) + 1)})
        for t, cap in zip(tasks, caps)
    ]
    best = None
    best_key = None
    for b_k in itertools.product(*options):
        subtasks = _expand(tasks, b_k, table)
        mk, block_of, loads = _optimal_assignment([st.cost_ms for st in subtasks], m)
        key = (mk, len(subtasks), b_k)
        if best_key is None or key < best_key:
            best_key = key
            best = DivisionPlan(
                tasks=tuple(tasks),
                b_q=(1,) * len(tasks),
                b_k=tuple(b_k),
                subtasks=subtasks,
                assignment=Assignment(block_of, loads),
                blocks=m,
                makespan_ms=mk,
            )
    return best
