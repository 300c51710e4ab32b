"""Prefix-shared decode attention: KV forest model, streaming
split/merge softmax primitives, simulated block execution, and the
cost-model-driven task divider/scheduler, with exact memory-traffic
accounting and a benchmark CLI."""

__version__ = "0.1.0"

from .attention import (
    PartialResult,
    active_backend,
    available_backends,
    empty_partial,
    finalize,
    naive_attention,
    pac,
    por,
)
from .cost_model import (
    CostTable,
    dump_profile,
    estimate,
    fit_affine,
    load_default_profile,
    load_profile,
    profile_synthetic,
)
from .executor import (
    POR_TICK_MS,
    BlockPool,
    EventTrace,
    execute,
    merge_schedule,
    reduce_tree,
    sequential_schedule,
)
from .forest import (
    Forest,
    KvNode,
    QueryBatch,
    Violation,
    build_forest,
    dump_forest,
    load_forest,
    node_query_set,
    prefix_path,
    unshare,
    validate,
)
from .metrics import (
    TrafficReport,
    count_kv_reads,
    simulate_speedup,
    traffic_report,
    weighted_avg_sharing,
)
from .scheduler import (
    Assignment,
    DivisionPlan,
    Subtask,
    Task,
    brute_force_optimal,
    divide_and_schedule,
    division_caps,
    greedy_assign,
    lower_bound,
    makespan,
    plan_uniform_bk,
    tasks_from_forest,
)
from .workloads import (
    Dims,
    WorkloadSpec,
    cast_workload,
    gen_degenerate,
    gen_full_tree,
    gen_shared_ratio,
    gen_two_level,
    generate,
    spec_from_dict,
)

__all__ = [
    "__version__",
    "PartialResult",
    "active_backend",
    "available_backends",
    "empty_partial",
    "finalize",
    "naive_attention",
    "pac",
    "por",
    "CostTable",
    "dump_profile",
    "estimate",
    "fit_affine",
    "load_default_profile",
    "load_profile",
    "profile_synthetic",
    "POR_TICK_MS",
    "BlockPool",
    "EventTrace",
    "execute",
    "merge_schedule",
    "reduce_tree",
    "sequential_schedule",
    "Forest",
    "KvNode",
    "QueryBatch",
    "Violation",
    "build_forest",
    "dump_forest",
    "load_forest",
    "node_query_set",
    "prefix_path",
    "unshare",
    "validate",
    "TrafficReport",
    "count_kv_reads",
    "simulate_speedup",
    "traffic_report",
    "weighted_avg_sharing",
    "Assignment",
    "DivisionPlan",
    "Subtask",
    "Task",
    "brute_force_optimal",
    "divide_and_schedule",
    "division_caps",
    "greedy_assign",
    "lower_bound",
    "makespan",
    "plan_uniform_bk",
    "tasks_from_forest",
    "Dims",
    "WorkloadSpec",
    "cast_workload",
    "gen_degenerate",
    "gen_full_tree",
    "gen_shared_ratio",
    "gen_two_level",
    "generate",
    "spec_from_dict",
]
