"""Exact KV-read accounting and cost-model speedup simulation.

Combined-read decoding streams every stored KV row once per decode step
(rows = sum of node lengths); the per-request baseline streams each row
once per request sharing it (rows = sum of length x sharing count). The
ratio of the two is exactly the weighted average sharing count, an
integer-arithmetic identity. Counts cover stored rows: visibility masks
do not shrink streamed traffic, and query/output traffic is negligible
at decode shapes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

from .cost_model import CostTable, estimate
from .forest import Forest
from .scheduler import divide_and_schedule, greedy_assign, tasks_from_forest

MODES = ("codec", "baseline")


@dataclass(frozen=True)
class TrafficReport:
    kv_rows_codec: int
    kv_rows_baseline: int
    bytes_codec: int
    bytes_baseline: int
    reduction_ratio: float
    nq_bar: float

    def to_dict(self) -> dict:
        return asdict(self)


def count_kv_reads(forest: Forest, mode: str) -> int:
    """Global-memory KV rows read per decode step under either access
    pattern."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "codec":
        return sum(node.len for node in forest.nodes[1:])
    return sum(node.len * len(node.query_set) for node in forest.nodes[1:])


def weighted_avg_sharing(forest: Forest) -> Fraction:
    """Token-weighted average of per-node sharing counts, kept exact so
    it equals the baseline/combined row ratio as a rational."""
    codec = count_kv_reads(forest, "codec")
    if codec == 0:
        return Fraction(1)
    return Fraction(count_kv_reads(forest, "baseline"), codec)


def traffic_report(forest: Forest, element_size: int | None = None) -> TrafficReport:
    """Rows and bytes for both patterns; bytes count K and V at the
    forest's element width (x2 for the two tensors)."""
    if element_size is None:
        element_size = forest.dtype.itemsize
    rows_c = count_kv_reads(forest, "codec")
    rows_b = count_kv_reads(forest, "baseline")
    per_row = forest.h_kv * forest.d * element_size * 2
    return TrafficReport(
        kv_rows_codec=rows_c,
        kv_rows_baseline=rows_b,
        bytes_codec=rows_c * per_row,
        bytes_baseline=rows_b * per_row,
        reduction_ratio=rows_b / rows_c if rows_c else 1.0,
        nq_bar=float(weighted_avg_sharing(forest)),
    )


def simulate_speedup(forest: Forest, table: CostTable, m: int) -> dict:
    """Cost-model makespan of the shared-tree plan versus the baseline
    that schedules one full-prefix task per request on the same blocks."""
    plan = divide_and_schedule(tasks_from_forest(forest), table, m)
    base_costs = [estimate(table, 1, forest.request_len(r)) for r in range(forest.bs)]
    baseline = greedy_assign(base_costs, m).makespan_ms
    return {
        "makespan_codec": plan.makespan_ms,
        "makespan_baseline": baseline,
        "ratio": baseline / plan.makespan_ms,
    }
