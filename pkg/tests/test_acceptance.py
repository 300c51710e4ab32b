"""Acceptance gate: one test per shipped guarantee, run at the stated
tolerances. Each test is self-contained so a failure pinpoints the broken
guarantee without cross-reading the unit suites."""
from __future__ import annotations

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from prefixdec.attention import empty_partial, naive_attention, pac, por
from prefixdec.cli import main
from prefixdec.cost_model import (
    dump_profile,
    estimate,
    load_default_profile,
    load_profile,
)
from prefixdec.executor import BlockPool, EventTrace, execute
from prefixdec.forest import QueryBatch, build_forest
from prefixdec.metrics import simulate_speedup, traffic_report, weighted_avg_sharing
from prefixdec.scheduler import (
    Task,
    brute_force_optimal,
    divide_and_schedule,
    makespan,
    plan_uniform_bk,
    tasks_from_forest,
)
from prefixdec.workloads import Dims, WorkloadSpec, cast_workload, generate

DIMS = Dims(h_q=2, h_kv=1, d=16)

from conftest import random_forest, random_micro_instance, rel_err


def test_criterion_1_oracle_equivalence(table):
    """execute() agrees with the single-softmax oracle on 200 random
    forests: <= 1e-10 in 64-bit, <= 1e-3 after a 32-bit cast, under 60 s."""
    t0 = time.perf_counter()
    worst64 = worst32 = 0.0
    for seed in range(200):
        forest, queries = random_forest(seed, with_masks=(seed % 3 == 2))
        plan = plan_uniform_bk(tasks_from_forest(forest), table, m=4, bk=1 + seed % 3)
        ref = naive_attention(queries, forest)
        out = execute(forest, queries, plan, BlockPool(worker_count=4))
        worst64 = max(worst64, rel_err(out, ref))

        f32, q32 = cast_workload(forest, queries, np.float32)
        plan32 = plan_uniform_bk(tasks_from_forest(f32), table, m=4, bk=1 + seed % 3)
        out32 = execute(f32, q32, plan32, BlockPool(worker_count=4))
        worst32 = max(worst32, rel_err(out32, ref))
    elapsed = time.perf_counter() - t0
    assert worst64 <= 1e-10
    assert worst32 <= 1e-3
    assert elapsed < 60.0


def test_criterion_2_merge_algebra(rng):
    """1000 random partial triples: commutative within 1e-12, associative
    within 1e-10, and the empty partial is an exact identity."""
    n_q, h_q, d = 2, 2, 4

    def fresh():
        n = int(rng.integers(1, 9))
        return pac(
            rng.standard_normal((n_q, h_q, d)),
            rng.standard_normal((n, h_q, d)),
            rng.standard_normal((n, h_q, d)),
        )

    identity = empty_partial(n_q, h_q, d)
    for trial in range(1000):
        a, b, c = fresh(), fresh(), fresh()
        if trial % 7 == 3:
            # knock one entry of b down to empty to stress the
            # per-entry emptiness path
            b.out[0, 1] = 0.0
            b.max_score[0, 1] = -np.inf
            b.exp_sum[0, 1] = 0.0

        ab, ba = por(a, b), por(b, a)
        assert rel_err(ab.out, ba.out) <= 1e-12
        assert rel_err(ab.exp_sum, ba.exp_sum) <= 1e-12
        assert np.array_equal(ab.max_score, ba.max_score)

        left, right = por(por(a, b), c), por(a, por(b, c))
        assert rel_err(left.out, right.out) <= 1e-10
        assert rel_err(left.exp_sum, right.exp_sum) <= 1e-10
        assert np.array_equal(left.max_score, right.max_score)

        for merged in (por(a, identity), por(identity, a)):
            assert np.array_equal(merged.max_score, a.max_score)
            assert np.array_equal(merged.exp_sum, a.exp_sum)
            assert rel_err(merged.out, a.out) <= 1e-15


def test_criterion_3_extreme_score_stability(table):
    """Raw scores spanning +-500 across nodes stay finite and match a
    shift-stabilized reference within 1e-8; no NaN/Inf anywhere."""
    # d=1 with unit queries makes each key its own raw score
    def col(*values):
        return np.asarray(values, dtype=np.float64).reshape(-1, 1, 1)

    specs = [
        (0, col(500.0, -500.0, 0.0), col(1.0, 2.0, 3.0)),
        (1, col(-500.0, 250.0), col(4.0, 5.0)),
        (1, col(500.0), col(6.0)),
    ]
    paths = [(1, 2), (1, 3)]
    queries = QueryBatch(np.ones((2, 1, 1)), h_kv=1)
    forest = build_forest(specs, paths, queries)

    plan = plan_uniform_bk(tasks_from_forest(forest), table, m=2, bk=2)
    out = execute(forest, queries, plan, BlockPool())
    assert np.isfinite(out).all()

    for r, path in enumerate(paths):
        k = np.concatenate([specs[n - 1][1] for n in path])[:, 0, 0]
        v = np.concatenate([specs[n - 1][2] for n in path])[:, 0, 0]
        shifted = np.exp(k - k.max())
        ref = float((shifted * v).sum() / shifted.sum())
        assert out[r, 0, 0] == pytest.approx(ref, rel=1e-8)


def test_criterion_4_row_traffic_identity():
    """Baseline/deduplicated row counts equal the weighted sharing ratio
    as exact rationals; the ratio grows with the shared fraction and
    clears 7x at ratio 0.99 with 8 requests."""
    specs = [
        WorkloadSpec("two_level", {"shared_len": 100, "leaf_len": 1, "batch": 2}, 0, DIMS),
        WorkloadSpec("full_tree", {"arity": 3, "depth": 3, "node_len": 4}, 1, DIMS),
        WorkloadSpec("degenerate", {"depth": 5, "node_len": 6}, 2, DIMS),
        WorkloadSpec("shared_ratio", {"total_len": 4096, "ratio": 0.6, "batch": 4}, 3, DIMS),
    ]
    for spec in specs:
        forest, _ = generate(spec)
        report = traffic_report(forest)
        assert Fraction(report.kv_rows_baseline, report.kv_rows_codec) == \
            weighted_avg_sharing(forest)

    ratios = []
    for ratio in (0.1, 0.3, 0.5, 0.7, 0.9, 0.99):
        spec = WorkloadSpec(
            "shared_ratio", {"total_len": 16384, "ratio": ratio, "batch": 8}, 0, DIMS
        )
        forest, _ = generate(spec)
        ratios.append(weighted_avg_sharing(forest))
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] > 7


def test_criterion_5_scheduler_optimality_gap(table):
    """100 random micro-instances: the planner stays within 1.2x of the
    exhaustive optimum and above the bisection bound (minus its own
    documented 1e-4 slack); adaptive division never loses to no-division,
    and the deep-share benchmark clears a 2x simulated speedup."""
    collected = 0
    seed = 0
    while collected < 100:
        tasks, m, cost_l, caps = random_micro_instance(seed, table)
        seed += 1
        if max(caps) > 8:
            continue  # outside the exhaustive oracle's envelope
        collected += 1
        ds = divide_and_schedule(tasks, table, m)
        bf = brute_force_optimal(tasks, table, m, caps)
        assert ds.makespan_ms <= 1.2 * bf.makespan_ms + 1e-12
        # lower_bound returns the feasible end of the bisection bracket,
        # so the optimum may sit up to tol below it
        assert ds.makespan_ms >= cost_l - 1e-4
        assert bf.makespan_ms >= cost_l - 1e-4

    bench_specs = [
        WorkloadSpec("two_level", {"shared_len": 16384, "leaf_len": 512, "batch": 8}, 0, DIMS),
        WorkloadSpec("full_tree", {"arity": 2, "depth": 4, "node_len": 256}, 1, DIMS),
        WorkloadSpec("degenerate", {"depth": 6, "node_len": 512}, 2, DIMS),
        WorkloadSpec("shared_ratio", {"total_len": 8192, "ratio": 0.9, "batch": 4}, 3, DIMS),
    ]
    for m in (2, 4, 8):
        for spec in bench_specs:
            forest, _ = generate(spec)
            tasks = tasks_from_forest(forest)
            adaptive = divide_and_schedule(tasks, table, m)
            whole = plan_uniform_bk(tasks, table, m, bk=1)
            assert adaptive.makespan_ms <= makespan(whole, table) + 1e-12

    flagship, _ = generate(bench_specs[0])
    sim = simulate_speedup(flagship, table, m=8)
    assert sim["ratio"] > 2


def test_criterion_6_cost_interpolation(tmp_path):
    """Bilinear estimates reproduce all 42 profiled knots exactly, stay
    inside their surrounding cell, and the CSV survives a bit-exact
    round trip."""
    table = load_default_profile()
    assert len(table.nq_knots) * len(table.n_knots) == 42
    for i, n_q in enumerate(table.nq_knots):
        for j, n in enumerate(table.n_knots):
            assert estimate(table, n_q, n) == table.cost_ms[j, i]

    rng = np.random.default_rng(42)
    for _ in range(500):
        i = int(rng.integers(0, len(table.nq_knots) - 1))
        j = int(rng.integers(0, len(table.n_knots) - 1))
        n_q = rng.uniform(table.nq_knots[i], table.nq_knots[i + 1])
        n = rng.uniform(table.n_knots[j], table.n_knots[j + 1])
        corners = table.cost_ms[j:j + 2, i:i + 2]
        est = estimate(table, n_q, n)
        assert corners.min() - 1e-15 <= est <= corners.max() + 1e-15

    path = tmp_path / "roundtrip.csv"
    dump_profile(table, path)
    first = path.read_text(encoding="utf-8")
    again = tmp_path / "again.csv"
    dump_profile(load_profile(path), again)
    assert again.read_text(encoding="utf-8") == first


def test_criterion_7_deterministic_reports(tmp_path, capsys):
    """validate and bench emit byte-identical reports across 3 runs and
    worker counts {1, 4, 8}."""
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({
        "family": "two_level",
        "params": {"shared_len": 128, "leaf_len": 8, "batch": 4},
        "seed": 5,
        "dims": {"h_q": 2, "h_kv": 1, "d": 16},
    }), encoding="utf-8")

    for argv in (
        ["validate", "--spec", str(spec), "--oracle"],
        ["bench", "--spec", str(spec), "--oracle", "--sweep", "batch=2,4"],
    ):
        outputs = set()
        for workers in ("1", "4", "8"):
            for _ in range(3):
                assert main(argv + ["--workers", workers]) == 0
                outputs.add(capsys.readouterr().out)
        assert len(outputs) == 1


def test_criterion_8_reduction_parallelism(table):
    """The event trace never starts a merge before its inputs finish, and
    each query's merge tree closes in exactly ceil(log2 P) rounds for
    P in {2, 3, 5, 8} partials."""
    for slices in (2, 3, 5, 8):
        rng = np.random.default_rng(slices)
        n = 7 * slices  # divides evenly, so the plan keeps all P slices
        forest = build_forest(
            [(0, rng.standard_normal((n, 1, 8)), rng.standard_normal((n, 1, 8)))],
            [(1,), (1,)],
            QueryBatch(rng.standard_normal((2, 1, 8)), h_kv=1),
        )
        queries = QueryBatch(rng.standard_normal((2, 1, 8)), h_kv=1)
        plan = plan_uniform_bk(tasks_from_forest(forest), table, m=2, bk=slices)
        assert plan.b_k == (slices,)

        trace = EventTrace()
        execute(forest, queries, plan, BlockPool(), trace=trace)

        pac_end = {e["subtask"]: e["t_end_sim"] for e in trace.by_phase("pac")}
        por_end = {}
        for event in trace.by_phase("por"):
            for label in event["inputs"]:
                done = pac_end.get(label, por_end.get(label))
                assert done is not None and done <= event["t_start_sim"] + 1e-12
            por_end[event["subtask"]] = event["t_end_sim"]

        for r in range(forest.bs):
            rounds = [e["round"] for e in trace.by_phase("por") if e["query"] == r]
            assert len(rounds) == slices - 1
            assert max(rounds) == math.ceil(math.log2(slices))
