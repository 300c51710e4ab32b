from __future__ import annotations

import numpy as np
import pytest

from prefixdec.errors import RemainderInfeasible, SpecError
from prefixdec.forest import node_query_set, prefix_path, validate
from prefixdec.workloads import (
    FAMILIES,
    FAMILY_PARAMS,
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


def doc(family="two_level", params=None, seed=0, dims=None):
    defaults = {
        "two_level": {"shared_len": 8, "leaf_len": 2, "batch": 2},
        "full_tree": {"arity": 2, "depth": 3, "node_len": 4},
        "degenerate": {"depth": 4, "node_len": 3},
        "shared_ratio": {"total_len": 24, "ratio": 0.5, "batch": 3},
    }
    return {
        "family": family,
        "params": params if params is not None else defaults[family],
        "seed": seed,
        "dims": dims if dims is not None else {"h_q": 2, "h_kv": 1, "d": 8},
    }


class TestSpecParsing:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_round_trip(self, family):
        spec = spec_from_dict(doc(family))
        assert spec.family == family
        assert spec.to_dict() == doc(family)

    def test_unknown_family(self):
        with pytest.raises(SpecError, match="family must be one of"):
            spec_from_dict(doc() | {"family": "balanced"})

    def test_param_keys_must_match_exactly(self):
        with pytest.raises(SpecError, match="needs params"):
            spec_from_dict(doc(params={"shared_len": 8, "leaf_len": 2}))
        with pytest.raises(SpecError, match="needs params"):
            spec_from_dict(doc(params={"shared_len": 8, "leaf_len": 2, "batch": 2, "x": 1}))

    def test_param_values_validated(self):
        with pytest.raises(SpecError, match="positive integer"):
            spec_from_dict(doc(params={"shared_len": 0, "leaf_len": 2, "batch": 2}))
        with pytest.raises(SpecError, match="positive integer"):
            spec_from_dict(doc(params={"shared_len": 2.5, "leaf_len": 2, "batch": 2}))

    def test_seed_validated(self):
        with pytest.raises(SpecError, match="seed"):
            spec_from_dict(doc(seed=-1))
        with pytest.raises(SpecError, match="seed"):
            spec_from_dict(doc(seed="7"))

    def test_dims_validated(self):
        with pytest.raises(SpecError, match="dims must be an object"):
            spec_from_dict(doc(dims={"h_q": 1}))
        with pytest.raises(SpecError, match="dims.d"):
            spec_from_dict(doc(dims={"h_q": 1, "h_kv": 1, "d": 0}))
        with pytest.raises(SpecError, match="bad dims"):
            spec_from_dict(doc(dims={"h_q": 3, "h_kv": 2, "d": 8}))

    def test_ratio_range(self):
        base = {"total_len": 24, "batch": 3}
        with pytest.raises(SpecError, match="ratio"):
            spec_from_dict(doc("shared_ratio", base | {"ratio": 0.0}))
        with pytest.raises(SpecError, match="ratio"):
            spec_from_dict(doc("shared_ratio", base | {"ratio": 1.5}))

    def test_arity_range(self):
        with pytest.raises(SpecError, match="arity"):
            spec_from_dict(doc("full_tree", {"arity": 6, "depth": 2, "node_len": 4}))

    def test_degenerate_needs_depth_two(self):
        with pytest.raises(SpecError, match="depth must be >= 2"):
            spec_from_dict(doc("degenerate", {"depth": 1, "node_len": 4}))

    def test_non_object_rejected(self):
        with pytest.raises(SpecError, match="must be an object"):
            spec_from_dict([1, 2, 3])

    def test_with_params_and_seed(self):
        spec = spec_from_dict(doc())
        wider = spec.with_params(batch=5)
        assert wider.params["batch"] == 5
        assert wider.params["shared_len"] == spec.params["shared_len"]
        assert spec.params["batch"] == 2
        assert spec.with_seed(9).seed == 9
        assert spec.with_seed(9).params == spec.params


class TestTwoLevel:
    def test_shape(self):
        forest, queries = gen_two_level(8, 2, 4)
        assert len(forest.nodes) - 1 == 5
        assert forest.bs == 4
        assert forest.total_tokens == 8 + 4 * 2
        assert node_query_set(forest, 1) == tuple(range(4))
        for r in range(4):
            assert prefix_path(forest, r) == (1, 2 + r)
        assert queries.bs == 4

    def test_validates(self):
        forest, _ = gen_two_level(8, 2, 4)
        assert validate(forest) == []

    def test_argument_guard(self):
        with pytest.raises(ValueError, match=">= 1"):
            gen_two_level(0, 2, 4)


class TestFullTree:
    @pytest.mark.parametrize("arity,depth", [(2, 1), (2, 4), (3, 3), (5, 2)])
    def test_closed_form_counts(self, arity, depth):
        forest, queries = gen_full_tree(arity, depth, 4)
        expected_nodes = (arity**depth - 1) // (arity - 1)
        assert len(forest.nodes) - 1 == expected_nodes
        assert forest.bs == arity ** (depth - 1) == queries.bs
        for r in range(forest.bs):
            assert len(prefix_path(forest, r)) == depth
            assert forest.request_len(r) == depth * 4
        assert validate(forest) == []

    def test_leaves_in_id_order(self):
        forest, _ = gen_full_tree(2, 3, 2)
        # ids 4..7 are the last level; request r queries leaf 4 + r
        for r in range(4):
            assert prefix_path(forest, r)[-1] == 4 + r

    def test_arity_guard(self):
        with pytest.raises(ValueError, match="arity"):
            gen_full_tree(1, 3, 4)


class TestDegenerate:
    @pytest.mark.parametrize("depth", [2, 3, 5, 8])
    def test_structure(self, depth):
        forest, queries = gen_degenerate(depth, 3)
        assert len(forest.nodes) - 1 == 2 * depth - 1
        assert forest.bs == depth == queries.bs
        lens = sorted(len(prefix_path(forest, r)) for r in range(depth))
        assert lens == list(range(2, depth + 1)) + [depth]
        assert validate(forest) == []

    def test_spine_is_a_chain(self):
        forest, _ = gen_degenerate(5, 3)
        for nid in range(1, 5):
            assert forest.node(nid).parent == nid - 1

    def test_depth_guard(self):
        with pytest.raises(ValueError, match="depth >= 2"):
            gen_degenerate(1, 3)


class TestSharedRatio:
    def test_near_total_sharing(self):
        forest, _ = gen_shared_ratio(102, 100 / 102, 2)
        lens = [n.len for n in forest.nodes[1:]]
        assert lens == [100, 1, 1]
        assert validate(forest) == []

    def test_ratio_one_elides_leaves(self):
        forest, _ = gen_shared_ratio(64, 1.0, 5)
        assert len(forest.nodes) - 1 == 1
        assert forest.paths == [(1,)] * 5
        assert validate(forest) == []

    def test_uneven_remainder_spread(self):
        forest, _ = gen_shared_ratio(25, 0.6, 4)
        # 15 shared, 10 private: leaves 3, 3, 2, 2
        lens = [n.len for n in forest.nodes[1:]]
        assert lens == [15, 3, 3, 2, 2]
        assert forest.total_tokens == 25

    def test_exact_fraction_lands_on_integer(self):
        forest, _ = gen_shared_ratio(10, 0.3, 7)
        assert forest.node(1).len == 3

    def test_infeasible_remainder(self):
        with pytest.raises(RemainderInfeasible, match="cannot give 3 leaves"):
            gen_shared_ratio(10, 0.9, 3)

    def test_zero_shared_rejected(self):
        with pytest.raises(ValueError, match="no shared tokens"):
            gen_shared_ratio(100, 0.001, 2)


class TestGenerate:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_deterministic(self, family):
        spec = spec_from_dict(doc(family))
        f1, q1 = generate(spec)
        f2, q2 = generate(spec)
        assert np.array_equal(q1.queries, q2.queries)
        for a, b in zip(f1.nodes[1:], f2.nodes[1:]):
            assert np.array_equal(a.keys, b.keys)
            assert np.array_equal(a.values, b.values)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_seed_changes_tensors_not_structure(self, family):
        spec = spec_from_dict(doc(family))
        f1, q1 = generate(spec)
        f2, q2 = generate(spec.with_seed(1))
        assert f1.paths == f2.paths
        assert [n.len for n in f1.nodes] == [n.len for n in f2.nodes]
        assert not np.array_equal(q1.queries, q2.queries)

    def test_dims_respected(self):
        spec = spec_from_dict(doc(dims={"h_q": 4, "h_kv": 2, "d": 32}))
        forest, queries = generate(spec)
        assert forest.h_kv == 2 and forest.d == 32
        assert queries.h_q == 4 and queries.group_size == 2

    def test_scores_stay_moderate(self):
        spec = spec_from_dict(doc("two_level", {"shared_len": 256, "leaf_len": 8, "batch": 4}))
        forest, queries = generate(spec)
        # scale 1/sqrt(d) on both sides keeps |q . k| = O(1)
        q = queries.queries[0, 0]
        k = forest.node(1).keys[:, 0, :]
        assert np.abs(k @ q).max() < 5.0


class TestCastWorkload:
    def test_cast_to_fp32(self):
        spec = spec_from_dict(doc())
        forest, queries = generate(spec)
        f32, q32 = cast_workload(forest, queries, np.float32)
        assert f32.dtype == np.float32 and q32.dtype == np.float32
        assert np.allclose(f32.node(1).keys, forest.node(1).keys, atol=1e-6)
        assert f32.paths == forest.paths
        assert validate(f32) == []

    def test_same_dtype_is_identity(self):
        forest, queries = generate(spec_from_dict(doc()))
        f2, q2 = cast_workload(forest, queries, np.float64)
        assert f2 is forest and q2 is queries

    def test_masks_preserved(self, rng):
        from prefixdec.forest import QueryBatch, build_forest

        k = rng.standard_normal((6, 1, 4))
        queries = QueryBatch(rng.standard_normal((1, 1, 4)), 1)
        forest = build_forest([(0, k, k, {0: 2})], [(1,)], queries)
        f32, _ = cast_workload(forest, queries, np.float32)
        assert f32.node(1).visible_len == {0: 2}


def test_family_tables_agree():
    assert set(FAMILY_PARAMS) == set(FAMILIES)
