import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairproxy.core import TargetDistribution, base_rates
from fairproxy.errors import ContractError
from fairproxy.geometry import check_progress
from fairproxy.metrics import audit_soft, round_bound
from fairproxy.sampler import SamplingPlan
from fairproxy.splitter import RandomizedSplitter
from fairproxy.tree import (ProxyTree, classify, classify_batch, estimate_conditional_matrix,
                            expand_plan, grow_tree, membership_weights, split_budget)

from conftest import correlated_data, depth_two_tree, make_dataset, separable_data, threshold


def test_root_only_routing_and_membership():
    tree = ProxyTree(3)
    assert classify(tree, np.zeros(3), 0) == 0
    assert membership_weights(tree, np.zeros(3)).tolist() == [1.0]


def test_single_deterministic_split():
    s = RandomizedSplitter.from_hypotheses([threshold(0, 0.5, 1)])
    tree = ProxyTree(1, {"0": s}, ("00", "01"))
    assert tree.leaves[classify(tree, np.array([0.9]), 0)] == "01"
    assert tree.leaves[classify(tree, np.array([0.1]), 0)] == "00"


def test_one_split_membership_follows_routing_convention():
    hyps = [threshold(0, 0.5, 1)] * 3 + [threshold(0, 2.0, 1)] * 7
    tree = ProxyTree(1, {"0": RandomizedSplitter.from_hypotheses(hyps)}, ("00", "01"))
    assert np.allclose(membership_weights(tree, np.array([0.9])), [0.7, 0.3])


def test_disagreeing_mixture_frequency():
    s = RandomizedSplitter.from_hypotheses([threshold(0, 0.5, 1), threshold(0, 0.95, 1)])
    tree = ProxyTree(1, {"0": s}, ("00", "01"))
    x = np.array([0.8])
    hits = np.mean([classify(tree, x, seed) for seed in range(10_000)])
    assert abs(hits - 0.5) <= 0.02
    assert classify(tree, x, 17) == classify(tree, x, 17)


def test_dimension_mismatch():
    with pytest.raises(ContractError):
        classify(depth_two_tree(), np.zeros(3), 0)
    with pytest.raises(ContractError):
        membership_weights(depth_two_tree(), np.zeros((2, 5)))


def test_depth_two_membership_products():
    tree = depth_two_tree()
    x = np.array([0.4, 0.6])
    e_root = np.mean([0, 1, 1])
    e_left = np.mean([1, 0])
    expected = [(1 - e_root) * (1 - e_left), (1 - e_root) * e_left, e_root]
    assert np.allclose(membership_weights(tree, x), expected)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 2), st.floats(-1, 2)), min_size=1, max_size=30))
def test_membership_sums_to_one(points):
    M = membership_weights(depth_two_tree(), np.array(points))
    assert np.allclose(M.sum(axis=1), 1.0) and np.all(M >= 0)


def test_root_only_matrix_is_base_rates():
    ds = correlated_data(200, 1.0)
    A = estimate_conditional_matrix(ProxyTree(ds.p), ds)
    assert np.allclose(A.rows, [base_rates(ds).rates]) and A.leaf_mass.tolist() == [1.0]


def test_perfect_split_gives_identity_rows():
    ds = separable_data(300)
    tree = ProxyTree(2, {"0": RandomizedSplitter.from_hypotheses([threshold(0, 0.5, 2)])},
                     ("00", "01"))
    A = estimate_conditional_matrix(tree, ds)
    assert np.allclose(A.rows, np.eye(2))
    assert A.leaf_mass.sum() == pytest.approx(1.0, abs=1e-9)


def test_zero_mass_leaves_are_dropped_with_note():
    ds = separable_data(100)
    never = RandomizedSplitter.from_hypotheses([threshold(0, 5.0, 2)])
    tree = ProxyTree(2, {"0": never}, ("00", "01"))
    notes = []
    A = estimate_conditional_matrix(tree, ds, notes)
    assert A.leaf_ids == ("00",) and notes


def test_json_round_trip_preserves_routing(rng):
    tree = depth_two_tree()
    back = ProxyTree.from_json(tree.to_json())
    X = rng.random((50, 2))
    assert back.leaves == tree.leaves
    assert np.array_equal(membership_weights(back, X), membership_weights(tree, X))
    assert np.array_equal(classify_batch(back, X, np.random.default_rng(1)),
                          classify_batch(tree, X, np.random.default_rng(1)))
    with pytest.raises(ValueError):
        ProxyTree.from_json(tree.to_json().replace('"version": 1', '"version": 9'))


def test_tree_structure_is_validated():
    s = RandomizedSplitter.from_hypotheses([threshold(0, 0.5, 1)])
    with pytest.raises(ValueError):
        ProxyTree(1, {"0": s}, ("00",))
    with pytest.raises(ValueError):
        ProxyTree(1, {}, ("010",))


def test_expand_plan_fills_dropped_leaves():
    tree = depth_two_tree()
    plan = SamplingPlan(np.array([0.5, 0.5]), np.array([1.0, 0.4]), 2.0, "strict", ("000", "01"))
    full = expand_plan(plan, tree)
    assert full.leaf_ids == tree.leaves and full.rho.tolist() == [1.0, 0.0, 0.4]


def test_split_budget_modes():
    assert split_budget(0.2, 0.05, "nominal") == 0.2
    assert split_budget(0.2, 0.05, "total") == pytest.approx(0.15)
    assert split_budget(0.01, 0.05, "total") is None
    with pytest.raises(ValueError):
        split_budget(0.2, 0.05, "other")


class TestGrowTree:
    def test_zero_alpha_on_generic_data_is_root_only(self):
        ds = correlated_data(600, 2.0, seed=5)
        tree, A, trace = grow_tree(ds, TargetDistribution.uniform(3), 0.0, 0.05, 0.1)
        assert tree.leaf_count == 1 and trace.stop_reason == "no acceptable split"

    def test_balanced_root_stops_immediately(self):
        ds = make_dataset(np.random.default_rng(0).random((40, 2)), np.arange(40) % 2)
        tree, A, trace = grow_tree(ds, TargetDistribution.uniform(2), 0.3, 0.05, 0.1)
        assert tree.leaf_count == 1 and trace.final_distance == pytest.approx(0, abs=1e-12)
        assert trace.stop_reason == "target reached" and not trace.records

    def test_separable_data_within_round_bound(self):
        ds = separable_data(600)
        tree, A, trace = grow_tree(ds, TargetDistribution.uniform(2), 1.0, 0.05, 0.1)
        assert len(trace.accepted) <= round_bound(0.1, 0.1) == 26
        assert trace.final_distance <= 0.1

    def test_trace_invariants(self):
        ds = correlated_data(900, 2.5, seed=2)
        U = TargetDistribution.uniform(3)
        tree, A, trace = grow_tree(ds, U, 0.5, 0.05, 0.1)
        acc = trace.accepted
        assert tree.split_count == len(acc) == tree.leaf_count - 1
        assert all(check_progress(r.dist_before, r.dist_after, 0.1) for r in acc)
        dists = [r.dist_after for r in acc]
        assert dists == sorted(dists, reverse=True)
        assert sorted(A.leaf_ids) == list(A.leaf_ids)
        assert A.leaf_mass.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(A.rows.sum(axis=1), 1.0)
        M = membership_weights(tree, ds.features)
        assert trace.all_accepted_feasible
        assert audit_soft(M, ds.sensitive, U).disclosivity <= 0.5 + 0.05
        assert estimate_conditional_matrix(tree, ds).rows == pytest.approx(A.rows)

    def test_one_round_per_leaf_count_increment(self):
        ds = correlated_data(600, 3.0, seed=8)
        tree, _, trace = grow_tree(ds, TargetDistribution.uniform(3), 1.0, 0.05, 0.1)
        rounds = sorted({r.round for r in trace.accepted})
        assert rounds == list(range(1, len(rounds) + 1))

    def test_height_cap(self):
        ds = correlated_data(600, 3.0, seed=8)
        tree, _, trace = grow_tree(ds, TargetDistribution.uniform(3), 1.0, 0.05, 0.1,
                                   max_height=2)
        assert tree.height <= 2

    def test_total_budget_below_epsilon_makes_no_split(self):
        ds = separable_data(200)
        tree, _, trace = grow_tree(ds, TargetDistribution.uniform(2), 0.02, 0.05, 0.1,
                                   budget="total")
        assert tree.leaf_count == 1 and trace.stop_reason == "budget leaves no room for splits"

    def test_growth_is_deterministic(self):
        ds = correlated_data(400, 2.0, seed=9)
        U = TargetDistribution.uniform(3)
        a = grow_tree(ds, U, 0.4, 0.05, 0.1)[0].to_json()
        b = grow_tree(ds, U, 0.4, 0.05, 0.1)[0].to_json()
        assert a == b

    def test_invalid_parameters(self):
        ds = separable_data(50)
        with pytest.raises(ValueError):
            grow_tree(ds, TargetDistribution.uniform(2), 0.1, 0.05, 0.1, max_height=0)
        with pytest.raises(ValueError):
            grow_tree(ds, TargetDistribution.uniform(2), 0.1, 0.0, 0.1)
