import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairproxy.baselines import (DirectClassifier, naive_plan, naive_plan_from_membership,
                                 predicted_matrix, qp_plan, qp_plan_from_membership,
                                 train_direct)
from fairproxy.core import TargetDistribution
from fairproxy.sampler import induced_distribution

from conftest import make_dataset


def indicator_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 3, n)
    X = np.column_stack([np.eye(3)[z], rng.random(n)])
    return make_dataset(X, z, 3)


@pytest.mark.parametrize("kind", ["softmax", "cart"])
def test_separable_groups_are_learned(kind):
    ds = indicator_data()
    clf = train_direct(ds, kind)
    assert np.array_equal(clf.predict(ds.features), ds.sensitive)


@pytest.mark.parametrize("kind", ["softmax", "cart"])
def test_constant_features_predict_majority(kind):
    z = np.r_[np.zeros(30, int), np.ones(10, int)]
    clf = train_direct(make_dataset(np.ones((40, 2)), z), kind)
    assert set(clf.predict(np.ones((5, 2))).tolist()) == {0}


def test_cart_root_split_is_optimal_threshold():
    x = np.linspace(0, 1, 40)
    z = (x > 0.37).astype(int)
    clf = train_direct(make_dataset(x[:, None], z), "cart")
    t = clf.params["threshold"][0]
    # brute force: any threshold between the two classes separates perfectly
    assert x[z == 0].max() <= t < x[z == 1].min()


@pytest.mark.parametrize("kind", ["softmax", "cart"])
def test_deterministic_and_serializable(kind):
    ds = indicator_data(seed=3)
    a = train_direct(ds, kind, seed=1)
    b = train_direct(ds, kind, seed=1)
    assert a.to_json() == b.to_json()
    back = DirectClassifier.from_json(a.to_json())
    assert np.array_equal(back.predict(ds.features), a.predict(ds.features))


def test_unknown_kind():
    with pytest.raises(ValueError):
        train_direct(indicator_data(), "forest")


def test_naive_plan_examples():
    uniform = naive_plan_from_membership(np.eye(2)[[0, 1, 0, 1]])
    assert uniform.rho.tolist() == [1.0, 1.0]
    skew = naive_plan_from_membership(np.eye(2)[[0, 0, 0, 1]])
    assert np.allclose(skew.rho, [1 / 3, 1])
    three = naive_plan_from_membership(np.eye(3)[[0, 0, 0, 0, 1, 1, 1, 2]])
    # masses (1/2, 3/8, 1/8): rho proportional to (2, 8/3, 8), normalized by 8
    assert np.allclose(three.rho, [0.25, 1 / 3, 1.0])


def test_naive_plan_drops_empty_cells(caplog):
    plan = naive_plan_from_membership(np.eye(3)[[0, 0, 2]])
    assert plan.rho[1] == 0.0 and "empty" in caplog.text


def test_qp_plan_identity_classifier():
    ds = indicator_data()
    clf = train_direct(ds, "cart")
    A = predicted_matrix(clf, ds)
    assert np.allclose(A.rows, np.eye(3))
    plan = qp_plan(clf, ds, TargetDistribution.uniform(3))
    assert np.allclose(plan.q, 1 / 3)
    assert np.allclose(induced_distribution(A, plan.rho), 1 / 3)


def test_qp_plan_for_constant_classifier():
    z = np.r_[np.zeros(30, int), np.ones(10, int)]
    ds = make_dataset(np.ones((40, 2)), z)
    clf = train_direct(ds, "cart")
    plan = qp_plan(clf, ds, TargetDistribution.uniform(2))
    assert plan.rho[0] == 1.0 and plan.rho[1] == 0.0
    assert naive_plan(clf, ds).rho.tolist() == [1.0, 0.0]


def exact_distance(M, z, rho, K):
    Z = np.eye(K)[z]
    accept = M @ rho
    return float(np.linalg.norm(accept @ Z / accept.sum() - 1 / K))


def test_noisy_classifier_qp_beats_naive():
    rng = np.random.default_rng(5)
    n = 2000
    z = (rng.random(n) < 0.3).astype(int)
    flip = rng.random(n) < np.where(z == 1, 0.4, 0.1)
    pred = np.where(flip, 1 - z, z)
    M = np.eye(2)[pred]
    U = TargetDistribution.uniform(2)
    qp = qp_plan_from_membership(M, z, 2, U, relaxed=False)
    naive = naive_plan_from_membership(M)
    assert exact_distance(M, z, qp.rho, 2) < exact_distance(M, z, naive.rho, 2)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
def test_qp_never_farther_than_naive(K, seed):
    rng = np.random.default_rng(seed)
    n = 400
    z = rng.integers(0, K, n)
    z[:K] = np.arange(K)
    noise = rng.random()
    pred = np.where(rng.random(n) < noise, rng.integers(0, K, n), z)
    M = np.eye(K)[pred]
    qp = qp_plan_from_membership(M, z, K, TargetDistribution.uniform(K), relaxed=False)
    naive = naive_plan_from_membership(M)
    assert exact_distance(M, z, qp.rho, K) <= exact_distance(M, z, naive.rho, K) + 1e-9
