import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fairproxy.core import WeightedView
from fairproxy.errors import DomainError, NumericalError
from fairproxy.geometry import (ConditionalMatrix, HullProjection, check_progress, f_gamma,
                                project_simplex, project_to_hull, project_to_hull_best,
                                simplex_least_squares, split_objective_constant)


def simplex_grid(ell, step=0.01):
    """All stochastic vectors of length ``ell`` on a grid of the given step."""
    m = int(round(1 / step))
    if ell == 1:
        return np.ones((1, 1))
    pts = []

    def rec(prefix, left, depth):
        if depth == ell - 1:
            pts.append(prefix + [left])
            return
        for i in range(left + 1):
            rec(prefix + [i], left - i, depth + 1)

    rec([], m, 0)
    return np.asarray(pts, dtype=np.float64) / m


def grid_distance(A, U, step=0.01):
    Q = simplex_grid(A.shape[0], step)
    return float(np.min(np.linalg.norm(Q @ A - U, axis=1)))


def random_stochastic(rng, shape):
    x = rng.exponential(size=shape)
    return x / x.sum(axis=-1, keepdims=True)


def f_gamma_oracle(gamma, d):
    mpmath.mp.dps = 50
    g, d = mpmath.mpf(gamma), mpmath.mpf(d)
    inner = mpmath.sqrt((g ** 2 - 2 * g) * d ** 2 + 2)
    return float(mpmath.sqrt(2 * g - g ** 2) * mpmath.sqrt(2 - d ** 2 + 2 * d * (1 - g) * inner))


class TestProjectToHull:
    def test_identity_midpoint(self):
        p = project_to_hull(np.eye(2), np.array([0.5, 0.5]))
        assert np.allclose(p.coefficients, [0.5, 0.5]) and p.distance < 1e-9

    def test_second_row_is_target(self):
        p = project_to_hull(np.array([[1.0, 0], [0.5, 0.5]]), np.array([0.5, 0.5]))
        assert np.allclose(p.coefficients, [0, 1], atol=1e-9) and p.distance < 1e-9

    def test_target_outside_segment(self):
        A = np.array([[0.9, 0.1], [0.6, 0.4]])
        U = np.array([0.5, 0.5])
        t = np.linspace(0, 1, 1_000_001)
        seg = np.outer(t, A[0]) + np.outer(1 - t, A[1])
        oracle = np.min(np.linalg.norm(seg - U, axis=1))
        p = project_to_hull(A, U)
        assert np.allclose(p.coefficients, [0, 1], atol=1e-9)
        assert p.distance == pytest.approx(oracle, abs=1e-9)
        assert p.distance == pytest.approx(0.141421, abs=1e-6)

    def test_accepts_conditional_matrix_and_target(self):
        A = ConditionalMatrix(np.eye(3), np.full(3, 1 / 3))
        from fairproxy.core import TargetDistribution
        assert project_to_hull(A, TargetDistribution.uniform(3)).distance < 1e-9

    def test_rejects_nonpositive_tol(self):
        with pytest.raises(ValueError):
            project_to_hull(np.eye(2), np.array([0.5, 0.5]), tol=0)

    def test_nonconvergence_carries_best_iterate(self):
        A = np.array([[0.5, 0.5], [0.5 + 1e-7, 0.5 - 1e-7], [1.0, 0.0]])
        U = np.array([0.1, 0.9])
        try:
            p = project_to_hull(A, U)
        except NumericalError as exc:
            assert isinstance(exc.best, HullProjection)
            p = exc.best
        assert p.distance == pytest.approx(np.linalg.norm(A[0] - U), abs=1e-6)
        assert project_to_hull_best(A, U).distance == pytest.approx(p.distance)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
    def test_interior_target_has_zero_distance(self, ell, K, seed):
        rng = np.random.default_rng(seed)
        A = random_stochastic(rng, (ell, K))
        q = random_stochastic(rng, ell)
        p = project_to_hull_best(A, q @ A)
        assert p.distance <= 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 2 ** 32 - 1))
    def test_never_farther_than_any_row(self, ell, K, seed):
        rng = np.random.default_rng(seed)
        A = random_stochastic(rng, (ell, K))
        U = random_stochastic(rng, K)
        p = project_to_hull_best(A, U)
        assert p.distance <= np.min(np.linalg.norm(A - U, axis=1)) + 1e-9
        assert np.isclose(p.coefficients.sum(), 1.0) and np.all(p.coefficients >= 0)
        assert np.allclose(p.point, p.coefficients @ A)
        assert p.distance == pytest.approx(np.linalg.norm(U - p.point), abs=1e-9)

    def test_matches_simplex_grid_search(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            ell, K = rng.integers(1, 5), rng.integers(2, 4)
            A = random_stochastic(rng, (ell, K))
            U = random_stochastic(rng, K)
            got = project_to_hull_best(A, U).distance
            assert got <= grid_distance(A, U) + 1e-12
            assert abs(got - grid_distance(A, U)) <= 0.02


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-5, 5)))
def test_project_simplex_is_stochastic_and_closest(v):
    x = project_simplex(v)
    assert np.all(x >= 0) and x.sum() == pytest.approx(1.0)
    # optimality: no random stochastic vector is closer
    rng = np.random.default_rng(0)
    others = random_stochastic(rng, (200, len(v)))
    assert np.linalg.norm(x - v) <= np.min(np.linalg.norm(others - v, axis=1)) + 1e-9


def test_relaxed_solver_stays_in_orthant():
    A = np.array([[0.9, 0.1], [0.6, 0.4]])
    q, ok = simplex_least_squares(A, np.array([0.5, 0.5]), simplex=False)
    assert ok and np.all(q >= 0)


class TestFGamma:
    def test_zero_gamma(self):
        assert f_gamma(0.0, 0.3) == 0.0

    @pytest.mark.parametrize("d", [0.0, 0.5, 1.0, 1.4])
    def test_matches_high_precision(self, d):
        assert f_gamma(0.1, d) == pytest.approx(f_gamma_oracle(0.1, d), rel=1e-12)

    def test_root_value(self):
        assert f_gamma(0.1, 0.0) == pytest.approx(0.616441, abs=1e-6)
        assert f_gamma(0.1, 0.0) == pytest.approx(math.sqrt(0.19) * math.sqrt(2), rel=1e-14)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            f_gamma(1.0, 0.1)
        with pytest.raises(DomainError):
            f_gamma(0.1, -0.1)
        with pytest.raises(DomainError):
            f_gamma(0.1, 10.0)

    @pytest.mark.parametrize("d", [0.0, 0.4, 1.0])
    def test_continuity_over_grid(self, d):
        coarse = [f_gamma(g, d) for g in np.linspace(0, 0.99, 1000)]
        fine = [f_gamma(g, d) for g in np.linspace(0, 0.99, 16000)]
        jump_coarse = np.max(np.abs(np.diff(coarse)))
        jump_fine = np.max(np.abs(np.diff(fine)))
        assert jump_fine < jump_coarse / 2


class TestCheckProgress:
    def test_examples(self):
        assert check_progress(0.4, 0.35, 0.1)
        assert not check_progress(0.4, 0.37, 0.1)
        assert check_progress(0.0, 0.0, 0.3)

    @given(st.floats(0, 2), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 0.99))
    def test_composition(self, d, s1, s2, g):
        d1 = d * s1
        d2 = d1 * s2
        if check_progress(d, d1, g) and check_progress(d1, d2, g):
            assert d2 <= (1 - g) ** 2 * d + 1e-12


class TestSplitObjectiveConstant:
    def test_zero_when_projection_hits_target(self):
        U = np.array([0.5, 0.5])
        proj = HullProjection(U.copy(), np.ones(1), 0.0)
        view = WeightedView(np.ones(3))
        assert split_objective_constant(view, np.array([0, 1, 1]), proj, U, 0.1) == 0.0

    def test_weighted_mean_of_signs(self):
        z = np.array([0, 0, 0, 0, 0, 0, 0, 1, 1, 1])
        U = np.array([0.5, 0.5])
        point = np.array([0.6, 0.4])
        proj = HullProjection(point, np.ones(1), float(np.linalg.norm(point - U)))
        view = WeightedView(np.ones(10))
        oracle = sum(0.1 if zi == 0 else -0.1 for zi in z) / 10
        assert split_objective_constant(view, z, proj, U, 0.0) == pytest.approx(oracle, abs=1e-15)

    def test_single_sample(self):
        U = np.array([0.5, 0.5])
        point = np.array([0.6, 0.4])
        proj = HullProjection(point, np.ones(1), float(np.linalg.norm(point - U)))
        val = split_objective_constant(WeightedView(np.ones(1)), np.array([0]), proj, U, 0.0)
        assert val == pytest.approx(0.1, abs=1e-15)

    def test_progress_term_enters_with_negative_sign(self):
        U = np.array([0.5, 0.5])
        point = np.array([0.6, 0.4])
        proj = HullProjection(point, np.ones(1), float(np.linalg.norm(point - U)))
        z = np.array([0, 0, 1])
        view = WeightedView(np.ones(3))
        R = np.array([2 / 3, 1 / 3])
        expected = R @ (point - U) - np.linalg.norm(point - U) * f_gamma(
            0.1, float(np.linalg.norm(R - point)))
        assert split_objective_constant(view, z, proj, U, 0.1) == pytest.approx(expected)
