"""Convex-hull distance machinery for conditional distribution matrices."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .core import TargetDistribution, WeightedView
from .errors import DegenerateVertexError, DomainError, NumericalError

logger = logging.getLogger(__name__)

MAX_ITER = 10_000
MOVE_TOL = 1e-10
POLISH_EVERY = 50


@dataclass(frozen=True)
class ConditionalMatrix:
    """Rows ``a_j = P[z=. | zhat=j]`` with leaf masses ``P[zhat=j]``."""

    rows: np.ndarray
    leaf_mass: np.ndarray
    leaf_ids: tuple = ()

    def __post_init__(self):
        A = np.array(self.rows, dtype=np.float64)
        r = np.array(self.leaf_mass, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1:
            raise ValueError("conditional matrix needs at least one row")
        if np.any(A < -1e-12) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("rows must be stochastic")
        if r.shape != (A.shape[0],) or np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
            raise ValueError("leaf_mass must be a stochastic vector over rows")
        ids = tuple(self.leaf_ids) or tuple(str(j) for j in range(A.shape[0]))
        if len(ids) != A.shape[0]:
            raise ValueError("one leaf id per row required")
        A.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "rows", A)
        object.__setattr__(self, "leaf_mass", r)
        object.__setattr__(self, "leaf_ids", ids)

    @property
    def shape(self):
        return self.rows.shape


@dataclass(frozen=True)
class HullProjection:
    point: np.ndarray
    coefficients: np.ndarray
    distance: float


def project_simplex(v: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = z}`` (sort based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    ind = np.arange(1, len(v) + 1)
    k = np.count_nonzero(u - css / ind > 0)
    theta = css[k - 1] / k
    return np.maximum(v - theta, 0.0)


def _as_target(U) -> np.ndarray:
    return U.target if isinstance(U, TargetDistribution) else np.asarray(U, dtype=np.float64)


def _as_rows(A) -> np.ndarray:
    return A.rows if isinstance(A, ConditionalMatrix) else np.asarray(A, dtype=np.float64)


def _objective(A, U, q) -> float:
    r = q @ A - U
    return float(r @ r)


def _support_solve(A, U, support, simplex):
    """Least squares restricted to ``support`` (sum-to-one if ``simplex``), no sign bound."""
    As = A[support]
    G = As @ As.T
    b = As @ U
    if simplex:
        k = len(support)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = 2 * G
        kkt[:k, k] = kkt[k, :k] = 1.0
        sol = np.linalg.lstsq(kkt, np.append(2 * b, 1.0), rcond=None)[0][:k]
    else:
        sol = np.linalg.lstsq(G, b, rcond=None)[0]
    return sol


def _is_optimal(A, U, q, simplex, tol=1e-9) -> bool:
    """KKT check: on the support the gradient is flat, elsewhere it is no smaller."""
    grad = 2.0 * (q @ A - U) @ A.T
    on = q > 0
    if simplex:
        mu = grad[on].mean() if on.any() else 0.0
        return bool(np.all(np.abs(grad[on] - mu) <= tol) and np.all(grad[~on] >= mu - tol))
    return bool(np.all(np.abs(grad[on]) <= tol) and np.all(grad[~on] >= -tol))


def _polish(A, U, q, simplex):
    """Exact refinement on the support found by gradient descent.

    Solves the restricted problem in closed form, dropping the most negative
    coordinate until the solution is feasible. Returns the improved iterate or
    ``None`` if none was found.
    """
    support = list(np.flatnonzero(q > 1e-12))
    best, best_val = None, _objective(A, U, q)
    while support:
        sol = _support_solve(A, U, np.asarray(support), simplex)
        if np.all(sol >= 0):
            cand = np.zeros_like(q)
            cand[support] = sol
            if simplex:
                cand /= cand.sum()
            val = _objective(A, U, cand)
            if val <= best_val:
                best, best_val = cand, val
            break
        support.pop(int(np.argmin(sol)))
    return best


def simplex_least_squares(A, U, *, simplex: bool = True, max_iter: int = MAX_ITER,
                          tol: float = MOVE_TOL):
    """Projected gradient descent for ``min ||qA - U||`` over stochastic ``q``.

    With ``simplex=False`` the feasible set is the nonnegative orthant instead.
    The final iterate is refined by an exact solve on its support, which
    fixes the slow tail on ill-conditioned rows. Returns ``(q, converged)``.
    """
    A = _as_rows(A)
    U = _as_target(U)
    ell = A.shape[0]
    G = A @ A.T
    b = A @ U
    L = 2.0 * max(np.linalg.eigvalsh(G).max(), 1e-12)
    step = 1.0 / L
    q = np.full(ell, 1.0 / ell)
    proj = project_simplex if simplex else (lambda v: np.maximum(v, 0.0))
    converged = False
    for it in range(1, max_iter + 1):
        grad = 2.0 * (q @ G - b)
        q_new = proj(q - step * grad)
        if np.max(np.abs(q_new - q)) < tol:
            q, converged = q_new, True
            break
        q = q_new
        if it % POLISH_EVERY == 0:
            polished = _polish(A, U, q, simplex)
            if polished is not None and _is_optimal(A, U, polished, simplex):
                return polished, True
    polished = _polish(A, U, q, simplex)
    if polished is not None:
        q = polished
        converged = converged or _is_optimal(A, U, q, simplex)
    return q, converged


def project_to_hull(A, U, tol: float = 1e-6) -> HullProjection:
    """Closest point to ``U`` in the convex hull of the rows of ``A``.

    ``distance <= tol`` is the membership test used by tree growth.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rows = _as_rows(A)
    target = _as_target(U)
    q, ok = simplex_least_squares(rows, target)
    point = q @ rows
    proj = HullProjection(point, q, float(np.linalg.norm(target - point)))
    if not ok:
        raise NumericalError("hull projection did not converge", best=proj)
    return proj


def project_to_hull_best(A, U, tol: float = 1e-6) -> HullProjection:
    """As :func:`project_to_hull`, falling back to the best iterate on the cap."""
    try:
        return project_to_hull(A, U, tol)
    except NumericalError as exc:
        logger.warning("%s; using best iterate (distance %.3g)", exc, exc.best.distance)
        return exc.best


def f_gamma(gamma: float, dist_v_uprime: float) -> float:
    """Progress threshold ``f(gamma)`` for a vertex at distance ``d`` from U'."""
    if not 0 <= gamma < 1:
        raise DomainError("gamma must lie in [0, 1)")
    if dist_v_uprime < 0:
        raise DomainError("distance must be nonnegative")
    d = dist_v_uprime
    inner = (gamma * gamma - 2 * gamma) * d * d + 2
    if inner < 0:
        raise DomainError("negative inner radicand in f(gamma)")
    outer = 2 - d * d + 2 * d * (1 - gamma) * math.sqrt(inner)
    if outer < 0:
        raise DomainError("negative radicand in f(gamma)")
    return math.sqrt(2 * gamma - gamma * gamma) * math.sqrt(outer)


def check_progress(dist_before: float, dist_after: float, gamma: float) -> bool:
    return dist_after <= (1.0 - gamma) * dist_before


def vertex_row(view: WeightedView, z: np.ndarray, K: int) -> np.ndarray:
    """Weighted group distribution ``R(V)`` of the samples at a vertex."""
    w = view.weights
    mass = w.sum()
    if mass <= 0:
        raise DegenerateVertexError(f"vertex {view.vertex_id!r} has zero weight")
    return np.bincount(z, weights=w, minlength=K) / mass


def split_objective_constant(view: WeightedView, z, proj: HullProjection,
                             U, gamma: float) -> float:
    """Per-vertex constant ``Q`` of the split objective.

    ``Q = mean_w(U'_z - U_z) - ||U' - U|| f(gamma)``. A split with
    ``sum_j w_j h(x_j) (U'_{z_j} - U_{z_j} - Q) <= 0`` moves the chosen child
    at least ``f(gamma)`` along ``U - U'`` relative to the vertex.
    """
    z = np.asarray(z)
    target = _as_target(U)
    diff = proj.point - target
    R = vertex_row(view, z, len(target))
    mean_term = float(R @ diff)
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        return mean_term
    f = f_gamma(gamma, float(np.linalg.norm(R - proj.point)))
    return mean_term - dist * f
