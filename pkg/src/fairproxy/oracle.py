"""Weighted cost-sensitive classification oracle (paired regression classifier).

Cost targets are regressed with weighted least squares, one model per label;
the predicted label is the one with the smaller fitted cost. Since the cost of
label 0 is identically zero here, its regression is the zero function and
``h(x) = 1`` iff the fitted label-1 cost is negative (ties go to 0).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

RIDGE = 1e-8


@dataclass(frozen=True)
class CostInstance:
    points: np.ndarray
    weights: np.ndarray
    cost1: np.ndarray
    cost0: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        c1 = np.asarray(self.cost1, dtype=np.float64)
        c0 = np.zeros_like(c1) if self.cost0 is None else np.asarray(self.cost0, dtype=np.float64)
        if X.ndim != 2 or w.shape != (X.shape[0],) or c1.shape != w.shape:
            raise ValueError("points, weights and costs must agree in length")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        if np.any(c0 != 0):
            raise ValueError("label-0 costs must be exactly zero")
        if not (np.all(np.isfinite(c1)) and np.all(np.isfinite(X))):
            raise ValueError("costs and points must be finite")
        for name, v in (("points", X), ("weights", w), ("cost1", c1), ("cost0", c0)):
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class LinearThresholdHypothesis:
    """``h(x) = 1`` iff ``x @ coef + intercept < 0`` (fitted label-1 cost below 0)."""

    coef: np.ndarray
    intercept: float

    def score(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict(self, X) -> np.ndarray:
        return (self.score(X) < 0).astype(np.int8)

    @classmethod
    def constant(cls, label: int, p: int) -> "LinearThresholdHypothesis":
        return cls(np.zeros(p), -1.0 if label else 1.0)


def augment(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.hstack([X, np.ones((X.shape[0], 1))])


class PairedRegression:
    """Weighted least-squares solver reused across cost vectors for fixed ``(X, w)``.

    Weights are normalized to sum one before the ridge term is added, which
    makes fits invariant to positive rescaling of ``w``.
    """

    def __init__(self, X, w):
        self.Xa = augment(X)
        w = np.asarray(w, dtype=np.float64)
        total = w.sum()
        self.w = w / total if total > 0 else w
        H = self.Xa.T @ (self.Xa * self.w[:, None])
        H[np.diag_indices_from(H)] += RIDGE
        self._factor = cho_factor(H)

    def _solve(self, rhs):
        return cho_solve(self._factor, rhs)

    def coefficients(self, targets) -> np.ndarray:
        """Coefficients for one ``(m,)`` or several ``(m, r)`` target vectors."""
        t = np.asarray(targets, dtype=np.float64)
        rhs = self.Xa.T @ (t * (self.w if t.ndim == 1 else self.w[:, None]))
        return self._solve(rhs)

    def fit(self, cost1) -> LinearThresholdHypothesis:
        beta = self.coefficients(cost1)
        return LinearThresholdHypothesis(beta[:-1], float(beta[-1]))


def oracle_cost(h, inst: CostInstance) -> float:
    """Weighted total cost ``sum_j w_j [h_j c1_j + (1 - h_j) c0_j]``."""
    pred = h.predict(inst.points) if hasattr(h, "predict") else np.asarray(h)
    pred = pred.astype(np.float64)
    return float(np.sum(inst.weights * (pred * inst.cost1 + (1 - pred) * inst.cost0)))


def choose_best(fitted_cost: float, all_one_cost: float) -> int:
    """Pick among fitted (-1), all-zero (0) and all-one (1) hypotheses by cost.

    The fitted classifier wins ties; all-zero wins a tie against all-one.
    """
    best = min(0.0, all_one_cost)
    if fitted_cost <= best:
        return -1
    return 1 if all_one_cost < 0.0 else 0


def best_threshold(scores, cost) -> tuple[int, float]:
    """Best shift of a fitted score: ``h = 1[score < c]`` minimizing ``sum h * cost``.

    Returns ``(mode, c)`` where mode 0 / 1 means all-zero / all-one is best and
    -1 means the threshold ``c`` (midway between consecutive distinct scores).
    Ties go to the hypothesis labelling fewer points 1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    m = len(s)
    total = np.concatenate([[0.0], np.cumsum(np.asarray(cost, dtype=np.float64)[order])])
    valid = np.ones(m + 1, dtype=bool)
    valid[1:m] = s[:-1] < s[1:]
    total[~valid] = np.inf
    j = int(np.argmin(total))
    if j == 0:
        return 0, 0.0
    if j == m:
        return 1, 0.0
    return -1, float(0.5 * (s[j - 1] + s[j]))


def calibrated_best_response(inst: CostInstance) -> LinearThresholdHypothesis:
    """PRC fit whose intercept is re-tuned to the cost-minimizing threshold.

    Only the intercept changes, so the result stays in the PRC hypothesis
    class; its cost is never above the plain PRC response or either constant.
    """
    p = inst.points.shape[1]
    h = PairedRegression(inst.points, inst.weights).fit(inst.cost1)
    mode, c = best_threshold(h.score(inst.points), inst.weights * inst.cost1)
    if mode >= 0:
        return LinearThresholdHypothesis.constant(mode, p)
    return LinearThresholdHypothesis(h.coef, h.intercept - c)


def prc_best_response(inst: CostInstance) -> LinearThresholdHypothesis:
    """Paired-regression best response, guarded by the two constant classifiers.

    Heuristic: the result is not guaranteed cost-optimal over the class, only
    no worse than labelling everything 0 or everything 1.
    """
    p = inst.points.shape[1]
    h = PairedRegression(inst.points, inst.weights).fit(inst.cost1)
    fitted = oracle_cost(h, inst)
    all_one = float(np.sum(inst.weights * inst.cost1))
    pick = choose_best(fitted, all_one)
    return h if pick == -1 else LinearThresholdHypothesis.constant(pick, p)
