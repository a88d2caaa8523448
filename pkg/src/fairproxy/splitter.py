"""Learning a randomized splitting function for one tree vertex.

The constrained split problem is solved as a zero-sum game on its Lagrangian:
the Learner best-responds through the paired-regression oracle and the
Auditor runs projected online gradient ascent on the multipliers. The output
is the uniform mixture over the Learner's plays.

Multipliers are stored as a ``(K, 4)`` array whose columns follow the four
constraint families, in this order for each group ``k``::

    0: sum w h     (1[z=k] - r_k - alpha)   chosen child, upper
    1: sum w (1-h) (1[z=k] - r_k - alpha)   complement, upper
    2: sum w h     (r_k - 1[z=k] - alpha)   chosen child, lower
    3: sum w (1-h) (r_k - 1[z=k] - alpha)   complement, lower

The flat 4K vector is the row-major ravel of that array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BaseRates, LabeledDataset, WeightedView
from .errors import ContractError, DegenerateVertexError
from .geometry import HullProjection, _as_target, split_objective_constant
from .oracle import (LinearThresholdHypothesis, PairedRegression, augment, best_threshold,
                     choose_best)

DEFAULT_T_CAP = 2000
_CHUNK = 256


@dataclass
class DualState:
    lam: np.ndarray
    lam_max: float
    learning_rate: float = 1.0

    def step(self, grad: np.ndarray, eta: float) -> None:
        """Ascent step, clip to the nonnegative orthant, then to the norm ball."""
        self.learning_rate = eta
        lam = np.maximum(self.lam + eta * grad, 0.0)
        norm = np.linalg.norm(lam)
        if norm > self.lam_max:
            lam *= self.lam_max / norm
        self.lam = lam


@dataclass(frozen=True)
class RandomizedSplitter:
    """Uniform mixture over ``T`` linear threshold hypotheses.

    Hypothesis ``t`` labels ``x`` with 1 iff
    ``augment(x) @ basis @ mix[t] < offsets[t]``. ``modes[t]`` overrides it
    with a constant: 0 or 1 for all-zero / all-one, -1 to use the linear rule.
    """

    basis: np.ndarray
    mix: np.ndarray
    modes: np.ndarray = field(default=None)
    offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        mix = np.atleast_2d(np.asarray(self.mix, dtype=np.float64))
        modes = (np.full(len(mix), -1, dtype=np.int8) if self.modes is None
                 else np.asarray(self.modes, dtype=np.int8))
        offsets = (np.zeros(len(mix)) if self.offsets is None
                   else np.asarray(self.offsets, dtype=np.float64))
        if len(mix) == 0:
            raise ValueError("a randomized splitter needs at least one hypothesis")
        if (mix.shape[1] != basis.shape[1] or modes.shape != (len(mix),)
                or offsets.shape != (len(mix),)):
            raise ValueError("inconsistent splitter shapes")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "mix", mix)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_hypotheses(cls, hyps) -> "RandomizedSplitter":
        coef = np.array([np.append(h.coef, h.intercept) for h in hyps])
        return cls(np.eye(coef.shape[1]), coef)

    def __len__(self):
        return len(self.mix)

    @property
    def p(self) -> int:
        return self.basis.shape[0] - 1

    @property
    def hypotheses(self) -> list:
        coef = self.mix @ self.basis.T
        out = []
        for c, mode, off in zip(coef, self.modes, self.offsets):
            if mode >= 0:
                out.append(LinearThresholdHypothesis.constant(int(mode), self.p))
            else:
                out.append(LinearThresholdHypothesis(c[:-1], float(c[-1] - off)))
        return out

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.p:
            raise ContractError(f"expected {self.p} features, got {X.shape[1]}")
        return X

    def expected(self, X) -> np.ndarray:
        """``E[h~(x)]`` for each row of ``X``."""
        X = self._check(X)
        S = augment(X) @ self.basis
        total = np.zeros(len(X))
        for start in range(0, len(self.mix), _CHUNK):
            mix = self.mix[start:start + _CHUNK]
            modes = self.modes[start:start + _CHUNK]
            pred = (S @ mix.T) < self.offsets[start:start + _CHUNK]
            pred[:, modes == 0] = False
            pred[:, modes == 1] = True
            total += pred.sum(axis=1)
        return total / len(self.mix)

    def predict_with(self, X, which: np.ndarray) -> np.ndarray:
        """Prediction of hypothesis ``which[i]`` on row ``i``."""
        X = self._check(X)
        S = augment(X) @ self.basis
        scores = np.einsum("ij,ij->i", S, self.mix[which])
        pred = scores < self.offsets[which]
        modes = self.modes[which]
        pred[modes == 0] = False
        pred[modes == 1] = True
        return pred.astype(np.int8)

    def to_dict(self) -> dict:
        return {"basis": self.basis.tolist(), "mix": self.mix.tolist(),
                "modes": self.modes.tolist(), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, d) -> "RandomizedSplitter":
        return cls(np.array(d["basis"]), np.array(d["mix"]), np.array(d["modes"]),
                   np.array(d["offsets"]))


@dataclass
class SplitResult:
    splitter: RandomizedSplitter
    prob_one: np.ndarray
    feasible: bool
    max_violation: float
    objective: float
    rounds: int
    dual: DualState


def _rates(rates) -> np.ndarray:
    return rates.rates if isinstance(rates, BaseRates) else np.asarray(rates, dtype=np.float64)


def dual_gradient(view: WeightedView, z, splitter_probs, rates, alpha: float) -> np.ndarray:
    """Constraint values (the multiplier coefficients of the Lagrangian), flat 4K."""
    h = np.asarray(splitter_probs, dtype=np.float64)
    return _constraint_matrix(view.weights, np.asarray(z), h, _rates(rates), alpha).ravel()


def _constraint_matrix(w, z, h, r, alpha) -> np.ndarray:
    K = len(r)
    wh = np.bincount(z, weights=w * h, minlength=K)
    wc = np.bincount(z, weights=w * (1.0 - h), minlength=K)
    mh, mc = wh.sum(), wc.sum()
    out = np.empty((K, 4))
    out[:, 0] = wh - (r + alpha) * mh
    out[:, 1] = wc - (r + alpha) * mc
    out[:, 2] = (r - alpha) * mh - wh
    out[:, 3] = (r - alpha) * mc - wc
    return out


def _lam_matrix(lam, K) -> np.ndarray:
    if isinstance(lam, DualState):
        lam = lam.lam
    return np.asarray(lam, dtype=np.float64).reshape(K, 4)


def lagrangian_value(view: WeightedView, z, splitter_probs, lam, Q: float,
                     proj: HullProjection, U, rates, alpha: float) -> float:
    """Lagrangian at mixture probabilities ``splitter_probs`` and multipliers ``lam``."""
    z = np.asarray(z)
    r = _rates(rates)
    h = np.asarray(splitter_probs, dtype=np.float64)
    diff = proj.point - _as_target(U)
    w = view.weights
    objective = float(np.sum(w * h * (diff[z] - Q)))
    C = _constraint_matrix(w, z, h, r, alpha)
    return objective + float(np.sum(_lam_matrix(lam, len(r)) * C))


def group_costs(lam, Q: float, diff, rates, alpha: float) -> np.ndarray:
    """Per-group bracket of the label-1 cost; ``c1(x) = w(x) * G[z(x)]``."""
    r = _rates(rates)
    L = _lam_matrix(lam, len(r))
    a = L[:, 0] - L[:, 1]
    b = L[:, 2] - L[:, 3]
    return (-Q + np.asarray(diff) + a - a @ (r + alpha) - b + b @ (r - alpha))


def label_one_costs(view: WeightedView, z, lam, Q, proj, U, rates, alpha) -> np.ndarray:
    """Cost vector ``LC(lam)`` for labelling each sample 1 (label 0 costs nothing)."""
    G = group_costs(lam, Q, proj.point - _as_target(U), rates, alpha)
    return view.weights * G[np.asarray(z)]


def posterior_violation(w, z, prob_one, r, alpha) -> float:
    """Largest ``|P[z=k | child] - r_k| - alpha`` over both children with mass."""
    K = len(r)
    worst = -np.inf
    for weights in (w * prob_one, w * (1.0 - prob_one)):
        mass = weights.sum()
        if mass <= 1e-12:
            continue
        post = np.bincount(z, weights=weights, minlength=K) / mass
        worst = max(worst, float(np.max(np.abs(post - r))) - alpha)
    return worst


def iteration_count(K: int, m: float, alpha: float, epsilon: float) -> tuple[float, int]:
    """Multiplier bound and the no-regret round count for total mass ``m``."""
    lam_max = m * (K - 1) / (K * epsilon) + 2.0
    T = math.ceil((2 * K * m * (1 + alpha) * lam_max / epsilon) ** 2)
    return lam_max, T


def learn_split(view: WeightedView, ds: LabeledDataset, proj: HullProjection, U, rates,
                alpha: float, epsilon: float, gamma: float,
                t_cap: int = DEFAULT_T_CAP, calibrate: bool = True) -> SplitResult:
    """Run the Lagrangian game at vertex ``view`` and return the mixture.

    The game is played on weights rescaled to unit total mass, so the
    multiplier bound and step sizes do not grow with the vertex size. With
    ``calibrate`` the Learner's PRC response has its threshold re-tuned to the
    realized cost minimum each round. The result is flagged infeasible when
    either child's posterior deviates from the base rates by more than
    ``alpha + epsilon``.
    """
    w_full = view.weights
    mass = w_full.sum()
    if mass <= 0:
        raise DegenerateVertexError(f"vertex {view.vertex_id!r} has zero weight")
    r = _rates(rates)
    K = len(r)
    target = _as_target(U)
    Q = split_objective_constant(view, ds.sensitive, proj, target, gamma)
    diff = proj.point - target

    active = np.flatnonzero(w_full > 0)
    w = w_full[active] / mass
    z = ds.sensitive[active]
    Z = np.zeros((len(active), K))
    Z[np.arange(len(active)), z] = 1.0

    fitter = PairedRegression(ds.features[active], w)
    basis = fitter.coefficients(Z)            # coefficients per unit group cost
    P = fitter.Xa @ basis                      # fitted cost per unit group cost
    group_mass = Z.T @ w

    lam_max, T = iteration_count(K, 1.0, alpha, epsilon)
    rounds = max(1, min(T, t_cap))
    dual = DualState(np.zeros(4 * K), lam_max)
    mix = np.empty((rounds, K))
    modes = np.empty(rounds, dtype=np.int8)
    offsets = np.zeros(rounds)
    sum_h = np.zeros(len(active))
    for t in range(1, rounds + 1):
        G = group_costs(dual.lam, Q, diff, r, alpha)
        score = P @ G
        cost = G[z] * w
        if calibrate:
            pick, offsets[t - 1] = best_threshold(score, cost)
            h = (score < offsets[t - 1]).astype(np.float64)
        else:
            h = (score < 0).astype(np.float64)
            pick = choose_best(float(cost @ h), float(group_mass @ G))
        if pick >= 0:
            h = np.full(len(active), float(pick))
        mix[t - 1] = G
        modes[t - 1] = pick
        sum_h += h
        before = dual.lam
        dual.step(_constraint_matrix(w, z, h, r, alpha).ravel(), t ** -0.5)
        if t < rounds and np.array_equal(before, dual.lam):
            # unchanged multipliers replay this round forever; fill in the rest
            mix[t:] = G
            modes[t:] = pick
            offsets[t:] = offsets[t - 1]
            sum_h += (rounds - t) * h
            break

    hbar = sum_h / rounds
    prob_one = np.zeros(len(w_full))
    prob_one[active] = hbar
    violation = posterior_violation(w, z, hbar, r, alpha)
    objective = float(np.sum(w * hbar * (diff[z] - Q)))
    return SplitResult(
        splitter=RandomizedSplitter(basis, mix, modes, offsets),
        prob_one=prob_one,
        feasible=bool(violation <= epsilon),
        max_violation=violation,
        objective=objective,
        rounds=rounds,
        dual=dual,
    )
