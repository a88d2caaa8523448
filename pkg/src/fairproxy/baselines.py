"""Comparison proxies that predict the sensitive group directly."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax
from sklearn.tree import DecisionTreeClassifier

from .core import LabeledDataset
from .errors import DegeneratePlanError
from .geometry import ConditionalMatrix
from .sampler import SamplingPlan, derive_plan
from .tree import conditional_from_membership

logger = logging.getLogger(__name__)

SOFTMAX_EPOCHS = 500
SOFTMAX_RATE = 0.1
CART_DEPTH = 8
KINDS = ("softmax", "cart")


@dataclass(frozen=True)
class DirectClassifier:
    """Group classifier; predictions are 0-based group indices.

    ``params`` holds ``coef`` (``(p + 1, K)``, intercept last) for softmax, or
    the node arrays ``left``, ``right``, ``feature``, ``threshold`` and
    ``counts`` for cart (``x[feature] <= threshold`` goes left).
    """

    kind: str
    group_count: int
    params: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind == "softmax":
            W = np.asarray(self.params["coef"])
            return np.argmax(X @ W[:-1] + W[-1], axis=1)
        left = np.asarray(self.params["left"])
        right = np.asarray(self.params["right"])
        feature = np.asarray(self.params["feature"])
        threshold = np.asarray(self.params["threshold"])
        counts = np.asarray(self.params["counts"])
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            inner = left[node] >= 0
            if not inner.any():
                break
            idx = np.flatnonzero(inner)
            at = node[idx]
            go_left = X[idx, feature[at]] <= threshold[at]
            node[idx] = np.where(go_left, left[at], right[at])
        return np.argmax(counts[node], axis=1)

    def as_proxy(self):
        return lambda X, rng: self.predict(X)

    def membership(self, X) -> np.ndarray:
        """One-hot ``(n, K)`` cell membership of the predictions."""
        return np.eye(self.group_count)[self.predict(X)]

    def to_json(self) -> str:
        params = {k: np.asarray(v).tolist() for k, v in self.params.items()}
        return json.dumps({"kind": self.kind, "group_count": self.group_count,
                           "params": params})

    @classmethod
    def from_json(cls, text: str) -> "DirectClassifier":
        d = json.loads(text)
        return cls(d["kind"], int(d["group_count"]),
                   {k: np.asarray(v) for k, v in d["params"].items()})


def _train_softmax(ds: LabeledDataset, epochs: int, rate: float) -> dict:
    Xa = np.hstack([ds.features, np.ones((ds.n, 1))])
    Y = ds.group_onehot()
    W = np.zeros((Xa.shape[1], ds.group_count))
    for _ in range(epochs):
        P = softmax(Xa @ W, axis=1)
        W -= rate * (Xa.T @ (P - Y)) / ds.n
    return {"coef": W}


def _train_cart(ds: LabeledDataset, depth: int, seed: int) -> dict:
    model = DecisionTreeClassifier(criterion="gini", max_depth=depth, random_state=seed)
    model.fit(ds.features, ds.sensitive)
    t = model.tree_
    counts = np.zeros((t.node_count, ds.group_count))
    counts[:, model.classes_] = t.value[:, 0, :]
    return {"left": t.children_left.copy(), "right": t.children_right.copy(),
            "feature": np.maximum(t.feature, 0), "threshold": t.threshold.copy(),
            "counts": counts}


def train_direct(ds: LabeledDataset, kind: str, hyper: dict | None = None,
                 seed: int = 0) -> DirectClassifier:
    """Fit a softmax regression (full-batch gradient descent) or a CART tree on z."""
    hyper = dict(hyper or {})
    if kind == "softmax":
        params = _train_softmax(ds, int(hyper.get("epochs", SOFTMAX_EPOCHS)),
                                float(hyper.get("learning_rate", SOFTMAX_RATE)))
    elif kind == "cart":
        params = _train_cart(ds, int(hyper.get("max_depth", CART_DEPTH)), seed)
    else:
        raise ValueError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")
    return DirectClassifier(kind, ds.group_count, params)


def _cell_ids(ell: int) -> tuple:
    return tuple(str(j) for j in range(ell))


def naive_plan_from_membership(M: np.ndarray) -> SamplingPlan:
    """Equal expected intake from every nonempty cell: ``rho_j`` proportional to ``1/r_j``."""
    M = np.asarray(M, dtype=np.float64)
    mass = M.sum(axis=0) / M.shape[0]
    live = mass > 0
    if not live.any():
        raise DegeneratePlanError("no nonempty proxy cell")
    if not live.all():
        logger.warning("dropping %d empty predicted cells", int(np.count_nonzero(~live)))
    q = np.where(live, 1.0 / np.count_nonzero(live), 0.0)
    raw = np.zeros_like(q)
    raw[live] = q[live] / mass[live]
    C = float(raw.max())
    return SamplingPlan(q, raw / C, C, "naive", _cell_ids(M.shape[1]))


def qp_plan_from_membership(M: np.ndarray, z, K: int, U, relaxed: bool) -> SamplingPlan:
    """QP plan over the cells of ``M``; cells with no mass get ``rho = 0``."""
    ell = np.asarray(M).shape[1]
    A, keep = conditional_from_membership(M, z, K, _cell_ids(ell))
    plan = derive_plan(A, U, relaxed)
    q = np.zeros(ell)
    rho = np.zeros(ell)
    q[keep] = plan.q
    rho[keep] = plan.rho
    return SamplingPlan(q, rho, plan.normalizer, plan.mode, _cell_ids(ell))


def predicted_matrix(clf: DirectClassifier, ds: LabeledDataset) -> ConditionalMatrix:
    A, _ = conditional_from_membership(clf.membership(ds.features), ds.sensitive,
                                       ds.group_count, _cell_ids(clf.group_count))
    return A


def naive_plan(clf: DirectClassifier, ds: LabeledDataset) -> SamplingPlan:
    return naive_plan_from_membership(clf.membership(ds.features))


def qp_plan(clf: DirectClassifier, ds: LabeledDataset, U, relaxed: bool = False) -> SamplingPlan:
    return qp_plan_from_membership(clf.membership(ds.features), ds.sensitive,
                                   ds.group_count, U, relaxed)
