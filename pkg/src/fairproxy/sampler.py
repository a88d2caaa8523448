"""Acceptance probabilities from a conditional matrix and rejection sampling."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .geometry import ConditionalMatrix, _as_target, simplex_least_squares
from .errors import ContractError, DegeneratePlanError, ZeroMassLeafError

ZERO_MASS = 1e-9
_Q_ZERO = 1e-12

# A proxy maps a batch of feature rows to leaf indices; randomized proxies
# draw from the supplied generator.
ProxyFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class SamplingPlan:
    q: np.ndarray
    rho: np.ndarray
    normalizer: float
    mode: str = "strict"
    leaf_ids: tuple = ()

    def to_json(self) -> str:
        return json.dumps({
            "leaf_ids": list(self.leaf_ids),
            "q": self.q.tolist(),
            "rho": self.rho.tolist(),
            "normalizer": self.normalizer,
            "mode": self.mode,
        })

    @classmethod
    def from_json(cls, text: str) -> "SamplingPlan":
        d = json.loads(text)
        return cls(np.array(d["q"]), np.array(d["rho"]), float(d["normalizer"]),
                   d["mode"], tuple(d["leaf_ids"]))

    def __len__(self):
        return len(self.rho)


def derive_plan(A: ConditionalMatrix, U, relaxed: bool = False) -> SamplingPlan:
    """Mixing weights ``q`` over rows and normalized acceptance rates ``rho``.

    Strict mode constrains ``q`` to the simplex; relaxed mode only to ``q >= 0``.
    Leaves with mass below ``ZERO_MASS`` get ``rho = 0`` unless ``q`` needs them.
    """
    target = _as_target(U)
    q, _ = simplex_least_squares(A.rows, target, simplex=not relaxed)
    q = np.where(q > _Q_ZERO, q, 0.0)
    if not np.any(q > 0):
        raise DegeneratePlanError("all mixing weights are zero")
    r = A.leaf_mass
    empty = r < ZERO_MASS
    if np.any(q[empty] > 0):
        bad = [A.leaf_ids[j] for j in np.flatnonzero(empty & (q > 0))]
        raise ZeroMassLeafError(f"plan places mass on zero-mass leaves {bad}")
    raw = np.zeros_like(q)
    raw[~empty] = q[~empty] / r[~empty]
    C = float(raw.max())
    return SamplingPlan(q, raw / C, C, "relaxed" if relaxed else "strict", A.leaf_ids)


def induced_distribution(A: ConditionalMatrix, rho) -> np.ndarray:
    """Exact group distribution of the accepted set, ``sum r_j rho_j a_j`` normalized."""
    weights = A.leaf_mass * np.asarray(rho)
    total = weights.sum()
    if total <= 0:
        raise DegeneratePlanError("no leaf has positive acceptance mass")
    return weights @ A.rows / total


def acceptance_rate(A: ConditionalMatrix, rho) -> float:
    return float(A.leaf_mass @ np.asarray(rho))


def rejection_sample(stream: Iterable, proxy: ProxyFn, plan: SamplingPlan,
                     rng_seed: int, budget: int, batch_size: int = 4096) -> list:
    """Accept each of the first ``budget`` candidates with prob ``rho[proxy(x)]``.

    ``stream`` yields ``(x, y)`` pairs (any trailing fields are carried along).
    Accepted candidates are returned in input order. A single generator seeded
    with ``rng_seed`` drives both proxy randomness and acceptance draws, so
    parallel streams need distinct seeds.
    """
    rng = np.random.default_rng(rng_seed)
    out = []
    it: Iterator = iter(stream)
    remaining = budget
    while remaining > 0:
        batch = list(itertools.islice(it, min(batch_size, remaining)))
        if not batch:
            break
        remaining -= len(batch)
        X = np.asarray([item[0] for item in batch], dtype=np.float64)
        leaves = np.asarray(proxy(X, rng))
        if leaves.shape != (len(batch),) or leaves.min() < 0 or leaves.max() >= len(plan.rho):
            raise ContractError("proxy emitted a leaf index outside the plan")
        accept = rng.random(len(batch)) < plan.rho[leaves]
        out.extend(item for item, a in zip(batch, accept) if a)
    return out


def interpolate_proxy(proxy: ProxyFn, eta: float, range_size: int,
                      rng_seed: int | None = None) -> ProxyFn:
    """Randomized post-processing of ``proxy``.

    With prob ``1 - eta`` the proxy label is kept; with prob ``eta`` it is
    replaced by a uniform draw from ``0..range_size-1``. If ``rng_seed`` is
    given the wrapper ignores the caller's generator and uses its own stream.
    """
    if not 0 <= eta <= 1:
        raise ValueError("eta must lie in [0, 1]")
    if range_size < 1:
        raise ValueError("range_size must be positive")
    own = None if rng_seed is None else np.random.default_rng(rng_seed)

    def wrapped(X, rng):
        g = own if own is not None else rng
        labels = np.asarray(proxy(X, g))
        if eta == 0:
            return labels
        swap = g.random(len(labels)) < eta
        fresh = g.integers(0, range_size, size=len(labels))
        return np.where(swap, fresh, labels)

    return wrapped


def interpolate_membership(M: np.ndarray, eta: float) -> np.ndarray:
    """Exact label distribution after interpolation: ``(1-eta) M + eta/ell``."""
    M = np.asarray(M, dtype=np.float64)
    if eta == 0:
        return M
    ell = M.shape[1]
    if eta == 1:
        return np.full_like(M, 1.0 / ell)
    return (1.0 - eta) * M + eta / ell
