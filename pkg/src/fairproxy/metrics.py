"""Disclosivity and imbalance audits, and the sample-complexity bound calculators."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import TargetDistribution
from .errors import DomainError

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
# Leading constant of the leaf-size bound as stated; its derivation yields 6.
LEAF_SIZE_CONSTANT = 8
LEAF_SIZE_CONSTANT_DERIVED = 6
_CEIL_TOL = 1e-9


@dataclass
class ProxyAudit:
    disclosivity: float
    imbalance: float
    per_leaf_posteriors: np.ndarray
    priors: np.ndarray
    marginal: np.ndarray
    sample_source: str = "train"
    skipped_cells: int = 0

    def to_dict(self) -> dict:
        return {
            "disclosivity": self.disclosivity,
            "imbalance": self.imbalance,
            "per_leaf_posteriors": np.asarray(self.per_leaf_posteriors).tolist(),
            "priors": np.asarray(self.priors).tolist(),
            "marginal": np.asarray(self.marginal).tolist(),
            "sample_source": self.sample_source,
            "skipped_cells": self.skipped_cells,
        }


def _target(U) -> TargetDistribution:
    return U if isinstance(U, TargetDistribution) else TargetDistribution(np.asarray(U))


def group_indicator(labels_z, U) -> np.ndarray:
    """Binary ``(n, K)`` matrix of group membership.

    For an intersecting target, ``labels_z`` has one column per group class
    and the indicator blocks are concatenated in class order.
    """
    U = _target(U)
    z = np.asarray(labels_z)
    if U.mode == "intersecting":
        if z.ndim != 2 or z.shape[1] != len(U.group_classes):
            raise ValueError("intersecting audit needs one column per group class")
        blocks = []
        for c, (_, k) in enumerate(U.group_classes):
            col = z[:, c].astype(np.int64)
            if col.min() < 0 or col.max() >= k:
                raise ValueError(f"class {c} labels outside 0..{k - 1}")
            blocks.append(np.eye(k)[col])
        return np.hstack(blocks)
    z = z.astype(np.int64).ravel()
    if z.min() < 0 or z.max() >= U.K:
        raise ValueError("group labels outside 0..K-1")
    return np.eye(U.K)[z]


def audit_soft(M, labels_z, U, sample_weights=None, sample_source: str = "train") -> ProxyAudit:
    """Audit from soft cell memberships ``M`` (rows sum to one).

    Posteriors are ``sum_i s_i M_ij Z_i / sum_i s_i M_ij``; the imbalance uses
    the weighted group marginal ``sum_i s_i Z_i / sum_i s_i``. Disclosivity is
    measured against the priors of the same weighted population.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    Z = group_indicator(labels_z, U)
    n = len(Z)
    if n == 0:
        raise ValueError("empty audit input")
    if M.shape[0] != n:
        raise ValueError("membership and labels differ in length")
    s = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    total = s.sum()
    if total <= 0:
        raise ValueError("sample weights have zero total")
    priors = s @ Z / total
    # Rescaling a column leaves its posterior unchanged; using the column max
    # makes a constant column reproduce the prior bit for bit.
    peak = M.max(axis=0)
    live = peak > 0
    cellw = np.zeros_like(M)
    cellw[:, live] = M[:, live] / peak[live]
    cellw *= s[:, None]
    mass = cellw.sum(axis=0)
    live &= mass > 0
    skipped = int(np.count_nonzero(~live))
    if skipped:
        logger.warning("skipping %d empty proxy cells", skipped)
    post = np.full((M.shape[1], Z.shape[1]), np.nan)
    post[live] = (cellw[:, live].T @ Z) / mass[live, None]
    disc = float(np.max(np.abs(post[live] - priors))) if live.any() else 0.0
    marginal = priors
    imb = float(np.linalg.norm(marginal - _target(U).target))
    return ProxyAudit(disc, imb, post, priors, marginal, sample_source, skipped)


def audit(labels_z, labels_zhat, U, sample_source: str = "train",
          cell_count: int | None = None) -> ProxyAudit:
    """Audit of hard proxy labels against sensitive labels."""
    zhat = np.asarray(labels_zhat, dtype=np.int64).ravel()
    if len(zhat) == 0:
        raise ValueError("empty audit input")
    if zhat.min() < 0:
        raise ValueError("proxy labels must be nonnegative indices")
    ell = int(zhat.max()) + 1 if cell_count is None else int(cell_count)
    M = np.zeros((len(zhat), ell))
    M[np.arange(len(zhat)), zhat] = 1.0
    return audit_soft(M, labels_z, U, sample_source=sample_source)


def collected_distribution(M, rho, labels_z, U) -> np.ndarray:
    """Exact group distribution accepted by a plan over soft memberships."""
    Z = group_indicator(labels_z, U)
    accept = np.asarray(M, dtype=np.float64) @ np.asarray(rho, dtype=np.float64)
    total = accept.sum()
    if total <= 0:
        raise ValueError("plan accepts nothing")
    return accept @ Z / total


def imbalance(distribution, U) -> float:
    return float(np.linalg.norm(np.asarray(distribution) - _target(U).target))


def _check_beta_gamma(beta, gamma):
    if not 0 < beta < SQRT2 + 1e-15 or not 0 < gamma < 1:
        raise DomainError("need 0 < beta <= sqrt(2) and 0 < gamma < 1")


def round_count(beta: float, gamma: float) -> float:
    """Unrounded number of progress rounds to reach distance ``beta``."""
    _check_beta_gamma(beta, gamma)
    return (math.log(beta) - 0.5 * math.log(2.0)) / math.log1p(-gamma)


def _ceil(x: float) -> int:
    near = round(x)
    if abs(x - near) <= _CEIL_TOL * max(1.0, abs(x)):
        return int(near)
    return int(math.ceil(x))


def round_bound(beta: float, gamma: float) -> int:
    return max(0, _ceil(round_count(beta, gamma)))


def min_leaf_size_raw(epsilon, delta, d, k, beta, gamma,
                      constant: float = LEAF_SIZE_CONSTANT) -> float:
    if epsilon <= 0 or not 0 < delta < 1 or d < 1 or k < 1:
        raise DomainError("need epsilon > 0, 0 < delta < 1, d >= 1, k >= 1")
    arg = constant * d * k * round_count(beta, gamma) / delta
    if arg <= 0:
        raise DomainError("nonpositive logarithm argument")
    return math.log(arg) / (2.0 * epsilon * epsilon)


def min_leaf_size(epsilon, delta, d, k, beta, gamma) -> int:
    return _ceil(min_leaf_size_raw(epsilon, delta, d, k, beta, gamma))


def out_of_sample_bound(alpha, beta, epsilon, k, gamma) -> tuple[float, float]:
    if epsilon < 0 or alpha < 0 or k < 1:
        raise DomainError("need alpha >= 0, epsilon >= 0, k >= 1")
    return alpha + 2 * epsilon, beta + k * epsilon * math.sqrt(round_count(beta, gamma))


@dataclass
class BoundReport:
    round_bound: int
    round_count: float
    min_leaf_size: int
    min_leaf_size_raw: float
    out_of_sample_alpha: float
    out_of_sample_beta: float
    inputs: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def bound_report(alpha, beta, epsilon, delta, d, k, gamma) -> BoundReport:
    raw = min_leaf_size_raw(epsilon, delta, d, k, beta, gamma)
    a_oos, b_oos = out_of_sample_bound(alpha, beta, epsilon, k, gamma)
    return BoundReport(
        round_bound=round_bound(beta, gamma),
        round_count=round_count(beta, gamma),
        min_leaf_size=_ceil(raw),
        min_leaf_size_raw=raw,
        out_of_sample_alpha=a_oos,
        out_of_sample_beta=b_oos,
        inputs={"alpha": alpha, "beta": beta, "epsilon": epsilon, "delta": delta,
                "d": d, "k": k, "gamma": gamma},
        metadata={
            "leaf_size_constant": LEAF_SIZE_CONSTANT,
            "leaf_size_constant_derived": LEAF_SIZE_CONSTANT_DERIVED,
            "min_leaf_size_with_derived_constant": _ceil(min_leaf_size_raw(
                epsilon, delta, d, k, beta, gamma, LEAF_SIZE_CONSTANT_DERIVED)),
        },
    )
