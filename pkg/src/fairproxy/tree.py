"""Decision-tree proxy: growth, routing, exact membership and serialization.

Vertices are binary strings. The root is ``"0"``; a split of ``V`` creates
``V + "0"`` and ``V + "1"``, and samples with ``h(x) = 1`` go to ``V + "1"``.
Leaf indices follow the lexicographic order of the leaf ids.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import LabeledDataset, TargetDistribution, WeightedView, base_rates
from .errors import ContractError, DegeneratePlanError
from .geometry import ConditionalMatrix, check_progress, project_to_hull_best
from .sampler import SamplingPlan
from .splitter import DEFAULT_T_CAP, RandomizedSplitter, learn_split, posterior_violation

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ROOT = "0"
_EMPTY_LEAF = 1e-12
DEFAULT_OBJECTIVE_GAMMAS = (0.0, 0.005, 0.01, 0.015)


@dataclass(frozen=True)
class ProxyTree:
    """Internal nodes map to their splitters; ``leaves`` are sorted ids."""

    p: int
    splitters: dict = field(default_factory=dict)
    leaves: tuple = (ROOT,)
    max_height: int = 20

    def __post_init__(self):
        object.__setattr__(self, "leaves", tuple(sorted(self.leaves)))
        ids = set(self.splitters) | set(self.leaves)
        for v in ids:
            if v != ROOT and v[:-1] not in self.splitters:
                raise ValueError(f"vertex {v!r} has no parent split")
        for v in self.splitters:
            if v + "0" not in ids or v + "1" not in ids:
                raise ValueError(f"internal vertex {v!r} is missing a child")

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    @property
    def height(self) -> int:
        return max(len(v) for v in self.leaves)

    @property
    def split_count(self) -> int:
        return len(self.splitters)

    def leaf_index(self, vertex_id: str) -> int:
        return self.leaves.index(vertex_id)

    def with_split(self, vertex_id: str, splitter: RandomizedSplitter) -> "ProxyTree":
        if vertex_id not in self.leaves:
            raise ValueError(f"{vertex_id!r} is not a leaf")
        leaves = [v for v in self.leaves if v != vertex_id] + [vertex_id + "0", vertex_id + "1"]
        return ProxyTree(self.p, {**self.splitters, vertex_id: splitter}, tuple(leaves),
                         self.max_height)

    def to_json(self) -> str:
        return json.dumps({
            "version": FORMAT_VERSION,
            "p": self.p,
            "max_height": self.max_height,
            "leaves": list(self.leaves),
            "splitters": {v: s.to_dict() for v, s in sorted(self.splitters.items())},
        })

    @classmethod
    def from_json(cls, text: str) -> "ProxyTree":
        d = json.loads(text)
        if d.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported tree format version {d.get('version')!r}")
        splitters = {v: RandomizedSplitter.from_dict(s) for v, s in d["splitters"].items()}
        return cls(int(d["p"]), splitters, tuple(d["leaves"]), int(d["max_height"]))


@dataclass
class GrowthRecord:
    round: int
    leaf_id: str
    dist_before: float
    dist_after: float
    feasible: bool
    progress: bool
    accepted: bool
    max_violation: float
    objective_gamma: float = 0.0


@dataclass
class GrowthTrace:
    records: list = field(default_factory=list)
    final_distance: float = math.nan
    stop_reason: str = ""
    notes: list = field(default_factory=list)

    @property
    def accepted(self) -> list:
        return [r for r in self.records if r.accepted]

    @property
    def all_accepted_feasible(self) -> bool:
        return all(r.feasible for r in self.accepted)

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records],
                "final_distance": self.final_distance,
                "stop_reason": self.stop_reason, "notes": list(self.notes)}


def _check_dims(tree: ProxyTree, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != tree.p:
        raise ContractError(f"expected {tree.p} features, got shape {X.shape}")
    return X


def _vertex_weights(tree: ProxyTree, X: np.ndarray) -> dict:
    """Probability of reaching every vertex, in top-down order."""
    reach = {ROOT: np.ones(len(X))}
    for v in sorted(tree.splitters, key=lambda s: (len(s), s)):
        e = tree.splitters[v].expected(X)
        reach[v + "1"] = reach[v] * e
        reach[v + "0"] = reach[v] * (1.0 - e)
    return reach


def membership_weights(tree: ProxyTree, x) -> np.ndarray:
    """Exact leaf-membership probabilities; ``(ell,)`` for one row, else ``(n, ell)``."""
    X = _check_dims(tree, x)
    reach = _vertex_weights(tree, X)
    M = np.column_stack([reach[v] for v in tree.leaves])
    return M[0] if np.ndim(x) == 1 else M


def classify_batch(tree: ProxyTree, X, rng: np.random.Generator) -> np.ndarray:
    """Route every row, drawing one hypothesis per visited internal node."""
    X = _check_dims(tree, X)
    at = np.full(len(X), ROOT, dtype=object)
    for v in sorted(tree.splitters, key=lambda s: (len(s), s)):
        idx = np.flatnonzero(at == v)
        if len(idx) == 0:
            continue
        s = tree.splitters[v]
        which = rng.integers(0, len(s), size=len(idx))
        go = s.predict_with(X[idx], which)
        at[idx] = np.where(go == 1, v + "1", v + "0")
    lookup = {v: j for j, v in enumerate(tree.leaves)}
    return np.fromiter((lookup[v] for v in at), dtype=np.int64, count=len(X))


def classify(tree: ProxyTree, x, rng_seed: int) -> int:
    """Leaf index of ``x``; deterministic given ``(x, rng_seed)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ContractError("classify takes a single feature vector")
    return int(classify_batch(tree, x[None, :], np.random.default_rng(rng_seed))[0])


def tree_proxy(tree: ProxyTree):
    """Adapter to the ``(X, rng) -> leaf indices`` proxy interface."""
    return lambda X, rng: classify_batch(tree, X, rng)


def conditional_from_membership(M: np.ndarray, z: np.ndarray, K: int, leaf_ids=None,
                                sample_weights=None, notes: list | None = None):
    """Conditional matrix from soft memberships; returns ``(A, kept_columns)``.

    Columns with (numerically) zero mass are dropped.
    """
    M = np.asarray(M, dtype=np.float64)
    n, ell = M.shape
    s = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    Ms = M * s[:, None]
    mass = Ms.sum(axis=0)
    Z = np.zeros((n, K))
    Z[np.arange(n), z] = 1.0
    counts = Ms.T @ Z
    keep = np.flatnonzero(mass > _EMPTY_LEAF * max(s.sum(), 1.0))
    ids = tuple(leaf_ids) if leaf_ids is not None else tuple(str(j) for j in range(ell))
    dropped = sorted(set(range(ell)) - set(keep.tolist()))
    if dropped and notes is not None:
        notes.append(f"dropped zero-mass leaves {[ids[j] for j in dropped]}")
    if len(keep) == 0:
        raise DegeneratePlanError("every leaf has zero mass")
    rows = counts[keep] / mass[keep, None]
    rows = np.clip(rows, 0.0, None)
    rows /= rows.sum(axis=1, keepdims=True)
    r = mass[keep] / mass[keep].sum()
    return ConditionalMatrix(rows, r, tuple(ids[j] for j in keep)), keep


def estimate_conditional_matrix(tree: ProxyTree, ds: LabeledDataset,
                                notes: list | None = None) -> ConditionalMatrix:
    """Conditional matrix from exact membership weights; zero-mass leaves dropped."""
    M = membership_weights(tree, ds.features)
    if M.ndim == 1:
        M = M[None, :]
    A, _ = conditional_from_membership(M, ds.sensitive, ds.group_count, tree.leaves,
                                       notes=notes)
    return A


def expand_plan(plan: SamplingPlan, tree: ProxyTree) -> SamplingPlan:
    """Re-index a plan over kept leaves onto every leaf of ``tree`` (``rho = 0`` elsewhere)."""
    pos = {v: i for i, v in enumerate(plan.leaf_ids)}
    q = np.zeros(tree.leaf_count)
    rho = np.zeros(tree.leaf_count)
    for j, v in enumerate(tree.leaves):
        if v in pos:
            q[j] = plan.q[pos[v]]
            rho[j] = plan.rho[pos[v]]
    return SamplingPlan(q, rho, plan.normalizer, plan.mode, tree.leaves)


def _matrix_from_views(views: dict, z, K, n) -> ConditionalMatrix:
    ids, rows, mass = [], [], []
    for v in sorted(views):
        w = views[v].weights
        m = w.sum()
        if m <= _EMPTY_LEAF * n:
            continue
        ids.append(v)
        rows.append(np.bincount(z, weights=w, minlength=K) / m)
        mass.append(m)
    mass = np.asarray(mass)
    return ConditionalMatrix(np.asarray(rows), mass / mass.sum(), tuple(ids))


def split_budget(alpha: float, epsilon: float, budget: str) -> float | None:
    """Disclosivity budget handed to the split learner.

    ``"total"`` reserves ``epsilon`` for the approximation slack so the final
    tree is certified at ``alpha`` itself; no split is attempted when
    ``alpha < epsilon``. ``"nominal"`` passes ``alpha`` unchanged and certifies
    at ``alpha + epsilon``.
    """
    if budget == "nominal":
        return alpha
    if budget == "total":
        inner = alpha - epsilon
        return inner if inner >= 0 else None
    raise ValueError(f"unknown budget mode {budget!r}")


def grow_tree(ds: LabeledDataset, U: TargetDistribution, alpha: float, epsilon: float,
              gamma: float, max_height: int = 20, stop_distance: float = 0.1,
              t_cap: int = DEFAULT_T_CAP, seed: int = 0, min_leaf_mass: float = 50.0,
              budget: str = "nominal",
              objective_gammas: tuple = DEFAULT_OBJECTIVE_GAMMAS):
    """Greedy growth of an (alpha, beta)-proxy tree.

    Each round tries every leaf with at least ``min_leaf_mass`` weighted
    samples, keeps feasible splits that shrink the hull distance by the factor
    ``1 - gamma``, and accepts the one with the smallest resulting distance
    (ties to the smallest id). ``seed`` is recorded for provenance; the learner
    itself is deterministic.

    ``objective_gammas`` are the progress thresholds tried inside the split
    objective, one learner run each. Threshold 0 asks for the largest
    mass-weighted move toward the target; larger values favour smaller, more
    extreme children. Acceptance is always decided by the measured distance
    reduction at ``gamma``.
    """
    if max_height < 1:
        raise ValueError("max_height must be at least 1")
    if not 0 < gamma < 1 or epsilon <= 0 or alpha < 0:
        raise ValueError("invalid alpha, epsilon or gamma")
    del seed
    target = U if isinstance(U, TargetDistribution) else TargetDistribution(np.asarray(U))
    rates = base_rates(ds)
    K, n, z = ds.group_count, ds.n, ds.sensitive
    inner_alpha = split_budget(alpha, epsilon, budget)

    tree = ProxyTree(ds.p, {}, (ROOT,), max_height)
    views = {ROOT: WeightedView(np.ones(n), ROOT)}
    trace = GrowthTrace()
    A = _matrix_from_views(views, z, K, n)
    proj = project_to_hull_best(A, target)
    rnd = 0
    while True:
        if proj.distance <= stop_distance:
            trace.stop_reason = "target reached"
            break
        if inner_alpha is None:
            trace.stop_reason = "budget leaves no room for splits"
            break
        candidates = [v for v in tree.leaves
                      if len(v) + 1 <= max_height and views[v].mass >= min_leaf_mass]
        if not candidates:
            trace.stop_reason = "max height or leaf mass reached"
            break
        rnd += 1
        best = None
        records = []
        for v, og in itertools.product(candidates, objective_gammas):
            res = learn_split(views[v], ds, proj, target, rates, inner_alpha, epsilon,
                              og, t_cap)
            dist_after = math.nan
            progress = False
            feasible = res.feasible
            if feasible:
                # re-check on the weights the children will actually carry
                e = res.splitter.expected(ds.features)
                feasible = posterior_violation(views[v].weights, z, e, rates.rates,
                                               inner_alpha) <= epsilon
            if feasible:
                v0, v1 = views[v].split(e)
                trial = {**{k: w for k, w in views.items() if k != v}, v0.vertex_id: v0,
                         v1.vertex_id: v1}
                A_new = _matrix_from_views(trial, z, K, n)
                proj_new = project_to_hull_best(A_new, target)
                dist_after = proj_new.distance
                progress = check_progress(proj.distance, dist_after, gamma)
                if progress and (best is None or dist_after < best[1]):
                    best = (v, dist_after, res, trial, A_new, proj_new)
            records.append(GrowthRecord(rnd, v, proj.distance, dist_after, feasible,
                                        progress, False, res.max_violation, og))
        if best is None:
            trace.records.extend(records)
            trace.stop_reason = "no acceptable split"
            break
        v, _, res, views, A, proj = best
        winner = next(r for r in records if r.leaf_id == v and r.dist_after == best[1])
        winner.accepted = True
        trace.records.extend(records)
        tree = tree.with_split(v, res.splitter)
        logger.info("round %d: split %s, distance %.4f", rnd, v, proj.distance)
    trace.final_distance = proj.distance
    dropped = set(tree.leaves) - set(A.leaf_ids)
    if dropped:
        trace.notes.append(f"dropped zero-mass leaves {sorted(dropped)}")
    return tree, A, trace
