"""Shared domain types: datasets, base rates, targets and weighted views.

Sensitive groups are stored as 0-based integer indices ``0..K-1`` assigned by
order of first appearance in the source file.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    DegenerateGroupError,
    DegenerateSplitError,
    ParseError,
    SchemaError,
)

logger = logging.getLogger(__name__)

SPLIT_RETRIES = 100
_STOCHASTIC_TOL = 1e-12


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with binary labels and sensitive-group indices."""

    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    group_count: int
    feature_names: tuple = ()
    group_names: tuple = ()

    def __post_init__(self):
        X = _frozen(self.features, np.float64)
        if X.ndim != 2:
            raise ParseError(f"features must be 2-d, got shape {X.shape}")
        y = _frozen(self.labels, np.int8)
        z = _frozen(self.sensitive, np.int64)
        n = X.shape[0]
        if y.shape != (n,) or z.shape != (n,):
            raise ParseError("labels and sensitive must have one entry per row")
        if not np.all(np.isfinite(X)):
            raise ParseError("features contain non-finite values")
        if np.any((y != 0) & (y != 1)):
            raise ParseError("labels must be binary")
        K = int(self.group_count)
        if K < 1 or (n and (z.min() < 0 or z.max() >= K)):
            raise DegenerateGroupError("sensitive indices outside 0..K-1")
        counts = np.bincount(z, minlength=K)
        if np.any(counts == 0):
            missing = np.flatnonzero(counts == 0).tolist()
            raise DegenerateGroupError(f"groups {missing} have no rows")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive", z)
        object.__setattr__(self, "group_count", K)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "group_names", tuple(self.group_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def group_onehot(self) -> np.ndarray:
        """``(n, K)`` indicator matrix of group membership."""
        Z = np.zeros((self.n, self.group_count))
        Z[np.arange(self.n), self.sensitive] = 1.0
        return Z

    def take(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(
            self.features[idx], self.labels[idx], self.sensitive[idx],
            self.group_count, self.feature_names, self.group_names,
        )

    def with_features(self, features) -> "LabeledDataset":
        return LabeledDataset(
            features, self.labels, self.sensitive, self.group_count,
            self.feature_names, self.group_names,
        )


@dataclass(frozen=True)
class BaseRates:
    rates: np.ndarray

    def __post_init__(self):
        r = _frozen(self.rates, np.float64)
        if r.ndim != 1 or np.any(r < 0) or abs(r.sum() - 1.0) > _STOCHASTIC_TOL:
            raise ValueError(f"base rates must be a stochastic vector, got {r}")
        object.__setattr__(self, "rates", r)

    def __len__(self):
        return len(self.rates)


@dataclass(frozen=True)
class TargetDistribution:
    """Target group distribution (uniform by default).

    In ``intersecting`` mode the target is the concatenation of one uniform
    block per group class, i.e. ``1/k_i`` for every group of class ``i``.
    """

    target: np.ndarray
    mode: str = "disjoint"
    group_classes: tuple = ()

    def __post_init__(self):
        U = _frozen(self.target, np.float64)
        if U.ndim != 1 or np.any(U < 0):
            raise ValueError("target must be a nonnegative vector")
        if self.mode == "disjoint":
            if abs(U.sum() - 1.0) > 1e-9:
                raise ValueError("disjoint target must sum to 1")
        elif self.mode == "intersecting":
            classes = tuple((int(g), int(k)) for g, k in self.group_classes)
            if sum(k for _, k in classes) != len(U):
                raise ValueError("class sizes must sum to the target length")
            start = 0
            for _, k in classes:
                if abs(U[start:start + k].sum() - 1.0) > 1e-9:
                    raise ValueError("each class block of the target must sum to 1")
                start += k
            object.__setattr__(self, "group_classes", classes)
        else:
            raise ValueError(f"unknown target mode {self.mode!r}")
        object.__setattr__(self, "target", U)

    @classmethod
    def uniform(cls, K: int) -> "TargetDistribution":
        return cls(np.full(K, 1.0 / K))

    @classmethod
    def intersecting(cls, class_sizes: Sequence[int]) -> "TargetDistribution":
        U = np.concatenate([np.full(k, 1.0 / k) for k in class_sizes])
        return cls(U, "intersecting", tuple(enumerate(class_sizes)))

    @property
    def K(self) -> int:
        return len(self.target)


@dataclass(frozen=True)
class WeightedView:
    """Per-sample weights ``w_V(x)`` at tree vertex ``vertex_id``."""

    weights: np.ndarray
    vertex_id: str = "0"

    def __post_init__(self):
        w = _frozen(self.weights, np.float64)
        if w.ndim != 1 or np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        object.__setattr__(self, "weights", w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    def split(self, prob_one) -> tuple["WeightedView", "WeightedView"]:
        """Children ``(V0, V1)``; ``prob_one`` is ``E[h(x)]`` for each sample."""
        prob_one = np.clip(np.asarray(prob_one, dtype=np.float64), 0.0, 1.0)
        w1 = self.weights * prob_one
        w0 = self.weights - w1
        return (WeightedView(np.clip(w0, 0.0, 1.0), self.vertex_id + "0"),
                WeightedView(w1, self.vertex_id + "1"))


@dataclass(frozen=True)
class Schema:
    """Column roles of a CSV file.

    ``positive_labels`` lists the raw label values mapped to 1; when empty the
    label column must already be 0/1. Columns in ``categorical`` (or any
    non-numeric column not listed in ``numeric``) are one-hot encoded.
    """

    label: str
    positive_labels: tuple = ()
    categorical: tuple = ()
    numeric: tuple = ()
    drop: tuple = ()


def _binarize(col: pd.Series, positive) -> np.ndarray:
    if positive:
        return col.astype(str).isin([str(v) for v in positive]).to_numpy(np.int8)
    vals = pd.to_numeric(col, errors="coerce")
    if vals.isna().any() or not vals.isin([0, 1]).all():
        raise ParseError(f"label column {col.name!r} is not binary; declare positive_labels")
    return vals.to_numpy(np.int8)


def read_table(path) -> pd.DataFrame:
    """Headered CSV as strings; only empty fields count as missing."""
    return pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""],
                       skipinitialspace=True)


@dataclass(frozen=True)
class FeatureEncoding:
    """Ordered feature columns; ``categories`` is ``None`` for numeric columns."""

    columns: tuple

    @classmethod
    def fit(cls, df: pd.DataFrame, schema: Schema, sensitive_column: str) -> "FeatureEncoding":
        cols = []
        for c in df.columns:
            if c in (schema.label, sensitive_column) or c in schema.drop:
                continue
            vals = df[c].dropna().astype(str)
            as_num = pd.to_numeric(vals, errors="coerce")
            numeric = c in schema.numeric or (c not in schema.categorical
                                              and not as_num.isna().any())
            cols.append((c, None if numeric else tuple(sorted(vals.unique()))))
        return cls(tuple(cols))

    @property
    def feature_names(self) -> tuple:
        names = []
        for c, cats in self.columns:
            names.extend([c] if cats is None else [f"{c}={v}" for v in cats])
        return tuple(names)

    def transform(self, df: pd.DataFrame) -> np.ndarray:
        """Encode ``df``; unseen categories get an all-zero indicator block."""
        missing = [c for c, _ in self.columns if c not in df.columns]
        if missing:
            raise SchemaError(f"missing columns: {missing}")
        blocks = []
        for c, cats in self.columns:
            if cats is None:
                v = pd.to_numeric(df[c], errors="coerce")
                if v.isna().any():
                    raise ParseError(f"column {c!r} declared numeric has unparsable values")
                v = v.to_numpy(np.float64)
                if not np.all(np.isfinite(v)):
                    raise ParseError(f"column {c!r} has non-finite values")
                blocks.append(v[:, None])
            else:
                codes = pd.Categorical(df[c].astype(str), categories=list(cats)).codes
                unseen = int(np.count_nonzero(codes < 0))
                if unseen:
                    logger.warning("column %r: %d rows with unseen categories", c, unseen)
                onehot = np.zeros((len(df), len(cats)))
                hit = codes >= 0
                onehot[np.flatnonzero(hit), codes[hit]] = 1.0
                blocks.append(onehot)
        return np.hstack(blocks) if blocks else np.zeros((len(df), 0))

    def to_list(self) -> list:
        return [[c, None if cats is None else list(cats)] for c, cats in self.columns]

    @classmethod
    def from_list(cls, items) -> "FeatureEncoding":
        return cls(tuple((c, None if cats is None else tuple(cats)) for c, cats in items))


def dataset_from_frame(df: pd.DataFrame, schema: Schema, sensitive_column: str,
                       group_map: Mapping[str, int] | None = None,
                       encoding: FeatureEncoding | None = None) -> LabeledDataset:
    needed = [schema.label, sensitive_column, *schema.categorical, *schema.numeric, *schema.drop]
    missing = [c for c in needed if c not in df.columns]
    if missing:
        raise SchemaError(f"missing columns: {missing}")
    before = len(df)
    df = df.dropna(how="any").reset_index(drop=True)
    if len(df) < before:
        logger.warning("dropped %d rows with missing fields", before - len(df))

    sens = df[sensitive_column].astype(str)
    if group_map is None:
        names = list(dict.fromkeys(sens))
        group_map = {g: i for i, g in enumerate(names)}
    else:
        group_map = dict(group_map)
        unknown = set(sens) - set(group_map)
        if unknown:
            raise ParseError(f"sensitive values not in group map: {sorted(unknown)}")
    K = len(group_map)
    if K < 2:
        raise DegenerateGroupError("need at least two sensitive groups")
    z = sens.map(group_map).to_numpy(np.int64)
    names_by_index = sorted(group_map, key=group_map.get)

    y = _binarize(df[schema.label], schema.positive_labels)
    enc = encoding or FeatureEncoding.fit(df, schema, sensitive_column)
    X = enc.transform(df)
    return LabeledDataset(X, y, z, K, enc.feature_names, tuple(names_by_index))


def load_csv(path, schema: Schema, sensitive_column: str,
             group_map: Mapping[str, int] | None = None,
             encoding: FeatureEncoding | None = None) -> LabeledDataset:
    """Read a headered CSV into a :class:`LabeledDataset`.

    Rows with empty fields are dropped and the count is logged. If
    ``group_map`` is given it fixes the group indices (so that a test file
    agrees with training); otherwise indices follow first appearance.
    ``encoding`` pins the feature columns to those of another file.
    """
    return dataset_from_frame(read_table(path), schema, sensitive_column, group_map, encoding)


@dataclass(frozen=True)
class MinMaxScaling:
    low: np.ndarray
    span: np.ndarray

    @classmethod
    def fit(cls, ds: LabeledDataset) -> "MinMaxScaling":
        lo = ds.features.min(axis=0) if ds.n else np.zeros(ds.p)
        hi = ds.features.max(axis=0) if ds.n else np.ones(ds.p)
        span = np.where(hi > lo, hi - lo, 1.0)
        return cls(lo, span)

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        return ds.with_features((ds.features - self.low) / self.span)


def split_train_test(ds: LabeledDataset, fraction: float, seed: int):
    """Seeded shuffle split; the test side gets ``floor((1-fraction)*n)`` rows.

    Reshuffles (up to ``SPLIT_RETRIES`` times) until both sides contain every
    group.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n_test = int(math.floor((1.0 - fraction) * ds.n + 1e-9))
    n_train = ds.n - n_test
    rng = np.random.default_rng(seed)
    K = ds.group_count
    for _ in range(SPLIT_RETRIES):
        perm = rng.permutation(ds.n)
        tr, te = perm[:n_train], perm[n_train:]
        if (len(np.unique(ds.sensitive[tr])) == K
                and len(np.unique(ds.sensitive[te])) == K):
            return ds.take(np.sort(tr)), ds.take(np.sort(te))
    raise DegenerateSplitError(f"no split with every group on both sides after {SPLIT_RETRIES} tries")


def subsample(ds: LabeledDataset, size: int, seed: int) -> LabeledDataset:
    """Seeded subset of ``size`` rows that keeps every group present."""
    if size >= ds.n:
        return ds
    rng = np.random.default_rng(seed)
    for _ in range(SPLIT_RETRIES):
        idx = np.sort(rng.choice(ds.n, size=size, replace=False))
        if len(np.unique(ds.sensitive[idx])) == ds.group_count:
            return ds.take(idx)
    raise DegenerateSplitError(f"no subsample of {size} rows keeps every group")


def base_rates(ds: LabeledDataset) -> BaseRates:
    if ds.n == 0:
        raise ValueError("empty dataset")
    counts = np.bincount(ds.sensitive, minlength=ds.group_count)
    return BaseRates(counts / ds.n)


def save_dataset(ds: LabeledDataset, path) -> None:
    np.savez(path, features=ds.features, labels=ds.labels, sensitive=ds.sensitive,
             group_count=ds.group_count,
             feature_names=np.array(ds.feature_names, dtype=str),
             group_names=np.array(ds.group_names, dtype=str))


def load_dataset(path) -> LabeledDataset:
    with np.load(path, allow_pickle=False) as f:
        return LabeledDataset(
            f["features"], f["labels"], f["sensitive"], int(f["group_count"]),
            tuple(f["feature_names"].tolist()), tuple(f["group_names"].tolist()),
        )


def write_label_map(ds: LabeledDataset, path) -> None:
    Path(path).write_text(json.dumps({g: i for i, g in enumerate(ds.group_names)}, indent=2))


def read_label_map(path) -> dict:
    return {str(k): int(v) for k, v in json.loads(Path(path).read_text()).items()}
