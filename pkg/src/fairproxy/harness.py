"""Seeded sweeps over proxy variants and the files behind the tradeoff plots.

Every (variant, grid value, seed) cell trains a proxy on the train split,
derives a sampling plan from it, and audits both splits. Disclosivity uses
exact cell memberships; imbalance is that of the exactly-computed accepted
distribution, with one realized rejection sample per cell reported alongside.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import naive_plan_from_membership, qp_plan_from_membership, train_direct
from .core import (LabeledDataset, MinMaxScaling, Schema, TargetDistribution, base_rates,
                   load_csv, split_train_test, subsample)
from .errors import ConfigError, FairProxyError
from .metrics import audit_soft, bound_report, collected_distribution, imbalance
from .sampler import derive_plan, interpolate_membership, interpolate_proxy, rejection_sample
from .tree import (conditional_from_membership, expand_plan, grow_tree, membership_weights,
                   tree_proxy)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

VARIANTS = ("naive_regression", "naive_tree", "qp_regression", "qp_tree", "ab", "ab_relaxed")
TREE_VARIANTS = ("ab", "ab_relaxed")
_DIRECT = {
    "naive_regression": ("softmax", "naive"),
    "naive_tree": ("cart", "naive"),
    "qp_regression": ("softmax", "qp"),
    "qp_tree": ("cart", "qp"),
}
POINT_COLUMNS = ("variant", "param", "value", "seed", "split", "disclosivity", "imbalance",
                 "realized_imbalance", "accepted_count", "split_count", "all_accepted_feasible",
                 "status", "wall_time")
METRICS = ("disclosivity", "imbalance", "realized_imbalance")
CURVE_COLUMNS = (("variant", "param", "value", "split", "n")
                 + tuple(f"{m}_{s}" for m in METRICS for s in ("mean", "lo", "hi"))
                 + ("split_count_mean",))


def _grid(start: float, stop: float, step: float) -> tuple:
    count = int(round((stop - start) / step))
    return tuple(round(start + i * step, 10) for i in range(count + 1))


@dataclass
class DatasetConfig:
    path: str
    label: str
    sensitive: str
    positive_labels: tuple = ()
    categorical: tuple = ()
    numeric: tuple = ()
    drop: tuple = ()

    @property
    def schema(self) -> Schema:
        return Schema(self.label, tuple(self.positive_labels), tuple(self.categorical),
                      tuple(self.numeric), tuple(self.drop))


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    variants: tuple = VARIANTS
    alphas: tuple = _grid(0.0, 1.0, 0.05)
    etas: tuple = _grid(0.0, 1.0, 0.1)
    seeds: int = 20
    master_seed: int = 0
    train_fraction: float = 2 / 3
    subsample: int | None = None
    gamma: float = 0.1
    epsilon: float = 0.05
    max_height: int = 20
    stop_distance: float = 0.1
    t_cap: int = 2000
    min_leaf_mass: float = 50.0
    budget: str = "nominal"
    delta: float = 0.05
    output_dir: str = "results"

    def __post_init__(self):
        self.variants = tuple(self.variants)
        self.alphas = tuple(float(a) for a in self.alphas)
        self.etas = tuple(float(e) for e in self.etas)
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown variants {sorted(unknown)}")
        if not self.variants:
            raise ConfigError("no variants selected")
        if any(v in TREE_VARIANTS for v in self.variants) and not self.alphas:
            raise ConfigError("alpha grid is empty")
        if any(v in _DIRECT for v in self.variants) and not self.etas:
            raise ConfigError("eta grid is empty")
        if any(not 0 <= a <= 1 for a in self.alphas) or any(not 0 <= e <= 1 for e in self.etas):
            raise ConfigError("grid values must lie in [0, 1]")
        if self.seeds < 1:
            raise ConfigError("seeds must be at least 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if not 0 < self.gamma < 1 or self.epsilon <= 0 or self.max_height < 1:
            raise ConfigError("invalid gamma, epsilon or max_height")
        if self.budget not in ("nominal", "total"):
            raise ConfigError(f"unknown budget mode {self.budget!r}")

    @classmethod
    def desk(cls, dataset: DatasetConfig, **overrides) -> "ExperimentConfig":
        """Laptop-scale preset: 5 seeds, alpha step 0.1, 5000 rows per split."""
        base = dict(seeds=5, alphas=_grid(0.0, 1.0, 0.1), subsample=5000)
        base.update(overrides)
        return cls(dataset, **base)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        preset = d.pop("preset", None)
        ds = d.pop("dataset", None)
        if not isinstance(ds, dict):
            raise ConfigError("config needs a [dataset] table")
        try:
            dataset = DatasetConfig(**{k: tuple(v) if isinstance(v, list) else v
                                       for k, v in ds.items()})
        except TypeError as exc:
            raise ConfigError(f"bad [dataset] table: {exc}") from None
        for key in ("alpha", "eta"):
            step = d.pop(f"{key}_step", None)
            if step is not None:
                d.setdefault(f"{key}s", _grid(0.0, 1.0, float(step)))
        known = {f.name for f in fields(cls)} - {"dataset"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            if preset == "desk":
                return cls.desk(dataset, **d)
            if preset not in (None, "full"):
                raise ConfigError(f"unknown preset {preset!r}")
            return cls(dataset, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as f:
                return cls.from_dict(tomllib.load(f))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = {k: list(v) if isinstance(v, tuple) else v
                        for k, v in d["dataset"].items()}
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def cell_seed(master_seed: int, seed: int, variant: str, value: float) -> int:
    """Seed of one cell; independent of the order cells are run in."""
    ss = np.random.SeedSequence([master_seed, seed, zlib.crc32(variant.encode()),
                                 int(round(value * 1000))])
    return int(ss.generate_state(1)[0])


def _data_seed(master_seed: int, seed: int) -> int:
    return int(np.random.SeedSequence([master_seed, seed]).generate_state(1)[0])


def prepare_splits(ds: LabeledDataset, cfg: ExperimentConfig, seed: int):
    """Seeded train/test split, min-max scaling fitted on train, optional subsample."""
    s = _data_seed(cfg.master_seed, seed)
    train, test = split_train_test(ds, cfg.train_fraction, s)
    scaling = MinMaxScaling.fit(train)
    train, test = scaling.apply(train), scaling.apply(test)
    if cfg.subsample:
        train = subsample(train, cfg.subsample, s + 1)
        test = subsample(test, cfg.subsample, s + 2)
    return train, test


def realized_imbalance(split: LabeledDataset, proxy, plan, rng_seed: int, U) -> tuple[float, int]:
    stream = zip(split.features, split.sensitive)
    accepted = rejection_sample(stream, proxy, plan, rng_seed, split.n)
    if not accepted:
        return math.nan, 0
    z = np.fromiter((a[1] for a in accepted), dtype=np.int64, count=len(accepted))
    dist = np.bincount(z, minlength=split.group_count) / len(z)
    return imbalance(dist, U), len(accepted)


@dataclass
class _Cell:
    variant: str
    param: str
    value: float
    seed: int
    rows: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def _evaluate(cell: _Cell, splits: dict, memberships: dict, plan, proxy, U, rng_seed: int,
              split_count: int, feasible: bool, started: float):
    for offset, (name, ds) in enumerate(splits.items()):
        M = memberships[name]
        aud = audit_soft(M, ds.sensitive, U, sample_source=name)
        dist = collected_distribution(M, plan.rho, ds.sensitive, U)
        real, count = realized_imbalance(ds, proxy, plan, rng_seed + offset, U)
        cell.rows.append({
            "variant": cell.variant, "param": cell.param, "value": cell.value,
            "seed": cell.seed, "split": name, "disclosivity": aud.disclosivity,
            "imbalance": imbalance(dist, U), "realized_imbalance": real,
            "accepted_count": count, "split_count": split_count,
            "all_accepted_feasible": feasible, "status": "ok",
            "wall_time": time.perf_counter() - started,
        })
        cell.extras.setdefault("proportions", {})[name] = {
            "pre": base_rates(ds).rates.tolist(), "post": dist.tolist()}


def _failed(cell: _Cell, exc: Exception) -> None:
    for name in ("train", "test"):
        row = {c: math.nan for c in POINT_COLUMNS}
        row.update(variant=cell.variant, param=cell.param, value=cell.value, seed=cell.seed,
                   split=name, accepted_count=0, split_count=0, all_accepted_feasible=False,
                   status=f"failed: {type(exc).__name__}: {exc}", wall_time=0.0)
        cell.rows.append(row)


def _run_direct(variant, clf, train, test, cfg, seed, U):
    kind, plan_kind = _DIRECT[variant]
    base = {"train": clf.membership(train.features), "test": clf.membership(test.features)}
    K = train.group_count
    cells = []
    for eta in cfg.etas:
        cell = _Cell(variant, "eta", eta, seed)
        started = time.perf_counter()
        try:
            Ms = {k: interpolate_membership(M, eta) for k, M in base.items()}
            if plan_kind == "naive":
                plan = naive_plan_from_membership(Ms["train"])
            else:
                plan = qp_plan_from_membership(Ms["train"], train.sensitive, K, U, False)
            rs = cell_seed(cfg.master_seed, seed, variant, eta)
            proxy = interpolate_proxy(clf.as_proxy(), eta, K)
            _evaluate(cell, {"train": train, "test": test}, Ms, plan, proxy, U, rs, 0, True,
                      started)
            A, _ = conditional_from_membership(Ms["train"], train.sensitive, K)
            cell.extras["heatmap"] = {"rows": A.rows.tolist(),
                                      "leaf_mass": A.leaf_mass.tolist(),
                                      "leaf_ids": list(A.leaf_ids)}
        except FairProxyError as exc:
            logger.error("cell %s eta=%s seed=%s failed: %s", variant, eta, seed, exc)
            _failed(cell, exc)
        cells.append(cell)
    return cells


def _run_trees(variants, train, test, cfg, seed, U):
    cells = []
    for alpha in cfg.alphas:
        started = time.perf_counter()
        try:
            tree, A, trace = grow_tree(train, U, alpha, cfg.epsilon, cfg.gamma, cfg.max_height,
                                       cfg.stop_distance, cfg.t_cap, seed, cfg.min_leaf_mass,
                                       cfg.budget)
            Ms = {"train": membership_weights(tree, train.features),
                  "test": membership_weights(tree, test.features)}
            grown = None
        except FairProxyError as exc:
            grown = exc
        for variant in variants:
            cell = _Cell(variant, "alpha", alpha, seed)
            if grown is not None:
                _failed(cell, grown)
                cells.append(cell)
                continue
            try:
                plan = expand_plan(derive_plan(A, U, relaxed=variant == "ab_relaxed"), tree)
                rs = cell_seed(cfg.master_seed, seed, variant, alpha)
                _evaluate(cell, {"train": train, "test": test}, Ms, plan, tree_proxy(tree), U,
                          rs, tree.split_count, trace.all_accepted_feasible, started)
                cell.extras["heatmap"] = {"rows": A.rows.tolist(),
                                          "leaf_mass": A.leaf_mass.tolist(),
                                          "leaf_ids": list(A.leaf_ids)}
                cell.extras["bounds"] = bound_report(
                    alpha, cfg.stop_distance, cfg.epsilon, cfg.delta, train.p + 1,
                    train.group_count, cfg.gamma).to_dict()
                cell.extras["trace"] = trace.to_dict()
            except FairProxyError as exc:
                logger.error("cell %s alpha=%s seed=%s failed: %s", variant, alpha, seed, exc)
                _failed(cell, exc)
            cells.append(cell)
    return cells


def _sort_key(row):
    return (VARIANTS.index(row["variant"]), row["value"], row["seed"], row["split"])


def aggregate(rows: list) -> list:
    """Mean and empirical 2.5/97.5 percentile interval per (variant, value, split)."""
    groups = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        groups.setdefault((r["variant"], r["param"], float(r["value"]), r["split"]), []).append(r)
    out = []
    order = sorted(groups, key=lambda k: (VARIANTS.index(k[0]), k[2], k[3]))
    for key in order:
        members = groups[key]
        agg = dict(zip(("variant", "param", "value", "split"), key))
        agg["n"] = len(members)
        for m in METRICS:
            vals = np.array([float(r[m]) for r in members])
            vals = vals[np.isfinite(vals)]
            if len(vals):
                lo, hi = np.percentile(vals, [2.5, 97.5])
                agg.update({f"{m}_mean": float(vals.mean()), f"{m}_lo": float(lo),
                            f"{m}_hi": float(hi)})
            else:
                agg.update({f"{m}_mean": math.nan, f"{m}_lo": math.nan, f"{m}_hi": math.nan})
        agg["split_count_mean"] = float(np.mean([float(r["split_count"]) for r in members]))
        out.append(agg)
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: _fmt(r.get(c)) for c in columns})


def _read_points(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        r["value"] = float(r["value"])
        r["seed"] = int(r["seed"])
    return rows


def load_dataset_for(cfg: ExperimentConfig) -> LabeledDataset:
    d = cfg.dataset
    if not Path(d.path).is_file():
        raise ConfigError(f"dataset not found: {d.path}")
    return load_csv(d.path, d.schema, d.sensitive)


def run_cells(ds: LabeledDataset, cfg: ExperimentConfig) -> list:
    """All cells of the sweep; pure function of ``(ds, cfg)`` apart from wall times."""
    U = TargetDistribution.uniform(ds.group_count)
    cells = []
    for seed in range(cfg.seeds):
        train, test = prepare_splits(ds, cfg, seed)
        trained = {}
        for variant in cfg.variants:
            if variant in _DIRECT:
                kind = _DIRECT[variant][0]
                if kind not in trained:
                    trained[kind] = train_direct(train, kind, seed=seed)
                cells.extend(_run_direct(variant, trained[kind], train, test, cfg, seed, U))
        tree_variants = [v for v in cfg.variants if v in TREE_VARIANTS]
        if tree_variants:
            cells.extend(_run_trees(tree_variants, train, test, cfg, seed, U))
        logger.info("seed %d done", seed)
    return cells


def _mean_lists(lists):
    return np.mean(np.asarray(lists, dtype=np.float64), axis=0).tolist()


def write_results(cells: list, cfg: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    rows = sorted((r for c in cells for r in c.rows), key=_sort_key)
    _write_csv(out / "points.csv", POINT_COLUMNS, rows)
    _write_csv(out / "curves.csv", CURVE_COLUMNS, aggregate(rows))

    proportions, heatmaps, bounds = {}, {}, {}
    for c in sorted(cells, key=lambda c: (VARIANTS.index(c.variant), c.value, c.seed)):
        key = f"{c.value:g}"
        if "proportions" in c.extras:
            slot = proportions.setdefault(c.variant, {}).setdefault(key, {})
            for split, pp in c.extras["proportions"].items():
                slot.setdefault(split, {"pre": [], "post": []})
                slot[split]["pre"].append(pp["pre"])
                slot[split]["post"].append(pp["post"])
        if "heatmap" in c.extras:
            heatmaps.setdefault(c.variant, {}).setdefault(key, {})[str(c.seed)] = c.extras["heatmap"]
        if "bounds" in c.extras and c.variant == "ab":
            bounds.setdefault(key, {})[str(c.seed)] = c.extras["bounds"]
    for per_value in proportions.values():
        for slot in per_value.values():
            for split, pp in slot.items():
                slot[split] = {"pre": _mean_lists(pp["pre"]), "post": _mean_lists(pp["post"])}
    for name, obj in (("proportions.json", proportions), ("heatmaps.json", heatmaps),
                      ("bounds.json", bounds)):
        (out / name).write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")
    (out / "config.json").write_text(
        json.dumps({"version": __version__, **cfg.to_dict()}, indent=2, sort_keys=True),
        encoding="utf-8")
    return out


def run_experiment(cfg: ExperimentConfig, ds: LabeledDataset | None = None) -> Path:
    """Run the sweep and write ``points.csv``, ``curves.csv`` and the JSON side files."""
    ds = ds if ds is not None else load_dataset_for(cfg)
    out = write_results(run_cells(ds, cfg), cfg, Path(cfg.output_dir))
    emit_plot_data(out)
    return out


def failed_cells(result_dir) -> int:
    rows = _read_points(Path(result_dir) / "points.csv")
    return sum(1 for r in rows if r["status"] != "ok")


def emit_plot_data(result_dir) -> Path:
    """Long-format ``plot_data.csv``: one row per (variant, grid value, split)."""
    result_dir = Path(result_dir)
    rows = _read_points(result_dir / "points.csv")
    path = result_dir / "plot_data.csv"
    _write_csv(path, CURVE_COLUMNS, aggregate(rows))
    return path
