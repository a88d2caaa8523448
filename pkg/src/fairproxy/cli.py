"""Command-line entry point: ``train``, ``sample``, ``audit``, ``sweep`` and ``bounds``.

Exit codes: 0 on success, 1 on configuration or input errors, 2 when a sweep
finished with failed cells.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import (DirectClassifier, naive_plan_from_membership, qp_plan_from_membership,
                        train_direct)
from .core import (FeatureEncoding, LabeledDataset, MinMaxScaling, TargetDistribution,
                   dataset_from_frame, read_table)
from .errors import ConfigError, FairProxyError, SchemaError
from .harness import (_DIRECT, _grid, TREE_VARIANTS, VARIANTS, DatasetConfig, ExperimentConfig,
                      failed_cells, run_experiment)
from .metrics import audit_soft, bound_report, collected_distribution, imbalance
from .sampler import (SamplingPlan, derive_plan, interpolate_membership, interpolate_proxy,
                      rejection_sample)
from .tree import ProxyTree, expand_plan, grow_tree, membership_weights, tree_proxy

logger = logging.getLogger("fairproxy")

MODEL_VERSION = 1


@dataclass
class Model:
    """A trained proxy with its plan and the preprocessing it expects."""

    variant: str
    value: float
    dataset: DatasetConfig
    encoding: FeatureEncoding
    scaling: MinMaxScaling
    group_names: tuple
    proxy: object
    plan: SamplingPlan

    def features(self, df) -> np.ndarray:
        X = self.encoding.transform(df)
        return (X - self.scaling.low) / self.scaling.span

    def membership(self, X) -> np.ndarray:
        if self.variant in TREE_VARIANTS:
            return membership_weights(self.proxy, X)
        return interpolate_membership(self.proxy.membership(X), self.value)

    def proxy_fn(self):
        if self.variant in TREE_VARIANTS:
            return tree_proxy(self.proxy)
        return interpolate_proxy(self.proxy.as_proxy(), self.value, len(self.group_names))

    def save(self, out: Path) -> None:
        out.mkdir(parents=True, exist_ok=True)
        meta = {
            "version": MODEL_VERSION, "package_version": __version__,
            "variant": self.variant, "value": self.value,
            "dataset": {k: list(v) if isinstance(v, tuple) else v
                        for k, v in vars(self.dataset).items()},
            "encoding": self.encoding.to_list(),
            "scaling": {"low": self.scaling.low.tolist(), "span": self.scaling.span.tolist()},
            "group_names": list(self.group_names),
        }
        (out / "model.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
        (out / "proxy.json").write_text(self.proxy.to_json(), encoding="utf-8")
        (out / "plan.json").write_text(self.plan.to_json(), encoding="utf-8")
        (out / "label_map.json").write_text(
            json.dumps({g: i for i, g in enumerate(self.group_names)}, indent=2),
            encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Model":
        try:
            meta = json.loads((path / "model.json").read_text(encoding="utf-8"))
            proxy_text = (path / "proxy.json").read_text(encoding="utf-8")
            plan = SamplingPlan.from_json((path / "plan.json").read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load model from {path}: {exc}") from None
        if meta.get("version") != MODEL_VERSION:
            raise ConfigError(f"unsupported model version {meta.get('version')!r}")
        variant = meta["variant"]
        proxy = (ProxyTree.from_json(proxy_text) if variant in TREE_VARIANTS
                 else DirectClassifier.from_json(proxy_text))
        d = meta["dataset"]
        dataset = DatasetConfig(**{k: tuple(v) if isinstance(v, list) else v
                                   for k, v in d.items()})
        scaling = MinMaxScaling(np.array(meta["scaling"]["low"]),
                                np.array(meta["scaling"]["span"]))
        return cls(variant, float(meta["value"]), dataset,
                   FeatureEncoding.from_list(meta["encoding"]), scaling,
                   tuple(meta["group_names"]), proxy, plan)


def train_model(df, dataset: DatasetConfig, variant: str, value: float,
                cfg: ExperimentConfig) -> tuple[Model, LabeledDataset]:
    encoding = FeatureEncoding.fit(df, dataset.schema, dataset.sensitive)
    raw = dataset_from_frame(df, dataset.schema, dataset.sensitive, encoding=encoding)
    scaling = MinMaxScaling.fit(raw)
    ds = scaling.apply(raw)
    U = TargetDistribution.uniform(ds.group_count)
    if variant in TREE_VARIANTS:
        tree, A, _ = grow_tree(ds, U, value, cfg.epsilon, cfg.gamma, cfg.max_height,
                               cfg.stop_distance, cfg.t_cap, cfg.master_seed,
                               cfg.min_leaf_mass, cfg.budget)
        plan = expand_plan(derive_plan(A, U, relaxed=variant == "ab_relaxed"), tree)
        proxy = tree
    else:
        kind, plan_kind = _DIRECT[variant]
        proxy = train_direct(ds, kind, seed=cfg.master_seed)
        M = interpolate_membership(proxy.membership(ds.features), value)
        plan = (naive_plan_from_membership(M) if plan_kind == "naive"
                else qp_plan_from_membership(M, ds.sensitive, ds.group_count, U, False))
    model = Model(variant, value, dataset, encoding, scaling, ds.group_names, proxy, plan)
    return model, ds


def _audit_summary(model: Model, ds: LabeledDataset, source: str) -> dict:
    U = TargetDistribution.uniform(ds.group_count)
    M = model.membership(ds.features)
    aud = audit_soft(M, ds.sensitive, U, sample_source=source)
    dist = collected_distribution(M, model.plan.rho, ds.sensitive, U)
    out = aud.to_dict()
    out.pop("per_leaf_posteriors")
    out.update({"collected_distribution": dist.tolist(),
                "collected_imbalance": imbalance(dist, U),
                "variant": model.variant, "value": model.value,
                "group_names": list(ds.group_names)})
    return out


def _dataset_from_args(args, base: DatasetConfig | None) -> DatasetConfig:
    fields = {}
    if base is not None:
        fields.update(vars(base))
    for key in ("path", "label", "sensitive"):
        val = getattr(args, "data" if key == "path" else key, None)
        if val is not None:
            fields[key] = val
    for key in ("positive_labels", "categorical", "numeric", "drop"):
        val = getattr(args, key, None)
        if val:
            fields[key] = tuple(val)
    missing = [k for k in ("path", "label", "sensitive") if k not in fields]
    if missing:
        raise ConfigError(f"missing dataset settings: {missing}")
    return DatasetConfig(**fields)


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_toml(args.config) if args.config else None
    dataset = _dataset_from_args(args, cfg.dataset if cfg else None)
    base = cfg.to_dict() if cfg else {}
    base.pop("dataset", None)
    if getattr(args, "desk", False):
        base.update(seeds=5, alphas=_grid(0.0, 1.0, 0.1), subsample=5000)
    for key in ("epsilon", "gamma", "max_height", "stop_distance", "t_cap", "min_leaf_mass",
                "budget", "seeds", "output_dir", "subsample"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    return ExperimentConfig(dataset, **base)


def _read(path) -> "object":
    if not Path(path).is_file():
        raise ConfigError(f"input file not found: {path}")
    return read_table(path)


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    df = _read(cfg.dataset.path)
    value = args.alpha if args.variant in TREE_VARIANTS else args.eta
    model, ds = train_model(df, cfg.dataset, args.variant, value, cfg)
    out = Path(args.out)
    model.save(out)
    summary = _audit_summary(model, ds, "train")
    (out / "train_audit.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_sample(args) -> int:
    model = Model.load(Path(args.model))
    df = _read(args.data)
    cols = [c for c, _ in model.encoding.columns if c in df.columns]
    df = df.dropna(subset=cols).reset_index(drop=True)
    X = model.features(df)
    stream = zip(X, range(len(df)))
    budget = args.budget if args.budget is not None else len(df)
    accepted = rejection_sample(stream, model.proxy_fn(), model.plan, args.seed, budget)
    keep = [i for _, i in accepted]
    df.iloc[keep].to_csv(args.out, index=False, quoting=csv.QUOTE_MINIMAL)
    print(json.dumps({"candidates": min(budget, len(df)), "accepted": len(keep),
                      "output": str(args.out)}))
    return 0


def cmd_audit(args) -> int:
    model = Model.load(Path(args.model))
    df = _read(args.data)
    group_map = {g: i for i, g in enumerate(model.group_names)}
    d = model.dataset
    ds = model.scaling.apply(
        dataset_from_frame(df, d.schema, d.sensitive, group_map, model.encoding))
    summary = _audit_summary(model, ds, args.source)
    text = json.dumps(summary, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    out = run_experiment(cfg)
    failures = failed_cells(out)
    print(json.dumps({"output_dir": str(out), "failed_cells": failures}))
    return 2 if failures else 0


def cmd_bounds(args) -> int:
    report = bound_report(args.alpha, args.beta, args.epsilon, args.delta, args.d, args.k,
                          args.gamma)
    print(report.to_json())
    return 0


def _add_dataset_flags(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--label", help="label column")
    p.add_argument("--sensitive", help="sensitive attribute column")
    p.add_argument("--positive-labels", nargs="*", dest="positive_labels",
                   help="label values mapped to 1")
    p.add_argument("--categorical", nargs="*", help="columns forced to one-hot encoding")
    p.add_argument("--numeric", nargs="*", help="columns forced to numeric")
    p.add_argument("--drop", nargs="*", help="columns to ignore")


def _add_learning_flags(p):
    p.add_argument("--epsilon", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--max-height", type=int, dest="max_height")
    p.add_argument("--stop-distance", type=float, dest="stop_distance")
    p.add_argument("--t-cap", type=int, dest="t_cap")
    p.add_argument("--min-leaf-mass", type=float, dest="min_leaf_mass")
    p.add_argument("--budget", choices=("nominal", "total"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairproxy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one proxy and its sampling plan")
    _add_dataset_flags(p)
    _add_learning_flags(p)
    p.add_argument("--variant", choices=VARIANTS, default="ab")
    p.add_argument("--alpha", type=float, default=0.2, help="disclosivity budget (tree variants)")
    p.add_argument("--eta", type=float, default=0.0, help="interpolation level (direct variants)")
    p.add_argument("--out", required=True, help="model directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="rejection-sample a candidate stream")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="candidate CSV (sensitive column not needed)")
    p.add_argument("--budget", type=int, help="number of candidates to consider")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV of accepted rows")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("audit", help="disclosivity and balance of a model on labelled data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--source", choices=("train", "test", "collected"), default="test")
    p.add_argument("--out", help="write the audit JSON here as well")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("sweep", help="run a seeded sweep over variants and grids")
    _add_dataset_flags(p)
    _add_learning_flags(p)
    p.add_argument("--desk", action="store_true", help="5 seeds, alpha step 0.1, 5000 rows")
    p.add_argument("--seeds", type=int)
    p.add_argument("--subsample", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="round, leaf-size and out-of-sample bounds")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--d", type=int, required=True, help="VC dimension (p + 1 for PRC)")
    p.add_argument("--k", type=int, required=True, help="number of groups")
    p.add_argument("--gamma", type=float, default=0.1)
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FairProxyError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
