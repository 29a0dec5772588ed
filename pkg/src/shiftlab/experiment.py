"""Sweep runner: (variant x method x seed) cells to a deterministic CSV."""

from __future__ import annotations

import csv
import functools
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balance import BalanceConfig
from .data import (ContextDataset, InfeasibleSplitError, SplitSpec, SynthParams, generate_synthetic,
                   load_dataset, make_split, num_outputs)
from .metrics import ZeroVarianceError, pearson
from .net import NetworkConfig, build_network, convnet_config, mlp_config
from .train import BatchError, TrainConfig, class_ni, train_cnbb, train_erm

log = logging.getLogger(__name__)

COLUMNS = ("experiment", "variant_id", "setting", "method", "seed", "train_ratio", "test_ratio",
           "train_context_count", "alpha", "lambda", "train_acc", "test_acc", "ni_mean", "ni_min",
           "ni_max", "status")
METHODS = ("erm", "cnbb")
# reference: ERM net trained on a minimum-bias split of the same seed
# initial: the untrained seeded network
# trained: each cell's own network
NI_EXTRACTORS = ("reference", "initial", "trained")


def fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    dataset: dict
    variants: tuple[dict, ...]
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    net: dict = field(default_factory=lambda: {"hidden": [16], "feature_dim": 8})
    train: dict = field(default_factory=dict)
    alphas: tuple[float, ...] | None = None
    ni_extractor: str = "reference"

    def validate(self):
        if not self.variants or not self.methods or not self.seeds:
            raise ValueError("plan needs at least one variant, method and seed")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")
        if self.ni_extractor not in NI_EXTRACTORS:
            raise ValueError(f"ni_extractor must be one of {NI_EXTRACTORS}")
        if ("synth" in self.dataset) == ("path" in self.dataset):
            raise ValueError("dataset must give exactly one of 'synth' or 'path'")
        for v in self.variants:
            SplitSpec.from_dict({**v, "seed": 0}).validate()
        self.train_config(0)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        return cls(
            name=d["name"], dataset=d["dataset"], variants=tuple(d["variants"]),
            methods=tuple(d.get("methods", METHODS)), seeds=tuple(d["seeds"]),
            net=d.get("net", {"hidden": [16], "feature_dim": 8}), train=d.get("train", {}),
            alphas=tuple(d["alphas"]) if d.get("alphas") else None,
            ni_extractor=d.get("ni_extractor", "reference"),
        )

    @classmethod
    def load(cls, path, base: Path | None = None) -> "ExperimentPlan":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        ds = d.get("dataset", {})
        if "path" in ds and not Path(ds["path"]).is_absolute():
            ds["path"] = str((base or Path(path).parent) / ds["path"])
        return cls.from_dict(d)

    def train_config(self, seed: int, alpha: float | None = None) -> TrainConfig:
        d = dict(self.train)
        bal = dict(d.pop("balance", {}))
        if alpha is not None:
            bal["alpha"] = alpha
        return TrainConfig(**d, balance=BalanceConfig(**bal), seed=seed)

    def cells(self) -> list[tuple[int, str, float | None, int]]:
        out = []
        for vi in range(len(self.variants)):
            for m in self.methods:
                alphas = self.alphas if (m == "cnbb" and self.alphas) else (None,)
                for a in alphas:
                    for s in self.seeds:
                        out.append((vi, m, a, s))
        return out


def network_config(template: dict, ds: ContextDataset, outputs: int, seed: int) -> NetworkConfig:
    """Instantiate a network template for a dataset and head size."""
    if ds.payload_mode == "vector":
        return mlp_config(ds.input_shape[0], template.get("hidden", [16]), template.get("feature_dim", 8),
                          outputs, seed=seed)
    c, h, _ = ds.input_shape
    return convnet_config(c, h, template.get("widths", (8, 16)), template.get("fc_hidden", 32),
                          template.get("feature_dim", 16), outputs, seed=seed)


@functools.lru_cache(maxsize=4)
def _dataset(key: str) -> ContextDataset:
    spec = json.loads(key)
    if "synth" in spec:
        return generate_synthetic(SynthParams(**spec["synth"]))
    return load_dataset(spec["path"])


def _ds(plan: ExperimentPlan) -> ContextDataset:
    return _dataset(json.dumps(plan.dataset, sort_keys=True))


@functools.lru_cache(maxsize=64)
def _reference_extractor(plan_key: str, seed: int):
    """ERM network trained on a minimum-bias split; shared by all cells of a seed."""
    plan = ExperimentPlan.from_dict(json.loads(plan_key))
    ds = _ds(plan)
    v = plan.variants[0]
    spec = SplitSpec("minimum", v["train_size"], v["test_size"], seed=seed)
    split = make_split(ds, spec)
    netcfg = network_config(plan.net, ds, len(ds.classes), seed)
    return train_erm(ds, split, netcfg, plan.train_config(seed))[0]


def _plan_key(plan: ExperimentPlan) -> str:
    d = {"name": plan.name, "dataset": plan.dataset, "variants": list(plan.variants),
         "methods": list(plan.methods), "seeds": list(plan.seeds), "net": plan.net,
         "train": plan.train, "alphas": list(plan.alphas) if plan.alphas else None,
         "ni_extractor": plan.ni_extractor}
    return json.dumps(d, sort_keys=True)


def run_cell(plan_key: str, cell) -> dict:
    plan = ExperimentPlan.from_dict(json.loads(plan_key))
    vi, method, alpha, seed = cell
    v = plan.variants[vi]
    spec = SplitSpec.from_dict({**v, "seed": seed})
    cfg = plan.train_config(seed, alpha)
    row = {
        "experiment": plan.name, "variant_id": vi, "setting": spec.setting, "method": method,
        "seed": seed, "train_ratio": spec.dominant_ratio_train, "test_ratio": spec.dominant_ratio_test,
        "train_context_count": spec.train_context_count,
        "alpha": cfg.balance.alpha if method == "cnbb" else None,
        "lambda": cfg.lam if method == "cnbb" else 0.0,
    }
    try:
        ds = _ds(plan)
        split = make_split(ds, spec)
        netcfg = network_config(plan.net, ds, num_outputs(ds, split), seed)
        if method == "erm":
            net, report = train_erm(ds, split, netcfg, cfg)
        else:
            net, report = train_cnbb(ds, split, netcfg, cfg)
        if plan.ni_extractor == "reference":
            ni = class_ni(_reference_extractor(plan_key, seed), ds, split, f"reference:seed={seed}")
        elif plan.ni_extractor == "initial":
            ext = build_network(network_config(plan.net, ds, len(ds.classes), seed))
            ni = class_ni(ext, ds, split, f"initial:seed={seed}")
        else:
            ni = report.ni
        row.update(train_acc=report.final_train_accuracy, test_acc=report.final_test_accuracy,
                   ni_mean=ni.mean, ni_min=ni.min, ni_max=ni.max, status="ok")
    except (InfeasibleSplitError, BatchError, ZeroVarianceError, ValueError) as e:
        log.warning("cell %s failed: %s", cell, e)
        row["status"] = f"failed: {e}"
    return row


def _aggregate(plan: ExperimentPlan, rows: list[dict]) -> list[dict]:
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["variant_id"], r["method"], r["alpha"]), []).append(r)
    out = []
    for (vi, method, alpha), rs in groups.items():
        ok = [r for r in rs if r["status"] == "ok"]
        agg = {k: rs[0][k] for k in ("experiment", "variant_id", "setting", "method", "train_ratio",
                                      "test_ratio", "train_context_count", "alpha", "lambda")}
        agg["seed"] = "all"
        if ok:
            test = np.array([r["test_acc"] for r in ok])
            agg.update(train_acc=float(np.mean([r["train_acc"] for r in ok])),
                       test_acc=float(test.mean()),
                       ni_mean=float(np.mean([r["ni_mean"] for r in ok])),
                       ni_min=float(min(r["ni_min"] for r in ok)),
                       ni_max=float(max(r["ni_max"] for r in ok)))
            std = fmt(float(test.std()))
        else:
            std = ""
        agg["status"] = f"aggregate n={len(ok)} failed={len(rs) - len(ok)} test_acc_std={std}"
        out.append(agg)
    return out


def _correlations(aggs: list[dict]) -> dict:
    """Pearson of mean NI against mean test error across variants, per method."""
    out = {}
    for method in sorted({a["method"] for a in aggs}):
        for alpha in sorted({a["alpha"] for a in aggs if a["method"] == method}, key=lambda a: a or 0):
            pts = [(a["ni_mean"], 1 - a["test_acc"]) for a in aggs
                   if a["method"] == method and a["alpha"] == alpha and "test_acc" in a]
            key = method if alpha is None else f"{method}:alpha={fmt(alpha)}"
            if len(pts) >= 3:
                try:
                    out[key] = pearson(*zip(*pts))
                except ZeroVarianceError:
                    out[key] = None
    return out


def render_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in COLUMNS])
    return buf.getvalue()


def run_experiment(plan: ExperimentPlan, out_path, jobs: int = 1) -> dict:
    """Run every cell, then write cell rows followed by aggregate rows.

    Rows are written in plan order regardless of ``jobs``.  A summary with
    failure counts and NI/error correlations goes to ``<out>.summary.json``.
    """
    plan.validate()
    key = _plan_key(plan)
    cells = plan.cells()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_cell, [key] * len(cells), cells))
    else:
        rows = [run_cell(key, c) for c in cells]
    aggs = _aggregate(plan, rows)
    out_path = Path(out_path)
    out_path.write_text(render_csv(rows + aggs), encoding="utf-8")
    failed = sum(r["status"] != "ok" for r in rows)
    summary = {
        "experiment": plan.name,
        "cells": len(rows),
        "failed": failed,
        "aggregates": len(aggs),
        "pearson_ni_vs_test_error": {k: fmt(v) for k, v in _correlations(aggs).items()}
        if len(plan.variants) >= 3 else {},
    }
    Path(str(out_path) + ".summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n",
                                                      encoding="utf-8")
    return summary


def reference_plan() -> ExperimentPlan:
    """Desk-scale analog of the combined proportional and compositional sweep."""
    return ExperimentPlan.from_dict(REFERENCE_PLAN)


REFERENCE_SYNTH = dict(num_classes=3, contexts_per_class=6, samples_per_cell=60, payload_mode="vector",
                       vector_dim=12, class_signal=1.0, context_signal=2.0, noise_std=0.3, seed=0)
REFERENCE_NET = {"hidden": [16], "feature_dim": 8}
REFERENCE_TRAIN = {"batch_size": 32, "epochs": 30, "learning_rate": 0.05, "lam": 1e-3,
                   "balance": {"alpha": 10.0}}
REFERENCE_PLAN = {
    "name": "combined_bias",
    "dataset": {"synth": REFERENCE_SYNTH},
    "variants": [
        {"setting": "combined", "train_size": 90, "test_size": 60, "train_context_count": 4,
         "dominant_ratio_train": r, "dominant_ratio_test": 1.0}
        for r in (1.0, 3.0, 5.0)
    ],
    "methods": ["erm", "cnbb"],
    "seeds": [0, 1],
    "net": REFERENCE_NET,
    "train": REFERENCE_TRAIN,
    "ni_extractor": "reference",
}
