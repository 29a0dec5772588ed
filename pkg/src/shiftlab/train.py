"""ERM baseline and batch-balanced training loops, plus evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .balance import BalanceConfig, WeightCollapseError, optimize_weights
from .data import ContextDataset, Split, labels_for, num_outputs
from .metrics import NIReport, ZeroVarianceError, accuracy, ni_index
from .net import Network, NetworkConfig, ShapeError, build_network, forward, loss_and_grad, predict, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 30
    learning_rate: float = 0.05
    lam: float = 0.1
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    seed: int = 0
    shuffle: bool = True
    steps_per_batch: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.steps_per_batch < 1:
            raise ValueError("batch_size and steps_per_batch must be positive, epochs non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.lam >= 0:
            raise ValueError("lam must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "balance" in d:
            d["balance"] = BalanceConfig(**d["balance"])
        return cls(**d)


@dataclass
class RunReport:
    method: str
    final_train_accuracy: float
    final_test_accuracy: float
    per_class_test_accuracy: dict[str, float]
    ni: NIReport
    loss_history: list[float]
    config: dict
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ni"] = self.ni.to_dict()
        return d


class BatchError(RuntimeError):
    pass


def _check_shapes(ds: ContextDataset, split: Split, netcfg: NetworkConfig):
    if tuple(netcfg.input_shape) != ds.input_shape:
        raise ShapeError(f"network input {netcfg.input_shape} does not match payload {ds.input_shape}")
    if netcfg.num_outputs != num_outputs(ds, split):
        raise ShapeError(f"network has {netcfg.num_outputs} outputs, split needs {num_outputs(ds, split)}")


def epoch_batches(n: int, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    """Seeded minibatch order; a trailing batch smaller than two is dropped."""
    order = np.random.default_rng([cfg.seed, epoch]).permutation(n) if cfg.shuffle else np.arange(n)
    batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
    return [b for b in batches if len(b) >= 2]


def _fit(ds, split, netcfg, cfg, lam, weigh):
    _check_shapes(ds, split, netcfg)
    ids = list(split.train_ids)
    x = ds.payloads(ids)
    y = labels_for(ds, split, ids)
    net = build_network(netcfg)
    history = []
    for epoch in range(cfg.epochs):
        totals = []
        for bi, b in enumerate(epoch_batches(len(ids), cfg, epoch)):
            xb, yb = x[b], y[b]
            try:
                w = weigh(net, xb)
            except WeightCollapseError as e:
                raise BatchError(f"epoch {epoch} batch {bi}: {e}") from e
            for _ in range(cfg.steps_per_batch):
                loss, grads = loss_and_grad(net, xb, yb, w, lam)
                net = sgd_step(net, grads, cfg.learning_rate)
            totals.append(loss.total)
        history.append(float(np.mean(totals)) if totals else float("nan"))
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    return net, history


def _uniform(net, xb):
    return np.full(len(xb), 1.0 / len(xb))


def train_erm(ds: ContextDataset, split: Split, netcfg: NetworkConfig, cfg: TrainConfig,
              lam: float = 0.0) -> tuple[Network, RunReport]:
    """Plain minibatch SGD on unweighted cross-entropy (``lam`` defaults to 0)."""
    net, history = _fit(ds, split, netcfg, cfg, lam, _uniform)
    return net, _report("erm", net, ds, split, cfg, history, lam)


def train_cnbb(ds: ContextDataset, split: Split, netcfg: NetworkConfig, cfg: TrainConfig,
               force_uniform: bool = False) -> tuple[Network, RunReport]:
    """Alternate per-batch balancing weights with one weighted parameter step.

    For each batch the current extractor produces features, the weights are
    optimized with the network frozen, and then the network takes an SGD
    step on weighted cross-entropy plus ``cfg.lam`` times the quantization
    loss.  ``force_uniform`` skips the weight solve (used for reduction
    checks).
    """
    if cfg.batch_size < 2:
        raise ValueError("batch balancing needs batch_size >= 2")

    def weigh(net, xb):
        if force_uniform:
            return _uniform(net, xb)
        feats, _ = forward(net, xb)
        return optimize_weights(feats, cfg.balance)[0]

    net, history = _fit(ds, split, netcfg, cfg, cfg.lam, weigh)
    return net, _report("cnbb", net, ds, split, cfg, history, cfg.lam)


def _report(method, net, ds, split, cfg, history, lam) -> RunReport:
    ev = evaluate(net, ds, split, extractor_id=f"{method}:seed={cfg.seed}")
    config = {"train": replace(cfg, lam=lam).to_dict(), "net": net.config.to_dict()}
    return RunReport(method, ev["train_accuracy"], ev["test_accuracy"], ev["per_class_test_accuracy"],
                     ev["ni"], history, config, cfg.seed)


def class_ni(net: Network, ds: ContextDataset, split: Split, extractor_id: str = "") -> NIReport:
    """NI per class between that class's train and test features under ``net``."""
    train_by = _by_class(ds, split.train_ids)
    test_by = _by_class(ds, split.test_ids)
    per_class, skipped = {}, []
    for c in ds.classes:
        if c not in test_by:
            continue
        if c not in train_by:
            skipped.append(c)
            continue
        ftr, _ = predict(net, ds.payloads(train_by[c]))
        fte, _ = predict(net, ds.payloads(test_by[c]))
        try:
            per_class[c] = ni_index(ftr, fte)
        except ZeroVarianceError:
            skipped.append(c)
    return NIReport(per_class, extractor_id, tuple(skipped))


def _by_class(ds, ids):
    out: dict[str, list[int]] = {}
    for i in ids:
        out.setdefault(ds.sample(i).class_label, []).append(i)
    return out


def evaluate(net: Network, ds: ContextDataset, split: Split, extractor_id: str = "") -> dict:
    """Train/test accuracy, per-class test accuracy and per-class NI."""
    result = {}
    for part, ids in (("train", split.train_ids), ("test", split.test_ids)):
        ids = list(ids)
        _, pred = predict(net, ds.payloads(ids))
        y = labels_for(ds, split, ids)
        result[f"{part}_accuracy"] = accuracy(pred, y)
        if part == "test":
            per_class = {}
            cls = np.array([ds.sample(i).class_label for i in ids])
            for c in ds.classes:
                mask = cls == c
                if mask.any():
                    per_class[c] = accuracy(pred[mask], y[mask])
            result["per_class_test_accuracy"] = per_class
    result["ni"] = class_ni(net, ds, split, extractor_id)
    return result
