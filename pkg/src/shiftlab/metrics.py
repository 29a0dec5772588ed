"""Shift index, accuracy and correlation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ZERO_VAR = 1e-12


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class NIReport:
    per_class: dict[str, float]
    extractor_id: str
    skipped: tuple[str, ...] = field(default=())

    @property
    def mean(self) -> float:
        vals = list(self.per_class.values())
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def min(self) -> float:
        return min(self.per_class.values(), default=float("nan"))

    @property
    def max(self) -> float:
        return max(self.per_class.values(), default=float("nan"))

    def to_dict(self) -> dict:
        return {"per_class": dict(self.per_class), "mean": self.mean,
                "extractor_id": self.extractor_id, "skipped": list(self.skipped)}


def ni_index(train_features, test_features) -> float:
    """Norm of the train/test mean gap, standardized per dimension.

    The scale of each dimension is the population standard deviation over
    the union of both sets.  A dimension that is constant across the union
    contributes nothing if the means agree and raises otherwise.
    """
    a = np.atleast_2d(np.asarray(train_features, dtype=np.float64))
    b = np.atleast_2d(np.asarray(test_features, dtype=np.float64))
    if a.shape[0] < 1 or b.shape[0] < 1 or a.size == 0 or b.size == 0:
        raise ValueError("both feature sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    gap = a.mean(axis=0) - b.mean(axis=0)
    sigma = np.concatenate([a, b]).std(axis=0)
    flat = sigma < ZERO_VAR
    if np.any(flat & (np.abs(gap) >= ZERO_VAR)):
        raise ZeroVarianceError(f"constant dimensions {np.flatnonzero(flat).tolist()} have shifted means")
    delta = np.where(flat, 0.0, gap / np.where(flat, 1.0, sigma))
    return float(np.sqrt(delta @ delta))


def accuracy(predicted, actual) -> float:
    p, a = np.asarray(predicted), np.asarray(actual)
    if p.shape != a.shape or p.ndim != 1:
        raise ValueError("predicted and actual must be equal-length sequences")
    if p.size == 0:
        raise ValueError("cannot score an empty sequence")
    return float(np.mean(p == a))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx < ZERO_VAR or sy < ZERO_VAR:
        raise ZeroVarianceError("pearson is undefined for a constant sequence")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))
