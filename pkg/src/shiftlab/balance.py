"""Per-batch confounder balancing weights.

Each feature column is binarized at zero and treated in turn as a
treatment indicator.  The weights ``w`` (constrained to the probability
simplex) are chosen so that, for every treatment column, the weighted means
of all *other* feature columns agree between the treated and control arms:

    loss(w) = sum_j || F_-j' (w * I_j) / w'I_j - F_-j' (w * (1 - I_j)) / w'(1 - I_j) ||^2
              + alpha * ||w||^2
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GROUP_WEIGHT_FLOOR = 1e-12
STEP_FLOOR = 1e-12
# iterates keep every weight at least this large so no arm can empty
WEIGHT_FLOOR = 1e-9
QUIET_ITERS = 3


class WeightCollapseError(ValueError):
    """A treatment arm of a non-degenerate column carries (almost) no weight."""


@dataclass(frozen=True)
class IndicatorMatrix:
    values: np.ndarray
    degenerate_columns: frozenset[int]

    @property
    def active(self) -> np.ndarray:
        mask = np.ones(self.values.shape[1], dtype=bool)
        mask[list(self.degenerate_columns)] = False
        return mask


@dataclass(frozen=True)
class BalanceConfig:
    alpha: float = 1e3
    step_size: float = 0.1
    max_iters: int = 200
    rel_tol: float = 1e-6

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")


def _as_features(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2 or f.shape[1] < 1:
        raise ValueError(f"features must be an n x p matrix with n >= 2, got shape {f.shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")
    return f


def binarize_features(f) -> IndicatorMatrix:
    """Treatment indicators ``f > 0``; exact zeros go to the control arm."""
    f = _as_features(f)
    ind = (f > 0).astype(np.float64)
    constant = np.all(ind == ind[:1], axis=0)
    ind.setflags(write=False)
    return IndicatorMatrix(ind, frozenset(int(j) for j in np.flatnonzero(constant)))


def _arm_means(f, ind, w):
    """Weighted confounder means in each arm, one column per treatment."""
    active = ind.active
    I = ind.values
    s1 = w @ I
    s0 = w @ (1.0 - I)
    bad = active & ((s1 < GROUP_WEIGHT_FLOOR) | (s0 < GROUP_WEIGHT_FLOOR))
    if bad.any():
        raise WeightCollapseError(f"treatment arm weight below {GROUP_WEIGHT_FLOOR} "
                                  f"for columns {np.flatnonzero(bad).tolist()}")
    s1 = np.where(active, s1, 1.0)
    s0 = np.where(active, s0, 1.0)
    # m1[k, j]: weighted mean of feature k among samples treated on column j
    m1 = (f.T @ (w[:, None] * I)) / s1
    m0 = (f.T @ (w[:, None] * (1.0 - I))) / s0
    mask = active[None, :] & ~np.eye(f.shape[1], dtype=bool)
    return m1, m0, s1, s0, mask


def _check(f, ind, w):
    f = _as_features(f)
    w = np.asarray(w, dtype=np.float64)
    if ind.values.shape != f.shape or w.shape != (f.shape[0],):
        raise ValueError("features, indicators and weights disagree in shape")
    return f, w


def balance_loss(f, ind: IndicatorMatrix, w, alpha: float) -> float:
    f, w = _check(f, ind, w)
    m1, m0, _, _, mask = _arm_means(f, ind, w)
    d = np.where(mask, m1 - m0, 0.0)
    return float((d ** 2).sum() + alpha * (w @ w))


def balance_loss_grad(f, ind: IndicatorMatrix, w, alpha: float) -> np.ndarray:
    """Gradient of :func:`balance_loss` in ``w``, ignoring the simplex constraint."""
    f, w = _check(f, ind, w)
    m1, m0, s1, s0, mask = _arm_means(f, ind, w)
    I = ind.values
    g1 = np.where(mask, 2.0 * (m1 - m0), 0.0) / s1
    g0 = np.where(mask, 2.0 * (m1 - m0), 0.0) / s0
    # d m1[k,j] / d w_i = I[i,j] (f[i,k] - m1[k,j]) / s1[j], likewise for the control arm
    treated = I * (f @ g1 - (g1 * m1).sum(axis=0))
    control = (1.0 - I) * (f @ g0 - (g0 * m0).sum(axis=0))
    return (treated - control).sum(axis=1) + 2.0 * alpha * w


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / k > 0)
    tau = css[rho - 1] / rho
    w = np.maximum(v - tau, 0.0)
    # one renormalization pass absorbs the cumsum rounding
    return w / w.sum()


def _project_floored(v, floor: float) -> np.ndarray:
    """Projection onto {w >= floor, sum(w) = 1}: a shifted, scaled simplex."""
    scale = 1.0 - v.size * floor
    return floor + scale * project_simplex((v - floor) / scale)


def _safe_loss(f, ind, w, alpha):
    try:
        return balance_loss(f, ind, w, alpha)
    except WeightCollapseError:
        return np.inf


def optimize_weights(f, cfg: BalanceConfig = BalanceConfig()) -> tuple[np.ndarray, list[float]]:
    """Projected gradient descent with backtracking from uniform weights.

    The first trial step is ``cfg.step_size``, later ones a Barzilai-Borwein
    estimate; each is halved until the loss does not increase.  Iterates are
    projected onto the simplex with every weight at least ``WEIGHT_FLOOR`` so
    no treatment arm can empty.  Stops after ``QUIET_ITERS`` consecutive
    relative loss changes below ``cfg.rel_tol``, when no descending step
    above the step floor exists, or after ``cfg.max_iters`` iterations.
    """
    f = _as_features(f)
    ind = binarize_features(f)
    n = f.shape[0]
    w = np.full(n, 1.0 / n)
    floor = min(WEIGHT_FLOOR, 0.5 / n)
    loss = balance_loss(f, ind, w, cfg.alpha)
    trace = [loss]
    step = cfg.step_size
    prev = None
    quiet = 0
    for _ in range(cfg.max_iters):
        grad = balance_loss_grad(f, ind, w, cfg.alpha)
        if prev is not None:
            # Barzilai-Borwein trial step, falling back to doubling
            dw, dg = w - prev[0], grad - prev[1]
            curv = dw @ dg
            step = min(dw @ dw / curv, 1e12) if curv > 0 else 2.0 * step
        while step >= STEP_FLOOR:
            trial = _project_floored(w - step * grad, floor)
            trial_loss = _safe_loss(f, ind, trial, cfg.alpha)
            if trial_loss <= loss:
                break
            step *= 0.5
        else:
            break
        change = abs(loss - trial_loss) / max(abs(loss), 1e-300)
        prev = (w, grad)
        w, loss = trial, trial_loss
        trace.append(loss)
        # one short backtracked step is not convergence
        quiet = quiet + 1 if change < cfg.rel_tol else 0
        if quiet >= QUIET_ITERS:
            break
    return w, trace
