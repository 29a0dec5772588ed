"""Small deterministic numpy network with hand-written reverse-mode gradients.

A network is a flat stack of layers.  The output of the tanh layer at
``feature_layer_index`` is the learned representation (the feature
extractor); everything after it is the classifier head, which must end in
softmax.  Parameters are immutable numpy arrays; every update returns a new
:class:`Network`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FORMAT_VERSION = 1
SIMPLEX_TOL = 1e-8

_KINDS = ("dense", "conv2d", "maxpool2d", "relu", "tanh", "softmax")
_PARAMETERIZED = ("dense", "conv2d")


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int = 0
    out_dim: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    padding: int = 0
    window: int = 0

    @classmethod
    def dense(cls, in_dim: int, out_dim: int) -> "LayerSpec":
        return cls("dense", in_dim=in_dim, out_dim=out_dim)

    @classmethod
    def conv2d(cls, in_channels: int, out_channels: int, kernel: int,
               stride: int = 1, padding: int = 0) -> "LayerSpec":
        return cls("conv2d", in_channels=in_channels, out_channels=out_channels,
                   kernel=kernel, stride=stride, padding=padding)

    @classmethod
    def maxpool2d(cls, window: int, stride: int | None = None) -> "LayerSpec":
        return cls("maxpool2d", window=window, stride=window if stride is None else stride)

    @classmethod
    def act(cls, kind: str) -> "LayerSpec":
        return cls(kind)

    def to_dict(self) -> dict:
        keys = {
            "dense": ("in_dim", "out_dim"),
            "conv2d": ("in_channels", "out_channels", "kernel", "stride", "padding"),
            "maxpool2d": ("window", "stride"),
        }.get(self.kind, ())
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys}}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)

    def param_shapes(self) -> list[tuple[int, ...]]:
        if self.kind == "dense":
            return [(self.in_dim, self.out_dim), (self.out_dim,)]
        if self.kind == "conv2d":
            k = self.kernel
            return [(self.out_channels, self.in_channels, k, k), (self.out_channels,)]
        return []

    def fan_in(self) -> int:
        if self.kind == "dense":
            return self.in_dim
        return self.in_channels * self.kernel * self.kernel

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape of one sample after this layer, or ShapeError if it does not fit."""
        if self.kind not in _KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense":
            if min(self.in_dim, self.out_dim) <= 0:
                raise ShapeError("dense sizes must be positive")
            if math.prod(shape) != self.in_dim:
                raise ShapeError(f"dense expects {self.in_dim} inputs, got shape {shape}")
            return (self.out_dim,)
        if self.kind == "conv2d":
            if min(self.in_channels, self.out_channels, self.kernel, self.stride) <= 0 or self.padding < 0:
                raise ShapeError("conv2d sizes must be positive")
            if len(shape) != 3 or shape[0] != self.in_channels:
                raise ShapeError(f"conv2d expects ({self.in_channels}, H, W), got {shape}")
            _, h, w = shape
            hp, wp = h + 2 * self.padding, w + 2 * self.padding
            if self.kernel > min(hp, wp):
                raise ShapeError(f"conv kernel {self.kernel} exceeds padded input {hp}x{wp}")
            return (self.out_channels, (hp - self.kernel) // self.stride + 1,
                    (wp - self.kernel) // self.stride + 1)
        if self.kind == "maxpool2d":
            if min(self.window, self.stride) <= 0:
                raise ShapeError("maxpool2d sizes must be positive")
            if len(shape) != 3 or self.window > min(shape[1:]):
                raise ShapeError(f"maxpool window {self.window} does not fit {shape}")
            c, h, w = shape
            return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)
        if self.kind == "softmax" and len(shape) != 1:
            raise ShapeError("softmax expects flat logits")
        return shape


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[LayerSpec, ...]
    feature_layer_index: int
    input_shape: tuple[int, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))

    def validate(self) -> list[tuple[int, ...]]:
        """Check the config and return the per-sample shape after every layer."""
        if not self.layers:
            raise ShapeError("network has no layers")
        if self.layers[-1].kind != "softmax":
            raise ShapeError("final layer must be softmax")
        fi = self.feature_layer_index
        if not 0 <= fi < len(self.layers) - 1 or self.layers[fi].kind != "tanh":
            raise ShapeError(f"feature layer {fi} must be a tanh layer before the head")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            shapes.append(shape)
        return shapes

    @property
    def feature_dim(self) -> int:
        return math.prod(self.validate()[self.feature_layer_index])

    @property
    def num_outputs(self) -> int:
        return self.validate()[-1][0]

    def to_dict(self) -> dict:
        return {
            "layers": [l.to_dict() for l in self.layers],
            "feature_layer_index": self.feature_layer_index,
            "input_shape": list(self.input_shape),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            feature_layer_index=int(d["feature_layer_index"]),
            input_shape=tuple(d["input_shape"]),
            seed=int(d.get("seed", 0)),
        )


def mlp_config(in_dim: int, hidden: Sequence[int], feature_dim: int, num_classes: int,
               seed: int = 0) -> NetworkConfig:
    """Dense relu stack, then a tanh feature layer and a linear softmax head."""
    layers = []
    prev = in_dim
    for h in hidden:
        layers += [LayerSpec.dense(prev, h), LayerSpec.act("relu")]
        prev = h
    layers += [LayerSpec.dense(prev, feature_dim), LayerSpec.act("tanh")]
    fi = len(layers) - 1
    layers += [LayerSpec.dense(feature_dim, num_classes), LayerSpec.act("softmax")]
    return NetworkConfig(tuple(layers), fi, (in_dim,), seed)


def convnet_config(in_channels: int = 3, size: int = 32, widths: Sequence[int] = (32, 64, 128, 256, 512),
                   fc_hidden: int = 256, feature_dim: int = 50, num_classes: int = 10,
                   seed: int = 0) -> NetworkConfig:
    """Five conv/relu/maxpool blocks, fc-relu, fc-tanh features, fc-softmax.

    The defaults are the reference stack at 32x32 input with conv widths and
    the first fc layer halved relative to the 64x64 original.
    """
    layers = []
    c, s = in_channels, size
    for w in widths:
        layers += [LayerSpec.conv2d(c, w, 3, padding=1), LayerSpec.act("relu"), LayerSpec.maxpool2d(2)]
        c, s = w, s // 2
    layers += [LayerSpec.dense(c * s * s, fc_hidden), LayerSpec.act("relu"),
               LayerSpec.dense(fc_hidden, feature_dim), LayerSpec.act("tanh")]
    fi = len(layers) - 1
    layers += [LayerSpec.dense(feature_dim, num_classes), LayerSpec.act("softmax")]
    return NetworkConfig(tuple(layers), fi, (in_channels, size, size), seed)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    config: NetworkConfig
    params: tuple[np.ndarray, ...]
    # (layer index, first param index) for each parameterized layer
    _slots: tuple[tuple[int, int], ...] = field(repr=False, default=())

    def __post_init__(self):
        self.config.validate()
        slots, k = [], 0
        for i, layer in enumerate(self.config.layers):
            shapes = layer.param_shapes()
            if shapes:
                slots.append((i, k))
                for s in shapes:
                    if k >= len(self.params) or self.params[k].shape != s:
                        got = self.params[k].shape if k < len(self.params) else None
                        raise ShapeError(f"param {k} of layer {i}: expected {s}, got {got}")
                    k += 1
        if k != len(self.params):
            raise ShapeError(f"expected {k} parameter arrays, got {len(self.params)}")
        object.__setattr__(self, "params", tuple(_frozen(p) for p in self.params))
        object.__setattr__(self, "_slots", tuple(slots))

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def phi_indices(self) -> list[int]:
        """Indices into ``params`` belonging to the feature extractor."""
        fi = self.config.feature_layer_index
        return [k + j for i, k in self._slots if i <= fi
                for j in range(len(self.config.layers[i].param_shapes()))]

    def theta_indices(self) -> list[int]:
        phi = set(self.phi_indices())
        return [k for k in range(len(self.params)) if k not in phi]

    def equals(self, other: "Network") -> bool:
        return (self.config == other.config and len(self.params) == len(other.params)
                and all(np.array_equal(a, b) for a, b in zip(self.params, other.params)))


def build_network(config: NetworkConfig) -> Network:
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = []
    for layer in config.layers:
        if layer.kind in _PARAMETERIZED:
            scale = 1.0 / math.sqrt(layer.fan_in())
            for shape in layer.param_shapes():
                params.append(rng.uniform(-scale, scale, size=shape))
    return Network(config, tuple(params))


# -- layer kernels -----------------------------------------------------------

def _conv_windows(x, layer):
    p, k, s = layer.padding, layer.kernel, layer.stride
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    return xp, win


def _conv_forward(x, W, b, layer):
    _, win = _conv_windows(x, layer)
    return np.einsum("nchwij,ocij->nohw", win, W, optimize=True) + b[None, :, None, None]


def _conv_backward(x, W, gout, layer):
    xp, win = _conv_windows(x, layer)
    dW = np.einsum("nchwij,nohw->ocij", win, gout, optimize=True)
    db = gout.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    s, ho, wo = layer.stride, gout.shape[2], gout.shape[3]
    for i in range(layer.kernel):
        for j in range(layer.kernel):
            dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                np.einsum("nohw,oc->nchw", gout, W[:, :, i, j], optimize=True)
    p = layer.padding
    dx = dxp[:, :, p:dxp.shape[2] - p, p:dxp.shape[3] - p] if p else dxp
    return dx, dW, db


def _pool_argmax(x, layer):
    k, s = layer.window, layer.stride
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    flat = win.reshape(*win.shape[:4], k * k)
    return flat.max(axis=-1), flat.argmax(axis=-1)


def _pool_backward(x, arg, gout, layer):
    k, s = layer.window, layer.stride
    ho, wo = gout.shape[2], gout.shape[3]
    dx = np.zeros_like(x)
    for a in range(k * k):
        i, j = divmod(a, k)
        dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += np.where(arg == a, gout, 0.0)
    return dx


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_batch(net: Network, batch) -> np.ndarray:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim < 1 or x.shape[1:] != net.config.input_shape:
        raise ShapeError(f"batch shape {x.shape} does not match input {net.config.input_shape}")
    if x.shape[0] < 1:
        raise ShapeError("empty batch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    return x


def _run(net: Network, x: np.ndarray):
    """Forward pass keeping every layer input and auxiliary state."""
    acts = [x]
    aux: dict[int, np.ndarray] = {}
    slot = dict(net._slots)
    layers = net.config.layers
    for i, layer in enumerate(layers[:-1]):
        h = acts[-1]
        if layer.kind == "dense":
            W, b = net.params[slot[i]], net.params[slot[i] + 1]
            out = h.reshape(h.shape[0], -1) @ W + b
        elif layer.kind == "conv2d":
            W, b = net.params[slot[i]], net.params[slot[i] + 1]
            out = _conv_forward(h, W, b, layer)
        elif layer.kind == "maxpool2d":
            out, aux[i] = _pool_argmax(h, layer)
        elif layer.kind == "relu":
            out = np.maximum(h, 0.0)
        elif layer.kind == "tanh":
            out = np.tanh(h)
        else:  # softmax in the middle of the stack
            out = np.exp(_log_softmax(h))
        acts.append(out)
    return acts, aux


def _features(net: Network, acts) -> np.ndarray:
    f = acts[net.config.feature_layer_index + 1]
    return f.reshape(f.shape[0], -1)


def forward(net: Network, batch) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(features, probs)`` for a batch of shape ``(n, *input_shape)``."""
    x = _check_batch(net, batch)
    acts, _ = _run(net, x)
    return _features(net, acts), np.exp(_log_softmax(acts[-1]))


def predict(net: Network, batch, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Features and argmax predictions, evaluated in chunks."""
    x = _check_batch(net, batch)
    feats, preds = [], []
    for start in range(0, len(x), chunk):
        acts, _ = _run(net, x[start:start + chunk])
        feats.append(_features(net, acts))
        preds.append(acts[-1].argmax(axis=1))
    return np.concatenate(feats), np.concatenate(preds)


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    weighted_ce: float
    quantization: float
    lam: float


def check_weights(weights, n: int, tol: float = SIMPLEX_TOL) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ShapeError(f"expected {n} sample weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or w.min() < -tol or abs(w.sum() - 1.0) > tol:
        raise ValueError("sample weights are not on the probability simplex")
    return w


def loss_and_grad(net: Network, batch, labels, weights, lam: float
                  ) -> tuple[LossBreakdown, tuple[np.ndarray, ...]]:
    """Weighted cross-entropy plus ``lam`` times the quantization loss.

    The quantization loss is ``-sum_i ||features_i||^2`` over the batch.  The
    weights are constants here; no gradient flows into them.
    """
    x = _check_batch(net, batch)
    n = x.shape[0]
    w = check_weights(weights, n)
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError("labels must have one entry per sample")
    acts, aux = _run(net, x)
    logits = acts[-1]
    if y.min() < 0 or y.max() >= logits.shape[1]:
        raise ValueError("label out of range")
    logp = _log_softmax(logits)
    rows = np.arange(n)
    weighted_ce = float(-(w * logp[rows, y]).sum())
    feats = acts[net.config.feature_layer_index + 1]
    quant = float(-(feats ** 2).sum())
    breakdown = LossBreakdown(weighted_ce + lam * quant, weighted_ce, quant, lam)

    g = np.exp(logp)
    g[rows, y] -= 1.0
    g *= w[:, None]
    grads: list[np.ndarray | None] = [None] * len(net.params)
    slot = dict(net._slots)
    layers = net.config.layers
    for i in range(len(layers) - 2, -1, -1):
        layer, h, out = layers[i], acts[i], acts[i + 1]
        if i == net.config.feature_layer_index and lam:
            g = g - 2.0 * lam * out
        if layer.kind == "dense":
            k = slot[i]
            hf = h.reshape(n, -1)
            grads[k] = hf.T @ g
            grads[k + 1] = g.sum(axis=0)
            g = (g @ net.params[k].T).reshape(h.shape)
        elif layer.kind == "conv2d":
            k = slot[i]
            g, grads[k], grads[k + 1] = _conv_backward(h, net.params[k], g, layer)
        elif layer.kind == "maxpool2d":
            g = _pool_backward(h, aux[i], g, layer)
        elif layer.kind == "relu":
            g = g * (h > 0)
        elif layer.kind == "tanh":
            g = g * (1.0 - out ** 2)
        else:
            g = out * (g - (g * out).sum(axis=1, keepdims=True))
    return breakdown, tuple(grads)


def sgd_step(net: Network, grads, lr: float) -> Network:
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    if len(grads) != len(net.params):
        raise ShapeError("gradient count does not match parameters")
    new = []
    for p, g in zip(net.params, grads):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
        new.append(p - lr * g)
    return Network(net.config, tuple(new))


def gradient_check(net: Network, batch, labels, weights, lam: float, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    _, grads = loss_and_grad(net, batch, labels, weights, lam)
    worst = 0.0
    params = [np.array(p) for p in net.params]
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + eps
            up = loss_and_grad(Network(net.config, tuple(params)), batch, labels, weights, lam)[0].total
            p[idx] = orig - eps
            down = loss_and_grad(Network(net.config, tuple(params)), batch, labels, weights, lam)[0].total
            p[idx] = orig
            num = (up - down) / (2 * eps)
            a = grads[k][idx]
            err = abs(a - num) / max(abs(a), abs(num), 1e-12)
            worst = max(worst, err)
    return worst


# -- checkpoints ---------------------------------------------------------------

def save_network(net: Network, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": net.config.to_dict(),
        "params": [p.tolist() for p in net.params],
    }
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_network(path) -> Network:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError(f"checkpoint {path} has no format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {doc['format_version']!r}")
    try:
        config = NetworkConfig.from_dict(doc["config"])
        raw = doc["params"]
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"checkpoint {path} is missing a field: {e}") from None
    shapes = [s for layer in config.layers for s in layer.param_shapes()]
    if len(raw) != len(shapes):
        raise ShapeError(f"checkpoint has {len(raw)} parameter arrays, config needs {len(shapes)}")
    params = []
    for k, (arr, shape) in enumerate(zip(raw, shapes)):
        try:
            a = np.array(arr, dtype=np.float64)
        except ValueError:
            raise ShapeError(f"parameter {k} is ragged") from None
        if a.shape != shape:
            raise ShapeError(f"parameter {k} has shape {a.shape}, config needs {shape}")
        params.append(a)
    return Network(config, tuple(params))


def checkpoint_roundtrip(net: Network, path) -> Network:
    save_network(net, path)
    return load_network(path)
