"""Context-labelled datasets and distribution-shifted train/test splits."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

SETTINGS = ("minimum", "proportional", "compositional", "combined", "adversarial")


class DatasetFormatError(ValueError):
    pass


class InfeasibleSplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ContextSample:
    id: int
    class_label: str
    context_label: str
    payload: np.ndarray  # shape (d,) for vectors, (h, w) for images


@dataclass(frozen=True, eq=False)
class ContextDataset:
    samples: tuple[ContextSample, ...]
    classes: tuple[str, ...]
    contexts_per_class: dict[str, tuple[str, ...]]

    def __post_init__(self):
        if not self.samples:
            raise DatasetFormatError("dataset is empty")
        shape = self.samples[0].payload.shape
        seen = set()
        cells = Counter()
        for s in self.samples:
            if s.id in seen:
                raise DatasetFormatError(f"duplicate id {s.id}")
            seen.add(s.id)
            if s.payload.shape != shape:
                raise DatasetFormatError(f"sample {s.id} payload shape {s.payload.shape} != {shape}")
            cells[s.class_label, s.context_label] += 1
        if set(self.classes) != {c for c, _ in cells}:
            raise DatasetFormatError("class list does not match samples")
        for c in self.classes:
            ctxs = self.contexts_per_class.get(c, ())
            if set(ctxs) != {t for cc, t in cells if cc == c}:
                raise DatasetFormatError(f"context list of class {c!r} does not match samples")
        by_id = {s.id: i for i, s in enumerate(self.samples)}
        by_cell = defaultdict(list)
        for s in self.samples:
            by_cell[s.class_label, s.context_label].append(s.id)
        object.__setattr__(self, "_by_id", by_id)
        object.__setattr__(self, "_by_cell", {k: tuple(sorted(v)) for k, v in by_cell.items()})

    @property
    def payload_mode(self) -> str:
        return "vector" if self.samples[0].payload.ndim == 1 else "image"

    @property
    def input_shape(self) -> tuple[int, ...]:
        shape = self.samples[0].payload.shape
        return shape if len(shape) == 1 else (1, *shape)

    def __len__(self):
        return len(self.samples)

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._by_id

    def sample(self, sample_id: int) -> ContextSample:
        return self.samples[self._by_id[sample_id]]

    def cell(self, class_label: str, context_label: str) -> tuple[int, ...]:
        return self._by_cell.get((class_label, context_label), ())

    def class_ids(self, class_label: str) -> tuple[int, ...]:
        return tuple(sorted(i for t in self.contexts_per_class[class_label]
                            for i in self.cell(class_label, t)))

    def payloads(self, ids: Iterable[int]) -> np.ndarray:
        arr = np.stack([self.sample(i).payload for i in ids])
        return arr if self.payload_mode == "vector" else arr[:, None, :, :]

    def equals(self, other: "ContextDataset") -> bool:
        return (self.classes == other.classes
                and self.contexts_per_class == other.contexts_per_class
                and len(self.samples) == len(other.samples)
                and all(a.id == b.id and a.class_label == b.class_label
                        and a.context_label == b.context_label
                        and np.array_equal(a.payload, b.payload)
                        for a, b in zip(self.samples, other.samples)))


def make_dataset(samples: Iterable[ContextSample]) -> ContextDataset:
    samples = tuple(samples)
    classes, ctx = [], defaultdict(list)
    for s in samples:
        if s.class_label not in ctx:
            classes.append(s.class_label)
        if s.context_label not in ctx[s.class_label]:
            ctx[s.class_label].append(s.context_label)
    return ContextDataset(samples, tuple(classes), {c: tuple(v) for c, v in ctx.items()})


# -- synthesis -----------------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    num_classes: int = 5
    contexts_per_class: int = 10
    samples_per_cell: int = 30
    payload_mode: str = "vector"
    vector_dim: int = 20
    image_size: int = 16
    class_signal: float = 1.0
    context_signal: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def validate(self):
        if min(self.num_classes, self.contexts_per_class, self.samples_per_cell) < 1:
            raise ValueError("class, context and per-cell counts must be positive")
        if self.payload_mode not in ("vector", "image"):
            raise ValueError(f"unknown payload_mode {self.payload_mode!r}")
        if self.payload_mode == "vector" and self.vector_dim < self.num_classes + self.contexts_per_class:
            raise ValueError("vector_dim must hold one-hot blocks for every class and context")
        if self.payload_mode == "image" and self.image_size < 8:
            raise ValueError("image_size must be at least 8")
        if not (math.isfinite(self.class_signal) and math.isfinite(self.context_signal)):
            raise ValueError("signals must be finite")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be non-negative")


def class_names(k: int) -> list[str]:
    return [f"class{i}" for i in range(k)]


def context_names(k: int) -> list[str]:
    return [f"ctx{i}" for i in range(k)]


def _glyphs(num_classes: int, rng: np.random.Generator, size: int = 4) -> np.ndarray:
    # distinct random binary patterns, each with at least one lit pixel
    out: list[np.ndarray] = []
    while len(out) < num_classes:
        g = rng.integers(0, 2, size=(size, size)).astype(np.float64)
        if g.any() and not any(np.array_equal(g, h) for h in out):
            out.append(g)
    return np.stack(out)


def generate_synthetic(params: SynthParams) -> ContextDataset:
    """Every class shares the same pool of context labels.

    Vector payloads put the class one-hot in the first ``num_classes`` slots
    and the context one-hot in the next ``contexts_per_class`` slots.  Image
    payloads draw a per-class glyph at the top-left corner over a background
    whose intensity is keyed to the context.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    K, k = params.num_classes, params.contexts_per_class
    classes, contexts = class_names(K), context_names(k)
    glyphs = _glyphs(K, rng) if params.payload_mode == "image" else None
    samples = []
    sid = 0
    for ci, c in enumerate(classes):
        for ti, t in enumerate(contexts):
            for _ in range(params.samples_per_cell):
                if params.payload_mode == "vector":
                    x = np.zeros(params.vector_dim)
                    x[ci] += params.class_signal
                    x[K + ti] += params.context_signal
                    x += rng.normal(0.0, params.noise_std, size=params.vector_dim) if params.noise_std else 0.0
                else:
                    s = params.image_size
                    x = np.full((s, s), params.context_signal * (ti + 1) / k)
                    x[1:5, 1:5] += params.class_signal * glyphs[ci]
                    x += rng.normal(0.0, params.noise_std, size=(s, s)) if params.noise_std else 0.0
                samples.append(ContextSample(sid, c, t, x))
                sid += 1
    return ContextDataset(tuple(samples), tuple(classes), {c: tuple(contexts) for c in classes})


# -- dataset files -----------------------------------------------------------

def save_dataset(ds: ContextDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            if s.payload.ndim == 1:
                payload = s.payload.tolist()
            else:
                h, w = s.payload.shape
                payload = {"h": h, "w": w, "pixels": s.payload.ravel().tolist()}
            rec = {"id": s.id, "class": s.class_label, "context": s.context_label, "payload": payload}
            fh.write(json.dumps(rec) + "\n")


def _parse_payload(raw, lineno):
    if isinstance(raw, list):
        arr = np.array(raw, dtype=np.float64)
        if arr.ndim != 1:
            raise DatasetFormatError(f"line {lineno}: vector payload must be flat")
        return arr
    if isinstance(raw, dict):
        try:
            h, w, pix = int(raw["h"]), int(raw["w"]), raw["pixels"]
        except KeyError as e:
            raise DatasetFormatError(f"line {lineno}: image payload missing {e}") from None
        arr = np.array(pix, dtype=np.float64)
        if arr.shape != (h * w,):
            raise DatasetFormatError(f"line {lineno}: image has {arr.size} pixels, expected {h}x{w}")
        return arr.reshape(h, w)
    raise DatasetFormatError(f"line {lineno}: payload must be a list or an image object")


def load_dataset(path) -> ContextDataset:
    samples = []
    seen = set()
    shape = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f"line {lineno}: {e}") from None
            for key in ("id", "class", "context", "payload"):
                if key not in rec:
                    raise DatasetFormatError(f"line {lineno}: missing field {key!r}")
            sid = rec["id"]
            if not isinstance(sid, int) or sid < 0:
                raise DatasetFormatError(f"line {lineno}: id must be a non-negative integer")
            if sid in seen:
                raise DatasetFormatError(f"line {lineno}: duplicate id {sid}")
            seen.add(sid)
            payload = _parse_payload(rec["payload"], lineno)
            if shape is None:
                shape = payload.shape
            elif payload.shape != shape:
                raise DatasetFormatError(f"line {lineno}: payload shape {payload.shape} != {shape}")
            if not np.all(np.isfinite(payload)):
                raise DatasetFormatError(f"line {lineno}: non-finite payload")
            samples.append(ContextSample(sid, str(rec["class"]), str(rec["context"]), payload))
    if not samples:
        raise DatasetFormatError(f"{path}: no records")
    return make_dataset(samples)


# -- splits --------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    setting: str
    train_size: int
    test_size: int
    dominant_ratio_train: float | None = None
    dominant_ratio_test: float | None = None
    train_context_count: int | None = None
    confounding_context_count: int | None = None
    target_class: str | None = None
    seed: int = 0

    _ALLOWED = {
        "minimum": set(),
        "proportional": {"dominant_ratio_train", "dominant_ratio_test"},
        "compositional": {"train_context_count"},
        "combined": {"train_context_count", "dominant_ratio_train", "dominant_ratio_test"},
        "adversarial": {"confounding_context_count", "target_class"},
    }
    _REQUIRED = {
        "compositional": {"train_context_count"},
        "combined": {"train_context_count"},
        "adversarial": {"confounding_context_count", "target_class"},
    }

    def validate(self):
        if self.setting not in SETTINGS:
            raise ValueError(f"unknown setting {self.setting!r}")
        if self.train_size < 1 or self.test_size < 1:
            raise ValueError("train_size and test_size must be positive")
        optional = ("dominant_ratio_train", "dominant_ratio_test", "train_context_count",
                    "confounding_context_count", "target_class")
        given = {k for k in optional if getattr(self, k) is not None}
        extra = given - self._ALLOWED[self.setting]
        if extra:
            raise ValueError(f"{self.setting} split does not take {sorted(extra)}")
        missing = self._REQUIRED.get(self.setting, set()) - given
        if missing:
            raise ValueError(f"{self.setting} split requires {sorted(missing)}")
        if self.dominant_ratio_train is not None and not self.dominant_ratio_train >= 1:
            raise ValueError("dominant_ratio_train must be >= 1")
        if self.dominant_ratio_test is not None and not self.dominant_ratio_test >= 0:
            raise ValueError("dominant_ratio_test must be >= 0")

    @property
    def ratio_train(self) -> float:
        return 1.0 if self.dominant_ratio_train is None else float(self.dominant_ratio_train)

    @property
    def ratio_test(self) -> float:
        return 1.0 if self.dominant_ratio_test is None else float(self.dominant_ratio_test)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(**d)


@dataclass(frozen=True)
class Split:
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    mode: str = "multiclass"
    target_class: str | None = None
    achieved: dict = field(default_factory=dict)

    def to_dict(self, spec: SplitSpec | None = None) -> dict:
        d = {"train_ids": list(self.train_ids), "test_ids": list(self.test_ids),
             "mode": self.mode, "target_class": self.target_class, "achieved": self.achieved}
        if spec is not None:
            d = {"spec": spec.to_dict(), **d}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(tuple(d["train_ids"]), tuple(d["test_ids"]), d.get("mode", "multiclass"),
                   d.get("target_class"), d.get("achieved", {}))


def save_split(split: Split, spec: SplitSpec, path) -> None:
    Path(path).write_text(json.dumps(split.to_dict(spec), indent=1) + "\n", encoding="utf-8")


def load_split(path) -> tuple[Split, SplitSpec | None]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = SplitSpec.from_dict(d["spec"]) if "spec" in d else None
    return Split.from_dict(d), spec


def ratio_targets(total: int, ratio: float, k: int) -> list[float]:
    """Real-valued counts with the dominant context first."""
    if k == 1:
        return [float(total)]
    denom = ratio + k - 1
    return [total * ratio / denom] + [total / denom] * (k - 1)


def allocate(total: int, ratio: float, k: int) -> list[int]:
    """Integer counts for a dominant context and ``k - 1`` minors.

    The dominant count is the rounded real target; the rest is shared by
    the minors with the largest-remainder method so the total is exact.
    """
    if k == 1:
        return [total]
    dom = min(total, math.floor(total * ratio / (ratio + k - 1) + 0.5))
    rest = total - dom
    base, extra = divmod(rest, k - 1)
    return [dom] + [base + (1 if i < extra else 0) for i in range(k - 1)]


def achieved_ratio(counts: dict[str, int], dominant: str) -> float | None:
    minors = [n for t, n in counts.items() if t != dominant]
    if not minors:
        return None
    mean_minor = sum(minors) / len(minors)
    return counts[dominant] / mean_minor if mean_minor > 0 else None


class _Picker:
    """Hands out unused ids per cell in a seeded order."""

    def __init__(self, ds: ContextDataset, rng: np.random.Generator):
        self.ds, self.rng = ds, rng
        self.queues: dict[tuple[str, str], list[int]] = {}

    def take(self, c: str, t: str, n: int) -> list[int]:
        key = (c, t)
        if key not in self.queues:
            ids = list(self.ds.cell(c, t))
            self.queues[key] = [ids[i] for i in self.rng.permutation(len(ids))]
        q = self.queues[key]
        if n > len(q):
            raise InfeasibleSplitError(f"cell ({c}, {t}) has {len(q)} unused samples, {n} requested")
        out, self.queues[key] = q[:n], q[n:]
        return out


def _take_counts(picker, c, counts: dict[str, int]) -> list[int]:
    return [i for t, n in counts.items() for i in picker.take(c, t, n)]


def _ordered(contexts, dominant, rng) -> list[str]:
    others = [t for t in contexts if t != dominant]
    return [dominant] + [others[i] for i in rng.permutation(len(others))]


def _counts(contexts: list[str], total: int, ratio: float) -> dict[str, int]:
    return dict(zip(contexts, allocate(total, ratio, len(contexts))))


def make_split(ds: ContextDataset, spec: SplitSpec) -> Split:
    spec.validate()
    if spec.setting == "adversarial":
        return _adversarial(ds, spec)
    train, test, achieved = [], [], {}
    for ci, c in enumerate(ds.classes):
        rng = np.random.default_rng([spec.seed, ci])
        ctxs = list(ds.contexts_per_class[c])
        k = len(ctxs)
        picker = _Picker(ds, rng)
        rec: dict = {}
        if spec.setting == "minimum":
            pool = list(ds.class_ids(c))
            need = spec.train_size + spec.test_size
            if need > len(pool):
                raise InfeasibleSplitError(f"class {c} has {len(pool)} samples, {need} requested")
            perm = [pool[i] for i in rng.permutation(len(pool))]
            tr, te = perm[:spec.train_size], perm[spec.train_size:need]
            rec["train_counts"] = _count_ctx(ds, tr, ctxs)
            rec["test_counts"] = _count_ctx(ds, te, ctxs)
        elif spec.setting == "proportional":
            dom = ctxs[rng.integers(k)]
            order = _ordered(ctxs, dom, rng)
            tr_counts = _counts(order, spec.train_size, spec.ratio_train)
            te_counts = _counts(order, spec.test_size, spec.ratio_test)
            tr, te = _take_counts(picker, c, tr_counts), _take_counts(picker, c, te_counts)
            rec.update(train_dominant=dom, test_dominant=dom)
            rec["train_counts"], rec["test_counts"] = tr_counts, te_counts
        elif spec.setting == "compositional":
            m = spec.train_context_count
            if not 1 <= m <= k:
                raise InfeasibleSplitError(f"class {c} has {k} contexts, {m} requested for training")
            chosen = [ctxs[i] for i in sorted(rng.choice(k, size=m, replace=False))]
            tr_counts = _counts(chosen, spec.train_size, 1.0)
            te_counts = _counts(ctxs, spec.test_size, 1.0)
            tr, te = _take_counts(picker, c, tr_counts), _take_counts(picker, c, te_counts)
            rec["train_counts"], rec["test_counts"] = tr_counts, te_counts
        else:  # combined
            m = spec.train_context_count
            if not 1 <= m < k:
                raise InfeasibleSplitError(f"class {c} has {k} contexts; cannot hold out any from {m}")
            chosen = [ctxs[i] for i in sorted(rng.choice(k, size=m, replace=False))]
            held = [t for t in ctxs if t not in chosen]
            tr_dom = chosen[rng.integers(m)]
            te_dom = held[rng.integers(len(held))]
            tr_counts = _counts(_ordered(chosen, tr_dom, rng), spec.train_size, spec.ratio_train)
            te_counts = _counts(_ordered(held, te_dom, rng), spec.test_size, spec.ratio_test)
            tr, te = _take_counts(picker, c, tr_counts), _take_counts(picker, c, te_counts)
            rec.update(train_dominant=tr_dom, test_dominant=te_dom)
            rec["train_counts"], rec["test_counts"] = tr_counts, te_counts
        _summarize(rec)
        achieved[c] = rec
        train += tr
        test += te
    return Split(tuple(train), tuple(test), "multiclass", None, achieved)


def _count_ctx(ds, ids, ctxs) -> dict[str, int]:
    cnt = Counter(ds.sample(i).context_label for i in ids)
    return {t: cnt.get(t, 0) for t in ctxs}


def _summarize(rec: dict) -> None:
    for part in ("train", "test"):
        counts = rec[f"{part}_counts"]
        rec[f"{part}_contexts"] = sorted(t for t, n in counts.items() if n > 0)
        dom = rec.get(f"{part}_dominant")
        rec[f"{part}_ratio"] = achieved_ratio(counts, dom) if dom is not None else None


def _adversarial(ds: ContextDataset, spec: SplitSpec) -> Split:
    target = spec.target_class
    if target not in ds.classes:
        raise InfeasibleSplitError(f"unknown target class {target!r}")
    others = [c for c in ds.classes if c != target]
    if not others:
        raise InfeasibleSplitError("adversarial split needs at least one non-target class")
    ti = ds.classes.index(target)
    rng = np.random.default_rng([spec.seed, ti])
    picker = _Picker(ds, rng)
    ctxs = list(ds.contexts_per_class[target])
    q = spec.confounding_context_count
    if not 1 <= q < len(ctxs):
        raise InfeasibleSplitError(f"target has {len(ctxs)} contexts; {q} confounding requested")
    conf = [ctxs[i] for i in sorted(rng.choice(len(ctxs), size=q, replace=False))]
    kept = [t for t in ctxs if t not in conf]
    if min(spec.train_size, spec.test_size) < q:
        raise InfeasibleSplitError(f"sizes below {q} cannot place every confounding context")

    pos_train = _counts(kept, spec.train_size, 1.0)
    # confounding contexts first so each receives at least one positive test sample
    pos_test = _counts(conf + kept, spec.test_size, 1.0)

    def negatives(allowed, total):
        # split by context first so every allowed context is represented
        holders = {t: [c for c in others if t in ds.contexts_per_class[c]] for t in allowed}
        missing = [t for t, cs in holders.items() if not cs]
        if missing:
            raise InfeasibleSplitError(f"no non-target class has contexts {missing}")
        out: dict[str, dict[str, int]] = {}
        for t, n in _counts(list(allowed), total, 1.0).items():
            for c, m in _counts(holders[t], n, 1.0).items():
                if m:
                    out.setdefault(c, {})[t] = m
        return out

    neg_train = negatives(conf, spec.train_size)
    neg_test = negatives(kept, spec.test_size)
    train = _take_counts(picker, target, pos_train)
    test = _take_counts(picker, target, pos_test)
    for c, counts in neg_train.items():
        train += _take_counts(picker, c, counts)
    for c, counts in neg_test.items():
        test += _take_counts(picker, c, counts)
    achieved = {
        "target_class": target,
        "confounding_contexts": conf,
        "positive_train_counts": pos_train,
        "positive_test_counts": pos_test,
        "negative_train_counts": neg_train,
        "negative_test_counts": neg_test,
    }
    return Split(tuple(train), tuple(test), "one_vs_rest", target, achieved)


# -- validation ----------------------------------------------------------------

def _near(count: int, target: float) -> bool:
    return abs(count - target) < 1.0


def _check_alloc(out, label, counts: dict[str, int], contexts: list[str], dominant, total, ratio):
    """Counts over ``contexts`` must be within rounding of the ratio targets."""
    if dominant is None:
        order = list(contexts)
        ratio = 1.0
    else:
        order = [dominant] + [t for t in contexts if t != dominant]
    for t, target in zip(order, ratio_targets(total, ratio, len(order))):
        if not _near(counts.get(t, 0), target):
            out.append(f"{label}: context {t} has {counts.get(t, 0)} samples, target {target:.3f}")


def validate_split(ds: ContextDataset, split: Split, spec: SplitSpec) -> list[str]:
    """Recount a split from scratch and list every violated expectation."""
    missing = [i for i in (*split.train_ids, *split.test_ids) if i not in ds]
    if missing:
        raise KeyError(f"ids not in dataset: {missing[:10]}")
    out: list[str] = []
    tr, te = set(split.train_ids), set(split.test_ids)
    if len(tr) != len(split.train_ids) or len(te) != len(split.test_ids):
        out.append("duplicate ids within a partition")
    both = tr & te
    if both:
        out.append(f"train and test share {len(both)} ids, e.g. {sorted(both)[:5]}")

    def recount(ids):
        cnt = defaultdict(Counter)
        for i in ids:
            s = ds.sample(i)
            cnt[s.class_label][s.context_label] += 1
        return cnt

    rtr, rte = recount(split.train_ids), recount(split.test_ids)
    if spec.setting == "adversarial":
        _validate_adversarial(ds, split, spec, rtr, rte, out)
        return out
    if split.mode != "multiclass":
        out.append(f"{spec.setting} split should be multiclass, got {split.mode}")
    for c in ds.classes:
        ctxs = list(ds.contexts_per_class[c])
        ctr, cte = rtr.get(c, Counter()), rte.get(c, Counter())
        ntr, nte = sum(ctr.values()), sum(cte.values())
        if ntr != spec.train_size:
            out.append(f"class {c}: {ntr} train samples, requested {spec.train_size}")
        if nte != spec.test_size:
            out.append(f"class {c}: {nte} test samples, requested {spec.test_size}")
        rec = split.achieved.get(c)
        if rec is None:
            out.append(f"class {c}: no achieved record")
            continue
        for part, cnt in (("train", ctr), ("test", cte)):
            stored = {t: n for t, n in rec.get(f"{part}_counts", {}).items() if n}
            if stored != {t: n for t, n in cnt.items() if n}:
                out.append(f"class {c}: achieved {part} counts disagree with membership")
            dom = rec.get(f"{part}_dominant")
            if dom is not None:
                full = {t: cnt.get(t, 0) for t in rec.get(f"{part}_counts", {})}
                if rec.get(f"{part}_ratio") != achieved_ratio(full, dom):
                    out.append(f"class {c}: achieved {part} ratio disagrees with recount")
        if spec.setting == "proportional":
            _check_alloc(out, f"class {c} train", ctr, ctxs, rec.get("train_dominant"),
                         spec.train_size, spec.ratio_train)
            _check_alloc(out, f"class {c} test", cte, ctxs, rec.get("test_dominant"),
                         spec.test_size, spec.ratio_test)
        elif spec.setting in ("compositional", "combined"):
            train_ctx = sorted(t for t, n in ctr.items() if n)
            declared = sorted(rec.get("train_counts", {}))
            if len(declared) != spec.train_context_count:
                out.append(f"class {c}: {len(declared)} training contexts declared, "
                           f"requested {spec.train_context_count}")
            if not set(train_ctx) <= set(declared):
                out.append(f"class {c}: training uses undeclared contexts")
            if spec.setting == "compositional":
                _check_alloc(out, f"class {c} train", ctr, declared, None, spec.train_size, 1.0)
                _check_alloc(out, f"class {c} test", cte, ctxs, None, spec.test_size, 1.0)
            else:
                leaked = set(declared) & {t for t, n in cte.items() if n}
                if leaked:
                    out.append(f"class {c}: test uses training contexts {sorted(leaked)}")
                held = [t for t in ctxs if t not in declared]
                _check_alloc(out, f"class {c} train", ctr, declared, rec.get("train_dominant"),
                             spec.train_size, spec.ratio_train)
                _check_alloc(out, f"class {c} test", cte, held, rec.get("test_dominant"),
                             spec.test_size, spec.ratio_test)
    return out


def _validate_adversarial(ds, split, spec, rtr, rte, out):
    target = spec.target_class
    if split.mode != "one_vs_rest" or split.target_class != target:
        out.append("adversarial split should be one_vs_rest on the target class")
    conf = set(split.achieved.get("confounding_contexts", []))
    if len(conf) != spec.confounding_context_count:
        out.append(f"{len(conf)} confounding contexts recorded, requested {spec.confounding_context_count}")
    pos_tr, pos_te = rtr.get(target, Counter()), rte.get(target, Counter())
    neg_tr, neg_te = Counter(), Counter()
    for c in ds.classes:
        if c != target:
            neg_tr.update(rtr.get(c, Counter()))
            neg_te.update(rte.get(c, Counter()))
    for label, cnt, size in (("positive train", pos_tr, spec.train_size),
                             ("positive test", pos_te, spec.test_size),
                             ("negative train", neg_tr, spec.train_size),
                             ("negative test", neg_te, spec.test_size)):
        if sum(cnt.values()) != size:
            out.append(f"{label}: {sum(cnt.values())} samples, requested {size}")
    for t in sorted(conf):
        if pos_tr.get(t, 0):
            out.append(f"confounding context {t} appears in positive train")
        if neg_te.get(t, 0):
            out.append(f"confounding context {t} appears in negative test")
        if not neg_tr.get(t, 0):
            out.append(f"confounding context {t} missing from negative train")
        if not pos_te.get(t, 0):
            out.append(f"confounding context {t} missing from positive test")
    if {t: n for t, n in split.achieved.get("positive_train_counts", {}).items() if n} != \
            {t: n for t, n in pos_tr.items() if n}:
        out.append("achieved positive train counts disagree with membership")
    if {t: n for t, n in split.achieved.get("positive_test_counts", {}).items() if n} != \
            {t: n for t, n in pos_te.items() if n}:
        out.append("achieved positive test counts disagree with membership")


def labels_for(ds: ContextDataset, split: Split, ids) -> np.ndarray:
    if split.mode == "one_vs_rest":
        return np.array([int(ds.sample(i).class_label == split.target_class) for i in ids], dtype=np.int64)
    index = {c: k for k, c in enumerate(ds.classes)}
    return np.array([index[ds.sample(i).class_label] for i in ids], dtype=np.int64)


def num_outputs(ds: ContextDataset, split: Split) -> int:
    return 2 if split.mode == "one_vs_rest" else len(ds.classes)
