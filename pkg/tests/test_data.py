import json
from collections import Counter

import numpy as np
import pytest

from shiftlab.data import (ContextSample, DatasetFormatError, InfeasibleSplitError, Split, SplitSpec,
                           SynthParams, allocate, generate_synthetic, labels_for, load_dataset, load_split,
                           make_dataset, make_split, num_outputs, ratio_targets, save_dataset, save_split,
                           validate_split)

from split_specs import random_splits, split_dataset


@pytest.fixture(scope="module")
def ds():
    return split_dataset()


@pytest.fixture(scope="module")
def ten_ctx():
    return generate_synthetic(SynthParams(num_classes=3, contexts_per_class=10, samples_per_cell=20,
                                          vector_dim=13, seed=1))


def context_counts(ds, ids, cls=None):
    return Counter(ds.sample(i).context_label for i in ids
                   if cls is None or ds.sample(i).class_label == cls)


class TestSynthetic:
    def test_deterministic(self):
        p = SynthParams(num_classes=2, contexts_per_class=3, samples_per_cell=5, vector_dim=6, seed=9)
        assert generate_synthetic(p).equals(generate_synthetic(p))
        assert not generate_synthetic(p).equals(generate_synthetic(SynthParams(**{**p.__dict__, "seed": 10})))

    def test_counts(self):
        d = generate_synthetic(SynthParams(num_classes=3, contexts_per_class=4, samples_per_cell=25,
                                           vector_dim=8))
        assert len(d) == 300
        cells = Counter((s.class_label, s.context_label) for s in d.samples)
        assert set(cells.values()) == {25} and len(cells) == 12

    def test_noise_free_cell_means(self):
        p = SynthParams(num_classes=3, contexts_per_class=4, samples_per_cell=5, vector_dim=9,
                        class_signal=1.5, context_signal=0.5, noise_std=0.0)
        d = generate_synthetic(p)
        for ci, c in enumerate(d.classes):
            for ti, t in enumerate(d.contexts_per_class[c]):
                expect = np.zeros(9)
                expect[ci] = 1.5
                expect[3 + ti] = 0.5
                np.testing.assert_array_equal(d.payloads(d.cell(c, t)).mean(axis=0), expect)

    def test_image_mode(self):
        p = SynthParams(num_classes=2, contexts_per_class=3, samples_per_cell=4, payload_mode="image",
                        image_size=8, noise_std=0.0)
        d = generate_synthetic(p)
        assert d.payload_mode == "image" and d.input_shape == (1, 8, 8)
        x = d.payloads(d.class_ids(d.classes[0]))
        assert x.shape == (12, 1, 8, 8)
        # distinct glyph per class, background keyed to context
        a = d.payloads(d.cell("class0", "ctx0"))[0, 0]
        b = d.payloads(d.cell("class1", "ctx0"))[0, 0]
        c = d.payloads(d.cell("class0", "ctx1"))[0, 0]
        assert not np.array_equal(a[1:5, 1:5], b[1:5, 1:5])
        assert a[-1, -1] != c[-1, -1]

    @pytest.mark.parametrize("kw", [dict(vector_dim=5), dict(samples_per_cell=0), dict(noise_std=-1.0),
                                    dict(payload_mode="audio")])
    def test_invalid(self, kw):
        base = dict(num_classes=2, contexts_per_class=4, samples_per_cell=3, vector_dim=6)
        with pytest.raises(ValueError):
            generate_synthetic(SynthParams(**{**base, **kw}))


class TestDatasetFile:
    def test_roundtrip_vector(self, tmp_path, ds):
        save_dataset(ds, tmp_path / "d.jsonl")
        assert load_dataset(tmp_path / "d.jsonl").equals(ds)

    def test_roundtrip_image(self, tmp_path):
        d = generate_synthetic(SynthParams(num_classes=2, contexts_per_class=2, samples_per_cell=3,
                                           payload_mode="image", image_size=8))
        save_dataset(d, tmp_path / "d.jsonl")
        assert load_dataset(tmp_path / "d.jsonl").equals(d)

    def write(self, tmp_path, records):
        p = tmp_path / "bad.jsonl"
        p.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
        return p

    def test_missing_context_names_line(self, tmp_path):
        p = self.write(tmp_path, [{"id": 0, "class": "a", "context": "x", "payload": [1.0]},
                                  {"id": 1, "class": "a", "payload": [2.0]}])
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(p)

    def test_duplicate_id(self, tmp_path):
        p = self.write(tmp_path, [{"id": 0, "class": "a", "context": "x", "payload": [1.0]},
                                  {"id": 0, "class": "a", "context": "y", "payload": [2.0]}])
        with pytest.raises(DatasetFormatError, match="duplicate"):
            load_dataset(p)

    def test_inconsistent_dimension(self, tmp_path):
        p = self.write(tmp_path, [{"id": 0, "class": "a", "context": "x", "payload": [1.0]},
                                  {"id": 1, "class": "a", "context": "x", "payload": [2.0, 3.0]}])
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_dataset(p)

    def test_empty_file(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("", encoding="utf-8")
        with pytest.raises(DatasetFormatError):
            load_dataset(tmp_path / "e.jsonl")

    def test_mismatched_context_lists(self):
        s = [ContextSample(0, "a", "x", np.zeros(2))]
        with pytest.raises(DatasetFormatError):
            type(make_dataset(s))(tuple(s), ("a",), {"a": ("x", "y")})


class TestAllocation:
    def test_three_to_one(self):
        assert allocate(20, 3.0, 2) == [15, 5]

    def test_even(self):
        assert sorted(allocate(10, 1.0, 3)) == [3, 3, 4]
        assert sum(allocate(10, 1.0, 3)) == 10

    def test_within_one_of_target(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            n, r, k = int(rng.integers(1, 200)), float(rng.uniform(0, 10)), int(rng.integers(1, 12))
            got = allocate(n, r, k)
            assert sum(got) == n and min(got) >= 0
            assert all(abs(g - t) < 1 for g, t in zip(got, ratio_targets(n, r, k)))


class TestMakeSplit:
    def test_proportional_three_to_one(self):
        d = generate_synthetic(SynthParams(num_classes=2, contexts_per_class=2, samples_per_cell=30,
                                           vector_dim=4))
        spec = SplitSpec("proportional", 20, 8, dominant_ratio_train=3.0, dominant_ratio_test=1.0)
        sp = make_split(d, spec)
        for c in d.classes:
            rec = sp.achieved[c]
            assert sorted(context_counts(d, sp.train_ids, c).values()) == [5, 15]
            assert context_counts(d, sp.train_ids, c)[rec["train_dominant"]] == 15
            assert rec["train_ratio"] == 3.0
        assert validate_split(d, sp, spec) == []

    def test_proportional_even(self, ds):
        spec = SplitSpec("proportional", 24, 16, dominant_ratio_train=1.0, dominant_ratio_test=1.0)
        sp = make_split(ds, spec)
        for c in ds.classes:
            assert set(context_counts(ds, sp.train_ids, c).values()) == {3}
            assert set(context_counts(ds, sp.test_ids, c).values()) == {2}

    def test_compositional(self, ten_ctx):
        spec = SplitSpec("compositional", 30, 20, train_context_count=3, seed=4)
        sp = make_split(ten_ctx, spec)
        for c in ten_ctx.classes:
            assert len(context_counts(ten_ctx, sp.train_ids, c)) == 3
            assert len(context_counts(ten_ctx, sp.test_ids, c)) == 10
        assert validate_split(ten_ctx, sp, spec) == []

    def test_combined_reports_ratios(self, ten_ctx):
        spec = SplitSpec("combined", 28, 14, train_context_count=3, dominant_ratio_train=5.0,
                         dominant_ratio_test=1.0, seed=2)
        sp = make_split(ten_ctx, spec)
        for c in ten_ctx.classes:
            rec = sp.achieved[c]
            assert rec["train_ratio"] == 5.0 and rec["test_ratio"] == 1.0
            train_ctx = set(context_counts(ten_ctx, sp.train_ids, c))
            assert not train_ctx & set(context_counts(ten_ctx, sp.test_ids, c))
        assert validate_split(ten_ctx, sp, spec) == []

    def test_adversarial_placement(self, ds):
        spec = SplitSpec("adversarial", 30, 20, confounding_context_count=2, target_class="class1", seed=5)
        sp = make_split(ds, spec)
        assert sp.mode == "one_vs_rest" and num_outputs(ds, sp) == 2
        conf = sp.achieved["confounding_contexts"]
        assert len(conf) == 2
        pos_tr = context_counts(ds, [i for i in sp.train_ids if ds.sample(i).class_label == "class1"])
        pos_te = context_counts(ds, [i for i in sp.test_ids if ds.sample(i).class_label == "class1"])
        neg_tr = context_counts(ds, [i for i in sp.train_ids if ds.sample(i).class_label != "class1"])
        neg_te = context_counts(ds, [i for i in sp.test_ids if ds.sample(i).class_label != "class1"])
        for t in conf:
            assert pos_tr[t] == 0 and neg_te[t] == 0
            assert pos_te[t] > 0 and neg_tr[t] > 0
        y = labels_for(ds, sp, sp.train_ids)
        assert y.sum() == 30 and len(y) == 60
        assert validate_split(ds, sp, spec) == []

    def test_seed_determinism(self, ds):
        spec = SplitSpec("combined", 30, 20, train_context_count=4, dominant_ratio_train=3.0, seed=8)
        assert make_split(ds, spec) == make_split(ds, spec)
        assert make_split(ds, spec) != make_split(ds, SplitSpec(**{**spec.__dict__, "seed": 9}))

    def test_infeasible(self, ds):
        with pytest.raises(InfeasibleSplitError):
            make_split(ds, SplitSpec("minimum", 300, 50))
        with pytest.raises(InfeasibleSplitError):
            make_split(ds, SplitSpec("proportional", 60, 10, dominant_ratio_train=50.0))
        with pytest.raises(InfeasibleSplitError):
            make_split(ds, SplitSpec("combined", 10, 10, train_context_count=8))

    @pytest.mark.parametrize("kw", [
        dict(setting="minimum", dominant_ratio_train=2.0),
        dict(setting="proportional", train_context_count=2),
        dict(setting="compositional"),
        dict(setting="proportional", dominant_ratio_train=0.5),
        dict(setting="proportional", dominant_ratio_test=-1.0),
        dict(setting="adversarial", confounding_context_count=1),
        dict(setting="bogus"),
    ])
    def test_forbidden_fields(self, ds, kw):
        with pytest.raises(ValueError):
            make_split(ds, SplitSpec(train_size=10, test_size=10, **kw))

    def test_random_requests_validate(self, ds):
        built, _ = random_splits(ds, 100, seed=1)
        for spec, sp in built:
            assert validate_split(ds, sp, spec) == [], spec


class TestValidate:
    def test_moved_id_reported(self, ds):
        spec = SplitSpec("minimum", 20, 10)
        sp = make_split(ds, spec)
        moved = Split(sp.train_ids[1:], sp.test_ids + sp.train_ids[:1], sp.mode, None, sp.achieved)
        bad = Split(sp.train_ids, sp.test_ids + sp.train_ids[:1], sp.mode, None, sp.achieved)
        assert any("share" in p for p in validate_split(ds, bad, spec))
        assert validate_split(ds, moved, spec)

    def test_hand_edited_counts(self):
        d = generate_synthetic(SynthParams(num_classes=1, contexts_per_class=2, samples_per_cell=30,
                                           vector_dim=3))
        spec = SplitSpec("proportional", 20, 4, dominant_ratio_train=3.0)
        sp = make_split(d, spec)
        dom = sp.achieved["class0"]["train_dominant"]
        minor = next(t for t in d.contexts_per_class["class0"] if t != dom)
        drop = next(i for i in sp.train_ids if d.sample(i).context_label == dom)
        used = set(sp.train_ids) | set(sp.test_ids)
        add = next(i for i in d.cell("class0", minor) if i not in used)
        edited = Split(tuple(i for i in sp.train_ids if i != drop) + (add,), sp.test_ids, sp.mode, None,
                       sp.achieved)
        assert Counter(d.sample(i).context_label for i in edited.train_ids)[dom] == 14
        problems = validate_split(d, edited, spec)
        assert any("target" in p for p in problems)

    def test_unknown_ids(self, ds):
        with pytest.raises(KeyError):
            validate_split(ds, Split((10**9,), ()), SplitSpec("minimum", 1, 1))

    def test_split_file_roundtrip(self, tmp_path, ds):
        spec = SplitSpec("adversarial", 12, 12, confounding_context_count=3, target_class="class0", seed=1)
        sp = make_split(ds, spec)
        save_split(sp, spec, tmp_path / "s.json")
        back, spec2 = load_split(tmp_path / "s.json")
        assert spec2 == spec
        assert back.train_ids == sp.train_ids and back.test_ids == sp.test_ids
        assert validate_split(ds, back, spec2) == []
