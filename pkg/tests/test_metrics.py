import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from shiftlab.metrics import NIReport, ZeroVarianceError, accuracy, ni_index, pearson


def ni_loops(a, b):
    """Per-dimension loop with statistics from the standard library."""
    total = 0.0
    for d in range(a.shape[1]):
        union = list(a[:, d]) + list(b[:, d])
        sd = statistics.pstdev(union)
        gap = statistics.fmean(a[:, d]) - statistics.fmean(b[:, d])
        if sd < 1e-12:
            continue
        total += (gap / sd) ** 2
    return math.sqrt(total)


feature_sets = hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 4)),
                          elements=st.floats(-5, 5))


class TestNI:
    def test_worked_example(self):
        assert ni_index([[0.0], [2.0]], [[2.0], [4.0]]) == pytest.approx(math.sqrt(2), abs=1e-9)

    def test_identity_is_exactly_zero(self):
        a = np.random.default_rng(0).normal(size=(20, 5))
        assert ni_index(a, a.copy()) == 0.0

    def test_constant_dimension_contributes_nothing(self):
        a = np.array([[0.0, 7.0], [2.0, 7.0]])
        b = np.array([[2.0, 7.0], [4.0, 7.0]])
        assert ni_index(a, b) == pytest.approx(math.sqrt(2), abs=1e-9)

    def test_shifted_flat_dimension_raises(self):
        # spread below the floor but a gap above it
        with pytest.raises(ZeroVarianceError):
            ni_index([[0.0]], [[1.5e-12]])

    def test_errors(self):
        with pytest.raises(ValueError):
            ni_index(np.zeros((0, 2)), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            ni_index(np.zeros((2, 2)), np.zeros((3, 3)))

    @settings(max_examples=150, deadline=None)
    @given(feature_sets, feature_sets)
    def test_matches_loop_oracle(self, a, b):
        if a.shape[1] != b.shape[1]:
            b = np.resize(b, (b.shape[0], a.shape[1]))
        try:
            got = ni_index(a, b)
        except ZeroVarianceError:
            return
        assert got == pytest.approx(ni_loops(a, b), rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(feature_sets, st.floats(0.01, 100), st.booleans())
    def test_symmetry_and_scale(self, a, c, flip):
        b = a[::-1] + np.linspace(0, 1, a.shape[0])[:, None]
        try:
            base = ni_index(a, b)
        except ZeroVarianceError:
            return
        assert base >= 0
        assert ni_index(b, a) == pytest.approx(base, abs=1e-9)
        c = -c if flip else c
        assert ni_index(c * a, c * b) == pytest.approx(base, rel=1e-9, abs=1e-9)

    def test_report_summary(self):
        r = NIReport({"a": 1.0, "b": 3.0}, "x")
        assert r.mean == 2.0 and r.min == 1.0 and r.max == 3.0
        assert r.to_dict()["mean"] == 2.0
        assert math.isnan(NIReport({}, "x").mean)


class TestAccuracy:
    def test_examples(self):
        assert accuracy([0, 1, 2], [0, 1, 2]) == 1.0
        assert accuracy([1, 2, 0], [0, 1, 2]) == 0.0
        assert accuracy([0, 1, 2, 2], [0, 1, 2, 1]) == 0.75

    def test_errors(self):
        with pytest.raises(ValueError):
            accuracy([0, 1], [0])
        with pytest.raises(ValueError):
            accuracy([], [])


class TestPearson:
    def test_linear(self):
        x = np.array([0.3, 1.0, -2.0, 5.0])
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)
        assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_raises(self):
        with pytest.raises(ZeroVarianceError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])

    def test_against_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(2, 30))
            x, y = rng.normal(size=n), rng.normal(size=n)
            r = pearson(x, y)
            assert abs(r) <= 1 + 1e-12
            assert r == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-12)
