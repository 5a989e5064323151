import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibscore import fib, fib_matrix
from fibscore.core import fib_from_errors
from fibscore.errors import BadAssignment, DimensionMismatch, NegativeError, TooFewFeatures
from fibscore.grouping import (
    Aggregation,
    GroupingSpec,
    Reduction,
    block_sizes,
    group_errors,
    grouped_fib,
    grouped_fib_matrix,
    parse_group_list,
)

from conftest import exact_fib


def naive_sorted_split(e, k, mean=False):
    """Plain-Python reference for sort, split front-loaded, reduce."""
    values = sorted(e, reverse=True)
    q, r = divmod(len(values), k)
    out, start = [], 0
    for i in range(k):
        size = q + 1 if i < r else q
        block = values[start:start + size]
        out.append(sum(block) / size if mean else sum(block))
        start += size
    return out


class TestBlockSizes:
    @pytest.mark.parametrize(
        "m, k, expected",
        [(6, 3, [2, 2, 2]), (7, 3, [3, 2, 2]), (784, 10, [79] * 4 + [78] * 6), (5, 5, [1] * 5)],
    )
    def test_front_loaded(self, m, k, expected):
        sizes = block_sizes(m, k)
        assert sizes.tolist() == expected
        assert sizes.sum() == m


class TestGroupErrors:
    @pytest.mark.parametrize("aggregation", [Aggregation.SORTED_SPLIT, Aggregation.CONTIGUOUS_SPLIT])
    def test_uniform_input(self, aggregation):
        spec = GroupingSpec(3, aggregation)
        np.testing.assert_array_equal(group_errors([1.5] * 6, spec), [3.0, 3.0, 3.0])

    def test_uniform_input_explicit(self):
        spec = GroupingSpec(3, Aggregation.EXPLICIT, assignment=(2, 0, 1, 1, 0, 2))
        np.testing.assert_array_equal(group_errors([1.5] * 6, spec), [3.0, 3.0, 3.0])

    def test_one_group_per_feature(self):
        e = [5, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        np.testing.assert_array_equal(group_errors(e, GroupingSpec(10)), [5] + [0] * 9)

    def test_sorted_vs_contiguous(self):
        e = [1, 4, 2, 3]
        np.testing.assert_array_equal(group_errors(e, GroupingSpec(2)), [7, 3])
        np.testing.assert_array_equal(group_errors(e, GroupingSpec(2, "contiguous")), [5, 5])

    def test_mean_reduction_uneven(self):
        spec = GroupingSpec(2, reduction=Reduction.MEAN)
        np.testing.assert_allclose(group_errors([3, 2, 1], spec), [2.5, 1.0])

    def test_explicit(self):
        spec = GroupingSpec(2, Aggregation.EXPLICIT, assignment=(0, 1, 0, 1))
        np.testing.assert_array_equal(group_errors([1, 2, 3, 4], spec), [4, 6])

    def test_rowwise(self):
        E = np.array([[1, 4, 2, 3], [0, 0, 0, 8]], dtype=float)
        np.testing.assert_array_equal(group_errors(E, GroupingSpec(2)), [[7, 3], [8, 0]])

    def test_too_few_features(self):
        with pytest.raises(TooFewFeatures):
            group_errors([1.0, 2.0], GroupingSpec(3))

    def test_negative(self):
        with pytest.raises(NegativeError):
            group_errors([1.0, -2.0, 0.0], GroupingSpec(2))

    def test_assignment_length(self):
        spec = GroupingSpec(2, Aggregation.EXPLICIT, assignment=(0, 1))
        with pytest.raises(BadAssignment):
            group_errors([1.0, 2.0, 3.0], spec)

    @given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=60), st.integers(2, 60))
    @settings(max_examples=300)
    def test_matches_naive_reference(self, e, k):
        if k > len(e):
            return
        for mean in (False, True):
            spec = GroupingSpec(k, reduction=Reduction.MEAN if mean else Reduction.SUM)
            np.testing.assert_allclose(group_errors(e, spec), naive_sorted_split(e, k, mean), rtol=1e-12, atol=0)

    @given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=60), st.integers(2, 60))
    @settings(max_examples=300)
    def test_mass_conservation(self, e, k):
        if k > len(e):
            return
        for aggregation in (Aggregation.SORTED_SPLIT, Aggregation.CONTIGUOUS_SPLIT):
            total = group_errors(e, GroupingSpec(k, aggregation)).sum()
            assert abs(total - sum(e)) <= 1e-12 * max(1.0, sum(e))

    @given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=2, max_size=40), st.randoms(use_true_random=False))
    @settings(max_examples=200)
    def test_sorted_split_permutation_invariant(self, e, random):
        k = max(2, len(e) // 3)
        shuffled = list(e)
        random.shuffle(shuffled)
        spec = GroupingSpec(k)
        np.testing.assert_array_equal(group_errors(e, spec), group_errors(shuffled, spec))


class TestGroupedFib:
    def test_worked_example_against_exact_oracle(self):
        # sorted [2,1,1,0] split in two -> [3, 1]
        assert exact_fib([3, 1]) == Fraction(3, 4)
        report = grouped_fib([0, 0, 0, 0], [2, 1, 1, 0], GroupingSpec(2))
        assert report.fib == pytest.approx(0.75, abs=1e-12)
        assert report.k == 2
        assert report.fii == pytest.approx(0.0625, abs=1e-15)
        np.testing.assert_allclose(report.impact, [0.75, 0.25])

    def test_identical_inputs(self, rng):
        x = rng.normal(size=9)
        for spec in (GroupingSpec(3), GroupingSpec(4, "contiguous", "mean")):
            assert grouped_fib(x, x, spec).fib == 1.0

    @given(st.integers(2, 40), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_k_equals_m_is_ungrouped(self, m, seed):
        r = np.random.default_rng(seed)
        x, y = r.normal(size=m), r.normal(size=m)
        assert abs(grouped_fib(x, y, GroupingSpec(m)).fib - fib(x, y).fib) < 1e-12

    @given(st.integers(1, 10), st.integers(2, 6), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_sum_and_mean_agree_on_equal_groups(self, size, k, seed):
        e = np.random.default_rng(seed).exponential(size=size * k)
        s = fib_from_errors(group_errors(e, GroupingSpec(k)))
        m = fib_from_errors(group_errors(e, GroupingSpec(k, reduction="mean")))
        assert abs(s - m) < 1e-12

    def test_sum_and_mean_differ_on_uneven_groups(self):
        e = [3.0, 2.0, 1.0]
        s = fib_from_errors(group_errors(e, GroupingSpec(2)))
        m = fib_from_errors(group_errors(e, GroupingSpec(2, reduction="mean")))
        assert s != m

    def test_rejects_matrices(self):
        with pytest.raises(DimensionMismatch):
            grouped_fib(np.zeros((2, 4)), np.ones((2, 4)), GroupingSpec(2))

    def test_matrix_modes(self, rng):
        X, Y = rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
        spec = GroupingSpec(8)
        for mode in ("per-row", "aggregate"):
            assert abs(grouped_fib_matrix(X, Y, spec, mode=mode).fib - fib_matrix(X, Y, mode=mode).fib) < 1e-12


class TestSpec:
    @pytest.mark.parametrize("k", [0, 1, -3])
    def test_small_k(self, k):
        with pytest.raises(BadAssignment):
            GroupingSpec(k)

    def test_empty_group(self):
        with pytest.raises(BadAssignment):
            GroupingSpec(3, Aggregation.EXPLICIT, assignment=(0, 0, 2))

    def test_index_out_of_range(self):
        with pytest.raises(BadAssignment):
            GroupingSpec(2, Aggregation.EXPLICIT, assignment=(0, 2))

    def test_assignment_without_explicit(self):
        with pytest.raises(BadAssignment):
            GroupingSpec(2, assignment=(0, 1))

    @pytest.mark.parametrize(
        "spec",
        [GroupingSpec(10), GroupingSpec(3, "contiguous", "mean"), GroupingSpec(2, "explicit", assignment=(1, 0, 1))],
    )
    def test_json_roundtrip(self, spec):
        doc = json.loads(json.dumps(spec.to_dict()))
        assert {"k", "aggregation", "reduction"} <= set(doc)
        assert GroupingSpec.from_dict(doc) == spec

    def test_csv_column(self, tmp_path):
        path = tmp_path / "groups.csv"
        path.write_text("feature,group\na,1\nb,0\nc,1\n")
        spec = GroupingSpec.from_csv_column(path, "group")
        assert spec.k == 2 and spec.assignment == (1, 0, 1)
        np.testing.assert_array_equal(group_errors([1, 2, 3], spec), [2, 4])

    def test_csv_bad_value(self, tmp_path):
        path = tmp_path / "groups.csv"
        path.write_text("group\n0\nx\n")
        with pytest.raises(BadAssignment):
            GroupingSpec.from_csv_column(path)

    def test_labels(self):
        assert GroupingSpec(10).label == "g10"
        assert GroupingSpec(3, "contiguous").label != "g3"

    def test_parse_group_list(self):
        assert [s.k for s in parse_group_list("2, 3,10")] == [2, 3, 10]
