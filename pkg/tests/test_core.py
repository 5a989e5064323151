import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fibscore import (
    BalanceKind,
    MatrixMode,
    absolute_error,
    feature_impact,
    feature_impact_imbalance,
    fib,
    fib_direct,
    fib_matrix,
    normalize_fii,
)
from fibscore.core import fib_from_errors, fii_bound
from fibscore.errors import (
    DegenerateDimension,
    DimensionMismatch,
    NegativeError,
    NonFiniteInput,
    OutOfBounds,
)

from conftest import exact_fib


class TestAbsoluteError:
    def test_identity(self):
        np.testing.assert_array_equal(absolute_error([1, 2, 3], [1, 2, 3]), [0, 0, 0])

    def test_zero_baseline(self):
        np.testing.assert_array_equal(absolute_error([0, 0, 0, 0], [2, 1, 1, 0]), [2, 1, 1, 0])

    def test_sign_symmetry(self):
        np.testing.assert_array_equal(absolute_error([-1, 2], [1, -2]), [2, 4])

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            absolute_error([1, 2], [1, 2, 3])

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(NonFiniteInput):
            absolute_error([1.0, bad], [0.0, 0.0])


class TestFeatureImpact:
    def test_zero_error_is_uniform(self):
        np.testing.assert_array_equal(feature_impact([0, 0, 0]), [1 / 3] * 3)

    def test_normalization(self):
        np.testing.assert_array_equal(feature_impact([2, 1, 1, 0]), [0.5, 0.25, 0.25, 0.0])

    def test_single_feature(self):
        np.testing.assert_array_equal(feature_impact([5]), [1.0])

    def test_negative_rejected(self):
        with pytest.raises(NegativeError):
            feature_impact([1.0, -0.1])

    def test_tiny_total_relative_to_scale_counts_as_zero(self):
        shares = feature_impact([1e-10, 0.0], scale=1e6)
        np.testing.assert_array_equal(shares, [0.5, 0.5])
        # same error with a small input scale is real error
        np.testing.assert_array_equal(feature_impact([1e-10, 0.0], scale=1.0), [1.0, 0.0])

    def test_rows_are_independent(self):
        E = np.array([[2, 1, 1, 0], [0, 0, 0, 0]], dtype=float)
        np.testing.assert_array_equal(feature_impact(E), [[0.5, 0.25, 0.25, 0.0], [0.25] * 4])

    @given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=50))
    @settings(max_examples=200)
    def test_is_a_distribution(self, values):
        shares = feature_impact(values)
        assert np.all(shares >= 0) and np.all(shares <= 1)
        assert abs(shares.sum() - 1.0) < 1e-9


class TestImbalance:
    def test_balanced_is_zero(self):
        assert feature_impact_imbalance([0.25] * 4, "mse") == 0.0

    def test_mse_hand_value(self):
        # ((0.25)^2 + 0 + 0 + (0.25)^2) / 4
        assert feature_impact_imbalance([0.5, 0.25, 0.25, 0.0], "mse") == pytest.approx(0.03125, abs=1e-15)

    def test_mae_hand_value_hits_bound(self):
        value = feature_impact_imbalance([1.0, 0.0], BalanceKind.MAE)
        assert value == pytest.approx(0.5, abs=1e-15)
        assert value == fii_bound(2, "mae")

    def test_normalize_hand_values(self):
        assert normalize_fii(0.03125, 4, "mse") == pytest.approx(16 / 3 * 0.03125, abs=1e-14)
        assert normalize_fii(0.0, 7, "mse") == 0.0
        assert normalize_fii(0.25, 2, "mse") == 1.0

    def test_normalize_mae_constant(self):
        k = 5
        assert normalize_fii(fii_bound(k, "mae"), k, "mae") == 1.0
        assert normalize_fii(0.1, k, "mae") == pytest.approx(k * k / (2 * (k - 1)) * 0.1, rel=1e-14)

    def test_single_feature_is_degenerate(self):
        with pytest.raises(DegenerateDimension):
            normalize_fii(0.0, 1, "mse")

    def test_slack_then_clamp(self):
        bound = fii_bound(4)
        assert normalize_fii(bound * (1 + 1e-12), 4) == 1.0
        with pytest.raises(OutOfBounds):
            normalize_fii(bound * 1.01, 4)

    @pytest.mark.parametrize("kind", ["mse", "mae"])
    @pytest.mark.parametrize("k", range(2, 70))
    def test_vertex_normalizes_to_exactly_one(self, k, kind):
        c = np.zeros(k)
        c[k // 2] = 1.0
        assert normalize_fii(feature_impact_imbalance(c, kind), k, kind) == 1.0


class TestFib:
    def test_single_feature_carries_error(self):
        assert fib([0, 0], [1, 0]).fib == 0.0

    def test_equal_contribution(self):
        assert fib([0, 0], [1, 1]).fib == 1.0

    def test_worked_example_against_exact_oracle(self):
        report = fib([0, 0, 0, 0], [2, 1, 1, 0], "mse")
        assert float(exact_fib([2, 1, 1, 0])) == pytest.approx(5 / 6, abs=1e-15)
        assert report.fib == pytest.approx(float(exact_fib([2, 1, 1, 0])), abs=1e-12)
        assert report.fib == pytest.approx(0.83333, abs=1e-5)
        assert report.k == 4
        assert report.fib == 1.0 - report.nfii

    def test_identical_vectors(self):
        assert fib([3.0, -1.0, 2.5], [3.0, -1.0, 2.5]).fib == 1.0

    def test_m1_rejected(self):
        with pytest.raises(DegenerateDimension):
            fib([1.0], [2.0])
        with pytest.raises(DegenerateDimension):
            fib_direct([1.0], [2.0])

    def test_mismatch_propagates(self):
        with pytest.raises(DimensionMismatch):
            fib([1, 2], [1, 2, 3])

    def test_mae_variant(self):
        # impact [0.5, 0.25, 0.25, 0]: mean |dev| = 0.5/4, bound 2*3/16
        report = fib([0, 0, 0, 0], [2, 1, 1, 0], "mae")
        assert report.fib == pytest.approx(1 - (0.125 / (6 / 16)), abs=1e-14)

    def test_report_json_keys(self):
        import json

        doc = json.loads(fib([0, 0, 0, 0], [2, 1, 1, 0]).to_json())
        assert set(doc) == {"fib", "nfii", "fii", "k", "balance_kind", "mode"}
        assert doc["fib"] == fib([0, 0, 0, 0], [2, 1, 1, 0]).fib


class TestFibDirect:
    def test_identical(self, rng):
        x = rng.normal(size=6)
        assert fib_direct(x, x) == 1.0

    def test_single_feature(self):
        assert fib_direct([0, 0], [1, 0]) == 0.0

    def test_matches_pipeline_r8(self, rng):
        for _ in range(200):
            x, y = rng.normal(size=8), rng.normal(size=8)
            assert abs(fib(x, y).fib - fib_direct(x, y)) < 1e-12


class TestFibMatrix:
    @pytest.mark.parametrize("mode", list(MatrixMode))
    def test_identical_matrices(self, rng, mode):
        X = rng.normal(size=(5, 3))
        assert fib_matrix(X, X, mode=mode).fib == 1.0

    @pytest.mark.parametrize("mode", list(MatrixMode))
    def test_single_row_equals_vector(self, rng, mode):
        x, y = rng.normal(size=7), rng.normal(size=7)
        assert fib_matrix(x[None], y[None], mode=mode).fib == pytest.approx(fib(x, y).fib, abs=1e-15)

    def test_modes_disagree_on_crossed_rows(self):
        X = np.zeros((2, 2))
        Y = np.array([[1.0, 0.0], [0.0, 1.0]])
        per_row = fib_matrix(X, Y, mode="per-row")
        aggregate = fib_matrix(X, Y, mode="aggregate")
        assert per_row.fib == 0.0 and per_row.mode == "per-row"
        assert aggregate.fib == 1.0 and aggregate.mode == "aggregate"

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fib_matrix(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_report_consistency(self, rng):
        X, Y = rng.normal(size=(10, 6)), rng.normal(size=(10, 6))
        for mode in MatrixMode:
            r = fib_matrix(X, Y, mode=mode)
            assert abs(r.fib - (1 - r.nfii)) < 1e-12
            assert abs(r.impact.sum() - 1) < 1e-12


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def vector_pairs(draw, min_m=2, max_m=64):
    m = draw(st.integers(min_m, max_m))
    x = draw(st.lists(finite, min_size=m, max_size=m))
    y = draw(st.lists(finite, min_size=m, max_size=m))
    return np.array(x), np.array(y)


class TestProperties:
    @given(vector_pairs())
    @settings(max_examples=300, deadline=None)
    def test_range_and_closed_form(self, pair):
        x, y = pair
        r = fib(x, y)
        assert 0.0 <= r.fib <= 1.0
        assert abs(r.fib - fib_direct(x, y)) < 1e-12
        assert abs(r.fib - (1 - r.nfii)) < 1e-12
        assert abs(r.nfii - normalize_fii(r.fii, r.k)) < 1e-12

    @given(vector_pairs(), st.floats(0.01, 100) | st.floats(-100, -0.01))
    @settings(max_examples=200, deadline=None)
    def test_scale_invariance(self, pair, a):
        x, y = pair
        assert abs(fib(a * x, a * y).fib - fib(x, y).fib) < 1e-12

    @given(vector_pairs(), st.floats(-50, 50))
    @settings(max_examples=200, deadline=None)
    def test_translation_invariance(self, pair, c):
        x, y = pair
        # a shift can round away differences far below ulp(c); skip those pairs
        e = np.abs(x - y)
        if np.any((e > 0) & (e < 1e-6)):
            return
        assert abs(fib(x + c, y + c).fib - fib(x, y).fib) < 1e-10

    @given(vector_pairs(), st.randoms(use_true_random=False))
    @settings(max_examples=200, deadline=None)
    def test_permutation_equivariance(self, pair, random):
        x, y = pair
        perm = list(range(len(x)))
        random.shuffle(perm)
        assert abs(fib(x[perm], y[perm]).fib - fib(x, y).fib) < 1e-12

    @given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=2, max_size=40), st.randoms(use_true_random=False))
    @settings(max_examples=200, deadline=None)
    def test_blind_to_which_feature_errs(self, errors, random):
        e = np.array(errors)
        shuffled = e.copy()
        random.shuffle(shuffled)
        assert abs(fib_from_errors(e) - fib_from_errors(shuffled)) < 1e-12

    @given(st.integers(2, 200), st.integers(0, 199), st.floats(1e-3, 1e3))
    def test_extremes_exact(self, m, hot, size):
        e = np.zeros(m)
        e[hot % m] = size
        assert fib_from_errors(e) == 0.0
        assert fib_from_errors(np.full(m, size)) == 1.0
        assert fib_from_errors(e, "mae") == 0.0
        assert fib_from_errors(np.full(m, size), "mae") == 1.0


def test_large_m_pairwise_accuracy(rng):
    # shares near 1/M for M >> 1024: the vectorized path must still match fsum
    x, y = rng.normal(size=5000), rng.normal(size=5000)
    assert abs(fib(x, y).fib - fib_direct(x, y)) < 1e-12
    assert math.isfinite(fib(x, y).fib)
