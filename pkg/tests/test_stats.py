import numpy as np
import pytest

from repgraph import Rng, ValidationError, affinity_stats, softmax_rows
from repgraph.stats import write_affinity_csv


class TestImbalance:
    def test_uniform_rows_score_zero(self):
        stats = affinity_stats(np.full((8, 8), 1.0 / 8))
        assert np.array_equal(stats.imbalance, np.zeros(8))
        want = np.arange(1, 9) / 8.0
        assert np.abs(stats.topk_mass - want).max() < 1e-12

    def test_one_hot_rows_score_one(self):
        stats = affinity_stats(np.eye(6))
        assert np.array_equal(stats.imbalance, np.ones(6))
        assert np.array_equal(stats.topk_mass[:, 0], np.ones(6))

    def test_single_column_rows_defined_as_zero(self):
        stats = affinity_stats(np.ones((4, 1)))
        assert np.array_equal(stats.imbalance, np.zeros(4))


class TestTopKCurves:
    def test_matches_sort_and_prefix_sum_oracle(self):
        rng = Rng(0)
        rows = softmax_rows(rng.uniform(-2, 2, (10, 7)))
        stats = affinity_stats(rows)
        for r in range(10):
            want = np.cumsum(sorted(rows[r], reverse=True))
            assert np.abs(stats.topk_mass[r] - want).max() < 1e-12

    def test_monotone_and_terminates_at_one(self):
        rng = Rng(1)
        rows = softmax_rows(rng.uniform(-3, 3, (20, 12)))
        stats = affinity_stats(rows)
        diffs = np.diff(stats.topk_mass, axis=1)
        assert np.all(diffs >= -1e-15)
        assert np.abs(stats.topk_mass[:, -1] - 1.0).max() < 1e-9

    def test_accepts_batched_weights(self):
        rng = Rng(2)
        w = softmax_rows(rng.uniform(-1, 1, (2, 5, 3)))
        stats = affinity_stats(w)
        assert stats.n_rows == 10
        assert stats.row_len == 3


class TestValidation:
    def test_rejects_rows_not_summing_to_one(self):
        bad = np.full((3, 4), 0.3)
        with pytest.raises(ValidationError, match="row 0"):
            affinity_stats(bad)

    def test_rejects_negative_entries(self):
        bad = np.array([[1.5, -0.5]])
        with pytest.raises(ValidationError):
            affinity_stats(bad)

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            affinity_stats(np.zeros((0, 4)))


class TestHistogram:
    def test_counts_cover_all_entries(self):
        rng = Rng(3)
        rows = softmax_rows(rng.uniform(-4, 4, (6, 9)))
        stats = affinity_stats(rows)
        assert sum(c for _, _, c in stats.histogram) == 6 * 9

    def test_uniform_lands_in_single_bin(self):
        stats = affinity_stats(np.full((4, 16), 1.0 / 16))
        nonzero = [entry for entry in stats.histogram if entry[2] > 0]
        assert len(nonzero) == 1
        lo, hi, count = nonzero[0]
        assert lo <= 1.0 / 16 <= hi
        assert count == 64

    def test_one_hot_zeros_fall_in_underflow_bin(self):
        stats = affinity_stats(np.eye(5))
        lo, hi, count = stats.histogram[0]
        assert lo == 0.0
        assert count == 20  # the 25 - 5 zeros


class TestCsvOutput:
    def test_two_files_with_declared_schemas(self, tmp_path):
        rng = Rng(4)
        rows = softmax_rows(rng.uniform(-1, 1, (4, 3)))
        stats = affinity_stats(rows)
        hist_path, topk_path = write_affinity_csv(stats, tmp_path / "aff")
        hist = open(hist_path).read().splitlines()
        topk = open(topk_path).read().splitlines()
        assert hist[0] == "bin_lo,bin_hi,count"
        assert topk[0] == "row,k,mass"
        assert len(topk) == 1 + 4 * 3
        assert topk[1].startswith("0,1,")
