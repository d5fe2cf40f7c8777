import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from glitchvit.evaluator import (
    ConfusionMatrix,
    accuracy,
    confusion,
    f1,
    per_class_accuracy,
    read_confusion_csv,
    render_confusion_image,
    emit_report,
    standard_metrics,
)

count_grids = hnp.arrays(
    dtype=np.int64,
    shape=st.integers(2, 6).map(lambda k: (k, k)),
    elements=st.integers(0, 50),
)


class TestConfusion:
    def test_all_correct_is_diagonal(self):
        labels = [0, 0, 1, 2, 2, 2]
        cm = confusion(labels, labels, 3)
        assert np.array_equal(cm.counts, np.diag([2, 1, 3]))

    def test_single_sample(self):
        cm = confusion([5], [2], 6)
        expected = np.zeros((6, 6), dtype=np.int64)
        expected[2, 5] = 1
        assert np.array_equal(cm.counts, expected)

    @given(st.integers(1, 200), st.integers(2, 8), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_total_equals_sample_count(self, n, k, seed):
        rng = np.random.default_rng(seed)
        preds = rng.integers(0, k, n)
        labels = rng.integers(0, k, n)
        assert confusion(preds, labels, k).total == n

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            confusion([0, 1], [0], 2)

    def test_index_out_of_range(self):
        with pytest.raises(ValueError, match="range"):
            confusion([2], [0], 2)


class TestAccuracy:
    def test_perfect(self):
        cm = ConfusionMatrix(counts=np.diag([3, 4, 5]), labels=("a", "b", "c"))
        assert accuracy(cm) == 1.0

    def test_uniform_2x2(self):
        cm = ConfusionMatrix(counts=np.ones((2, 2), dtype=int), labels=("a", "b"))
        assert accuracy(cm) == 0.5

    def test_matches_recount(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 5, 300)
        labels = rng.integers(0, 5, 300)
        cm = confusion(preds, labels, 5)
        assert accuracy(cm) == np.mean(preds == labels)

    def test_empty_rejected(self):
        cm = ConfusionMatrix(counts=np.zeros((2, 2), dtype=int), labels=("a", "b"))
        with pytest.raises(ValueError):
            accuracy(cm)


class TestPerClassAccuracy:
    def test_paper_ratio_row(self):
        # a 1/11 recall row, the shape of the paper's weakest class
        counts = np.array([[1, 10, 0], [0, 5, 0], [0, 0, 2]])
        cm = ConfusionMatrix(counts=counts, labels=("Paired_Doves", "x", "y"))
        pca = per_class_accuracy(cm)
        assert abs(pca[0] - 1 / 11) < 1e-12
        assert abs(pca[0] - 0.0909) < 1e-4

    def test_perfect_class(self):
        cm = ConfusionMatrix(counts=np.diag([7, 2]), labels=("a", "b"))
        assert np.array_equal(per_class_accuracy(cm), [1.0, 1.0])

    def test_empty_class_is_nan_not_zero(self):
        counts = np.array([[3, 0], [0, 0]])
        cm = ConfusionMatrix(counts=counts, labels=("a", "b"))
        pca = per_class_accuracy(cm)
        assert pca[0] == 1.0
        assert math.isnan(pca[1])

    @given(count_grids)
    @settings(max_examples=50, deadline=None)
    def test_accuracy_is_support_weighted_mean(self, counts):
        cm = ConfusionMatrix(counts=counts, labels=[str(i) for i in range(counts.shape[0])])
        if cm.total == 0:
            return
        pca = per_class_accuracy(cm)
        support = counts.sum(axis=1)
        mask = support > 0
        weighted = float(np.sum(pca[mask] * support[mask]) / support.sum())
        assert abs(accuracy(cm) - weighted) < 1e-12


class TestF1:
    def test_perfect_diagonal(self):
        cm = ConfusionMatrix(counts=np.diag([5, 1, 9]), labels=("a", "b", "c"))
        scores = f1(cm)
        assert np.allclose(scores.per_class, 1.0)
        assert scores.macro == 1.0 and scores.weighted == 1.0

    def test_hand_computed_2x2(self):
        cm = ConfusionMatrix(counts=np.array([[8, 2], [1, 9]]), labels=("a", "b"))
        scores = f1(cm)
        p0, r0 = 8 / 9, 8 / 10
        expected0 = 2 * p0 * r0 / (p0 + r0)
        assert abs(scores.per_class[0] - expected0) < 1e-9
        assert abs(expected0 - 16 / 19) < 1e-12

    def test_zero_convention(self):
        counts = np.array([[0, 4], [0, 6]])  # class 0 never predicted correctly
        cm = ConfusionMatrix(counts=counts, labels=("a", "b"))
        assert f1(cm).per_class[0] == 0.0

    @given(count_grids, st.integers(0, 2**31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_macro_invariant_under_relabeling(self, counts, seed):
        k = counts.shape[0]
        labels = tuple(str(i) for i in range(k))
        perm = np.random.default_rng(seed).permutation(k)
        permuted = counts[np.ix_(perm, perm)]
        a = f1(ConfusionMatrix(counts=counts, labels=labels))
        b = f1(ConfusionMatrix(counts=permuted, labels=labels))
        assert abs(a.macro - b.macro) < 1e-12
        assert abs(a.weighted - b.weighted) < 1e-12

    @given(count_grids)
    @settings(max_examples=50, deadline=None)
    def test_f1_bounds(self, counts):
        scores = f1(ConfusionMatrix(
            counts=counts, labels=[str(i) for i in range(counts.shape[0])]
        ))
        assert np.all((scores.per_class >= 0) & (scores.per_class <= 1))
        support = counts.sum(axis=1)
        if support.sum() > 0:
            present = scores.per_class[support > 0]
            assert present.min() - 1e-12 <= scores.weighted <= present.max() + 1e-12


class TestReport:
    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        counts = rng.integers(0, 30, (4, 4))
        cm = ConfusionMatrix(counts=counts, labels=("blip", "chirp", "noise", "tone"))
        emit_report(cm, standard_metrics(cm), str(tmp_path))
        back = read_confusion_csv(str(tmp_path / "confusion.csv"))
        assert back.labels == cm.labels
        assert np.array_equal(back.counts, cm.counts)

    def test_metrics_schema(self, tmp_path):
        k = 24
        rng = np.random.default_rng(2)
        preds = rng.integers(0, k, 500)
        labels = rng.integers(0, k, 500)
        cm = confusion(preds, labels, k, [f"c{i:02d}" for i in range(k)])
        emit_report(cm, standard_metrics(cm), str(tmp_path))
        text = (tmp_path / "metrics.txt").read_text()
        keys = [line.split("=")[0] for line in text.strip().splitlines()]
        assert "accuracy" in keys
        assert "f1_macro" in keys and "f1_weighted" in keys
        assert sum(1 for key in keys if key.startswith("acc_")) == 24

    def test_rendered_image_scales_with_k(self):
        for k in (3, 7):
            cm = ConfusionMatrix(counts=np.eye(k, dtype=int),
                                 labels=[str(i) for i in range(k)])
            img = render_confusion_image(cm, cell_px=16)
            assert img.shape == (16 * k, 16 * k, 3)

    def test_undefined_marker_in_metrics(self, tmp_path):
        counts = np.array([[3, 0], [0, 0]])
        cm = ConfusionMatrix(counts=counts, labels=("a", "b"))
        emit_report(cm, standard_metrics(cm), str(tmp_path))
        text = (tmp_path / "metrics.txt").read_text()
        assert "acc_b=undefined" in text
