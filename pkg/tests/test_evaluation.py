import numpy as np
import pytest

from crownpipe.evaluation import (ConfusionMatrix, EvaluationError, TypeMapping,
                                  aggregate_types, confusion, format_report,
                                  overall_accuracy, per_class_accuracy, report_dict)
from tables import (MODEL1_COUNTS, MODEL1_OVERALL, MODEL1_PER_CLASS, MODEL2_COUNTS,
                    MODEL2_OVERALL, MODEL2_PER_CLASS, TYPE_LEVEL_CORRECT,
                    TYPE_LEVEL_OVERALL, TYPE_LEVEL_TOTAL)

CLASSES = [1, 2, 3, 4, 5, 6, 7]


def matrix(counts):
    return ConfusionMatrix(classes=CLASSES, counts=np.array(counts))


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        labels = [1, 2, 3, 1, 2]
        m = confusion(labels, labels, [1, 2, 3])
        assert np.array_equal(m.counts, np.diag([2, 2, 1]))

    def test_empty_lists(self):
        m = confusion([], [], [1, 2])
        assert np.array_equal(m.counts, np.zeros((2, 2)))

    def test_random_pairs_match_tally_oracle(self, rng):
        truth = rng.integers(1, 4, 10).tolist()
        preds = rng.integers(1, 4, 10).tolist()
        m = confusion(truth, preds, [1, 2, 3])
        for i, t in enumerate([1, 2, 3]):
            for j, p in enumerate([1, 2, 3]):
                expected = sum(1 for a, b in zip(truth, preds) if a == t and b == p)
                assert m.counts[i, j] == expected
        assert m.total == 10

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError, match="truth"):
            confusion([1, 2], [1], [1, 2])

    def test_unknown_label(self):
        with pytest.raises(EvaluationError, match="unknown"):
            confusion([1, 9], [1, 1], [1, 2])

    def test_permutation_equivariance(self, rng):
        truth = rng.integers(1, 5, 30).tolist()
        preds = rng.integers(1, 5, 30).tolist()
        a = confusion(truth, preds, [1, 2, 3, 4])
        order = [3, 1, 4, 2]
        b = confusion(truth, preds, order)
        for i, t in enumerate(order):
            for j, p in enumerate(order):
                assert b.counts[i, j] == a.counts[t - 1, p - 1]


class TestPerClassAccuracy:
    def test_reference_matrix(self):
        accs = per_class_accuracy(matrix(MODEL2_COUNTS))
        assert [round(a * 100, 2) for a in accs] == MODEL2_PER_CLASS

    def test_zero_row_class(self):
        accs = per_class_accuracy(matrix(MODEL1_COUNTS))
        assert accs[1] == 0.0  # 0 of 13 correct
        assert [round(a * 100, 2) for a in accs] == MODEL1_PER_CLASS

    def test_identity_matrix(self):
        m = ConfusionMatrix(classes=[1, 2, 3], counts=np.eye(3, dtype=int))
        assert per_class_accuracy(m) == [1.0, 1.0, 1.0]

    def test_empty_row_is_undefined(self):
        m = ConfusionMatrix(classes=[1, 2], counts=np.array([[3, 0], [0, 0]]))
        assert per_class_accuracy(m) == [1.0, None]


class TestOverallAccuracy:
    def test_reference_values(self):
        assert overall_accuracy(matrix(MODEL2_COUNTS)) * 100 == pytest.approx(
            MODEL2_OVERALL, abs=0.05)
        assert overall_accuracy(matrix(MODEL1_COUNTS)) * 100 == pytest.approx(
            MODEL1_OVERALL, abs=0.05)

    def test_diagonal_is_perfect(self):
        m = ConfusionMatrix(classes=[1, 2], counts=np.diag([4, 9]))
        assert overall_accuracy(m) == 1.0

    def test_empty_matrix_rejected(self):
        m = ConfusionMatrix(classes=[1], counts=np.zeros((1, 1)))
        with pytest.raises(EvaluationError):
            overall_accuracy(m)

    def test_equals_weighted_mean_of_per_class(self, rng):
        counts = rng.integers(0, 30, (4, 4))
        m = ConfusionMatrix(classes=[1, 2, 3, 4], counts=counts)
        accs = per_class_accuracy(m)
        rows = m.row_totals()
        weighted = sum(a * w for a, w in zip(accs, rows) if a is not None) / rows.sum()
        assert overall_accuracy(m) == pytest.approx(weighted, rel=1e-12)


class TestAggregateTypes:
    def test_reference_type_accuracy(self):
        t = aggregate_types(matrix(MODEL2_COUNTS))
        assert t.total == TYPE_LEVEL_TOTAL
        assert int(np.trace(t.counts)) == TYPE_LEVEL_CORRECT
        assert overall_accuracy(t) * 100 == pytest.approx(TYPE_LEVEL_OVERALL, abs=0.05)

    def test_identity_mapping_preserves_diagonal_accuracy(self):
        counts = np.diag([5, 7, 9])
        m = ConfusionMatrix(classes=[1, 2, 3], counts=counts)
        t = aggregate_types(m, TypeMapping(groups={1: 1, 2: 2, 3: 3}))
        assert overall_accuracy(t) == overall_accuracy(m)

    def test_matches_per_sample_remap_oracle(self, rng):
        counts = rng.integers(0, 6, (7, 7))
        m = matrix(counts.tolist())
        mapping = TypeMapping()
        t = aggregate_types(m, mapping)
        # expand the counts into (truth, prediction) pairs and remap each
        tally = {}
        for i, truth_cls in enumerate(CLASSES):
            for j, pred_cls in enumerate(CLASSES):
                for _ in range(int(counts[i, j])):
                    if truth_cls not in mapping.groups:
                        continue
                    ti = mapping.groups[truth_cls]
                    tj = mapping.groups.get(pred_cls, "excluded")
                    tally[(ti, tj)] = tally.get((ti, tj), 0) + 1
        for (ti, tj), count in tally.items():
            i = t.classes.index(ti)
            j = t.classes.index(tj)
            assert t.counts[i, j] == count
        assert t.total == sum(tally.values())

    def test_never_increases_total(self, rng):
        counts = rng.integers(0, 9, (7, 7))
        m = matrix(counts.tolist())
        t = aggregate_types(m)
        assert t.total <= m.total

    def test_never_decreases_merged_diagonal_mass(self, rng):
        counts = rng.integers(0, 9, (7, 7))
        m = matrix(counts.tolist())
        t = aggregate_types(m)
        # conifer species group: within-group confusion becomes diagonal mass
        species_diag = sum(int(counts[i, i]) for i in (3, 4, 5))
        group_idx = t.classes.index(4)
        assert t.counts[group_idx, group_idx] >= species_diag


class TestReports:
    def test_report_dict_contents(self):
        report = report_dict(matrix(MODEL2_COUNTS))
        assert report["overall_accuracy"] * 100 == pytest.approx(89.0, abs=0.05)
        assert report["type_level"]["overall_accuracy"] * 100 == pytest.approx(
            92.7, abs=0.05)
        assert report["counts"] == MODEL2_COUNTS

    def test_text_report_precision(self):
        text = format_report(matrix(MODEL2_COUNTS))
        assert "overall: 89.0%" in text
        assert "95.83%" in text
        assert "92.7% (216/233)" in text

    def test_counts_validation(self):
        with pytest.raises(EvaluationError):
            ConfusionMatrix(classes=[1, 2], counts=np.array([[1, -1], [0, 0]]))
        with pytest.raises(EvaluationError):
            ConfusionMatrix(classes=[1, 2], counts=np.zeros((3, 3)))
