import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmnet.metrics import (METRICS, ConfusionMatrix, aggregate_folds, class_metrics, confusion_matrix,
                            format_aggregate, format_confusion, format_table, report_rows,
                            weighted_report, write_report_csv)

# pooled counts of the reference stacked model, nodule positive
REFERENCE = ConfusionMatrix(tp=1119, tn=3728, fp=20, fn=15)

counts = st.integers(0, 500)


class TestReferenceCounts:
    def test_rates(self):
        report = weighted_report(REFERENCE)
        assert 100 * report[1]["accuracy"] == pytest.approx(99.28, abs=0.01)
        assert 100 * report[1]["sensitivity"] == pytest.approx(98.68, abs=0.005)
        assert 100 * report[0]["sensitivity"] == pytest.approx(99.47, abs=0.005)

    def test_hand_fractions(self):
        r = weighted_report(REFERENCE)
        assert r[1]["sensitivity"] == 1119 / 1134
        assert r[1]["specificity"] == 3728 / 3748
        assert r[1]["precision"] == 1119 / 1139
        assert r[0]["precision"] == 3728 / 3743
        assert r[1]["support"] == 1134 and r[0]["support"] == 3748
        want = (1134 * (1119 / 1139) + 3748 * (3728 / 3743)) / 4882
        assert r["weighted"]["precision"] == pytest.approx(want, rel=1e-15)

    def test_weighted_sensitivity_is_accuracy(self):
        r = weighted_report(REFERENCE)
        assert r["weighted"]["sensitivity"] == pytest.approx(r[1]["accuracy"], rel=1e-15)


class TestConfusion:
    def test_counts(self):
        cm = confusion_matrix([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
        assert cm == ConfusionMatrix(tp=2, tn=1, fp=1, fn=1)
        assert cm.as_array().tolist() == [[1, 1], [1, 2]]

    def test_validation(self):
        with pytest.raises(ValueError):
            confusion_matrix([0, 1], [0])
        with pytest.raises(ValueError):
            confusion_matrix([0, 2], [0, 1])

    def test_addition(self):
        assert ConfusionMatrix(1, 2, 3, 4) + ConfusionMatrix(1, 1, 1, 1) == ConfusionMatrix(2, 3, 4, 5)

    def test_empty_report(self):
        with pytest.raises(ValueError):
            weighted_report(ConfusionMatrix(0, 0, 0, 0))

    def test_bad_class(self):
        with pytest.raises(ValueError):
            class_metrics(REFERENCE, 2)


@settings(max_examples=100, deadline=None)
@given(counts, counts, counts, counts)
def test_label_swap_duality(tp, tn, fp, fn):
    cm = ConfusionMatrix(tp, tn, fp, fn)
    swapped = ConfusionMatrix(tn, tp, fn, fp)
    assert class_metrics(cm, 0) == class_metrics(swapped, 1)
    a, b = class_metrics(cm, 1), class_metrics(cm, 0)
    assert a["sensitivity"] == b["specificity"] and a["specificity"] == b["sensitivity"]
    assert a["accuracy"] == b["accuracy"]


@settings(max_examples=100, deadline=None)
@given(counts, counts, counts, counts)
def test_metrics_bounded(tp, tn, fp, fn):
    cm = ConfusionMatrix(tp, tn, fp, fn)
    if cm.total == 0:
        return
    r = weighted_report(cm)
    for key in (0, 1, "weighted"):
        for m in METRICS:
            assert 0.0 <= r[key][m] <= 1.0 + 1e-12


class TestDegenerate:
    def test_no_positive_predictions(self):
        m = class_metrics(ConfusionMatrix(tp=0, tn=5, fp=0, fn=3), 1)
        assert m["precision"] == 0.0 and m["f1"] == 0.0 and m["degenerate"]

    def test_regular_case_not_flagged(self):
        assert not class_metrics(ConfusionMatrix(3, 4, 1, 2), 1)["degenerate"]

    def test_single_class_report(self):
        r = weighted_report(ConfusionMatrix(tp=0, tn=6, fp=0, fn=0))
        assert r[0]["accuracy"] == 1.0 and r["weighted"]["degenerate"]


class TestAggregate:
    def test_mean_and_population_std(self):
        reports = [weighted_report(ConfusionMatrix(9, 9, 1, 1)), weighted_report(ConfusionMatrix(8, 8, 2, 2))]
        agg = aggregate_folds(reports)
        mean, std = agg[1]["accuracy"]
        assert mean == pytest.approx(0.85) and std == pytest.approx(0.05)

    def test_five_random_reports(self, rng):
        cms = [ConfusionMatrix(*rng.integers(1, 50, 4)) for _ in range(5)]
        agg = aggregate_folds([weighted_report(cm) for cm in cms])
        accs = [(cm.tp + cm.tn) / cm.total for cm in cms]
        mean = sum(accs) / 5
        std = (sum((a - mean) ** 2 for a in accs) / 5) ** 0.5
        assert agg[1]["accuracy"] == pytest.approx((mean, std), rel=1e-12)
        sens = [cm.tp / (cm.tp + cm.fn) for cm in cms]
        assert agg[1]["sensitivity"][0] == pytest.approx(sum(sens) / 5, rel=1e-12)

    def test_single_fold_zero_std(self):
        agg = aggregate_folds([weighted_report(REFERENCE)])
        assert all(agg[k][m][1] == 0.0 for k in (0, 1, "weighted") for m in METRICS)


class TestFormatting:
    def test_csv(self, tmp_path):
        rows = report_rows(weighted_report(REFERENCE), fold=3)
        write_report_csv(tmp_path / "r.csv", rows)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "metric,class,value,fold"
        assert lines[1] == "accuracy,nodule,0.992831,3"
        assert len(lines) == 1 + 3 * len(METRICS)

    def test_text(self):
        report = weighted_report(REFERENCE)
        text = format_table(report, "pooled")
        assert "99.28%" in text and "98.68%" in text and "99.47%" in text
        assert "1119" in format_confusion(REFERENCE)
        assert "±" in format_aggregate(aggregate_folds([report, report]))
