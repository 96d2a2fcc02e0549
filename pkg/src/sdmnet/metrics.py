"""Confusion matrices, per-class and support-weighted metrics, fold aggregation."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CLASS_NAMES = {0: "non-nodule", 1: "nodule"}
METRICS = ("accuracy", "precision", "sensitivity", "specificity", "f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with class 1 (nodule) as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def as_array(self):
        """Rows are true class (0, 1), columns predicted class (0, 1)."""
        return np.array([[self.tn, self.fp], [self.fn, self.tp]], dtype=np.int64)

    def __add__(self, other):
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


def confusion_matrix(pred, true):
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"prediction/label length mismatch: {pred.shape} vs {true.shape}")
    for name, arr in (("pred", pred), ("true", true)):
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} contains labels outside {{0, 1}}")
    return ConfusionMatrix(int(((pred == 1) & (true == 1)).sum()), int(((pred == 0) & (true == 0)).sum()),
                           int(((pred == 1) & (true == 0)).sum()), int(((pred == 0) & (true == 1)).sum()))


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def class_metrics(cm, class_x):
    """Metrics with ``class_x`` treated as positive.

    Zero denominators give 0.0 and set ``degenerate``.
    """
    if class_x == 1:
        tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    elif class_x == 0:
        tp, tn, fp, fn = cm.tn, cm.tp, cm.fn, cm.fp
    else:
        raise ValueError(f"class must be 0 or 1, got {class_x}")
    acc, d0 = _ratio(tp + tn, tp + tn + fp + fn)
    prec, d1 = _ratio(tp, tp + fp)
    sens, d2 = _ratio(tp, tp + fn)
    spec, d3 = _ratio(tn, tn + fp)
    f1, d4 = _ratio(2 * prec * sens, prec + sens)
    return {"accuracy": acc, "precision": prec, "sensitivity": sens, "specificity": spec, "f1": f1,
            "support": tp + fn, "degenerate": any((d0, d1, d2, d3, d4))}


def weighted_report(cm):
    """Per-class metrics plus support-weighted averages under key ``"weighted"``."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    per = {c: class_metrics(cm, c) for c in (0, 1)}
    total = per[0]["support"] + per[1]["support"]
    weighted = {}
    for m in METRICS:
        weighted[m] = (sum(per[c][m] * per[c]["support"] for c in (0, 1)) / total) if total else 0.0
    weighted["support"] = total
    weighted["degenerate"] = per[0]["degenerate"] or per[1]["degenerate"] or total == 0
    return {**per, "weighted": weighted}


def aggregate_folds(reports):
    """Mean and population std across per-fold reports for every (class, metric)."""
    out = {}
    for key in (0, 1, "weighted"):
        out[key] = {}
        for m in METRICS:
            vals = np.array([r[key][m] for r in reports], dtype=np.float64)
            out[key][m] = (float(vals.mean()), float(vals.std()))
    return out


def _label(key):
    return CLASS_NAMES.get(key, key)


def report_rows(report, fold="all"):
    """``(metric, class, value, fold)`` rows in a fixed order."""
    return [(m, _label(key), report[key][m], fold) for key in (1, 0, "weighted") for m in METRICS]


def write_report_csv(path, rows):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "class", "value", "fold"])
        for metric, cls, value, fold in rows:
            writer.writerow([metric, cls, f"{value:.6f}", fold])


def format_table(report, title=None):
    lines = [title] if title else []
    lines.append(f"{'class':<12}" + "".join(f"{m:>13}" for m in METRICS) + f"{'support':>10}")
    for key in (1, 0, "weighted"):
        r = report[key]
        lines.append(f"{_label(key):<12}" + "".join(f"{100 * r[m]:>12.2f}%" for m in METRICS) + f"{r['support']:>10d}")
    return "\n".join(lines)


def format_confusion(cm):
    return "\n".join([
        f"{'':<16}{'pred non-nodule':>16}{'pred nodule':>13}",
        f"{'true non-nodule':<16}{cm.tn:>16d}{cm.fp:>13d}",
        f"{'true nodule':<16}{cm.fn:>16d}{cm.tp:>13d}",
    ])


def format_aggregate(agg):
    lines = [f"{'class':<12}" + "".join(f"{m:>20}" for m in METRICS)]
    for key in (1, 0, "weighted"):
        cells = "".join(f"{100 * agg[key][m][0]:>12.2f} ± {100 * agg[key][m][1]:<5.2f}" for m in METRICS)
        lines.append(f"{_label(key):<12}{cells}")
    return "\n".join(lines)
