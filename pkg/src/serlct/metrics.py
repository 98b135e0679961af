"""Confusion-matrix metrics: per-class precision/recall/F1 and WA/UA."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    confusion: np.ndarray                    # rows = true class, cols = predicted
    precision: list[float]
    recall: list[float]
    f1: list[float]
    accuracy: list[float]                    # per-class accuracy used by WA/UA
    wa: float
    ua: float
    acc_as_precision: bool = False
    undefined: list[str] = field(default_factory=list)
    class_names: list[str] | None = None

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]

    @property
    def support(self) -> list[int]:
        return [int(v) for v in self.confusion.sum(axis=1)]

    def names(self) -> list[str]:
        return self.class_names or [str(i) for i in range(self.num_classes)]

    # -- serialisation ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "wa": self.wa,
            "ua": self.ua,
            "acc_as_precision": self.acc_as_precision,
            "undefined": self.undefined,
            "class_names": self.class_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        d = dict(d)
        d["confusion"] = np.asarray(d["confusion"], dtype=np.int64)
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "support", "precision", "recall", "f1", "accuracy", "wa", "ua"])
        for i, name in enumerate(self.names()):
            w.writerow([name, self.support[i], repr(self.precision[i]), repr(self.recall[i]),
                        repr(self.f1[i]), repr(self.accuracy[i]), "", ""])
        w.writerow(["overall", int(self.confusion.sum()), "", "", "", "", repr(self.wa), repr(self.ua)])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + self.names())
        for name, row in zip(self.names(), self.confusion):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, metrics_csv: str, confusion_csv: str, acc_as_precision: bool = False) -> "MetricsReport":
        crow = list(csv.reader(io.StringIO(confusion_csv)))
        names = crow[0][1:]
        confusion = np.array([[int(v) for v in r[1:]] for r in crow[1:]], dtype=np.int64)
        rows = list(csv.DictReader(io.StringIO(metrics_csv)))
        per_class, overall = rows[:-1], rows[-1]
        rep = compute_metrics(confusion, acc_as_precision=acc_as_precision, class_names=names)
        rep.precision = [float(r["precision"]) for r in per_class]
        rep.recall = [float(r["recall"]) for r in per_class]
        rep.f1 = [float(r["f1"]) for r in per_class]
        rep.accuracy = [float(r["accuracy"]) for r in per_class]
        rep.wa, rep.ua = float(overall["wa"]), float(overall["ua"])
        return rep

    def summary(self) -> str:
        return f"WA={self.wa:.4f} UA={self.ua:.4f}"


def _ratio(num: int, den: int, what: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(what)
        return 0.0
    return num / den


def compute_metrics(confusion, acc_as_precision: bool = False, class_names=None) -> MetricsReport:
    """Derive every metric from a square confusion matrix.

    A zero denominator yields 0.0 and is listed in ``undefined``. Per-class
    accuracy is recall unless ``acc_as_precision`` is set.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    if not np.issubdtype(cm.dtype, np.integer):
        if not np.all(np.mod(cm, 1) == 0):
            raise ValueError("confusion matrix must hold integer counts")
        cm = cm.astype(np.int64)
    if (cm < 0).any():
        raise ValueError("confusion matrix has negative entries")
    k = cm.shape[0]
    undefined: list[str] = []
    precision, recall, f1, acc = [], [], [], []
    supports = []
    for i in range(k):
        tp = int(cm[i, i])
        fn = int(cm[i, :].sum()) - tp
        fp = int(cm[:, i].sum()) - tp
        p = _ratio(tp, tp + fp, f"precision[{i}]", undefined)
        r = _ratio(tp, tp + fn, f"recall[{i}]", undefined)
        if p + r == 0:
            undefined.append(f"f1[{i}]")
            f = 0.0
        else:
            f = 2 * p * r / (p + r)
        precision.append(p)
        recall.append(r)
        f1.append(f)
        acc.append(p if acc_as_precision else r)
        supports.append(tp + fn)
    total = sum(supports)
    wa = sum(n * a for n, a in zip(supports, acc)) / total if total else 0.0
    if not total:
        undefined.append("wa")
    ua = sum(acc) / k
    return MetricsReport(
        confusion=cm.astype(np.int64), precision=precision, recall=recall, f1=f1,
        accuracy=acc, wa=wa, ua=ua, acc_as_precision=acc_as_precision,
        undefined=undefined, class_names=list(class_names) if class_names is not None else None,
    )


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm
