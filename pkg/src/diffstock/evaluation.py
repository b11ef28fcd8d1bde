"""Classification metrics and test-period evaluation.

Class 1 is "up". MCC uses the convention that a zero denominator factor
yields 0, which keeps degenerate early-training evaluations finite. F1 is
reported for the up class plus macro-averaged over both classes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass
class EvalReport:
    split: str
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    mcc: float
    f1: float
    macro_f1: float
    per_day: list[dict] = field(default_factory=list)
    config_fingerprint: str = ""

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "split": self.split,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "acc": self.acc,
            "mcc": self.mcc,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
            "per_day": self.per_day,
            "config_fingerprint": self.config_fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [
            ("split", self.split),
            ("samples", str(self.total)),
            ("TP/FP/TN/FN", f"{self.tp}/{self.fp}/{self.tn}/{self.fn}"),
            ("ACC", f"{self.acc:.4f}"),
            ("MCC", f"{self.mcc:.4f}"),
            ("F1(up)", f"{self.f1:.4f}"),
            ("F1(macro)", f"{self.macro_f1:.4f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def _mcc(tp: int, fp: int, tn: int, fn: int) -> float:
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def metrics(predictions, labels, split: str = "") -> EvalReport:
    """Confusion counts and ACC/MCC/F1 for binary predictions."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0:
        raise ValidationError("metrics: empty input")
    if predictions.shape != labels.shape:
        raise ValidationError(
            f"metrics: {predictions.shape} predictions vs {labels.shape} labels"
        )
    for arr, name in ((predictions, "predictions"), (labels, "labels")):
        if not np.isin(arr, (0, 1)).all():
            raise ValidationError(f"metrics: {name} must be binary 0/1")
    tp = int(np.sum((predictions == 1) & (labels == 1)))
    fp = int(np.sum((predictions == 1) & (labels == 0)))
    tn = int(np.sum((predictions == 0) & (labels == 0)))
    fn = int(np.sum((predictions == 0) & (labels == 1)))
    total = tp + fp + tn + fn
    macro = 0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp))
    return EvalReport(
        split=split, tp=tp, fp=fp, tn=tn, fn=fn,
        acc=(tp + tn) / total,
        mcc=_mcc(tp, fp, tn, fn),
        f1=_f1(tp, fp, fn),
        macro_f1=macro,
    )


def predict_classes(logits: np.ndarray) -> np.ndarray:
    """Argmax over the two class logits; exact ties resolve to class 0."""
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


def evaluate_days(model, days, split: str = "",
                  config_fingerprint: str = "") -> EvalReport:
    """Aggregate metrics over prepared (features, adjacency, labels) days."""
    if not days:
        raise ValidationError(f"evaluate: no usable days in split {split!r}")
    all_preds, all_labels, per_day = [], [], []
    for day in days:
        logits = model.forward(day.features, day.adjacency)
        preds = predict_classes(logits.data)
        all_preds.append(preds)
        all_labels.append(day.labels)
        per_day.append({
            "date": day.date,
            "acc": float(np.mean(preds == day.labels)),
            "n": int(day.labels.size),
        })
    report = metrics(np.concatenate(all_preds), np.concatenate(all_labels), split)
    report.per_day = per_day
    report.config_fingerprint = config_fingerprint
    return report
