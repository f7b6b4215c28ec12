"""Task metrics, thresholded LF predictions, memorization analysis, and the
match-count / train-test breakdowns, plus JSON/CSV/SVG report output.

The memorization analysis compares three prediction distributions over LF
columns: softmax of the LF head alone ("lf_latent"), softmax of the combined
logits ("full"), and softmax of the class logits broadcast through the LF
mapping ("task_mapped"). A probability strictly above k/m counts as a
predicted match (k small, default 4).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import MatchMatrix
from .errors import ConfigError, DataError
from .model import LOG_CLAMP, SepLLParams, forward_batch
from .nnet import softmax


@dataclass(frozen=True, eq=False)
class EvalReport:
    split: str
    metric: str
    value: float
    accuracy: float
    per_class_precision: tuple[float, ...]
    per_class_recall: tuple[float, ...]
    per_class_f1: tuple[float, ...]
    confusion: np.ndarray  # rows = gold, cols = predicted

    def cells(self) -> dict[str, float]:
        out = {"value": self.value, "accuracy": self.accuracy}
        for k in range(len(self.per_class_precision)):
            out[f"precision_{k}"] = self.per_class_precision[k]
            out[f"recall_{k}"] = self.per_class_recall[k]
            out[f"f1_{k}"] = self.per_class_f1[k]
        return out

    def to_json_dict(self) -> dict:
        return {
            "split": self.split,
            "metric": self.metric,
            "value": self.value,
            "accuracy": self.accuracy,
            "per_class_precision": list(self.per_class_precision),
            "per_class_recall": list(self.per_class_recall),
            "per_class_f1": list(self.per_class_f1),
            "confusion": [[int(v) for v in row] for row in self.confusion],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            split=obj["split"],
            metric=obj["metric"],
            value=obj["value"],
            accuracy=obj["accuracy"],
            per_class_precision=tuple(obj["per_class_precision"]),
            per_class_recall=tuple(obj["per_class_recall"]),
            per_class_f1=tuple(obj["per_class_f1"]),
            confusion=np.asarray(obj["confusion"], dtype=np.int64),
        )

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.to_json_dict() == other.to_json_dict()


def _precision_recall_f1(confusion: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    tp = np.diag(confusion).astype(np.float64)
    pred_totals = confusion.sum(axis=0).astype(np.float64)
    gold_totals = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_totals, out=np.zeros_like(tp), where=pred_totals > 0)
    recall = np.divide(tp, gold_totals, out=np.zeros_like(tp), where=gold_totals > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return precision, recall, f1


def task_metrics(
    preds: Sequence[int],
    gold: Sequence[int],
    metric: str = "accuracy",
    n_classes: int | None = None,
    positive_class: int = 1,
    split: str = "",
) -> EvalReport:
    """Accuracy / binary F1 / macro F1 with the full confusion breakdown.

    Zero-support classes contribute F1 = 0 to the macro mean; binary F1 demands
    exactly two classes and scores the positive class (index 1 by default).
    """
    preds = np.asarray(list(preds), dtype=np.int64)
    gold = np.asarray(list(gold), dtype=np.int64)
    if preds.shape != gold.shape:
        raise DataError("preds and gold have different lengths")
    if preds.size == 0:
        raise DataError("cannot score an empty prediction set")
    c = n_classes if n_classes is not None else int(max(preds.max(), gold.max())) + 1
    if preds.min() < 0 or gold.min() < 0 or preds.max() >= c or gold.max() >= c:
        raise DataError("class index out of range")
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (gold, preds), 1)
    accuracy = float(np.trace(confusion)) / preds.size
    precision, recall, f1 = _precision_recall_f1(confusion)
    if metric == "accuracy":
        value = accuracy
    elif metric == "macro_f1":
        value = float(f1.mean())
    elif metric == "binary_f1":
        if c != 2:
            raise DataError(f"binary_f1 requires exactly 2 classes, got {c}")
        if positive_class not in (0, 1):
            raise ConfigError("positive_class must be 0 or 1")
        value = float(f1[positive_class])
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    return EvalReport(
        split=split,
        metric=metric,
        value=value,
        accuracy=accuracy,
        per_class_precision=tuple(float(v) for v in precision),
        per_class_recall=tuple(float(v) for v in recall),
        per_class_f1=tuple(float(v) for v in f1),
        confusion=confusion,
    )


def lf_match_predict(prob_rows: np.ndarray, k: int = 4) -> np.ndarray:
    """Binary match predictions: probability strictly above k/m.

    With m <= k no probability can clear the threshold; that degenerate regime
    is the caller's to avoid (k is meant to sit well below m).
    """
    if not isinstance(k, (int, np.integer)) or k <= 0:
        raise ConfigError("threshold k must be a positive integer")
    rows = np.asarray(prob_rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    m = rows.shape[1]
    if m < 1:
        raise DataError("probability rows need at least one column")
    sums = rows.sum(axis=1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise DataError("probability rows must sum to 1")
    return (rows > k / m).astype(np.int64)


@dataclass(frozen=True)
class PathMemorization:
    accuracy: float
    macro_f1: float
    cross_entropy: float


@dataclass(frozen=True)
class MemorizationReport:
    paths: Mapping[str, PathMemorization]  # lf_latent, full, task_mapped
    uniform_ce: float
    threshold_k: int
    m: int

    def cells(self) -> dict[str, float]:
        out = {}
        for name, p in self.paths.items():
            out[f"{name}.accuracy"] = p.accuracy
            out[f"{name}.macro_f1"] = p.macro_f1
            out[f"{name}.cross_entropy"] = p.cross_entropy
        out["uniform.cross_entropy"] = self.uniform_ce
        return out

    def to_json_dict(self) -> dict:
        return {
            "paths": {
                name: {
                    "accuracy": p.accuracy,
                    "macro_f1": p.macro_f1,
                    "cross_entropy": p.cross_entropy,
                }
                for name, p in self.paths.items()
            },
            "uniform_ce": self.uniform_ce,
            "threshold_k": self.threshold_k,
            "m": self.m,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MemorizationReport":
        return cls(
            paths={
                name: PathMemorization(
                    accuracy=p["accuracy"],
                    macro_f1=p["macro_f1"],
                    cross_entropy=p["cross_entropy"],
                )
                for name, p in obj["paths"].items()
            },
            uniform_ce=obj["uniform_ce"],
            threshold_k=obj["threshold_k"],
            m=obj["m"],
        )

    def __eq__(self, other):
        return isinstance(other, MemorizationReport) and self.to_json_dict() == other.to_json_dict()


def _binary_cells_macro_f1(pred: np.ndarray, true: np.ndarray) -> float:
    """Macro F1 over the two cell classes (no-match, match), flattened."""
    pred = pred.reshape(-1)
    true = true.reshape(-1)
    f1s = []
    for cls in (0, 1):
        tp = float(((pred == cls) & (true == cls)).sum())
        fp = float(((pred == cls) & (true != cls)).sum())
        fn = float(((pred != cls) & (true == cls)).sum())
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom > 0 else 0.0)
    return float(np.mean(f1s))


def memorization_report(
    params: SepLLParams, X, match: MatchMatrix, k: int = 4
) -> MemorizationReport:
    """Score the three prediction paths against the true match matrix.

    Accuracy and macro F1 treat every (sample, LF) cell as a binary decision;
    cross-entropy against the row-normalized match distribution is restricted
    to samples with at least one true match, where it is well defined.
    """
    trace = forward_batch(params, X)
    if trace.lf_logits.shape[0] != match.n:
        raise DataError("feature matrix and match matrix disagree on sample count")
    if trace.lf_logits.shape[1] != match.m:
        raise DataError(
            f"LF dimension mismatch: model has m={trace.lf_logits.shape[1]}, matches m={match.m}"
        )
    probs = {
        "lf_latent": softmax(trace.lf_logits),
        "full": trace.q,
        "task_mapped": softmax(trace.task_logits[:, params.mapping.class_of]),
    }
    true = match.to_dense()
    matched = match.row_counts() > 0
    if not matched.any():
        raise DataError("memorization analysis needs at least one matched sample")
    p_rows = true[matched] / true[matched].sum(axis=1, keepdims=True)
    paths = {}
    for name, pr in probs.items():
        binary = lf_match_predict(pr, k)
        ce = float(-(p_rows * np.log(np.clip(pr[matched], LOG_CLAMP, None))).sum(axis=1).mean())
        paths[name] = PathMemorization(
            accuracy=float((binary == true).mean()),
            macro_f1=_binary_cells_macro_f1(binary, true),
            cross_entropy=ce,
        )
    uniform_ce = float(-(p_rows * math.log(1.0 / match.m)).sum(axis=1).mean())
    return MemorizationReport(paths=paths, uniform_ce=uniform_ce, threshold_k=int(k), m=match.m)


@dataclass(frozen=True)
class MatchGroup:
    value: float
    support: int


def match_count_breakdown(
    preds: Sequence[int],
    gold: Sequence[int],
    match: MatchMatrix,
    metric: str = "accuracy",
    n_classes: int | None = None,
    positive_class: int = 1,
) -> dict[int, MatchGroup]:
    """Task metric grouped by how many LFs matched each sample."""
    preds = np.asarray(list(preds), dtype=np.int64)
    gold = np.asarray(list(gold), dtype=np.int64)
    if preds.shape[0] != match.n or gold.shape[0] != match.n:
        raise DataError("predictions, gold, and match matrix disagree on sample count")
    counts = match.row_counts()
    c = n_classes if n_classes is not None else int(max(preds.max(), gold.max())) + 1
    out: dict[int, MatchGroup] = {}
    for count in sorted(set(int(v) for v in counts)):
        idx = counts == count
        report = task_metrics(
            preds[idx], gold[idx], metric=metric, n_classes=c, positive_class=positive_class
        )
        out[count] = MatchGroup(value=report.value, support=int(idx.sum()))
    return out


def train_test_gap(report_train, report_test) -> dict[str, float]:
    """Absolute per-cell differences between two same-shaped reports."""
    a = report_train.cells()
    b = report_test.cells()
    if set(a) != set(b):
        raise DataError("reports have different cell layouts")
    return {key: abs(a[key] - b[key]) for key in a}


# ---------------------------------------------------------------------------
# report output


def report_to_csv(cells: Mapping[str, float], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell", "value"])
        for key, value in cells.items():
            writer.writerow([key, repr(float(value))])


def breakdown_to_csv(table: Mapping[int, MatchGroup], metric: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["match_count", metric, "support"])
        for count in sorted(table):
            group = table[count]
            writer.writerow([count, repr(float(group.value)), group.support])


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


_PALETTE = ("#4878a8", "#e49444", "#5ba053", "#b65d60", "#8a7bb0", "#77706a")


def write_bar_chart_svg(
    path,
    title: str,
    group_labels: Sequence[str],
    series: Mapping[str, Sequence[float]],
) -> None:
    """Small dependency-free grouped bar chart."""
    width, height = 640, 360
    left, right, top, bottom = 60, 20, 40, 60
    plot_w = width - left - right
    plot_h = height - top - bottom
    names = list(series)
    values = [list(series[name]) for name in names]
    if any(len(v) != len(group_labels) for v in values):
        raise DataError("every series needs one value per group")
    peak = max((max(v) for v in values if v), default=1.0)
    peak = peak if peak > 0 else 1.0
    n_groups = max(len(group_labels), 1)
    group_w = plot_w / n_groups
    bar_w = group_w * 0.8 / max(len(names), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = top + plot_h * (1 - frac)
        parts.append(
            f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" font-size="11">{peak * frac:.2f}</text>'
        )
        parts.append(f'<line x1="{left - 3}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
    for g, label in enumerate(group_labels):
        x0 = left + g * group_w + group_w * 0.1
        for s, name in enumerate(names):
            v = values[s][g]
            h = plot_h * max(v, 0.0) / peak
            x = x0 + s * bar_w
            y = top + plot_h - h
            color = _PALETTE[s % len(_PALETTE)]
            parts.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" fill="{color}"/>'
            )
        parts.append(
            f'<text x="{left + g * group_w + group_w / 2:.1f}" y="{top + plot_h + 16}" text-anchor="middle" font-family="sans-serif" font-size="11">{label}</text>'
        )
    for s, name in enumerate(names):
        x = left + s * 130
        y = height - 18
        parts.append(
            f'<rect x="{x}" y="{y - 10}" width="12" height="12" fill="{_PALETTE[s % len(_PALETTE)]}"/>'
        )
        parts.append(
            f'<text x="{x + 16}" y="{y}" font-family="sans-serif" font-size="11">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
