"""Detection evaluation: greedy point matching within a radius, micro-averaged
precision/recall/F1, and the soft Jaccard overlap loss.

File formats (CSV, UTF-8, one header line):
    predictions   image_id,x,y,score
    ground truth  image_id,x,y
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BinaryMask, Detection, ProbabilityMap
from .errors import InvalidConfigError, InvalidInputError

DEFAULT_RADIUS = 30.0


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching predictions against ground-truth points.

    ``pairs`` holds (prediction index, gt index, distance) for accepted
    matches; each endpoint appears at most once and tp == len(pairs).
    """

    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int, float], ...]


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


def match_detections(preds: list[Detection], gts: list[tuple[float, float]],
                     radius: float = DEFAULT_RADIUS) -> MatchResult:
    """Greedy nearest-first matching of predictions to ground-truth points.

    Candidate pairs with distance <= radius are sorted by ascending distance
    (ties by prediction index, then gt index) and accepted greedily while
    both endpoints are unused.
    """
    if radius <= 0:
        raise InvalidConfigError(f"radius must be > 0, got {radius}")
    candidates = []
    for i, p in enumerate(preds):
        for j, (gx, gy) in enumerate(gts):
            d = math.hypot(p.x - gx, p.y - gy)
            if d <= radius:
                candidates.append((d, i, j))
    candidates.sort()
    used_p = set()
    used_g = set()
    pairs = []
    for d, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, d))
    tp = len(pairs)
    return MatchResult(tp=tp, fp=len(preds) - tp, fn=len(gts) - tp, pairs=tuple(pairs))


def prf1(m: MatchResult) -> Metrics:
    """Precision, recall and F1 with the zero-denominator convention of 0."""
    p = m.tp / (m.tp + m.fp) if m.tp + m.fp > 0 else 0.0
    r = m.tp / (m.tp + m.fn) if m.tp + m.fn > 0 else 0.0
    f1 = 2.0 * p * r / (p + r) if p + r > 0 else 0.0
    return Metrics(precision=p, recall=r, f1=f1)


def soft_jaccard(pred: ProbabilityMap, gt: BinaryMask, epsilon: float = 1.0) -> float:
    """Soft Jaccard loss: 1 - (sum(p*g) + eps) / (sum(p) + sum(g) - sum(p*g) + eps)."""
    if (pred.height, pred.width) != (gt.height, gt.width):
        raise InvalidInputError(
            f"prediction is {pred.width}x{pred.height} but mask is {gt.width}x{gt.height}"
        )
    p = pred.data
    g = gt.data.astype(np.float64)
    inter = float(np.sum(p * g))
    union = float(np.sum(p)) + float(np.sum(g)) - inter
    return 1.0 - (inter + epsilon) / (union + epsilon)


@dataclass(frozen=True)
class DatasetMetrics:
    """Micro-averaged metrics over a multi-image run with per-image detail."""

    tp: int
    fp: int
    fn: int
    metrics: Metrics
    per_image: dict[str, dict]

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": self.metrics.precision,
            "recall": self.metrics.recall,
            "f1": self.metrics.f1,
            "per_image": self.per_image,
        }


def evaluate_detections(preds: dict[str, list[Detection]],
                        gts: dict[str, list[tuple[float, float]]],
                        radius: float = DEFAULT_RADIUS) -> DatasetMetrics:
    """Match per image and micro-average counts across all images."""
    tp = fp = fn = 0
    per_image = {}
    for image_id in sorted(set(preds) | set(gts)):
        m = match_detections(preds.get(image_id, []), gts.get(image_id, []), radius)
        mm = prf1(m)
        per_image[image_id] = {
            "tp": m.tp, "fp": m.fp, "fn": m.fn,
            "precision": mm.precision, "recall": mm.recall, "f1": mm.f1,
        }
        tp += m.tp
        fp += m.fp
        fn += m.fn
    overall = prf1(MatchResult(tp=tp, fp=fp, fn=fn, pairs=()))
    return DatasetMetrics(tp=tp, fp=fp, fn=fn, metrics=overall, per_image=per_image)


def _parse_float(row: dict, key: str, path) -> float:
    try:
        return float(row[key])
    except (KeyError, TypeError, ValueError):
        raise InvalidInputError(f"{path}: bad or missing '{key}' in row {row}")


def read_predictions_csv(path: str | Path) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"image_id", "x", "y", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InvalidInputError(f"{path}: expected header image_id,x,y,score")
        for row in reader:
            det = Detection(
                x=_parse_float(row, "x", path),
                y=_parse_float(row, "y", path),
                score=_parse_float(row, "score", path),
            )
            out.setdefault(row["image_id"], []).append(det)
    return out


def read_ground_truth_csv(path: str | Path) -> dict[str, list[tuple[float, float]]]:
    out: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"image_id", "x", "y"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InvalidInputError(f"{path}: expected header image_id,x,y")
        for row in reader:
            out.setdefault(row["image_id"], []).append(
                (_parse_float(row, "x", path), _parse_float(row, "y", path))
            )
    return out
