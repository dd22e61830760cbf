"""Scoring detector output against ground truth.  Positive class = falsified (t = 0)."""

from __future__ import annotations

from typing import Iterable, Mapping

from .errors import ValidationError
from .ingest import GroundTruth
from .misplacement import SuspectRanking
from .truthdiscovery import ValidityLabels


def _ratio(num: int, den: int):
    return num / den if den else None


def confusion(labels: ValidityLabels | Mapping[int, int], truth: GroundTruth) -> dict:
    t = labels.t if isinstance(labels, ValidityLabels) else labels
    missing = set(truth.validity) - set(t)
    if missing:
        raise ValidationError(f"labels missing for rid {min(missing)}")
    tp = fp = fn = tn = 0
    for rid, real in truth.validity.items():
        flagged = t[rid] == 0
        if real == 0:
            tp += flagged
            fn += not flagged
        else:
            fp += flagged
            tn += not flagged
    n = tp + fp + fn + tn
    return {
        "accuracy": _ratio(tp + tn, n),
        "precision": _ratio(tp, tp + fp),
        "recall": _ratio(tp, tp + fn),
        "tp": tp, "fp": fp, "fn": fn, "tn": tn,
    }


def topk_recall(ranking: SuspectRanking | Iterable[int], truth_set, k: int):
    truth_set = set(truth_set)
    if not truth_set:
        return None
    lids = ranking.lids if isinstance(ranking, SuspectRanking) else list(ranking)
    return len(set(lids[:max(k, 0)]) & truth_set) / len(truth_set)


def report(labels, truth: GroundTruth, misplaced: SuspectRanking | None = None,
           removed: SuspectRanking | None = None, k: int = 10) -> dict:
    c = confusion(labels, truth)
    out = {"accuracy": c["accuracy"], "precision": c["precision"], "recall": c["recall"], "topk": {}}
    if misplaced is not None:
        out["topk"][f"misplaced@{k}"] = topk_recall(misplaced, truth.misplaced, k)
    if removed is not None:
        out["topk"][f"removed@{k}"] = topk_recall(removed, truth.removed, k)
    return out
