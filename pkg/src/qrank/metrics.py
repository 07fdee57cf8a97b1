"""Hierarchical label parsing and the evaluation metric suite.

Labels read fine -> coarse ("Zurich, Switzerland, Europe"); date-style
labels ("03-01-2023") are normalized to the same comma form before parsing.
All dataset-level metrics are percentages in [0, 100].
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import DataError

# Logged in every report header: the aggregate F1 column is computed as
# macro F1 over full-label classes present in the ground truth.
MACRO_F1_NOTE = (
    "F1-Score = unweighted macro F1 over full-label classes present in the ground truth"
)

_DATE_LABEL = re.compile(r"\d{1,4}(?:\s*-\s*\d{1,4})+")


@dataclass(frozen=True)
class HierarchicalLabel:
    """Ordered fine -> coarse components plus their suffix chains."""

    components: tuple[str, ...]
    chains: tuple[tuple[str, ...], ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.components:
            raise DataError("HierarchicalLabel: no components")
        if not self.chains:
            object.__setattr__(
                self,
                "chains",
                tuple(self.components[i:] for i in range(len(self.components))),
            )
        if len(self.chains) != len(self.components):
            raise DataError("HierarchicalLabel: chain count != component count")

    @property
    def component_set(self) -> frozenset[str]:
        return frozenset(self.components)

    @property
    def text(self) -> str:
        return ", ".join(self.components)


def parse_hierarchy(label_text: str) -> HierarchicalLabel:
    """Parse a label string into its hierarchy.

    Splits on commas and trims; a pure date label like "03-01-2023" is first
    rewritten to comma form (day, month, year are already fine -> coarse).
    """
    if label_text is None or not str(label_text).strip():
        raise DataError("parse_hierarchy: empty label")
    text = str(label_text).strip()
    if _DATE_LABEL.fullmatch(text):
        parts = [p.strip() for p in text.split("-")]
    else:
        parts = [p.strip() for p in text.split(",")]
    components = tuple(p for p in parts if p)
    if not components:
        raise DataError(f"parse_hierarchy: no components in {label_text!r}")
    return HierarchicalLabel(components)


def example_f1(gt: HierarchicalLabel, pred: HierarchicalLabel) -> float:
    """Overlap F1 between the two hierarchies' component sets, in [0, 1]."""
    a, b = gt.component_set, pred.component_set
    return 2.0 * len(a & b) / (len(a) + len(b))


@dataclass
class RankMetrics:
    accuracy: float  # percent, exact full-label match at rank 1
    rank_at_5: float  # percent, gt within the top 5
    missing: list[int]  # item indices whose gt never appears in the ranking


def rank_metrics(rankings: Sequence[Sequence[str]], gts: Sequence[str]) -> RankMetrics:
    """Rank@1 (accuracy) and Rank@5 by exact full-label string match."""
    if len(rankings) != len(gts):
        raise DataError("rank_metrics: rankings/gts length mismatch")
    if not rankings:
        raise DataError("rank_metrics: empty input")
    hits1 = hits5 = 0
    missing: list[int] = []
    for i, (ranked, gt) in enumerate(zip(rankings, gts)):
        if not ranked:
            raise DataError(f"rank_metrics: empty ranking for item {i}")
        if gt not in ranked:
            missing.append(i)  # counted as a miss, reported to the caller
            continue
        pos = list(ranked).index(gt)
        hits1 += pos == 0
        hits5 += pos < 5
    n = len(gts)
    return RankMetrics(100.0 * hits1 / n, 100.0 * hits5 / n, missing)


def macro_f1(predictions: Sequence[str], gts: Sequence[str], label_space: Sequence[str]) -> float:
    """Unweighted mean of per-class F1 over full-label classes present in gts."""
    if not gts:
        raise DataError("macro_f1: empty input")
    if len(predictions) != len(gts):
        raise DataError("macro_f1: predictions/gts length mismatch")
    known = set(label_space)
    for gt in gts:
        if gt not in known:
            raise DataError(f"macro_f1: gt label {gt!r} not in label space")
    classes = sorted(set(gts))
    scores = []
    for cls in classes:
        tp = sum(1 for p, g in zip(predictions, gts) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(predictions, gts) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(predictions, gts) if p != cls and g == cls)
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return 100.0 * sum(scores) / len(scores)


@dataclass
class EvalReport:
    """Aggregate metrics (percent) plus per-item records."""

    accuracy: float
    rank_at_5: float
    example_f1: float
    macro_f1: float
    per_item: list[dict]
    note: str = MACRO_F1_NOTE

    def __post_init__(self) -> None:
        for name in ("accuracy", "rank_at_5", "example_f1", "macro_f1"):
            value = getattr(self, name)
            if not (0.0 <= value <= 100.0):
                raise DataError(f"EvalReport: {name} = {value} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "note": self.note,
            "accuracy": self.accuracy,
            "rank_at_5": self.rank_at_5,
            "example_f1": self.example_f1,
            "macro_f1": self.macro_f1,
            "per_item": self.per_item,
        }

    @staticmethod
    def from_dict(data: dict) -> "EvalReport":
        return EvalReport(
            accuracy=data["accuracy"],
            rank_at_5=data["rank_at_5"],
            example_f1=data["example_f1"],
            macro_f1=data["macro_f1"],
            per_item=list(data.get("per_item", [])),
            note=data.get("note", MACRO_F1_NOTE),
        )


def evaluate_run(
    rankings: Sequence[Sequence[str]],
    gts: Sequence[str],
    label_space: Sequence[str],
    item_ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    """Aggregate the full metric suite for one run.

    Example-F1 is computed between each item's gt hierarchy and its rank-1
    prediction's hierarchy. Items whose gt is missing from their ranking are
    flagged per item and count as misses everywhere.
    """
    ranks = rank_metrics(rankings, gts)
    if item_ids is None:
        item_ids = [f"item{i:05d}" for i in range(len(gts))]
    per_item = []
    ef1_sum = 0.0
    top1_preds = []
    for i, (ranked, gt) in enumerate(zip(rankings, gts)):
        top1 = ranked[0]
        top1_preds.append(top1)
        ef1 = example_f1(parse_hierarchy(gt), parse_hierarchy(top1))
        ef1_sum += ef1
        per_item.append(
            {
                "item_id": item_ids[i],
                "gt": gt,
                "top1": top1,
                "hit1": top1 == gt,
                "hit5": gt in list(ranked)[:5],
                "example_f1": ef1,
                "covered": gt in ranked,
            }
        )
    return EvalReport(
        accuracy=ranks.accuracy,
        rank_at_5=ranks.rank_at_5,
        example_f1=100.0 * ef1_sum / len(gts),
        macro_f1=macro_f1(top1_preds, gts, label_space),
        per_item=per_item,
    )
