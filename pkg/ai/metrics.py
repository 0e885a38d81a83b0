"""Segmentation evaluation: overall IoU, mean IoU and Pre@X."""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import EmptyEvaluationError
from utils.helpers import safe_divide

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)
BINARIZE_AT = 0.5
METRICS_SCHEMA = "cprn-metrics/1"


def mask_iou(prediction: np.ndarray, truth: np.ndarray) -> Tuple[float, int, int]:
    """IoU of two binary masks, with both-empty scoring 1.

    Returns:
        (iou, intersection pixel count, union pixel count)
    """
    prediction = np.asarray(prediction, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    intersection = int(np.count_nonzero(prediction & truth))
    union = int(np.count_nonzero(prediction | truth))
    if union == 0:
        return 1.0, 0, 0
    return intersection / union, intersection, union


@dataclass
class SegmentationRecord:
    """One evaluated sample."""
    score_map: np.ndarray  # H0 x W0 in (0, 1)
    prediction: np.ndarray  # bool, score_map > 0.5
    truth: np.ndarray  # bool
    iou: float
    intersection: int
    union: int
    sample_id: Optional[int] = None

    @classmethod
    def from_scores(cls, score_map: np.ndarray, truth: np.ndarray,
                    sample_id: Optional[int] = None, threshold: float = BINARIZE_AT) -> "SegmentationRecord":
        score_map = np.asarray(score_map)
        prediction = score_map > threshold
        truth = np.asarray(truth, dtype=bool)
        iou, intersection, union = mask_iou(prediction, truth)
        return cls(score_map=score_map, prediction=prediction, truth=truth, iou=iou,
                   intersection=intersection, union=union, sample_id=sample_id)


@dataclass
class MetricReport:
    """Aggregate metrics over a record list."""
    overall_iou: float
    mean_iou: float
    pre_at: Dict[float, float] = field(default_factory=dict)
    count: int = 0
    total_intersection: int = 0
    total_union: int = 0
    split: str = "all"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "count": self.count,
            "overall_iou": self.overall_iou,
            "mean_iou": self.mean_iou,
            "pre_at": {f"{x:.1f}": v for x, v in sorted(self.pre_at.items())},
            "total_intersection": self.total_intersection,
            "total_union": self.total_union,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MetricReport":
        return cls(
            overall_iou=float(data["overall_iou"]),
            mean_iou=float(data["mean_iou"]),
            pre_at={float(x): float(v) for x, v in data["pre_at"].items()},
            count=int(data["count"]),
            total_intersection=int(data.get("total_intersection", 0)),
            total_union=int(data.get("total_union", 0)),
            split=data.get("split", "all"),
        )

    def to_lines(self) -> List[str]:
        """key=value lines, prefixed by the split name."""
        prefix = self.split
        lines = [
            f"{prefix}.count={self.count}",
            f"{prefix}.overall_iou={self.overall_iou!r}",
            f"{prefix}.mean_iou={self.mean_iou!r}",
        ]
        lines += [f"{prefix}.pre@{x:.1f}={v!r}" for x, v in sorted(self.pre_at.items())]
        return lines


def metrics(records: Sequence[SegmentationRecord],
            thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
            split: str = "all") -> MetricReport:
    """Aggregate overall IoU (summed areas), mean IoU and Pre@X (IoU > X).

    Raises:
        EmptyEvaluationError: If records is empty
    """
    if not records:
        raise EmptyEvaluationError(f"Cannot compute metrics over an empty record list (split '{split}')")
    total_intersection = sum(r.intersection for r in records)
    total_union = sum(r.union for r in records)
    overall = safe_divide(total_intersection, total_union, default=1.0)
    count = len(records)
    mean_iou = math.fsum(r.iou for r in records) / count
    pre_at = {float(x): sum(1 for r in records if r.iou > x) / count for x in sorted(thresholds)}
    return MetricReport(overall_iou=overall, mean_iou=mean_iou, pre_at=pre_at, count=count,
                        total_intersection=total_intersection, total_union=total_union, split=split)


def reports_to_text(reports: Iterable[MetricReport]) -> str:
    lines: List[str] = []
    for report in reports:
        lines.extend(report.to_lines())
    return "\n".join(lines) + "\n"


def reports_to_json(reports: Iterable[MetricReport], **extra: Any) -> str:
    """Structured form: {"schema": "cprn-metrics/1", "splits": {name: report}, ...extra}."""
    payload = {"schema": METRICS_SCHEMA, **extra, "splits": {r.split: r.to_dict() for r in reports}}
    return json.dumps(payload, indent=2, sort_keys=False)


def reports_from_json(text: str) -> Dict[str, MetricReport]:
    payload = json.loads(text)
    if payload.get("schema") != METRICS_SCHEMA:
        raise ValueError(f"Unsupported metrics schema: {payload.get('schema')}")
    return {name: MetricReport.from_dict(data) for name, data in payload["splits"].items()}
