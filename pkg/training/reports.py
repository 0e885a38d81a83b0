"""Run artifact writers: loss curve CSV, metrics files, divergence dumps, PGM masks."""

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from PIL import Image

from ai.metrics import MetricReport, reports_to_json, reports_to_text
from utils.helpers import ensure_dir, save_json

logger = logging.getLogger(__name__)

LOSS_CURVE_FILE = "loss_curve.csv"
METRICS_TEXT_FILE = "metrics.txt"
METRICS_JSON_FILE = "metrics.json"
DIVERGENCE_FILE = "divergence.json"
LOSS_CURVE_COLUMNS = ("epoch", "steps", "train_loss", "learning_rate", "val_overall_iou", "val_mean_iou")


@dataclass
class EpochRecord:
    """One row of the loss curve."""
    epoch: int
    steps: int
    train_loss: float
    learning_rate: float
    val_overall_iou: Optional[float] = None
    val_mean_iou: Optional[float] = None


def write_loss_curve(records: Sequence[EpochRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=LOSS_CURVE_COLUMNS)
        writer.writeheader()
        for record in records:
            row = asdict(record)
            writer.writerow({k: "" if v is None else repr(v) for k, v in row.items()})
    return path


def read_loss_curve(path: Union[str, Path]) -> List[EpochRecord]:
    with open(path, newline="") as handle:
        rows = list(csv.DictReader(handle))

    def number(text: str) -> Optional[float]:
        return float(text) if text != "" else None

    return [
        EpochRecord(
            epoch=int(row["epoch"]),
            steps=int(row["steps"]),
            train_loss=float(row["train_loss"]),
            learning_rate=float(row["learning_rate"]),
            val_overall_iou=number(row["val_overall_iou"]),
            val_mean_iou=number(row["val_mean_iou"]),
        )
        for row in rows
    ]


def write_metrics(reports: Sequence[MetricReport], directory: Union[str, Path], **extra: Any) -> Dict[str, Path]:
    """Write metrics.txt (key=value) and metrics.json side by side."""
    directory = ensure_dir(directory)
    text_path = directory / METRICS_TEXT_FILE
    json_path = directory / METRICS_JSON_FILE
    text_path.write_text(reports_to_text(reports))
    json_path.write_text(reports_to_json(reports, **extra) + "\n")
    logger.info(f"Wrote metrics for {len(reports)} split(s) to {directory}")
    return {"text": text_path, "json": json_path}


def write_divergence(directory: Union[str, Path], epoch: int, step: int, batch_id: List[int],
                     loss: float, learning_rate: float, config: Dict[str, Any]) -> Path:
    """Diagnostic dump written before a non-finite loss aborts training."""
    payload = {
        "epoch": epoch,
        "step": step,
        "batch_id": batch_id,
        "loss": loss if math.isfinite(loss) else str(loss),
        "learning_rate": learning_rate,
        "config": config,
    }
    return save_json(Path(directory) / DIVERGENCE_FILE, payload)


def write_mask_pgm(mask: np.ndarray, path: Union[str, Path]) -> Path:
    """Binary mask as an 8-bit PGM (0 / 255)."""
    path = Path(path)
    ensure_dir(path.parent)
    Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255).save(path, format="PPM")
    return path
