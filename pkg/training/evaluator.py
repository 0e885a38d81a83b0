"""Checkpoint evaluation over the benchmark splits."""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

from ai.metrics import BINARIZE_AT, DEFAULT_THRESHOLDS, MetricReport, SegmentationRecord, metrics
from ai.model import CPRNModel
from bench.dataset import SPLITS, SyntheticDataset
from bench.scenes import Sample
from config.train_config import TrainConfig
from core.checkpoint import load_checkpoint
from core.errors import CheckpointError, DatasetError
from core.tensor import set_default_dtype
from training.reports import write_mask_pgm, write_metrics

logger = logging.getLogger(__name__)

RUN_CONFIG_FILE = "config.json"


def load_model(checkpoint: Union[str, Path], config: Optional[TrainConfig] = None) -> CPRNModel:
    """Rebuild the model a checkpoint was trained with and load its weights.

    Args:
        checkpoint: Path to a .ckpt file
        config: Run configuration (default: config.json next to the checkpoint)

    Raises:
        CheckpointError: If the checkpoint is unreadable or does not match the model
        ConfigurationError: If no run configuration is available
    """
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise CheckpointError(f"Checkpoint not found: {checkpoint}")
    if config is None:
        config = TrainConfig.load(checkpoint.parent / RUN_CONFIG_FILE)
    set_default_dtype(config.precision)
    model = CPRNModel(config.model_config())
    model.store.load_state(load_checkpoint(checkpoint))
    logger.info(f"Loaded {checkpoint} ({len(model.store)} tensors)")
    return model


class Evaluator:
    """Scores samples with a model and aggregates metrics per split."""

    def __init__(self, model: CPRNModel, thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
                 binarize_at: float = BINARIZE_AT):
        self.model = model
        self.thresholds = tuple(thresholds)
        self.binarize_at = binarize_at
        self.logger = logging.getLogger(__name__)

    def score(self, samples: Sequence[Sample]) -> List[SegmentationRecord]:
        return [
            SegmentationRecord.from_scores(self.model.predict(s.image, s.tokens), s.mask,
                                           sample_id=s.sample_id, threshold=self.binarize_at)
            for s in samples
        ]

    def evaluate(self, samples: Sequence[Sample], splits: Iterable[str] = ("all",),
                 records: Optional[Sequence[SegmentationRecord]] = None) -> Dict[str, MetricReport]:
        """One MetricReport per split; splits without samples are skipped.

        Raises:
            DatasetError: On an unknown split name
        """
        splits = list(splits)
        unknown = [name for name in splits if name not in SPLITS]
        if unknown:
            raise DatasetError(f"Unknown split(s): {unknown} (expected one of {tuple(SPLITS)})")
        if records is None:
            records = self.score(samples)

        reports: Dict[str, MetricReport] = {}
        for name in splits:
            selected = [r for s, r in zip(samples, records) if SPLITS[name](s)]
            if not selected:
                self.logger.warning(f"Split '{name}' has no samples, skipping")
                continue
            reports[name] = metrics(selected, self.thresholds, split=name)
            self.logger.info(
                f"{name}: {len(selected)} samples, overall IoU {reports[name].overall_iou:.4f}, "
                f"mean IoU {reports[name].mean_iou:.4f}"
            )
        return reports


def export_masks(records: Sequence[SegmentationRecord], directory: Union[str, Path]) -> List[Path]:
    """Predicted masks as <sample_id>.pgm."""
    directory = Path(directory)
    paths = [write_mask_pgm(r.prediction, directory / f"{r.sample_id:06d}.pgm") for r in records]
    logger.info(f"Exported {len(paths)} predicted masks to {directory}")
    return paths


def evaluate(
    checkpoint: Union[str, Path],
    dataset_root: Union[str, Path],
    partition: str = "val",
    splits: Iterable[str] = ("all", "small_scale", "complex_language"),
    output_dir: Optional[Union[str, Path]] = None,
    masks_dir: Optional[Union[str, Path]] = None,
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
    binarize_at: float = BINARIZE_AT,
) -> Dict[str, MetricReport]:
    """Evaluate a checkpoint on one dataset partition.

    Args:
        checkpoint: Path to the checkpoint (its config.json must sit next to it)
        dataset_root: Directory written by the generate command
        partition: 'train' or 'val'
        splits: Split names to report
        output_dir: Where metrics.txt/metrics.json go (default: checkpoint directory)
        masks_dir: When set, predicted masks are written there as PGM
        thresholds: Pre@X thresholds
        binarize_at: Score-map binarization threshold

    Returns:
        Split name -> MetricReport
    """
    model = load_model(checkpoint)
    dataset = SyntheticDataset.load(dataset_root, partition)
    evaluator = Evaluator(model, thresholds, binarize_at)
    records = evaluator.score(dataset.samples)
    reports = evaluator.evaluate(dataset.samples, splits, records=records)

    output_dir = Path(output_dir) if output_dir is not None else Path(checkpoint).parent
    write_metrics(list(reports.values()), output_dir, checkpoint=str(checkpoint),
                  dataset=str(dataset_root), partition=partition)
    if masks_dir is not None:
        export_masks(records, masks_dir)
    return reports
