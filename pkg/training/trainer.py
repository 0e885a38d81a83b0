"""Mini-batch training loop with deterministic shuffling, dropout streams and artifact output."""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ai.metrics import DEFAULT_THRESHOLDS, MetricReport
from ai.model import CPRNModel
from bench.dataset import SyntheticDataset
from bench.scenes import Sample
from config.train_config import TrainConfig
from core.checkpoint import save_checkpoint
from core.errors import ConfigurationError, DatasetError, GradientError, TrainingDivergedError
from core.gradcheck import GradCheckReport, check_gradients
from core.tensor import GradTape, backward, set_default_dtype
from training.evaluator import RUN_CONFIG_FILE, Evaluator
from training.optimizer import AdamW, PolynomialDecay, total_steps
from training.reports import LOSS_CURVE_FILE, EpochRecord, write_divergence, write_loss_curve
from utils.helpers import ensure_dir

BEST_CHECKPOINT = "best.ckpt"
LAST_CHECKPOINT = "last.ckpt"
# Parameters at most this large take part in the pre-flight gradient check
PREFLIGHT_MAX_ELEMENTS = 64


@dataclass
class TrainingResult:
    """Outcome of Trainer.fit()."""
    curve: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_overall_iou: Optional[float] = None
    output_dir: Optional[Path] = None
    best_checkpoint: Optional[Path] = None
    last_checkpoint: Optional[Path] = None
    validation: Dict[str, MetricReport] = field(default_factory=dict)

    @property
    def losses(self) -> List[float]:
        return [record.train_loss for record in self.curve]


class Trainer:
    """Trains a CPRNModel with AdamW and polynomial learning-rate decay."""

    def __init__(self, config: TrainConfig, train_set: Sequence[Sample],
                 val_set: Optional[Sequence[Sample]] = None,
                 output_dir: Optional[Union[str, Path]] = None,
                 thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
                 write_artifacts: bool = True):
        """Initialize the trainer.

        Args:
            config: Validated run configuration
            train_set: Training samples
            val_set: Validation samples used for best-checkpoint selection
            output_dir: Artifact directory (default: config.resolved_output_dir())
            thresholds: Pre@X thresholds for validation reports
            write_artifacts: When False nothing is written to disk

        Raises:
            ConfigurationError: If the training set is empty
        """
        self.logger = logging.getLogger(__name__)
        if len(train_set) == 0:
            raise ConfigurationError("Training set is empty")
        self.config = config
        self.train_set = list(train_set)
        self.val_set = list(val_set) if val_set else []
        self.output_dir: Optional[Path] = None
        if write_artifacts:
            self.output_dir = Path(output_dir) if output_dir is not None else config.resolved_output_dir()
        self.thresholds = tuple(thresholds)

        set_default_dtype(config.precision)
        self.model = CPRNModel(config.model_config())
        self.optimizer = AdamW(self.model.store, lr=config.learning_rate, weight_decay=config.weight_decay,
                               betas=tuple(config.betas), eps=config.eps)
        self.steps_per_epoch = math.ceil(len(self.train_set) / config.batch_size)
        self.schedule = PolynomialDecay(config.learning_rate,
                                        total_steps(len(self.train_set), config.batch_size, config.epochs),
                                        config.poly_power)
        self.global_step = 0

    @classmethod
    def from_dataset(cls, config: TrainConfig, output_dir: Optional[Union[str, Path]] = None) -> "Trainer":
        """Trainer over the train/val partitions found at config.dataset."""
        train = SyntheticDataset.load(config.dataset, "train")
        try:
            val = SyntheticDataset.load(config.dataset, "val").samples
        except DatasetError as exc:
            logging.getLogger(__name__).warning(f"No validation partition ({exc}); selecting by last epoch")
            val = []
        return cls(config, train.samples, val, output_dir)

    # Randomness

    def epoch_order(self, epoch: int) -> np.ndarray:
        """Sample permutation for one epoch, a pure function of (seed, epoch)."""
        return np.random.default_rng([self.config.seed, epoch]).permutation(len(self.train_set))

    def dropout_rng(self, epoch: int, step: int, index: int) -> Optional[np.random.Generator]:
        if self.config.dropout <= 0:
            return None
        return np.random.default_rng([self.config.seed, self.config.dropout_seed, epoch, step, index])

    # Gradients

    def sample_gradients(self, sample: Sample,
                         rng: Optional[np.random.Generator] = None) -> Tuple[float, Dict[str, np.ndarray]]:
        """Loss and parameter gradients of one sample, on a private tape."""
        with GradTape():
            loss, _ = self.model.loss(sample.image, sample.tokens, sample.mask, rng)
        grads = backward(loss, self.model.store)
        return loss.item(), dict(grads)

    def batch_gradients(self, batch: Sequence[Sample], epoch: int,
                        step: int) -> Tuple[List[float], Dict[str, np.ndarray]]:
        """Per-sample losses and batch-mean gradients, reduced in sample order."""
        jobs = [(sample, self.dropout_rng(epoch, step, i)) for i, sample in enumerate(batch)]
        if self.config.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                results = list(pool.map(lambda job: self.sample_gradients(*job), jobs))
        else:
            results = [self.sample_gradients(*job) for job in jobs]

        losses = [loss for loss, _ in results]
        averaged: Dict[str, np.ndarray] = {}
        for name in self.model.store:
            total = results[0][1][name]
            for _, grads in results[1:]:
                total = total + grads[name]
            averaged[name] = total / len(results)
        return losses, averaged

    def train_step(self, batch: Sequence[Sample], epoch: int, step: int) -> float:
        """One optimizer update; returns the batch-mean loss.

        Raises:
            TrainingDivergedError: If any sample loss is NaN or infinite
        """
        lr = self.schedule(self.global_step)
        losses, grads = self.batch_gradients(batch, epoch, step)
        mean_loss = math.fsum(losses) / len(losses)
        if not math.isfinite(mean_loss):
            self._diverged(batch, epoch, step, mean_loss, lr)
        self.optimizer.step(grads, lr=lr)
        self.global_step += 1
        if self.global_step % self.config.log_every == 0:
            self.logger.debug(f"step {self.global_step}: loss {mean_loss:.6f} lr {lr:.3e}")
        return mean_loss

    def _diverged(self, batch: Sequence[Sample], epoch: int, step: int, loss: float, lr: float) -> None:
        batch_id = [sample.sample_id for sample in batch]
        dump_path = None
        if self.output_dir is not None:
            dump_path = write_divergence(self.output_dir, epoch, step, batch_id, loss, lr, self.config.to_dict())
        self.logger.error(f"Non-finite loss {loss} at epoch {epoch} step {step}, batch {batch_id}")
        raise TrainingDivergedError(f"Loss became {loss} at epoch {epoch} step {step}",
                                    batch_id=batch_id, dump_path=dump_path)

    # Validation and checkpoints

    def validate(self) -> Dict[str, MetricReport]:
        if not self.val_set:
            return {}
        return Evaluator(self.model, self.thresholds).evaluate(self.val_set, ("all",))

    def save(self, name: str) -> Optional[Path]:
        if self.output_dir is None:
            return None
        return save_checkpoint(self.model.store.state_dict(), self.output_dir / name)

    def preflight(self, sample: Optional[Sample] = None) -> GradCheckReport:
        """Finite-difference check of the small parameter tensors on one sample.

        Raises:
            GradientError: If the run is not in float64 or the check fails
        """
        sample = sample or self.train_set[0]
        tensors = {name: t for name, t in self.model.store.items() if t.size <= PREFLIGHT_MAX_ELEMENTS}
        report = check_gradients(lambda: self.model.loss(sample.image, sample.tokens, sample.mask)[0], tensors)
        if not report.passed:
            raise GradientError(f"Pre-flight gradient check failed on {report.worst} "
                                f"(relative error {report.max_error:.2e})")
        return report

    def fit(self) -> TrainingResult:
        """Run every epoch, validating and checkpointing after each one."""
        config = self.config
        result = TrainingResult(output_dir=self.output_dir)
        if self.output_dir is not None:
            ensure_dir(self.output_dir)
            config.save(self.output_dir / RUN_CONFIG_FILE)
        self.logger.info(
            f"Training {config.variant}/{config.fusion} on {len(self.train_set)} samples for {config.epochs} "
            f"epochs ({self.steps_per_epoch} steps each)"
        )

        for epoch in range(config.epochs):
            order = self.epoch_order(epoch)
            lr = self.schedule(self.global_step)
            losses = []
            for step in range(self.steps_per_epoch):
                indices = order[step * config.batch_size:(step + 1) * config.batch_size]
                batch = [self.train_set[i] for i in indices]
                losses.append(self.train_step(batch, epoch, step) * len(batch))
            train_loss = math.fsum(losses) / len(self.train_set)

            reports = self.validate()
            record = EpochRecord(epoch=epoch + 1, steps=self.global_step, train_loss=train_loss, learning_rate=lr)
            if "all" in reports:
                record.val_overall_iou = reports["all"].overall_iou
                record.val_mean_iou = reports["all"].mean_iou
            result.curve.append(record)

            score = record.val_overall_iou
            improved = score is not None and (result.best_overall_iou is None or score > result.best_overall_iou)
            if improved or (score is None and not self.val_set):
                result.best_epoch = epoch + 1
                result.best_overall_iou = score
                result.validation = reports
                result.best_checkpoint = self.save(BEST_CHECKPOINT)

            if score is None:
                self.logger.info(f"epoch {epoch + 1}/{config.epochs}: loss {train_loss:.6f} lr {lr:.3e}")
            else:
                self.logger.info(
                    f"epoch {epoch + 1}/{config.epochs}: loss {train_loss:.6f} lr {lr:.3e} "
                    f"val overall IoU {score:.4f} mean IoU {record.val_mean_iou:.4f}"
                )
            if self.output_dir is not None:
                write_loss_curve(result.curve, self.output_dir / LOSS_CURVE_FILE)

        result.last_checkpoint = self.save(LAST_CHECKPOINT)
        if result.best_epoch is not None:
            self.logger.info(f"Best epoch {result.best_epoch} (val overall IoU {result.best_overall_iou})")
        return result


def train(config: TrainConfig, output_dir: Optional[Union[str, Path]] = None,
          gradcheck: bool = False) -> TrainingResult:
    """Train on config.dataset and write every run artifact."""
    trainer = Trainer.from_dataset(config, output_dir)
    if gradcheck:
        trainer.preflight()
    return trainer.fit()
