"""Ablation harness: trains several configurations on shared data and compares them.

Presets:

    composition  module compositions, from the holistic baseline up to the
                 guided parallel block with FFN and position embedding
    fusion       row/column fusion functions f1..f4 against the default sum
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ai.metrics import DEFAULT_THRESHOLDS, MetricReport
from bench.scenes import Sample
from config.train_config import TrainConfig
from core.errors import ConfigurationError
from training.evaluator import Evaluator
from training.trainer import Trainer
from utils.helpers import ensure_dir, save_json

logger = logging.getLogger(__name__)

ABLATION_TEXT_FILE = "ablation.txt"
ABLATION_JSON_FILE = "ablation.json"
DEFAULT_SPLITS = ("all", "small_scale")


@dataclass(frozen=True)
class AblationRow:
    """One configuration of the matrix: a label and the config fields it overrides."""
    label: str
    overrides: Mapping[str, Any] = field(default_factory=dict)


_BARE = {"ffn": False, "ape": False, "fusion": "eq5"}
_FULL = {"variant": "parallel_guided", "ffn": True, "ape": True}

PRESETS: Dict[str, Tuple[AblationRow, ...]] = {
    "composition": (
        AblationRow("holi_star", {**_BARE, "variant": "holi_star"}),
        AblationRow("roco_only", {**_BARE, "variant": "roco_only"}),
        AblationRow("serial", {**_BARE, "variant": "serial"}),
        AblationRow("parallel_star", {**_BARE, "variant": "parallel_star"}),
        AblationRow("parallel_guided", {**_BARE, "variant": "parallel_guided"}),
        AblationRow("parallel_guided+ffn", {**_BARE, "variant": "parallel_guided", "ffn": True}),
        AblationRow("parallel_guided+ffn+ape", {**_FULL, "fusion": "eq5"}),
    ),
    "fusion": tuple(AblationRow(kind, {**_FULL, "fusion": kind}) for kind in ("f1", "f2", "f3", "f4", "eq5")),
}
REFERENCE_ROWS = {"composition": "holi_star", "fusion": "eq5"}


@dataclass
class RowResult:
    """Per-seed reports of one row plus their seed means and deltas to the reference."""
    label: str
    overrides: Dict[str, Any]
    per_seed: Dict[int, Dict[str, MetricReport]] = field(default_factory=dict)
    mean: Dict[str, Dict[str, float]] = field(default_factory=dict)
    delta: Dict[str, Dict[str, float]] = field(default_factory=dict)
    final_losses: Dict[int, float] = field(default_factory=dict)


@dataclass
class AblationReport:
    preset: str
    seeds: List[int]
    reference: str
    splits: List[str]
    rows: List[RowResult] = field(default_factory=list)
    verdict: Dict[str, bool] = field(default_factory=dict)

    def row(self, label: str) -> RowResult:
        for result in self.rows:
            if result.label == label:
                return result
        raise KeyError(label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "preset": self.preset,
            "seeds": self.seeds,
            "reference": self.reference,
            "splits": self.splits,
            "verdict": self.verdict,
            "rows": [
                {
                    "label": r.label,
                    "overrides": dict(r.overrides),
                    "mean": r.mean,
                    "delta": r.delta,
                    "final_losses": {str(s): v for s, v in r.final_losses.items()},
                    "per_seed": {
                        str(seed): {name: report.to_dict() for name, report in reports.items()}
                        for seed, reports in r.per_seed.items()
                    },
                }
                for r in self.rows
            ],
        }

    def to_text(self) -> str:
        """Row x metric table of seed means, signed deltas and the per-seed overall IoU."""
        columns = [(split, key) for split in self.splits for key in ("overall_iou", "mean_iou")]
        width = max(len(r.label) for r in self.rows) + 2
        header = "row".ljust(width) + "".join(f"{split}.{key}".rjust(24) for split, key in columns)
        lines = [f"# preset={self.preset} reference={self.reference} seeds={','.join(map(str, self.seeds))}",
                 header]
        for result in self.rows:
            cells = []
            for split, key in columns:
                value = result.mean.get(split, {}).get(key)
                delta = result.delta.get(split, {}).get(key)
                cells.append("n/a".rjust(24) if value is None else f"{value:.4f} ({delta:+.4f})".rjust(24))
            lines.append(result.label.ljust(width) + "".join(cells))
        lines.append("")
        for result in self.rows:
            seeds = ", ".join(
                f"{seed}:{reports['all'].overall_iou:.4f}" for seed, reports in result.per_seed.items()
                if "all" in reports
            )
            lines.append(f"{result.label}.per_seed.all.overall_iou = {seeds}")
        for check, passed in self.verdict.items():
            lines.append(f"verdict.{check} = {'pass' if passed else 'fail'}")
        return "\n".join(lines) + "\n"


def seed_means(per_seed: Mapping[int, Mapping[str, MetricReport]], splits: Sequence[str]) -> Dict[str, Dict[str, float]]:
    """Seed-mean overall IoU, mean IoU and Pre@X per split (splits missing everywhere are omitted)."""
    means: Dict[str, Dict[str, float]] = {}
    for split in splits:
        reports = [r[split] for r in per_seed.values() if split in r]
        if not reports:
            continue
        values = {
            "overall_iou": math.fsum(r.overall_iou for r in reports) / len(reports),
            "mean_iou": math.fsum(r.mean_iou for r in reports) / len(reports),
        }
        for threshold in sorted(reports[0].pre_at):
            values[f"pre@{threshold:.1f}"] = math.fsum(r.pre_at[threshold] for r in reports) / len(reports)
        means[split] = values
    return means


def signed_deltas(row: Dict[str, Dict[str, float]], reference: Dict[str, Dict[str, float]]) -> Dict[str, Dict[str, float]]:
    return {
        split: {key: value - reference[split][key] for key, value in values.items() if key in reference[split]}
        for split, values in row.items() if split in reference
    }


def directional_verdict(report: AblationReport) -> Dict[str, bool]:
    """Expected ordering of the module-composition rows.

    guided parallel >= holistic baseline on overall IoU (all), strictly
    higher mean IoU on the small-scale split, and serial not above the
    unguided parallel row on overall IoU (all).
    """
    labels = {r.label for r in report.rows}
    verdict: Dict[str, bool] = {}
    if any("all" not in r.mean for r in report.rows):
        return verdict
    if {"parallel_guided", "holi_star"} <= labels:
        guided = report.row("parallel_guided").mean
        baseline = report.row("holi_star").mean
        verdict["parallel_guided_overall_iou_ge_holi_star"] = (
            guided["all"]["overall_iou"] >= baseline["all"]["overall_iou"]
        )
        if "small_scale" in guided and "small_scale" in baseline:
            verdict["parallel_guided_small_mean_iou_gt_holi_star"] = (
                guided["small_scale"]["mean_iou"] > baseline["small_scale"]["mean_iou"]
            )
    if {"parallel_star", "serial"} <= labels:
        verdict["serial_overall_iou_le_parallel_star"] = (
            report.row("serial").mean["all"]["overall_iou"]
            <= report.row("parallel_star").mean["all"]["overall_iou"]
        )
    return verdict


def ablate(
    base: TrainConfig,
    rows: Sequence[AblationRow],
    seeds: Sequence[int],
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    splits: Sequence[str] = DEFAULT_SPLITS,
    reference: Optional[str] = None,
    preset: str = "custom",
    output_dir: Optional[Union[str, Path]] = None,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
) -> AblationReport:
    """Train every row for every seed on the same data and compare them.

    Args:
        base: Configuration every row starts from
        rows: Configurations to compare (at least two)
        seeds: Seeds each row is trained with
        train_set: Shared training samples
        val_set: Shared validation samples the rows are scored on
        splits: Evaluation splits reported per row
        reference: Row label deltas are taken against (default: first row)
        preset: Name recorded in the report
        output_dir: Where ablation.txt/ablation.json go (None: not written)
        thresholds: Pre@X thresholds

    Returns:
        AblationReport

    Raises:
        ConfigurationError: On fewer than two rows, no seeds, duplicate labels or
            an unknown reference
    """
    if len(rows) < 2:
        raise ConfigurationError(f"An ablation needs at least two rows, got {len(rows)}")
    if not seeds:
        raise ConfigurationError("An ablation needs at least one seed")
    labels = [row.label for row in rows]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"Duplicate ablation row labels: {labels}")
    reference = reference or labels[0]
    if reference not in labels:
        raise ConfigurationError(f"Reference row '{reference}' is not in {labels}")

    # Validate every combination before any training starts
    configs = {
        (row.label, seed): replace(base, **dict(row.overrides), seed=seed)
        for row in rows for seed in seeds
    }
    for config in configs.values():
        config.validate()

    report = AblationReport(preset=preset, seeds=list(seeds), reference=reference, splits=list(splits))
    for row in rows:
        result = RowResult(label=row.label, overrides=dict(row.overrides))
        for seed in seeds:
            logger.info(f"Ablation row {row.label}, seed {seed}")
            trainer = Trainer(configs[(row.label, seed)], train_set, val_set, thresholds=thresholds,
                              write_artifacts=False)
            training = trainer.fit()
            result.final_losses[seed] = training.losses[-1]
            result.per_seed[seed] = Evaluator(trainer.model, thresholds).evaluate(val_set, splits)
        result.mean = seed_means(result.per_seed, splits)
        report.rows.append(result)

    reference_mean = report.row(reference).mean
    for result in report.rows:
        result.delta = signed_deltas(result.mean, reference_mean)
    report.verdict = directional_verdict(report)
    for check, passed in report.verdict.items():
        logger.info(f"{check}: {'pass' if passed else 'fail'}")

    if output_dir is not None:
        write_ablation(report, output_dir)
    return report


def write_ablation(report: AblationReport, directory: Union[str, Path]) -> Dict[str, Path]:
    directory = ensure_dir(directory)
    text_path = directory / ABLATION_TEXT_FILE
    text_path.write_text(report.to_text())
    json_path = save_json(directory / ABLATION_JSON_FILE, report.to_dict())
    logger.info(f"Wrote ablation report to {directory}")
    return {"text": text_path, "json": json_path}


def preset_rows(name: str) -> Tuple[Tuple[AblationRow, ...], str]:
    """Rows and reference label of a named preset.

    Raises:
        ConfigurationError: On an unknown preset
    """
    if name not in PRESETS:
        raise ConfigurationError(f"Unknown ablation preset: {name} (expected one of {tuple(PRESETS)})")
    return PRESETS[name], REFERENCE_ROWS[name]
