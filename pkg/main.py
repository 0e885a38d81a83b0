"""Entry point for the CPRN referring-segmentation workbench.

Verbs: generate, train, evaluate, ablate, export-masks.
Exit codes: 0 ok, 1 invalid configuration or data, 2 runtime failure.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import jsonschema

from ai.metrics import DEFAULT_THRESHOLDS
from bench.dataset import SPLITS, SyntheticDataset, generate_benchmark
from bench.scenes import SceneConfig
from config.settings import Settings
from config.train_config import TrainConfig
from core.errors import ConfigurationError, DatasetError
from training.ablation import PRESETS, ablate, preset_rows
from training.evaluator import RUN_CONFIG_FILE, Evaluator, evaluate, export_masks, load_model
from training.trainer import train

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2
LOG_LEVEL_ENV = "CPRN_LOG_LEVEL"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class WorkbenchArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that reports misuse with the validation exit code."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _add_train_config_flags(parser: argparse.ArgumentParser) -> None:
    """One --flag per TrainConfig field; unset flags leave lower-precedence sources alone."""
    parser.add_argument("--config", dest="kv_file", help="key = value file overriding config.json")
    parser.add_argument("--full-scale", action="store_true",
                        help="Apply the config.json full_scale section before the key = value file")
    for spec in fields(TrainConfig):
        flag = f"--{spec.name.replace('_', '-')}"
        if spec.type in (bool, "bool"):
            parser.add_argument(flag, dest=spec.name, action=argparse.BooleanOptionalAction, default=None)
        elif spec.name == "betas":
            parser.add_argument(flag, dest=spec.name, type=float, nargs=2, default=None)
        else:
            kind = {int: int, float: float, "int": int, "float": float}.get(spec.type, str)
            parser.add_argument(flag, dest=spec.name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = WorkbenchArgumentParser(prog="cprn", description="CPRN referring-segmentation workbench")
    parser.add_argument("--settings", help="Path to config.json (default: config/config.json)")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Write the synthetic benchmark")
    generate.add_argument("--root", help="Dataset directory (default: data.root)")
    generate.add_argument("--seed", type=int)
    generate.add_argument("--train-count", type=int)
    generate.add_argument("--val-count", type=int)
    generate.add_argument("--image-size", type=int)
    generate.add_argument("--small-fraction", type=float)
    generate.add_argument("--complex-fraction", type=float)
    generate.add_argument("--workers", type=int)

    train_cmd = commands.add_parser("train", help="Train a model on a generated dataset")
    _add_train_config_flags(train_cmd)
    train_cmd.add_argument("--gradcheck", action="store_true", help="Finite-difference check before training")

    evaluate_cmd = commands.add_parser("evaluate", help="Evaluate a checkpoint per split")
    evaluate_cmd.add_argument("--checkpoint", required=True)
    evaluate_cmd.add_argument("--dataset", help="Dataset directory (default: the run's dataset)")
    evaluate_cmd.add_argument("--partition", default="val", choices=["train", "val"])
    evaluate_cmd.add_argument("--splits", nargs="+", choices=list(SPLITS))
    evaluate_cmd.add_argument("--output", help="Metrics directory (default: checkpoint directory)")
    evaluate_cmd.add_argument("--masks-dir", help="Also write predicted masks as PGM here")

    ablate_cmd = commands.add_parser("ablate", help="Train and compare a preset configuration matrix")
    _add_train_config_flags(ablate_cmd)
    ablate_cmd.add_argument("--preset", default="composition", choices=list(PRESETS))
    ablate_cmd.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ablate_cmd.add_argument("--splits", nargs="+", choices=list(SPLITS), default=["all", "small_scale"])
    ablate_cmd.add_argument("--output", help="Report directory (default: output_dir)")

    masks_cmd = commands.add_parser("export-masks", help="Write predicted masks as PGM")
    masks_cmd.add_argument("--checkpoint", required=True)
    masks_cmd.add_argument("--dataset", help="Dataset directory (default: the run's dataset)")
    masks_cmd.add_argument("--partition", default="val", choices=["train", "val"])
    masks_cmd.add_argument("--output", required=True, help="Mask directory")
    return parser


class CPRNWorkbench:
    """Runs one CLI verb against the loaded settings."""

    def __init__(self, settings_path: Optional[str] = None, log_level: Optional[str] = None):
        """Initialize the workbench.

        Args:
            settings_path: Path to config.json (schema expected next to it)
            log_level: Overrides logging.level and $CPRN_LOG_LEVEL
        """
        self._setup_logging()
        self.logger = logging.getLogger(__name__)
        self.settings = self._load_settings(settings_path)
        self._configure_logging(log_level)

    def _setup_logging(self) -> None:
        """Basic logging setup, refined once settings are loaded."""
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)

    def _load_settings(self, settings_path: Optional[str]) -> Settings:
        if settings_path is None:
            return Settings()
        path = Path(settings_path)
        return Settings(config_path=str(path), schema_path=str(path.parent / "config_schema.json"))

    def _configure_logging(self, log_level: Optional[str]) -> None:
        logging_config = self.settings.logging_config
        level_name = log_level or os.getenv(LOG_LEVEL_ENV) or logging_config.get("level", "INFO")
        level = getattr(logging, level_name.upper(), None)
        if not isinstance(level, int):
            raise ConfigurationError(f"Unknown logging level: {level_name}")
        logging.getLogger().setLevel(level)

        file_path = logging_config.get("file_path")
        if file_path:
            Path(file_path).parent.mkdir(parents=True, exist_ok=True)
            handler = logging.FileHandler(file_path)
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            logging.getLogger().addHandler(handler)
        self.logger.debug(f"Logging level set to {logging.getLevelName(level)}")

    def _train_config(self, args: argparse.Namespace) -> TrainConfig:
        overrides = {spec.name: getattr(args, spec.name, None) for spec in fields(TrainConfig)}
        return TrainConfig.from_sources(self.settings, args.kv_file, overrides, full_scale=args.full_scale)

    def _run_dataset(self, args: argparse.Namespace) -> str:
        if args.dataset:
            return args.dataset
        return TrainConfig.load(Path(args.checkpoint).parent / RUN_CONFIG_FILE).dataset

    def generate(self, args: argparse.Namespace) -> Dict[str, Any]:
        data = self.settings.data
        scene = SceneConfig(
            image_size=args.image_size if args.image_size is not None else data.get("image_size", 64),
            min_objects=data.get("min_objects", 3),
            max_objects=data.get("max_objects", 5),
            small_fraction=args.small_fraction if args.small_fraction is not None else data.get("small_fraction", 0.3),
            complex_fraction=(args.complex_fraction if args.complex_fraction is not None
                              else data.get("complex_fraction", 0.3)),
        )
        scene.validate()
        root = args.root or data.get("root", "data/synth")
        partitions = generate_benchmark(
            root,
            seed=args.seed if args.seed is not None else data.get("seed", 0),
            train_count=args.train_count if args.train_count is not None else data.get("train_count", 1000),
            val_count=args.val_count if args.val_count is not None else data.get("val_count", 200),
            config=scene,
            workers=args.workers if args.workers is not None else data.get("workers", 1),
        )
        counts = {name: len(dataset) for name, dataset in partitions.items()}
        for name, dataset in partitions.items():
            subsets = {split: len(dataset.split(split)) for split in ("small_scale", "complex_language")}
            self.logger.info(f"{name}: {len(dataset)} samples, subsets {subsets}")
        return {"root": str(root), "partitions": counts}

    def train(self, args: argparse.Namespace) -> Dict[str, Any]:
        config = self._train_config(args)
        result = train(config, gradcheck=args.gradcheck)
        return {
            "output_dir": str(result.output_dir),
            "best_epoch": result.best_epoch,
            "best_overall_iou": result.best_overall_iou,
            "final_loss": result.losses[-1],
        }

    def evaluate(self, args: argparse.Namespace) -> Dict[str, Any]:
        reports = evaluate(
            args.checkpoint,
            self._run_dataset(args),
            partition=args.partition,
            splits=args.splits or self.settings.get("evaluation.splits", ["all"]),
            output_dir=args.output,
            masks_dir=args.masks_dir,
            thresholds=self.settings.get("evaluation.thresholds", DEFAULT_THRESHOLDS),
            binarize_at=self.settings.get("evaluation.binarize_at", 0.5),
        )
        return {name: report.to_dict() for name, report in reports.items()}

    def ablate(self, args: argparse.Namespace) -> Dict[str, Any]:
        base = self._train_config(args)
        rows, reference = preset_rows(args.preset)
        train_set = SyntheticDataset.load(base.dataset, "train")
        val_set = SyntheticDataset.load(base.dataset, "val")
        output = Path(args.output) if args.output else base.resolved_output_dir() / f"ablation-{args.preset}"
        report = ablate(base, rows, args.seeds, train_set.samples, val_set.samples, splits=args.splits,
                        reference=reference, preset=args.preset, output_dir=output,
                        thresholds=self.settings.get("evaluation.thresholds", DEFAULT_THRESHOLDS))
        return {"output_dir": str(output), "verdict": report.verdict}

    def export_masks(self, args: argparse.Namespace) -> Dict[str, Any]:
        model = load_model(args.checkpoint)
        dataset = SyntheticDataset.load(self._run_dataset(args), args.partition)
        binarize_at = self.settings.get("evaluation.binarize_at", 0.5)
        records = Evaluator(model, binarize_at=binarize_at).score(dataset.samples)
        paths = export_masks(records, args.output)
        return {"masks": len(paths), "output_dir": args.output}

    def run(self, args: argparse.Namespace) -> Dict[str, Any]:
        handlers = {
            "generate": self.generate,
            "train": self.train,
            "evaluate": self.evaluate,
            "ablate": self.ablate,
            "export-masks": self.export_masks,
        }
        return handlers[args.command](args)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID

    logger = logging.getLogger(__name__)
    try:
        workbench = CPRNWorkbench(args.settings, args.log_level)
        summary = workbench.run(args)
    except (ConfigurationError, DatasetError, jsonschema.ValidationError,
            FileNotFoundError, json.JSONDecodeError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVALID
    except Exception as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return EXIT_FAILURE

    print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
