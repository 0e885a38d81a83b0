"""Flat training configuration assembled from defaults, config.json, a key=value file and CLI flags."""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import jsonschema

from ai.model import ModelConfig
from config.settings import Settings
from core.errors import ConfigurationError

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CPRN_OUTPUT_ROOT"

MODEL_FIELDS = (
    "image_size", "channels", "word_dim", "stages", "max_tokens", "variant", "fusion", "ffn", "ape",
    "ffn_hidden", "dropout", "zero_init_ffn", "renormalize_guidance", "decoder_wiring", "upsample_logits",
)


@dataclass
class TrainConfig:
    """Every knob of a training run."""
    # Architecture
    image_size: int = 64
    channels: int = 32
    word_dim: int = 32
    stages: int = 4
    max_tokens: int = 20
    variant: str = "parallel_guided"
    fusion: str = "eq5"
    ffn: bool = True
    ape: bool = True
    ffn_hidden: int = 64
    dropout: float = 0.1
    zero_init_ffn: bool = True
    renormalize_guidance: bool = False
    decoder_wiring: str = "consume_all"
    upsample_logits: bool = False
    # Optimization
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0
    betas: List[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    poly_power: float = 0.9
    precision: str = "float64"
    workers: int = 1
    dropout_seed: int = 0
    log_every: int = 10
    dataset: str = "data/synth"
    output_dir: str = "runs/default"

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "TrainConfig":
        """Build from a flat mapping; unknown keys are rejected."""
        unknown = sorted(set(values) - set(cls.field_names()))
        if unknown:
            raise ConfigurationError(f"Unknown configuration keys: {unknown}")
        config = cls()
        for key, value in values.items():
            setattr(config, key, list(value) if key == "betas" else value)
        return config

    @classmethod
    def from_sources(
        cls,
        settings: Optional[Settings] = None,
        kv_file: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        full_scale: bool = False,
    ) -> "TrainConfig":
        """Defaults, then config.json 'model' + 'train', then a key=value file, then overrides.

        With full_scale the config.json 'full_scale' section is layered over
        'model' and 'train', below the key=value file.

        Raises:
            ConfigurationError: On unknown keys or schema violations
        """
        merged: Dict[str, Any] = {}
        if settings is not None:
            merged.update(settings.model)
            merged.update(settings.train)
        if full_scale:
            if settings is None or not settings.full_scale:
                raise ConfigurationError("No full_scale section to apply")
            merged.update(settings.full_scale)
        if kv_file is not None:
            merged.update(read_kv_file(kv_file))
        if overrides:
            merged.update({k: v for k, v in overrides.items() if v is not None})
        config = cls.from_dict(merged)
        config.validate(settings)
        return config

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def validate(self, settings: Optional[Settings] = None) -> None:
        """Check every field against the 'model' and 'train' schema sections.

        Raises:
            ConfigurationError: On the first violation
        """
        if settings is None or not settings.schema:
            settings = Settings()
        model_schema = settings.section_schema("model")
        train_schema = settings.section_schema("train")
        schema = {
            "type": "object",
            "additionalProperties": False,
            "properties": {**model_schema.get("properties", {}), **train_schema.get("properties", {})},
        }
        try:
            jsonschema.validate(self.to_dict(), schema)
        except jsonschema.ValidationError as exc:
            location = ".".join(str(p) for p in exc.absolute_path) or "config"
            raise ConfigurationError(f"Invalid value for {location}: {exc.message}") from exc
        stride = 4 * 2 ** (self.stages - 1)
        if self.image_size % stride:
            raise ConfigurationError(
                f"image_size {self.image_size} must be divisible by {stride} for {self.stages} stages"
            )

    def model_config(self) -> ModelConfig:
        values = {name: getattr(self, name) for name in MODEL_FIELDS}
        return ModelConfig(seed=self.seed, **values)

    def resolved_output_dir(self) -> Path:
        """output_dir, prefixed by $CPRN_OUTPUT_ROOT when relative."""
        path = Path(self.output_dir)
        root = os.getenv(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            return Path(root) / path
        return path

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Run configuration not found: {path}")
        try:
            values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"Invalid run configuration {path}: {exc}") from exc
        return cls.from_dict(values)


def parse_value(text: str) -> Any:
    """JSON literal if it parses, comma list of numbers, else the raw string."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        try:
            return [float(part) for part in text.split(",")]
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def read_kv_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse `key = value` lines; blank lines and '#' comments are skipped.

    Raises:
        ConfigurationError: On a missing file or a malformed line
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Config file not found: {path}")
    values: Dict[str, Any] = {}
    for number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{number}: expected 'key = value', got '{raw.strip()}'")
        key, value = line.split("=", 1)
        values[key.strip()] = parse_value(value)
    logger.debug(f"Read {len(values)} keys from {path}")
    return values
