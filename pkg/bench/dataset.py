"""On-disk synthetic benchmark and evaluation splits.

Layout of a dataset directory:

    dataset.json              header: {"format": "cprn-synth", "version": 1, ...}
    <split>/images/000000.ppm binary PPM (P6), 8-bit RGB
    <split>/masks/000000.pgm  binary PGM (P5), 0 background / 255 referent
    <split>/manifest.jsonl    one JSON record per sample

Manifest records carry sample_id, tokens, text, referent, mask_ratio,
token_length, overlapping and the scene objects.
"""

import json
import logging
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Union

import numpy as np
from PIL import Image

from bench.scenes import COMPLEX_TOKENS, SMALL_RATIO, Sample, Scene, SceneConfig, SceneGenerator, SceneObject
from core.errors import DatasetError
from sensors.language import Vocabulary
from utils.helpers import ensure_dir

logger = logging.getLogger(__name__)

DATASET_FORMAT = "cprn-synth"
DATASET_VERSION = 1
HEADER_FILE = "dataset.json"
MANIFEST_FILE = "manifest.jsonl"

SPLITS: Dict[str, Callable[[Sample], bool]] = {
    "all": lambda s: True,
    "small_scale": lambda s: s.mask_ratio < SMALL_RATIO,
    "rest_small": lambda s: s.mask_ratio >= SMALL_RATIO,
    "complex_language": lambda s: s.token_length > COMPLEX_TOKENS,
    "rest_complex": lambda s: s.token_length <= COMPLEX_TOKENS,
}


def select_split(samples: Sequence[Sample], name: str) -> List[Sample]:
    """Samples belonging to an evaluation split.

    Raises:
        DatasetError: On unknown split name
    """
    if name not in SPLITS:
        raise DatasetError(f"Unknown split: {name} (expected one of {tuple(SPLITS)})")
    return [s for s in samples if SPLITS[name](s)]


class SyntheticDataset:
    """Ordered sample collection for one partition (train or val)."""

    def __init__(self, samples: Sequence[Sample], name: str = "train"):
        self.samples = list(samples)
        self.name = name

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    def split(self, name: str) -> List[Sample]:
        return select_split(self.samples, name)

    def save(self, root: Union[str, Path]) -> Path:
        """Write images, masks and manifest under root/<name>/."""
        directory = Path(root) / self.name
        images = ensure_dir(directory / "images")
        masks = ensure_dir(directory / "masks")
        lines = []
        for sample in self.samples:
            stem = f"{sample.sample_id:06d}"
            Image.fromarray(sample.scene.pixels).save(images / f"{stem}.ppm", format="PPM")
            Image.fromarray(sample.mask.astype(np.uint8) * 255).save(masks / f"{stem}.pgm", format="PPM")
            lines.append(json.dumps(manifest_record(sample), sort_keys=True))
        (directory / MANIFEST_FILE).write_text("\n".join(lines) + "\n")
        logger.info(f"Wrote {len(self.samples)} samples to {directory}")
        return directory

    @classmethod
    def load(cls, root: Union[str, Path], name: str, vocabulary: Optional[Vocabulary] = None) -> "SyntheticDataset":
        """Read one partition written by save().

        Raises:
            DatasetError: If the directory, header or manifest is missing or invalid
        """
        root = Path(root)
        read_header(root)
        directory = root / name
        manifest = directory / MANIFEST_FILE
        if not manifest.exists():
            raise DatasetError(f"Missing manifest for partition '{name}': {manifest}")
        vocabulary = vocabulary or Vocabulary()

        samples = []
        for number, line in enumerate(manifest.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                samples.append(_sample_from_record(directory, record, vocabulary))
            except (KeyError, ValueError, OSError) as exc:
                raise DatasetError(f"{manifest}:{number}: invalid record ({exc})") from exc
        logger.info(f"Loaded {len(samples)} samples from {directory}")
        return cls(samples, name=name)


def manifest_record(sample: Sample) -> Dict:
    return {
        "sample_id": sample.sample_id,
        "tokens": sample.tokens,
        "text": sample.text,
        "referent": sample.referent,
        "mask_ratio": sample.mask_ratio,
        "token_length": sample.token_length,
        "overlapping": sample.scene.overlapping,
        "objects": [o.to_dict() for o in sample.scene.objects],
    }


def _sample_from_record(directory: Path, record: Dict, vocabulary: Vocabulary) -> Sample:
    stem = f"{int(record['sample_id']):06d}"
    with Image.open(directory / "images" / f"{stem}.ppm") as image:
        pixels = np.asarray(image.convert("RGB"), dtype=np.uint8).copy()
    with Image.open(directory / "masks" / f"{stem}.pgm") as mask_image:
        mask = np.asarray(mask_image) > 127
    objects = [SceneObject.from_dict(o) for o in record["objects"]]
    tokens = [int(t) for t in record["tokens"]]
    if any(t >= len(vocabulary) for t in tokens):
        raise ValueError(f"token id outside vocabulary in sample {stem}")
    scene = Scene(pixels=pixels, objects=objects, masks=[], overlapping=bool(record.get("overlapping", False)))
    return Sample(sample_id=int(record["sample_id"]), scene=scene, tokens=tokens, text=record["text"],
                  referent=int(record["referent"]), mask=mask)


def write_header(root: Union[str, Path], seed: int, config: SceneConfig, counts: Dict[str, int],
                 vocabulary: Vocabulary) -> Path:
    path = ensure_dir(root) / HEADER_FILE
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "seed": seed,
        "image_size": config.image_size,
        "partitions": counts,
        "scene": {
            "min_objects": config.min_objects,
            "max_objects": config.max_objects,
            "small_fraction": config.small_fraction,
            "complex_fraction": config.complex_fraction,
        },
        "vocabulary": list(vocabulary.words),
        "thresholds": {"small_ratio": SMALL_RATIO, "complex_tokens": COMPLEX_TOKENS},
    }
    path.write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_header(root: Union[str, Path]) -> Dict:
    """Load and check the dataset header.

    Raises:
        DatasetError: If missing, unreadable or of another format/version
    """
    path = Path(root) / HEADER_FILE
    if not path.exists():
        raise DatasetError(f"Not a dataset directory (no {HEADER_FILE}): {root}")
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"Invalid dataset header {path}: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise DatasetError(f"Unknown dataset format '{header.get('format')}' in {path}")
    if header.get("version") != DATASET_VERSION:
        raise DatasetError(f"Unsupported dataset version {header.get('version')} in {path}")
    return header


def generate_benchmark(root: Union[str, Path], seed: int, train_count: int, val_count: int,
                       config: Optional[SceneConfig] = None, workers: int = 1) -> Dict[str, SyntheticDataset]:
    """Generate and write train and val partitions plus the header."""
    generator = SceneGenerator(config)
    partitions = {
        "train": SyntheticDataset(generator.generate(seed, train_count, stream=0, workers=workers), "train"),
        "val": SyntheticDataset(generator.generate(seed, val_count, stream=1, workers=workers), "val"),
    }
    for dataset in partitions.values():
        dataset.save(root)
    write_header(root, seed, generator.config, {k: len(v) for k, v in partitions.items()}, generator.vocabulary)
    return partitions
