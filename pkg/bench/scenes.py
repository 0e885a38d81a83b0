"""Synthetic referring scenes: shape rendering, expression grammar and resolver.

Every scene holds 3-5 colored shapes, at least two of which share the
referent's shape. Expressions come from a small grammar:

    expression := np [ rel np | "that" "is" rel np { "and" "is" rel np } ]
    np         := "the" [superlative] [size] [color] shape
    rel        := "left" "of" | "right" "of" | "above" | "below"

Relations compare object centers and are existential over landmarks;
a superlative keeps the extreme objects among the attribute matches.
resolve() is the oracle used to keep only expressions that pick out
exactly one object.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from PIL import Image, ImageDraw

from core.errors import ConfigurationError, DatasetError
from sensors.language import COLORS, RELATIONS, SHAPES, SIZES, SUPERLATIVES, Vocabulary

logger = logging.getLogger(__name__)

SMALL_RATIO = 0.03
COMPLEX_TOKENS = 18

BACKGROUND = (32, 32, 32)
PALETTE: Dict[str, Tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (50, 80, 225),
    "yellow": (230, 210, 40),
}
# Half-extent ranges as fractions of the image side
SIZE_RANGES: Dict[str, Tuple[float, float]] = {
    "small": (0.05, 0.075),
    "large": (0.14, 0.18),
}
PLACEMENT_TRIES = 200


@dataclass
class SceneConfig:
    """Generator knobs."""
    image_size: int = 64
    min_objects: int = 3
    max_objects: int = 5
    small_fraction: float = 0.3
    complex_fraction: float = 0.3
    max_attempts: int = 100

    def validate(self) -> None:
        if self.image_size < 16:
            raise ConfigurationError(f"image_size must be at least 16, got {self.image_size}")
        if not 3 <= self.min_objects <= self.max_objects:
            raise ConfigurationError(
                f"Object count range must satisfy 3 <= min <= max, got {self.min_objects}..{self.max_objects}"
            )
        for name in ("small_fraction", "complex_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {value}")


@dataclass
class SceneObject:
    object_id: int
    shape: str
    color: str
    size: str
    center: Tuple[float, float]  # (x, y) in pixels, y grows downward
    extent: float  # half-size in pixels

    def box(self) -> Tuple[float, float, float, float]:
        x, y = self.center
        return (x - self.extent, y - self.extent, x + self.extent, y + self.extent)

    def to_dict(self) -> Dict:
        return {
            "object_id": self.object_id,
            "shape": self.shape,
            "color": self.color,
            "size": self.size,
            "center": [self.center[0], self.center[1]],
            "extent": self.extent,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SceneObject":
        return cls(object_id=int(data["object_id"]), shape=data["shape"], color=data["color"],
                   size=data["size"], center=(float(data["center"][0]), float(data["center"][1])),
                   extent=float(data["extent"]))


@dataclass
class Scene:
    pixels: np.ndarray  # H x W x 3 uint8
    objects: List[SceneObject]
    masks: List[np.ndarray]  # visible pixels per object, bool H x W
    overlapping: bool = False

    @property
    def image(self) -> np.ndarray:
        """Float image in [0, 1]."""
        return self.pixels.astype(np.float64) / 255.0


@dataclass
class Sample:
    """One scene with an expression and its referent mask."""
    sample_id: int
    scene: Scene
    tokens: List[int]
    text: str
    referent: int
    mask: np.ndarray  # bool H x W

    @property
    def mask_ratio(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size

    @property
    def token_length(self) -> int:
        return len(self.tokens)

    @property
    def image(self) -> np.ndarray:
        return self.scene.image

    @property
    def is_small(self) -> bool:
        return self.mask_ratio < SMALL_RATIO

    @property
    def is_complex(self) -> bool:
        return self.token_length > COMPLEX_TOKENS


# Rendering

def _draw_shape(draw: ImageDraw.ImageDraw, obj: SceneObject, fill) -> None:
    x0, y0, x1, y1 = obj.box()
    if obj.shape == "circle":
        draw.ellipse((x0, y0, x1, y1), fill=fill)
    elif obj.shape == "square":
        draw.rectangle((x0, y0, x1, y1), fill=fill)
    elif obj.shape == "triangle":
        x, _ = obj.center
        draw.polygon([(x, y0), (x1, y1), (x0, y1)], fill=fill)
    else:
        raise ConfigurationError(f"Unknown shape: {obj.shape}")


def render_scene(objects: Sequence[SceneObject], image_size: int) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Draw objects in order; later objects occlude earlier ones.

    Returns:
        (uint8 H x W x 3 pixels, visible bool mask per object)
    """
    canvas = Image.new("RGB", (image_size, image_size), BACKGROUND)
    draw = ImageDraw.Draw(canvas)
    full_masks = []
    for obj in objects:
        _draw_shape(draw, obj, PALETTE[obj.color])
        layer = Image.new("L", (image_size, image_size), 0)
        _draw_shape(ImageDraw.Draw(layer), obj, 255)
        full_masks.append(np.asarray(layer) > 0)

    visible = []
    for index, mask in enumerate(full_masks):
        covered = np.zeros_like(mask)
        for later in full_masks[index + 1:]:
            covered |= later
        visible.append(mask & ~covered)
    return np.asarray(canvas, dtype=np.uint8).copy(), visible


# Resolver

@dataclass
class NounPhrase:
    shape: str
    color: Optional[str] = None
    size: Optional[str] = None
    superlative: Optional[str] = None

    def words(self) -> List[str]:
        parts = ["the"]
        parts += [w for w in (self.superlative, self.size, self.color) if w]
        return parts + [self.shape]


def relation_words(relation: str) -> List[str]:
    return [relation, "of"] if relation in ("left", "right") else [relation]


def relation_holds(relation: str, obj: SceneObject, landmark: SceneObject) -> bool:
    (x_o, y_o), (x_l, y_l) = obj.center, landmark.center
    if relation == "left":
        return x_o < x_l
    if relation == "right":
        return x_o > x_l
    if relation == "above":
        return y_o < y_l
    if relation == "below":
        return y_o > y_l
    raise ConfigurationError(f"Unknown relation: {relation}")


class _Parser:
    """Recursive-descent parser over the expression grammar."""

    def __init__(self, words: Sequence[str]):
        self.words = list(words)
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.words[self.pos] if self.pos < len(self.words) else None

    def expect(self, word: str) -> None:
        if self.peek() != word:
            raise DatasetError(f"Expected '{word}' at position {self.pos} in '{' '.join(self.words)}'")
        self.pos += 1

    def take(self, options: Sequence[str]) -> Optional[str]:
        if self.peek() in options:
            word = self.words[self.pos]
            self.pos += 1
            return word
        return None

    def noun_phrase(self) -> NounPhrase:
        self.expect("the")
        superlative = self.take(SUPERLATIVES)
        size = self.take(SIZES)
        color = self.take(COLORS)
        shape = self.take(SHAPES)
        if shape is None:
            raise DatasetError(f"Expected a shape at position {self.pos} in '{' '.join(self.words)}'")
        return NounPhrase(shape=shape, color=color, size=size, superlative=superlative)

    def relation(self) -> str:
        relation = self.take(RELATIONS)
        if relation is None:
            raise DatasetError(f"Expected a relation at position {self.pos} in '{' '.join(self.words)}'")
        if relation in ("left", "right"):
            self.expect("of")
        return relation

    def expression(self) -> Tuple[NounPhrase, List[Tuple[str, NounPhrase]]]:
        head = self.noun_phrase()
        clauses: List[Tuple[str, NounPhrase]] = []
        if self.peek() in RELATIONS:
            clauses.append((self.relation(), self.noun_phrase()))
        elif self.peek() == "that":
            self.expect("that")
            self.expect("is")
            clauses.append((self.relation(), self.noun_phrase()))
            while self.peek() == "and":
                self.expect("and")
                self.expect("is")
                clauses.append((self.relation(), self.noun_phrase()))
        if self.peek() is not None:
            raise DatasetError(f"Unexpected '{self.peek()}' at position {self.pos} in '{' '.join(self.words)}'")
        return head, clauses


_EXTREMES = {
    "leftmost": (0, min),
    "rightmost": (0, max),
    "topmost": (1, min),
    "bottommost": (1, max),
}


def match_phrase(phrase: NounPhrase, objects: Sequence[SceneObject]) -> Set[int]:
    """Ids of objects the noun phrase describes."""
    matches = [o for o in objects
               if o.shape == phrase.shape
               and (phrase.color is None or o.color == phrase.color)
               and (phrase.size is None or o.size == phrase.size)]
    if phrase.superlative and matches:
        axis, pick = _EXTREMES[phrase.superlative]
        best = pick(o.center[axis] for o in matches)
        matches = [o for o in matches if o.center[axis] == best]
    return {o.object_id for o in matches}


def resolve(words: Sequence[str], objects: Sequence[SceneObject]) -> Set[int]:
    """Ids of every object the expression can refer to.

    Raises:
        DatasetError: If the words do not parse
    """
    head, clauses = _Parser(words).expression()
    by_id = {o.object_id: o for o in objects}
    candidates = match_phrase(head, objects)
    for relation, landmark_phrase in clauses:
        landmarks = match_phrase(landmark_phrase, objects)
        candidates = {
            c for c in candidates
            if any(l != c and relation_holds(relation, by_id[c], by_id[l]) for l in landmarks)
        }
    return candidates


# Generation

class SceneGenerator:
    """Deterministic per-sample scene and expression generator."""

    def __init__(self, config: Optional[SceneConfig] = None, vocabulary: Optional[Vocabulary] = None):
        self.config = config or SceneConfig()
        self.config.validate()
        self.vocabulary = vocabulary or Vocabulary()
        self.logger = logging.getLogger(__name__)

    def _random_object(self, rng: np.random.Generator, object_id: int, shape: Optional[str] = None,
                       size: Optional[str] = None, color: Optional[str] = None) -> SceneObject:
        size = size or SIZES[rng.integers(len(SIZES))]
        low, high = SIZE_RANGES[size]
        return SceneObject(
            object_id=object_id,
            shape=shape or SHAPES[rng.integers(len(SHAPES))],
            color=color or COLORS[rng.integers(len(COLORS))],
            size=size,
            center=(0.0, 0.0),
            extent=float(rng.uniform(low, high) * self.config.image_size),
        )

    def _place(self, rng: np.random.Generator, objects: List[SceneObject]) -> bool:
        """Assign non-overlapping centers; returns False if some object had to overlap."""
        side = self.config.image_size
        placed: List[SceneObject] = []
        disjoint = True
        for obj in objects:
            margin = obj.extent + 1
            for _ in range(PLACEMENT_TRIES):
                obj.center = (float(rng.uniform(margin, side - 1 - margin)),
                              float(rng.uniform(margin, side - 1 - margin)))
                if all(_boxes_apart(obj, other) for other in placed):
                    break
            else:
                disjoint = False
            placed.append(obj)
        return disjoint

    def build_scene(self, rng: np.random.Generator, small: bool) -> Tuple[Scene, int]:
        """Scene whose object 0 is the intended referent."""
        count = int(rng.integers(self.config.min_objects, self.config.max_objects + 1))
        referent = self._random_object(rng, 0, size="small" if small else "large")
        twin = self._random_object(rng, 1, shape=referent.shape)
        objects = [referent, twin] + [self._random_object(rng, i) for i in range(2, count)]
        disjoint = self._place(rng, objects)
        order = rng.permutation(count)
        objects = [objects[i] for i in order]
        pixels, masks = render_scene(objects, self.config.image_size)
        return Scene(pixels=pixels, objects=objects, masks=masks, overlapping=not disjoint), 0

    def simple_candidates(self, scene: Scene, referent: SceneObject) -> List[List[str]]:
        """Short expressions (attributes, superlatives, one relation) that describe the referent."""
        candidates: List[List[str]] = []
        for size, color in ((None, None), (None, referent.color), (referent.size, None),
                            (referent.size, referent.color)):
            candidates.append(NounPhrase(referent.shape, color=color, size=size).words())
        for superlative in SUPERLATIVES:
            candidates.append(NounPhrase(referent.shape, superlative=superlative).words())
            candidates.append(NounPhrase(referent.shape, color=referent.color, superlative=superlative).words())
        for landmark in scene.objects:
            if landmark.object_id == referent.object_id:
                continue
            for relation in RELATIONS:
                if not relation_holds(relation, referent, landmark):
                    continue
                for head_color in (None, referent.color):
                    for land_size in (None, landmark.size):
                        head = NounPhrase(referent.shape, color=head_color).words()
                        tail = NounPhrase(landmark.shape, color=landmark.color, size=land_size).words()
                        candidates.append(head + relation_words(relation) + tail)
        return candidates

    def complex_candidates(self, scene: Scene, referent: SceneObject) -> List[List[str]]:
        """Two-clause expressions with full noun phrases and at least one left/right relation."""
        def full(obj: SceneObject) -> List[str]:
            return NounPhrase(obj.shape, color=obj.color, size=obj.size).words()

        others = [o for o in scene.objects if o.object_id != referent.object_id]
        candidates: List[List[str]] = []
        for first in others:
            for second in others:
                if first.object_id == second.object_id:
                    continue
                for horizontal in ("left", "right"):
                    if not relation_holds(horizontal, referent, first):
                        continue
                    for relation in RELATIONS:
                        if not relation_holds(relation, referent, second):
                            continue
                        candidates.append(
                            full(referent) + ["that", "is"] + relation_words(horizontal) + full(first)
                            + ["and", "is"] + relation_words(relation) + full(second)
                        )
        return candidates

    def generate_sample(self, sample_id: int, rng: np.random.Generator) -> Sample:
        """Draw scenes until one admits a uniquely resolving expression.

        Raises:
            DatasetError: If no scene works within max_attempts
        """
        small = bool(rng.random() < self.config.small_fraction)
        complex_language = bool(rng.random() < self.config.complex_fraction)
        for _ in range(self.config.max_attempts):
            scene, _ = self.build_scene(rng, small)
            referent = next(o for o in scene.objects if o.object_id == 0)
            mask = scene.masks[scene.objects.index(referent)]
            if not mask.any() or (small and mask.mean() >= SMALL_RATIO) or (not small and mask.mean() < SMALL_RATIO):
                continue
            pool = self.complex_candidates(scene, referent) if complex_language else self.simple_candidates(scene, referent)
            unique = [words for words in pool if resolve(words, scene.objects) == {referent.object_id}]
            if not unique:
                continue
            words = unique[int(rng.integers(len(unique)))]
            text = " ".join(words)
            return Sample(sample_id=sample_id, scene=scene, tokens=self.vocabulary.encode(text), text=text,
                          referent=referent.object_id, mask=mask.copy())
        raise DatasetError(f"Could not generate sample {sample_id} within {self.config.max_attempts} attempts")

    def generate(self, seed: int, count: int, stream: int = 0, workers: int = 1) -> List[Sample]:
        """Generate `count` samples; sample i draws from its own spawned seed.

        Args:
            seed: Root seed
            count: Number of samples (>= 1)
            stream: Independent stream index (e.g. 0 for train, 1 for validation)
            workers: Thread count; output does not depend on it
        """
        if count < 1:
            raise ConfigurationError(f"count must be at least 1, got {count}")
        children = np.random.SeedSequence([seed, stream]).spawn(count)

        def make(index: int) -> Sample:
            return self.generate_sample(index, np.random.default_rng(children[index]))

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                samples = list(pool.map(make, range(count)))
        else:
            samples = [make(i) for i in range(count)]

        small = sum(s.is_small for s in samples)
        complex_count = sum(s.is_complex for s in samples)
        self.logger.info(f"Generated {count} samples (stream {stream}): {small} small-scale, {complex_count} complex")
        return samples


def _boxes_apart(a: SceneObject, b: SceneObject, gap: float = 1.0) -> bool:
    ax0, ay0, ax1, ay1 = a.box()
    bx0, by0, bx1, by1 = b.box()
    return ax1 + gap < bx0 or bx1 + gap < ax0 or ay1 + gap < by0 or by1 + gap < ay0
