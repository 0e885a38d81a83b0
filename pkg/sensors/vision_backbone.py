"""Toy visual pyramid encoder with 8-D spatial coordinate features."""

import logging
from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np

from core import ops
from core.errors import DimensionError
from core.parameters import ParameterStore
from core.tensor import Tensor, get_default_dtype

COORD_CHANNELS = 8
FIRST_PATCH = 4


def coord_features(height: int, width: int) -> np.ndarray:
    """8-D coordinate map of an H x W grid.

    Channels per cell: x_min, y_min, x_max, y_max, x_center, y_center
    (normalized to [-1, 1]), then 1/W and 1/H.
    """
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    x_min, x_max, x_center = cols / width * 2 - 1, (cols + 1) / width * 2 - 1, (cols + 0.5) / width * 2 - 1
    y_min, y_max, y_center = rows / height * 2 - 1, (rows + 1) / height * 2 - 1, (rows + 0.5) / height * 2 - 1

    coords = np.empty((height, width, COORD_CHANNELS), dtype=np.float64)
    coords[..., 0] = x_min[None, :]
    coords[..., 1] = y_min[:, None]
    coords[..., 2] = x_max[None, :]
    coords[..., 3] = y_max[:, None]
    coords[..., 4] = x_center[None, :]
    coords[..., 5] = y_center[:, None]
    coords[..., 6] = 1.0 / width
    coords[..., 7] = 1.0 / height
    return coords


@dataclass
class FeaturePyramid:
    """Per-stage features, finest first."""
    fused: List[Tensor] = field(default_factory=list)  # V_i, coordinates mixed in
    visual: List[Tensor] = field(default_factory=list)  # before coordinate fusion

    @property
    def sizes(self) -> List[Tuple[int, int]]:
        return [tuple(v.shape[:2]) for v in self.fused]


class VisionBackbone:
    """Strided patch-affine encoder producing stages at strides 4, 8, 16, 32, ..."""

    def __init__(self, store: ParameterStore, image_size: int, channels: int,
                 stages: int = 4, in_channels: int = 3):
        """Register patch embeddings and coordinate fusion projections.

        Args:
            store: Parameter store
            image_size: Square input extent (divisible by the coarsest stride)
            channels: Stage channel count C
            stages: Number of pyramid stages N
            in_channels: Image channels
        """
        self.store = store
        self.image_size = image_size
        self.channels = channels
        self.stages = stages
        self.in_channels = in_channels
        self.logger = logging.getLogger(__name__)

        if image_size % self.stride(stages) != 0:
            raise DimensionError(
                f"Image size {image_size} is not divisible by the stage-{stages} stride {self.stride(stages)}"
            )

        for stage in range(1, stages + 1):
            fan_in = FIRST_PATCH * FIRST_PATCH * in_channels if stage == 1 else 4 * channels
            store.register_linear(f"backbone.patch{stage}", fan_in, channels, owner="backbone")
            store.register_linear(f"backbone.fuse{stage}", channels + COORD_CHANNELS, channels, owner="backbone")

        self._coords = [coord_features(*self.stage_size(s)).astype(get_default_dtype())
                        for s in range(1, stages + 1)]

    @staticmethod
    def stride(stage: int) -> int:
        return FIRST_PATCH * 2 ** (stage - 1)

    def stage_size(self, stage: int) -> Tuple[int, int]:
        extent = self.image_size // self.stride(stage)
        return extent, extent

    def encode_pyramid(self, image: Union[np.ndarray, Tensor]) -> FeaturePyramid:
        """Encode an H0 x W0 x 3 image into N fused stage features.

        Raises:
            DimensionError: If the image extents do not match the backbone
        """
        if not isinstance(image, Tensor):
            image = ops.constant(image)
        expected = (self.image_size, self.image_size, self.in_channels)
        if image.shape != expected:
            raise DimensionError(f"Backbone expects an image of shape {expected}, got {image.shape}")

        pyramid = FeaturePyramid()
        x = image
        for stage in range(1, self.stages + 1):
            block = FIRST_PATCH if stage == 1 else 2
            x = ops.gelu(ops.linear(ops.space_to_depth(x, block), f"backbone.patch{stage}", self.store))
            coords = ops.constant(self._coords[stage - 1])
            fused = ops.linear(ops.concat([x, coords]), f"backbone.fuse{stage}", self.store)
            pyramid.visual.append(x)
            pyramid.fused.append(fused)
        return pyramid
