"""Pathway merge, row/column fusion variants and block composition.

compose_block() wires RoCo, Holi and the merge into one of the module
compositions compared in the ablation harness:

    holi_star        Holi without prior
    roco_only        RoCo alone
    serial           RoCo output feeds Holi (unguided)
    parallel_star    RoCo and Holi side by side, Holi unguided
    parallel_guided  RoCo and Holi side by side, Holi guided by the RoCo prior
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from ai.holi import Holi, HolisticMasks
from ai.roco import LocationPrior, RoCo, RoCoParts, expand_columns, expand_rows, sum_of_expansions
from core import ops
from core.errors import ConfigurationError
from core.parameters import ParameterStore
from core.tensor import Tensor

logger = logging.getLogger(__name__)

FUSION_KINDS: Tuple[str, ...] = ("eq5", "f1", "f2", "f3", "f4")
VARIANTS: Tuple[str, ...] = ("holi_star", "roco_only", "serial", "parallel_star", "parallel_guided")
ROCO_VARIANTS = ("roco_only", "serial", "parallel_star", "parallel_guided")
HOLI_VARIANTS = ("holi_star", "serial", "parallel_star", "parallel_guided")

APE_BOUND = 0.02


@dataclass
class StageOutput:
    """Fused multi-modal feature of one stage plus the maps that produced it."""
    F: Tensor  # H x W x C
    v_hw_all: Optional[Tensor] = None
    v_g_all: Optional[Tensor] = None
    prior: Optional[LocationPrior] = None
    masks: Optional[HolisticMasks] = None


class StageMerge:
    """Projects both pathways, sums them and adds the FFN residual."""

    def __init__(self, store: ParameterStore, prefix: str, channels: int, ffn: bool = True,
                 ffn_hidden: Optional[int] = None, dropout: float = 0.1, zero_init_ffn: bool = True):
        self.store = store
        self.prefix = f"{prefix}.merge"
        self.ffn = ffn
        self.dropout = dropout

        store.register_linear(f"{self.prefix}.hw", channels, channels, owner=self.prefix)
        store.register_linear(f"{self.prefix}.g", channels, channels, owner=self.prefix)
        if ffn:
            hidden = ffn_hidden or channels
            store.register_linear(f"{self.prefix}.ffn_in", channels, hidden, owner=self.prefix)
            store.register_linear(f"{self.prefix}.ffn_out", hidden, channels, owner=self.prefix,
                                  zero=zero_init_ffn)

    def merge_paths(self, v_hw_all: Tensor, v_g_all: Tensor, V: Tensor,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
        """F = V + FFN(ReLU(proj(v_hw_all)) + ReLU(proj(v_g_all))).

        Without the FFN the summed pathways are added to V directly.
        Dropout runs only when an rng is given.
        """
        f_hw = ops.relu(ops.linear(v_hw_all, f"{self.prefix}.hw", self.store))
        f_g = ops.relu(ops.linear(v_g_all, f"{self.prefix}.g", self.store))
        merged = ops.add(f_hw, f_g)
        if not self.ffn:
            return ops.add(V, merged)
        hidden = ops.relu(ops.linear(merged, f"{self.prefix}.ffn_in", self.store))
        hidden = ops.dropout(hidden, self.dropout, rng)
        return ops.add(V, ops.linear(hidden, f"{self.prefix}.ffn_out", self.store))


class RowColumnFusion:
    """Alternative ways of combining the row/column maps into v_hw_all."""

    def __init__(self, store: ParameterStore, prefix: str, channels: int, kind: str = "eq5"):
        if kind not in FUSION_KINDS:
            raise ConfigurationError(f"Unknown fusion kind: {kind} (expected one of {FUSION_KINDS})")
        self.store = store
        self.prefix = f"{prefix}.fusion"
        self.kind = kind

        if kind == "f3":
            store.register_linear(f"{self.prefix}.f3", 2 * channels, channels, owner=self.prefix)
        elif kind == "f4":
            for name in ("f4_row", "f4_col", "f4"):
                store.register_linear(f"{self.prefix}.{name}", 2 * channels, channels, owner=self.prefix)

    def _project_concat(self, name: str, a: Tensor, b: Tensor) -> Tensor:
        return ops.linear(ops.concat([a, b]), f"{self.prefix}.{name}", self.store)

    def fuse_variant(self, kind: str, parts: RoCoParts) -> Tensor:
        """Combine the row/column parts with one of eq5 | f1 | f2 | f3 | f4.

        Raises:
            ConfigurationError: On unknown kind, or f3/f4 without registered projections
        """
        height, width = parts.height, parts.width
        if kind == "eq5":
            return sum_of_expansions(parts)
        if kind in ("f1", "f2"):
            outer = ops.mul(expand_rows(parts.v_h_att, width), expand_columns(parts.v_w_att, height))
            return ops.add(outer, parts.V) if kind == "f1" else ops.mul(outer, parts.V)
        if kind == "f3":
            rows = expand_rows(ops.add(parts.v_h, parts.v_h_att), width)
            cols = expand_columns(ops.add(parts.v_w, parts.v_w_att), height)
            return self._project_concat("f3", rows, cols)
        if kind == "f4":
            rows = self._project_concat("f4_row", expand_rows(parts.v_h, width), expand_rows(parts.v_h_att, width))
            cols = self._project_concat(
                "f4_col", expand_columns(parts.v_w, height), expand_columns(parts.v_w_att, height)
            )
            return self._project_concat("f4", rows, cols)
        raise ConfigurationError(f"Unknown fusion kind: {kind} (expected one of {FUSION_KINDS})")

    def __call__(self, parts: RoCoParts) -> Tensor:
        return self.fuse_variant(self.kind, parts)


@dataclass
class StageModules:
    """Modules and parameters one stage needs for a given composition."""
    prefix: str
    variant: str
    merge: StageMerge
    roco: Optional[RoCo] = None
    holi: Optional[Holi] = None
    fusion: Optional[RowColumnFusion] = None
    ape: Optional[str] = None  # parameter name of the position embedding


def build_stage_modules(
    store: ParameterStore,
    prefix: str,
    variant: str,
    channels: int,
    word_dim: int,
    stage_size: Tuple[int, int],
    fusion: str = "eq5",
    ffn: bool = True,
    ape: bool = True,
    ffn_hidden: Optional[int] = None,
    dropout: float = 0.1,
    zero_init_ffn: bool = True,
    renormalize: bool = False,
) -> StageModules:
    """Register exactly the parameters the requested composition uses.

    Raises:
        ConfigurationError: On unknown variant or fusion kind
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"Unknown block variant: {variant} (expected one of {VARIANTS})")
    modules = StageModules(
        prefix=prefix,
        variant=variant,
        merge=StageMerge(store, prefix, channels, ffn, ffn_hidden, dropout, zero_init_ffn),
    )
    if variant in ROCO_VARIANTS:
        modules.roco = RoCo(store, prefix, channels, word_dim)
        modules.fusion = RowColumnFusion(store, prefix, channels, fusion)
    if variant in HOLI_VARIANTS:
        modules.holi = Holi(store, prefix, channels, word_dim, renormalize)
    if ape:
        modules.ape = f"{prefix}.ape"
        store.register(modules.ape, (stage_size[0], stage_size[1], channels), bound=APE_BOUND, owner=prefix)
    return modules


StageFunction = Callable[..., StageOutput]


def compose_block(variant: str, modules: StageModules, ffn: bool = True, ape: bool = True) -> StageFunction:
    """Return the stage forward function for one module composition.

    The returned function has signature (V, L, rng=None) -> StageOutput.

    Raises:
        ConfigurationError: On unknown variant, or flags the modules were not built for
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"Unknown block variant: {variant} (expected one of {VARIANTS})")
    if variant in ROCO_VARIANTS and modules.roco is None:
        raise ConfigurationError(f"Variant '{variant}' needs RoCo modules for {modules.prefix}")
    if variant in HOLI_VARIANTS and modules.holi is None:
        raise ConfigurationError(f"Variant '{variant}' needs Holi modules for {modules.prefix}")
    if ape and modules.ape is None:
        raise ConfigurationError(f"ape requested but {modules.prefix} has no position embedding")
    if ffn != modules.merge.ffn:
        raise ConfigurationError(f"ffn={ffn} does not match the merge built for {modules.prefix}")
    store = modules.merge.store

    def stage(V: Tensor, L: Tensor, rng: Optional[np.random.Generator] = None) -> StageOutput:
        if ape:
            V = ops.add(V, store[modules.ape])
        zeros = ops.zeros(V.shape)

        if variant == "holi_star":
            v_g_all, masks = modules.holi.interact(V, L)
            return StageOutput(F=modules.merge.merge_paths(zeros, v_g_all, V, rng), v_g_all=v_g_all, masks=masks)

        roco_out = modules.roco.roco_interact(V, L, modules.fusion)
        if variant == "roco_only":
            F = modules.merge.merge_paths(roco_out.v_hw_all, zeros, V, rng)
            return StageOutput(F=F, v_hw_all=roco_out.v_hw_all, prior=roco_out.prior)
        if variant == "serial":
            v_g_all, masks = modules.holi.interact(roco_out.v_hw_all, L)
            F = modules.merge.merge_paths(zeros, v_g_all, V, rng)
            return StageOutput(F=F, v_g_all=v_g_all, prior=roco_out.prior, masks=masks)

        guide = roco_out.prior.mask_roco if variant == "parallel_guided" else None
        v_g_all, masks = modules.holi.interact(V, L, guide)
        F = modules.merge.merge_paths(roco_out.v_hw_all, v_g_all, V, rng)
        return StageOutput(F=F, v_hw_all=roco_out.v_hw_all, v_g_all=v_g_all, prior=roco_out.prior, masks=masks)

    stage.__name__ = f"{variant}_stage"
    return stage
