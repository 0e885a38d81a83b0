"""Unit tests for pathway merging, fusion variants and block composition."""

import numpy as np
import pytest

from ai.fusion import (
    FUSION_KINDS,
    VARIANTS,
    RowColumnFusion,
    StageMerge,
    build_stage_modules,
    compose_block,
)
from ai.roco import RoCoParts
from core import ops
from core.errors import ConfigurationError
from core.gradcheck import check_gradients
from core.parameters import ParameterStore
from core.tensor import Tensor


def relu(x):
    return np.maximum(x, 0.0)


def proj(store, name, x):
    return x @ store[f"{name}.weight"].data + store[f"{name}.bias"].data


@pytest.fixture
def parts(rng):
    """Random row/column parts of a 3 x 4 x 2 map."""
    H, W, C = 3, 4, 2
    return RoCoParts(
        V=Tensor(rng.normal(size=(H, W, C))),
        v_h=Tensor(rng.normal(size=(H, C))),
        v_w=Tensor(rng.normal(size=(W, C))),
        v_h_att=Tensor(rng.normal(size=(H, C))),
        v_w_att=Tensor(rng.normal(size=(W, C))),
    )


class TestStageMerge:
    """Test merge_paths()."""

    def test_without_ffn(self, rng):
        """Test F = V + ReLU(proj(hw)) + ReLU(proj(g))."""
        store = ParameterStore(seed=1)
        merge = StageMerge(store, "stage1", 3, ffn=False)
        hw, g, V = rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3))
        F = merge.merge_paths(Tensor(hw), Tensor(g), Tensor(V)).data
        expected = V + relu(proj(store, "stage1.merge.hw", hw)) + relu(proj(store, "stage1.merge.g", g))
        np.testing.assert_allclose(F, expected, atol=1e-12)
        assert "stage1.merge.ffn_in.weight" not in store

    def test_zero_init_ffn_starts_as_identity(self, rng):
        """Test the zero-initialized FFN output leaves V unchanged at init."""
        store = ParameterStore(seed=2)
        merge = StageMerge(store, "stage1", 3, ffn=True, ffn_hidden=5)
        V = rng.normal(size=(2, 2, 3))
        F = merge.merge_paths(Tensor(rng.normal(size=(2, 2, 3))), Tensor(rng.normal(size=(2, 2, 3))), Tensor(V))
        np.testing.assert_array_equal(F.data, V)
        assert store["stage1.merge.ffn_in.weight"].shape == (3, 5)
        assert store["stage1.merge.ffn_out.weight"].shape == (5, 3)

    def test_ffn_values(self, rng):
        """Test F = V + FFN(merged) with a random (non-zero) output layer."""
        store = ParameterStore(seed=3)
        merge = StageMerge(store, "stage1", 2, ffn=True, ffn_hidden=4, zero_init_ffn=False)
        hw, g, V = rng.normal(size=(1, 3, 2)), rng.normal(size=(1, 3, 2)), rng.normal(size=(1, 3, 2))
        F = merge.merge_paths(Tensor(hw), Tensor(g), Tensor(V)).data
        merged = relu(proj(store, "stage1.merge.hw", hw)) + relu(proj(store, "stage1.merge.g", g))
        hidden = relu(proj(store, "stage1.merge.ffn_in", merged))
        np.testing.assert_allclose(F, V + proj(store, "stage1.merge.ffn_out", hidden), atol=1e-12)

    def test_dropout_only_with_rng(self, rng):
        """Test evaluation mode is deterministic and dropout follows the generator."""
        store = ParameterStore(seed=4)
        merge = StageMerge(store, "stage1", 3, ffn=True, ffn_hidden=8, dropout=0.5, zero_init_ffn=False)
        args = [Tensor(rng.normal(size=(2, 2, 3))) for _ in range(3)]
        plain = merge.merge_paths(*args).data
        np.testing.assert_array_equal(plain, merge.merge_paths(*args).data)
        a = merge.merge_paths(*args, rng=np.random.default_rng(0)).data
        b = merge.merge_paths(*args, rng=np.random.default_rng(0)).data
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, plain)


class TestRowColumnFusion:
    """Test the five row/column combinations."""

    def test_eq5_is_sum_of_expansions(self, parts):
        """Test the default combination."""
        fusion = RowColumnFusion(ParameterStore(), "stage1", 2, "eq5")
        expected = ((parts.v_h.data + parts.v_h_att.data)[:, None] + (parts.v_w.data + parts.v_w_att.data)[None])
        np.testing.assert_allclose(fusion(parts).data, expected, atol=1e-12)

    def test_f1_adds_outer_product(self, parts):
        """Test f1 = B(v_h_att) * B(v_w_att) + V."""
        fusion = RowColumnFusion(ParameterStore(), "stage1", 2, "f1")
        outer = parts.v_h_att.data[:, None] * parts.v_w_att.data[None]
        np.testing.assert_allclose(fusion(parts).data, outer + parts.V.data, atol=1e-12)

    def test_f2_gates_visual(self, parts):
        """Test f2 = B(v_h_att) * B(v_w_att) * V."""
        fusion = RowColumnFusion(ParameterStore(), "stage1", 2, "f2")
        outer = parts.v_h_att.data[:, None] * parts.v_w_att.data[None]
        np.testing.assert_allclose(fusion(parts).data, outer * parts.V.data, atol=1e-12)

    def test_f3_projects_concatenation(self, parts):
        """Test f3 = proj([B(v_h + v_h_att), B(v_w + v_w_att)])."""
        store = ParameterStore(seed=5)
        fusion = RowColumnFusion(store, "stage1", 2, "f3")
        H, W = 3, 4
        rows = np.repeat((parts.v_h.data + parts.v_h_att.data)[:, None], W, axis=1)
        cols = np.repeat((parts.v_w.data + parts.v_w_att.data)[None], H, axis=0)
        expected = proj(store, "stage1.fusion.f3", np.concatenate([rows, cols], axis=-1))
        np.testing.assert_allclose(fusion(parts).data, expected, atol=1e-12)

    def test_f4_registers_three_projections(self, parts):
        """Test f4 shapes and parameters."""
        store = ParameterStore(seed=6)
        fusion = RowColumnFusion(store, "stage1", 2, "f4")
        assert fusion(parts).shape == (3, 4, 2)
        for name in ("f4_row", "f4_col", "f4"):
            assert store[f"stage1.fusion.{name}.weight"].shape == (4, 2)

    def test_parameter_free_kinds_register_nothing(self):
        """Test eq5, f1 and f2 need no parameters."""
        store = ParameterStore()
        for kind in ("eq5", "f1", "f2"):
            RowColumnFusion(store, f"s_{kind}", 2, kind)
        assert len(store) == 0

    def test_unknown_kind(self, parts):
        """Test unknown kinds are rejected at construction and call."""
        with pytest.raises(ConfigurationError):
            RowColumnFusion(ParameterStore(), "stage1", 2, "f5")
        fusion = RowColumnFusion(ParameterStore(), "stage1", 2, "eq5")
        with pytest.raises(ConfigurationError):
            fusion.fuse_variant("f9", parts)


class TestBuildStageModules:
    """Test per-variant parameter registration."""

    def _names(self, variant, **kwargs):
        store = ParameterStore()
        build_stage_modules(store, "stage1", variant, 4, 3, (2, 2), **kwargs)
        return set(store)

    def test_holi_star_has_no_roco(self):
        """Test the holistic baseline registers no RoCo parameters."""
        names = self._names("holi_star")
        assert not any(".roco." in n for n in names)
        assert any(".holi." in n for n in names)

    def test_roco_only_has_no_holi(self):
        """Test the RoCo-only composition registers no Holi parameters."""
        names = self._names("roco_only")
        assert not any(".holi." in n for n in names)
        assert any(".roco." in n for n in names)

    def test_ape_and_ffn_flags(self):
        """Test position embedding and FFN are registered on request only."""
        assert "stage1.ape" in self._names("parallel_guided")
        names = self._names("parallel_guided", ape=False, ffn=False)
        assert "stage1.ape" not in names
        assert not any("ffn" in n for n in names)

    def test_unknown_variant(self):
        """Test unknown compositions are rejected."""
        with pytest.raises(ConfigurationError):
            build_stage_modules(ParameterStore(), "stage1", "triple", 4, 3, (2, 2))


class TestComposeBlock:
    """Test the composed stage functions."""

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_every_variant_runs(self, rng, variant):
        """Test each composition yields an H x W x C fused map."""
        store = ParameterStore(seed=7)
        modules = build_stage_modules(store, "stage1", variant, 4, 3, (3, 2))
        stage = compose_block(variant, modules)
        out = stage(Tensor(rng.normal(size=(3, 2, 4))), Tensor(rng.normal(size=(2, 3))))
        assert out.F.shape == (3, 2, 4)
        assert (out.prior is None) == (variant == "holi_star")
        assert (out.masks is None) == (variant == "roco_only")

    def test_parallel_guided_uses_prior(self, rng):
        """Test mask_roho is the mean of prior and holistic map only in the guided variant."""
        V, L = Tensor(rng.normal(size=(2, 3, 4))), Tensor(rng.normal(size=(2, 3)))
        outputs = {}
        for variant in ("parallel_star", "parallel_guided"):
            modules = build_stage_modules(ParameterStore(seed=8), "stage1", variant, 4, 3, (2, 3))
            outputs[variant] = compose_block(variant, modules)(V, L)
        star, guided = outputs["parallel_star"], outputs["parallel_guided"]
        np.testing.assert_array_equal(star.masks.mask_roho.data, star.masks.mask_holi.data)
        expected = 0.5 * (guided.prior.mask_roco.data + guided.masks.mask_holi.data)
        np.testing.assert_allclose(guided.masks.mask_roho.data, expected, atol=1e-15)

    def test_serial_feeds_roco_output_to_holi(self, rng):
        """Test the serial variant attends over v_hw_all without guidance."""
        store = ParameterStore(seed=9)
        modules = build_stage_modules(store, "stage1", "serial", 4, 3, (2, 2), ape=False)
        V, L = Tensor(rng.normal(size=(2, 2, 4))), Tensor(rng.normal(size=(3, 3)))
        out = compose_block("serial", modules, ape=False)(V, L)
        roco_out = modules.roco.roco_interact(V, L, modules.fusion)
        expected, _ = modules.holi.interact(roco_out.v_hw_all, L)
        np.testing.assert_allclose(out.v_g_all.data, expected.data, atol=1e-12)
        assert out.v_hw_all is None

    def test_flag_mismatch(self):
        """Test flags the modules were not built for are rejected."""
        store = ParameterStore()
        modules = build_stage_modules(store, "stage1", "holi_star", 4, 3, (2, 2), ffn=False, ape=False)
        with pytest.raises(ConfigurationError):
            compose_block("holi_star", modules, ffn=True, ape=False)
        with pytest.raises(ConfigurationError):
            compose_block("holi_star", modules, ffn=False, ape=True)
        with pytest.raises(ConfigurationError):
            compose_block("parallel_guided", modules, ffn=False, ape=False)
        with pytest.raises(ConfigurationError):
            compose_block("quad", modules)

    @pytest.mark.parametrize("kind", FUSION_KINDS)
    def test_fusion_gradients(self, rng, kind):
        """Test analytic gradients through every fusion kind in the full block."""
        store = ParameterStore(seed=10)
        modules = build_stage_modules(store, "stage1", "parallel_guided", 2, 2, (2, 2), fusion=kind,
                                      ffn_hidden=3, zero_init_ffn=False)
        stage = compose_block("parallel_guided", modules)
        V = Tensor(rng.normal(size=(2, 2, 2)))
        L = Tensor(rng.normal(size=(2, 2)))

        def loss():
            F = stage(V, L).F
            return ops.sum(ops.mul(F, F))

        report = check_gradients(loss, dict(store.items()))
        assert report.passed, report.errors
