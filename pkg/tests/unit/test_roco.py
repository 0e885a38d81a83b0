"""Unit tests for the row-and-column interactive module."""

import math

import numpy as np
import pytest

from ai.attention import LogitCounter
from ai.roco import ROCO_TAG, RoCo, RoCoParts, expand_columns, expand_rows, location_prior, sum_of_expansions
from core import ops
from core.errors import DimensionError, EmptyExpressionError
from core.gradcheck import check_gradients
from core.parameters import ParameterStore
from core.tensor import Tensor


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def project(store, name, x):
    return x @ store[f"{name}.weight"].data + store[f"{name}.bias"].data


def spatial_softmax(logits):
    """Softmax over axis 0 written as explicit loops."""
    out = np.zeros_like(logits)
    for t in range(logits.shape[1]):
        column = [math.exp(v) for v in logits[:, t]]
        total = sum(column)
        for i in range(logits.shape[0]):
            out[i, t] = column[i] / total
    return out


def roco_oracle(store, prefix, V, L):
    """Independent numpy/loop computation of the prior and the combined row/column map."""
    C = V.shape[2]
    v_h = gelu(project(store, f"{prefix}.row", V.mean(axis=1)))
    v_w = gelu(project(store, f"{prefix}.col", V.mean(axis=0)))
    h_k, h_v = project(store, f"{prefix}.h_k", L), project(store, f"{prefix}.h_v", L)
    w_k, w_v = project(store, f"{prefix}.w_k", L), project(store, f"{prefix}.w_v", L)
    logits_h = v_h @ h_k.T / math.sqrt(C)
    logits_w = v_w @ w_k.T / math.sqrt(C)

    def word_softmax(logits):
        exp = np.exp(logits - logits.max(axis=1, keepdims=True))
        return exp / exp.sum(axis=1, keepdims=True)

    v_h_att = (word_softmax(logits_h) @ h_v) * v_h
    v_w_att = (word_softmax(logits_w) @ w_v) * v_w
    e_h, e_w = spatial_softmax(logits_h), spatial_softmax(logits_w)

    H, W, T = V.shape[0], V.shape[1], L.shape[0]
    mask = np.zeros((H, W, T))
    for t in range(T):
        total = sum(e_h[i, t] * e_w[j, t] for i in range(H) for j in range(W))
        for i in range(H):
            for j in range(W):
                mask[i, j, t] = e_h[i, t] * e_w[j, t] / total
    combined = np.zeros((H, W, C))
    for i in range(H):
        for j in range(W):
            combined[i, j] = v_h[i] + v_h_att[i] + v_w[j] + v_w_att[j]
    return mask, combined, e_h, e_w


class TestRoCoInteract:
    """Test roco_interact() outputs and properties."""

    def _module(self, seed, C, d_l):
        store = ParameterStore(seed=seed)
        return store, RoCo(store, "stage1", C, d_l)

    def test_matches_oracle_over_seeds(self):
        """Test mask_roco, e_h, e_w and v_hw_all against the loop oracle on 100 seeds."""
        for seed in range(100):
            gen = np.random.default_rng(seed)
            H, W, C, T, d_l = gen.integers(1, 5, size=5)
            store, roco = self._module(seed, C, d_l)
            V, L = gen.normal(size=(H, W, C)), gen.normal(size=(T, d_l))
            out = roco.roco_interact(Tensor(V), Tensor(L))
            mask, combined, e_h, e_w = roco_oracle(store, "stage1.roco", V, L)
            np.testing.assert_allclose(out.prior.mask_roco.data, mask, atol=1e-9, rtol=0)
            np.testing.assert_allclose(out.prior.e_h.data, e_h, atol=1e-9, rtol=0)
            np.testing.assert_allclose(out.prior.e_w.data, e_w, atol=1e-9, rtol=0)
            np.testing.assert_allclose(out.v_hw_all.data, combined, atol=1e-9, rtol=0)

    def test_prior_word_slices_sum_to_one(self, rng):
        """Test every per-word prior slice is a distribution over H x W."""
        _, roco = self._module(3, 6, 5)
        out = roco.roco_interact(Tensor(rng.normal(size=(4, 7, 6))), Tensor(rng.normal(size=(3, 5))))
        sums = out.prior.mask_roco.data.sum(axis=(0, 1))
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)
        assert np.all(out.prior.mask_roco.data >= 0.0)

    def test_prior_is_rank_one_per_word(self, rng):
        """Test all 2x2 minors of each word slice vanish and it equals outer(e_h, e_w)."""
        _, roco = self._module(4, 5, 4)
        out = roco.roco_interact(Tensor(rng.normal(size=(5, 6, 5))), Tensor(rng.normal(size=(3, 4))))
        mask = out.prior.mask_roco.data
        e_h, e_w = out.prior.e_h.data, out.prior.e_w.data
        for t in range(mask.shape[2]):
            M = mask[:, :, t]
            for i in range(M.shape[0]):
                for k in range(i + 1, M.shape[0]):
                    for j in range(M.shape[1]):
                        for l in range(j + 1, M.shape[1]):
                            assert abs(M[i, j] * M[k, l] - M[i, l] * M[k, j]) < 1e-9
            np.testing.assert_allclose(M, np.outer(e_h[:, t], e_w[:, t]), atol=1e-9)

    def test_logit_count_is_h_plus_w_times_t(self, rng):
        """Test RoCo computes exactly (H + W) * T logits."""
        _, roco = self._module(5, 4, 3)
        H, W, T = 6, 9, 4
        with LogitCounter() as counter:
            roco.roco_interact(Tensor(rng.normal(size=(H, W, 4))), Tensor(rng.normal(size=(T, 3))))
        assert counter.counts[ROCO_TAG] == (H + W) * T

    def test_single_word_prior_is_product_of_axis_maps(self, rng):
        """Test T = 1 still yields a normalized prior."""
        _, roco = self._module(6, 3, 2)
        out = roco.roco_interact(Tensor(rng.normal(size=(3, 3, 3))), Tensor(rng.normal(size=(1, 2))))
        assert out.prior.mask_roco.shape == (3, 3, 1)
        assert out.prior.mask_roco.data.sum() == pytest.approx(1.0, abs=1e-12)

    def test_empty_expression(self, rng):
        """Test T = 0 raises."""
        _, roco = self._module(7, 3, 2)
        with pytest.raises(EmptyExpressionError):
            roco.roco_interact(Tensor(rng.normal(size=(2, 2, 3))), Tensor(np.zeros((0, 2))))

    def test_registers_expected_parameters(self):
        """Test parameter names and owners."""
        store, _ = self._module(0, 4, 3)
        names = set(store)
        for name in ("row", "col", "h_k", "h_v", "w_k", "w_v"):
            assert f"stage1.roco.{name}.weight" in names
            assert store.owner(f"stage1.roco.{name}.bias") == "stage1.roco"
        assert store["stage1.roco.h_k.weight"].shape == (3, 4)

    def test_custom_combine(self, rng):
        """Test a combination function replaces the default sum."""
        _, roco = self._module(8, 3, 2)
        out = roco.roco_interact(Tensor(rng.normal(size=(2, 3, 3))), Tensor(rng.normal(size=(2, 2))),
                                 combine=lambda parts: expand_rows(parts.v_h, parts.width))
        np.testing.assert_allclose(out.v_hw_all.data[:, 0], out.parts.v_h.data)
        np.testing.assert_allclose(out.v_hw_all.data[:, 2], out.parts.v_h.data)

    def test_gradients(self, rng):
        """Test analytic gradients through prior and combined map."""
        store, roco = self._module(9, 3, 2)
        V = Tensor(rng.normal(size=(3, 2, 3)), grad_enabled=True)
        L = Tensor(rng.normal(size=(2, 2)), grad_enabled=True)
        weight = Tensor(rng.normal(size=(3, 2, 2)))

        def loss():
            out = roco.roco_interact(V, L)
            return ops.add(ops.sum(ops.mul(out.v_hw_all, out.v_hw_all)),
                           ops.sum(ops.mul(out.prior.mask_roco, weight)))

        tensors = dict(store.items())
        tensors.update({"V": V, "L": L})
        report = check_gradients(loss, tensors)
        assert report.passed, report.errors


class TestExpansions:
    """Test axis expansions and the prior helper."""

    def test_expand_rows_replicates_along_width(self, rng):
        """Test each row vector is copied across the width."""
        v_h = rng.normal(size=(3, 2))
        out = expand_rows(Tensor(v_h), 4).data
        assert out.shape == (3, 4, 2)
        for j in range(4):
            np.testing.assert_allclose(out[:, j], v_h)

    def test_expand_columns_replicates_along_height(self, rng):
        """Test each column vector is copied down the height."""
        v_w = rng.normal(size=(4, 2))
        out = expand_columns(Tensor(v_w), 3).data
        for i in range(3):
            np.testing.assert_allclose(out[i], v_w)

    def test_sum_of_expansions(self, rng):
        """Test the default combination adds the four expansions."""
        H, W, C = 2, 3, 2
        parts = RoCoParts(V=Tensor(np.zeros((H, W, C))), v_h=Tensor(rng.normal(size=(H, C))),
                          v_w=Tensor(rng.normal(size=(W, C))), v_h_att=Tensor(rng.normal(size=(H, C))),
                          v_w_att=Tensor(rng.normal(size=(W, C))))
        out = sum_of_expansions(parts).data
        expected = (parts.v_h.data + parts.v_h_att.data)[:, None, :] + (parts.v_w.data + parts.v_w_att.data)[None]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_location_prior_word_mismatch(self):
        """Test e_h and e_w must agree on T."""
        with pytest.raises(DimensionError):
            location_prior(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))
