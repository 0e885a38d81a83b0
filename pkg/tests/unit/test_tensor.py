"""Unit tests for the tensor core: tensors, tapes and reverse-mode differentiation."""

import numpy as np
import pytest

from core import ops
from core.errors import DimensionError, GradientError
from core.tensor import (
    GradTape,
    Tensor,
    active_tape,
    backward,
    get_default_dtype,
    set_default_dtype,
    unbroadcast,
)


class TestTensor:
    """Test Tensor construction and accessors."""

    def test_tensor_copies_and_freezes_data(self):
        """Test the buffer is a read-only copy."""
        source = np.arange(6.0).reshape(2, 3)
        tensor = Tensor(source)
        source[0, 0] = 100.0
        assert tensor.data[0, 0] == 0.0
        with pytest.raises(ValueError):
            tensor.data[0, 0] = 1.0

    def test_tensor_properties(self):
        """Test shape, ndim, size and dtype."""
        tensor = Tensor(np.zeros((2, 3, 4)))
        assert tensor.shape == (2, 3, 4)
        assert tensor.ndim == 3
        assert tensor.size == 24
        assert tensor.dtype == np.float64

    def test_item_requires_single_element(self):
        """Test item() on scalars and its error otherwise."""
        assert Tensor(3.5).item() == 3.5
        assert Tensor([[2.0]]).item() == 2.0
        with pytest.raises(DimensionError):
            Tensor([1.0, 2.0]).item()

    def test_numpy_returns_writable_copy(self):
        """Test numpy() does not alias the tensor buffer."""
        tensor = Tensor([1.0, 2.0])
        values = tensor.numpy()
        values[0] = 9.0
        assert tensor.data[0] == 1.0

    def test_operator_sugar(self):
        """Test arithmetic operators dispatch to the ops module."""
        a = Tensor([1.0, 2.0])
        b = Tensor([3.0, 5.0])
        np.testing.assert_allclose((a + b).data, [4.0, 7.0])
        np.testing.assert_allclose((b - a).data, [2.0, 3.0])
        np.testing.assert_allclose((a * b).data, [3.0, 10.0])
        np.testing.assert_allclose((b / a).data, [3.0, 2.5])
        np.testing.assert_allclose((-a).data, [-1.0, -2.0])
        np.testing.assert_allclose((1.0 - a).data, [0.0, -1.0])
        np.testing.assert_allclose((2.0 * a).data, [2.0, 4.0])


class TestDefaultDtype:
    """Test the precision switch."""

    def test_default_is_float64(self):
        """Test double precision is the default."""
        assert get_default_dtype() == np.float64

    def test_switch_to_float32(self):
        """Test new tensors follow the default dtype."""
        set_default_dtype("float32")
        assert Tensor([1.0]).dtype == np.float32
        set_default_dtype(np.float64)
        assert Tensor([1.0]).dtype == np.float64

    def test_rejects_non_float_dtype(self):
        """Test integer dtypes are refused."""
        with pytest.raises(ValueError):
            set_default_dtype("int32")


class TestGradTape:
    """Test tape recording semantics."""

    def test_ops_outside_tape_build_no_graph(self):
        """Test ops evaluated without a tape are untracked."""
        x = Tensor([1.0, 2.0], grad_enabled=True)
        y = ops.mul(x, x)
        assert y.creator is None
        assert y.tape is None
        assert active_tape() is None

    def test_tape_records_tracked_ops(self):
        """Test ops with a tracked input are recorded in evaluation order."""
        x = Tensor([1.0, 2.0], grad_enabled=True)
        with GradTape() as tape:
            assert active_tape() is tape
            y = ops.mul(x, x)
            z = ops.sum(y)
        assert active_tape() is None
        assert len(tape) == 2
        assert tape.nodes[0] is y
        assert tape.nodes[1] is z

    def test_constants_are_not_recorded(self):
        """Test ops over untracked inputs stay off the tape."""
        with GradTape() as tape:
            ops.add(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0

    def test_reset_clears_consumed_tape(self):
        """Test a consumed tape refuses new records until reset."""
        x = Tensor([3.0], grad_enabled=True)
        with GradTape() as tape:
            loss = ops.sum(ops.mul(x, x))
        backward(loss)
        assert tape.consumed
        with pytest.raises(GradientError):
            with tape:
                ops.mul(x, x)
        tape.reset()
        assert len(tape) == 0
        with tape:
            ops.mul(x, x)
        assert len(tape) == 1


class TestBackward:
    """Test reverse-mode gradients."""

    def test_square_gradient(self):
        """Test d(sum x^2)/dx = 2x."""
        x = Tensor([1.0, -2.0, 3.0], grad_enabled=True)
        with GradTape():
            loss = ops.sum(ops.mul(x, x))
        grads = backward(loss, {"x": x})
        np.testing.assert_allclose(grads["x"], [2.0, -4.0, 6.0])

    def test_fan_out_accumulates(self):
        """Test a tensor used twice receives the sum of both paths."""
        x = Tensor([2.0], grad_enabled=True)
        with GradTape():
            loss = ops.sum(ops.add(ops.scale(x, 3.0), ops.mul(x, x)))
        grads = backward(loss, {"x": x})
        np.testing.assert_allclose(grads["x"], [3.0 + 4.0])

    def test_unused_parameter_gets_zeros(self):
        """Test store entries that did not take part get zero gradients."""
        x = Tensor([1.0, 2.0], grad_enabled=True)
        unused = Tensor(np.ones((2, 2)), grad_enabled=True)
        with GradTape():
            loss = ops.sum(x)
        grads = backward(loss, {"x": x, "unused": unused})
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_gradient_of_intermediate(self):
        """Test GradientMap.of() exposes intermediate gradients."""
        x = Tensor([1.0, 2.0], grad_enabled=True)
        with GradTape():
            y = ops.scale(x, 2.0)
            loss = ops.sum(ops.mul(y, y))
        grads = backward(loss, {"x": x})
        np.testing.assert_allclose(grads.of(y), 2.0 * y.data)

    def test_non_scalar_loss_rejected(self):
        """Test backward() refuses a non-scalar loss."""
        x = Tensor([1.0, 2.0], grad_enabled=True)
        with GradTape():
            y = ops.mul(x, x)
        with pytest.raises(GradientError):
            backward(y)

    def test_tapeless_loss_rejected(self):
        """Test backward() refuses a loss built outside a tape."""
        x = Tensor([1.0, 2.0], grad_enabled=True)
        loss = ops.sum(x)
        with pytest.raises(GradientError):
            backward(loss)

    def test_second_backward_rejected(self):
        """Test a tape can be differentiated once."""
        x = Tensor([1.0], grad_enabled=True)
        with GradTape():
            loss = ops.sum(ops.mul(x, x))
        backward(loss)
        with pytest.raises(GradientError):
            backward(loss)


class TestUnbroadcast:
    """Test gradient reduction over broadcast extents."""

    def test_matching_shape_passes_through(self):
        """Test identical shapes are returned unchanged."""
        grad = np.ones((2, 3))
        assert unbroadcast(grad, (2, 3)) is grad

    def test_sums_over_size_one_axes(self):
        """Test broadcast axes are summed with kept dims."""
        grad = np.arange(6.0).reshape(2, 3)
        np.testing.assert_allclose(unbroadcast(grad, (1, 3)), [[3.0, 5.0, 7.0]])
        np.testing.assert_allclose(unbroadcast(grad, (2, 1)), [[3.0], [12.0]])
