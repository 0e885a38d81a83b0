"""Differentiable tensor operations.

Broadcasting is restricted to size-1 extents between tensors of equal
rank; Python scalars combine with any tensor through scale()/shift().
"""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import ConfigurationError, DimensionError
from core.tensor import Function, Tensor, get_default_dtype

if TYPE_CHECKING:
    from core.parameters import ParameterStore

logger = logging.getLogger(__name__)

Operand = Union[Tensor, float, int]

GELU_COEFF = math.sqrt(2.0 / math.pi)
GELU_CUBIC = 0.044715


def broadcast_shape(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    """Resolve the result shape of a binary op under the size-1 broadcast rule.

    Raises:
        DimensionError: On rank mismatch or incompatible extents
    """
    if len(a) != len(b):
        raise DimensionError(f"{op}: rank mismatch {a} vs {b} (no implicit rank promotion)")
    shape = []
    for x, y in zip(a, b):
        if x == y or y == 1:
            shape.append(x)
        elif x == 1:
            shape.append(y)
        else:
            raise DimensionError(f"{op}: extents {a} and {b} are not broadcastable")
    return tuple(shape)


def constant(values: Union[np.ndarray, Sequence, float]) -> Tensor:
    """Wrap values as a tensor that never receives gradients."""
    return Tensor(values, grad_enabled=False)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape), dtype=get_default_dtype()))


# Elementwise arithmetic

class _Add(Function):
    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        return grad, grad


class _Sub(Function):
    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        return grad, -grad


class _Mul(Function):
    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs[0].data, self.inputs[1].data
        return grad * b, grad * a


class _Div(Function):
    def forward(self, a, b):
        return a / b

    def backward(self, grad):
        a, b = self.inputs[0].data, self.inputs[1].data
        return grad / b, -grad * a / (b * b)


class _Scale(Function):
    def forward(self, x, factor):
        self.factor = factor
        return x * factor

    def backward(self, grad):
        return (grad * self.factor,)


class _Shift(Function):
    def forward(self, x, offset):
        return x + offset

    def backward(self, grad):
        return (grad,)


_BINARY = {"add": _Add, "sub": _Sub, "mul": _Mul, "div": _Div}


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Apply add | sub | mul | div between two tensors of equal rank.

    Raises:
        ConfigurationError: On unknown kind
        DimensionError: If extents differ other than by size-1 broadcast
    """
    if kind not in _BINARY:
        raise ConfigurationError(f"Unknown elementwise kind: {kind}")
    broadcast_shape(a.shape, b.shape, kind)
    return _BINARY[kind].apply(a, b)


def scale(x: Tensor, factor: float) -> Tensor:
    return _Scale.apply(x, factor=float(factor))


def shift(x: Tensor, offset: float) -> Tensor:
    return _Shift.apply(x, offset=float(offset))


def add(a: Operand, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return shift(a, b)
    if not isinstance(a, Tensor):
        return shift(b, a)
    return elementwise(a, b, "add")


def sub(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return shift(a, -b)
    return elementwise(a, b, "sub")


def mul(a: Operand, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, b)
    if not isinstance(a, Tensor):
        return scale(b, a)
    return elementwise(a, b, "mul")


def div(a: Tensor, b: Operand) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, 1.0 / b)
    return elementwise(a, b, "div")


# Pointwise nonlinearities

class _ReLU(Function):
    def forward(self, x):
        return np.maximum(x, 0.0)

    def backward(self, grad):
        return (grad * (self.inputs[0].data > 0),)


class _Sigmoid(Function):
    def forward(self, x):
        self.out = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class _GeLU(Function):
    """GeLU with the tanh approximation."""

    def forward(self, x):
        self.t = np.tanh(GELU_COEFF * (x + GELU_CUBIC * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x = self.inputs[0].data
        du = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * x * x)
        local = 0.5 * (1.0 + self.t) + 0.5 * x * (1.0 - self.t * self.t) * du
        return (grad * local,)


class _Log(Function):
    def forward(self, x):
        return np.log(x)

    def backward(self, grad):
        return (grad / self.inputs[0].data,)


class _Clip(Function):
    def forward(self, x, low, high):
        self.inside = (x >= low) & (x <= high)
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


_SCALAR_FNS = {"relu": _ReLU, "sigmoid": _Sigmoid, "gelu": _GeLU}


def scalar_fn(x: Tensor, kind: str) -> Tensor:
    """Apply gelu | relu | sigmoid pointwise."""
    if kind not in _SCALAR_FNS:
        raise ConfigurationError(f"Unknown scalar function: {kind}")
    return _SCALAR_FNS[kind].apply(x)


def relu(x: Tensor) -> Tensor:
    return _ReLU.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return _Sigmoid.apply(x)


def gelu(x: Tensor) -> Tensor:
    return _GeLU.apply(x)


def log(x: Tensor) -> Tensor:
    return _Log.apply(x)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    return _Clip.apply(x, low=low, high=high)


# Shape manipulation

class _Reshape(Function):
    def forward(self, x, shape):
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class _Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes
        return np.transpose(x, axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class _Concat(Function):
    def forward(self, *arrays, axis):
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"Cannot reshape {x.shape} into {shape}")
    return _Reshape.apply(x, shape=shape)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"Invalid permutation {axes} for rank {x.ndim}")
    return _Transpose.apply(x, axes=axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate tensors of equal rank along one axis (channels by default)."""
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    rank = tensors[0].ndim
    axis = axis % rank
    for t in tensors[1:]:
        if t.ndim != rank or any(
            t.shape[i] != tensors[0].shape[i] for i in range(rank) if i != axis
        ):
            raise DimensionError(
                f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}"
            )
    return _Concat.apply(*tensors, axis=axis)


def space_to_depth(x: Tensor, block: int) -> Tensor:
    """Fold non-overlapping block x block patches of an H x W x C map into channels."""
    height, width, channels = x.shape
    if height % block or width % block:
        raise DimensionError(f"Extents {x.shape[:2]} are not divisible by patch size {block}")
    patches = reshape(x, (height // block, block, width // block, block, channels))
    patches = transpose(patches, (0, 2, 1, 3, 4))
    return reshape(patches, (height // block, width // block, block * block * channels))


# Reductions

class _Sum(Function):
    def forward(self, x, axis, keepdims):
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        shape = self.inputs[0].shape
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, shape).copy(),)


def _normalize_axes(axis: Optional[Union[int, Sequence[int]]], ndim: int):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x: Tensor, axis: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return _Sum.apply(x, axis=_normalize_axes(axis, x.ndim), keepdims=keepdims)


def mean(x: Tensor, axis: Optional[Union[int, Sequence[int]]] = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axes, keepdims), 1.0 / count)


class _Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        exp = np.exp(shifted)
        self.out = exp / exp.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along one axis.

    Raises:
        DimensionError: If the axis is out of range or has extent 0
    """
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {x.shape}")
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise DimensionError(f"softmax over empty axis {axis} of shape {x.shape}")
    return _Softmax.apply(x, axis=axis)


# Linear algebra

class _MatMul(Function):
    def forward(self, a, b):
        return a @ b

    def backward(self, grad):
        a, b = self.inputs[0].data, self.inputs[1].data
        return grad @ b.T, a.T @ grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an m x k and a k x n tensor."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return _MatMul.apply(a, b)


class _Affine(Function):
    def forward(self, x, weight, bias):
        return x @ weight + bias

    def backward(self, grad):
        x, weight = self.inputs[0].data, self.inputs[1].data
        flat_x = x.reshape(-1, x.shape[-1])
        flat_g = grad.reshape(-1, grad.shape[-1])
        return grad @ weight.T, flat_x.T @ flat_g, flat_g.sum(axis=0)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Per-position affine map y = xW + b over the last extent."""
    if weight.ndim != 2 or bias.shape != (weight.shape[1],):
        raise DimensionError(f"Bad affine parameters: weight {weight.shape}, bias {bias.shape}")
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"Input channels {x.shape[-1]} != weight fan-in {weight.shape[0]}")
    return _Affine.apply(x, weight, bias)


def linear(x: Tensor, name: str, store: "ParameterStore") -> Tensor:
    """1x1 projection using the '<name>.weight' / '<name>.bias' parameters of a store.

    Raises:
        ConfigurationError: If the parameter name is unknown
        DimensionError: If the last extent differs from the registered fan-in
    """
    return affine(x, store[f"{name}.weight"], store[f"{name}.bias"])


def mean_pool(x: Tensor, axis: str) -> Tensor:
    """Average an H x W x C map over one spatial axis.

    Args:
        x: H x W x C tensor
        axis: 'width' (1 x W kernel, yields H x C) or 'height' (H x 1 kernel, yields W x C)
    """
    if x.ndim != 3:
        raise DimensionError(f"mean_pool expects H x W x C, got {x.shape}")
    if axis == "width":
        return mean(x, axis=1)
    if axis == "height":
        return mean(x, axis=0)
    raise ConfigurationError(f"Unknown pooling axis: {axis}")


# Resampling

def _interp_axis(in_size: int, out_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source indices and weights for align_corners=False, edge-clamped sampling."""
    source = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    source = np.clip(source, 0.0, in_size - 1)
    low = np.floor(source).astype(np.int64)
    high = np.minimum(low + 1, in_size - 1)
    return low, high, source - low


def _lerp_axis(x: np.ndarray, low, high, frac, axis: int) -> np.ndarray:
    shape = [1] * x.ndim
    shape[axis] = -1
    a = np.take(x, low, axis=axis)
    b = np.take(x, high, axis=axis)
    return a + frac.reshape(shape).astype(x.dtype) * (b - a)


def _lerp_axis_grad(grad: np.ndarray, low, high, frac, axis: int, in_size: int) -> np.ndarray:
    moved = np.moveaxis(grad, axis, 0)
    shape = [-1] + [1] * (moved.ndim - 1)
    weight = frac.reshape(shape).astype(grad.dtype)
    out = np.zeros((in_size,) + moved.shape[1:], dtype=grad.dtype)
    np.add.at(out, low, moved * (1.0 - weight))
    np.add.at(out, high, moved * weight)
    return np.moveaxis(out, 0, axis)


class _BilinearResize(Function):
    def forward(self, x, size):
        height, width = size
        self.rows = _interp_axis(x.shape[0], height)
        self.cols = _interp_axis(x.shape[1], width)
        tmp = _lerp_axis(x, *self.rows, axis=0)
        return _lerp_axis(tmp, *self.cols, axis=1)

    def backward(self, grad):
        in_h, in_w = self.inputs[0].shape[:2]
        grad = _lerp_axis_grad(grad, *self.cols, axis=1, in_size=in_w)
        return (_lerp_axis_grad(grad, *self.rows, axis=0, in_size=in_h),)


def bilinear_resize(x: Tensor, to: Tuple[int, int]) -> Tensor:
    """Bilinear resize of an h x w x C map to H x W x C.

    Uses the align_corners=False convention with edge clamping, written as
    a + t(b - a) so constant inputs stay exactly constant.
    """
    if x.ndim != 3:
        raise DimensionError(f"bilinear_resize expects h x w x C, got {x.shape}")
    height, width = int(to[0]), int(to[1])
    if height < 1 or width < 1:
        raise DimensionError(f"Target size must be at least 1 x 1, got {to}")
    return _BilinearResize.apply(x, size=(height, width))


def upsample2x(x: Tensor) -> Tensor:
    return bilinear_resize(x, (2 * x.shape[0], 2 * x.shape[1]))


# Lookup and regularization

class _GatherRows(Function):
    def forward(self, table, indices):
        self.indices = indices
        return table[indices]

    def backward(self, grad):
        out = np.zeros_like(self.inputs[0].data)
        np.add.at(out, self.indices, grad)
        return (out,)


def gather_rows(table: Tensor, indices: Sequence[int]) -> Tensor:
    """Select rows of a V x d table; gradients scatter back to the selected rows only."""
    indices = np.asarray(indices, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows expects a rank-2 table, got {table.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise DimensionError(f"Row index out of range for table with {table.shape[0]} rows")
    return _GatherRows.apply(table, indices=indices)


def dropout_mask(shape: Tuple[int, ...], probability: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout keep mask scaled by 1/(1-p)."""
    keep = rng.random(shape) >= probability
    return keep.astype(get_default_dtype()) / (1.0 - probability)


def dropout(x: Tensor, probability: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when rng is None (evaluation) or p == 0."""
    if rng is None or probability <= 0.0:
        return x
    if probability >= 1.0:
        raise ConfigurationError(f"Dropout probability must be < 1, got {probability}")
    return mul(x, constant(dropout_mask(x.shape, probability, rng)))
