"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Ops applied while a GradTape is active are
recorded on that tape in creation order, which is already a topological
order; backward() replays the tape in reverse and returns a gradient map
instead of mutating the tensors, so independent graphs can be
differentiated concurrently.
"""

from __future__ import annotations

import contextvars
import itertools
import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core.errors import DimensionError, GradientError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_default_dtype: np.dtype = np.dtype(np.float64)
_active_tape: contextvars.ContextVar[Optional["GradTape"]] = contextvars.ContextVar(
    "cprn_active_tape", default=None
)
_tape_ids = itertools.count(1)


def set_default_dtype(dtype: Union[str, np.dtype, type]) -> None:
    """Set the floating dtype used for new tensors and parameters.

    Args:
        dtype: 'float64' (default) or 'float32'
    """
    global _default_dtype
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"Unsupported tensor dtype: {resolved}")
    _default_dtype = resolved


def get_default_dtype() -> np.dtype:
    """Return the floating dtype used for new tensors."""
    return _default_dtype


def active_tape() -> Optional["GradTape"]:
    """Return the tape recording ops in the current context, if any."""
    return _active_tape.get()


class Function:
    """Base class for differentiable operations.

    Subclasses implement forward() on raw arrays and backward() returning one
    gradient (or None) per input tensor, in input order.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs: Tuple["Tensor", ...] = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        """Run the op and record it on the active tape when any input tracks gradients."""
        func = cls(*inputs)
        out = func.forward(*(t.data for t in inputs), **kwargs)
        tape = _active_tape.get()
        tracked = tape is not None and any(t.grad_enabled for t in inputs)
        result = Tensor.wrap(out, grad_enabled=tracked)
        if tracked:
            result.creator = func
            tape.record(result)
        return result


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the size-1 extents it was broadcast along."""
    if grad.shape == tuple(shape):
        return grad
    axes = tuple(
        axis for axis, (extent, target) in enumerate(zip(grad.shape, shape))
        if target == 1 and extent != 1
    )
    return grad.sum(axis=axes, keepdims=True)


class Tensor:
    """Dense row-major float tensor.

    Attributes:
        data: Read-only numpy buffer holding the values
        grad_enabled: Whether gradients flow into this tensor
        creator: Op that produced the tensor (None for leaves)
        tape: Tape the tensor was recorded on (None for leaves and untracked values)
        tape_id: Position of the tensor on its tape
    """

    def __init__(
        self,
        data: ArrayLike,
        grad_enabled: bool = False,
        dtype: Optional[Union[str, np.dtype]] = None,
        name: Optional[str] = None,
    ):
        array = np.array(data, dtype=dtype or _default_dtype)
        array.setflags(write=False)
        self.data: np.ndarray = array
        self.grad_enabled = grad_enabled
        self.creator: Optional[Function] = None
        self.tape: Optional[GradTape] = None
        self.tape_id: Optional[int] = None
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, grad_enabled: bool = False) -> "Tensor":
        """Wrap an op result without copying it."""
        tensor = cls.__new__(cls)
        array = np.asarray(array)
        if not np.issubdtype(array.dtype, np.floating):
            array = array.astype(_default_dtype)
        array.setflags(write=False)
        tensor.data = array
        tensor.grad_enabled = grad_enabled
        tensor.creator = None
        tensor.tape = None
        tensor.tape_id = None
        tensor.name = None
        return tensor

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return np.array(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad_enabled={self.grad_enabled}{label})"

    # Operator sugar; the implementations live in core.ops

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from core import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        from core import ops
        return ops.sub(self, other)

    def __rsub__(self, other: float) -> "Tensor":
        from core import ops
        return ops.shift(ops.scale(self, -1.0), other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from core import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Tensor", float]) -> "Tensor":
        from core import ops
        return ops.div(self, other)

    def __neg__(self) -> "Tensor":
        from core import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from core import ops
        return ops.matmul(self, other)


class GradTape:
    """Ordered record of the ops evaluated inside a `with GradTape():` block."""

    def __init__(self):
        self.tape_id = next(_tape_ids)
        self.nodes: List[Tensor] = []
        self.consumed = False
        self._token: Optional[contextvars.Token] = None

    def __enter__(self) -> "GradTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, tensor: Tensor) -> None:
        if self.consumed:
            raise GradientError("Tape already consumed by backward(); call reset() before recording")
        tensor.tape = self
        tensor.tape_id = len(self.nodes)
        self.nodes.append(tensor)

    def reset(self) -> None:
        """Forget recorded ops so the tape can be reused."""
        self.nodes = []
        self.consumed = False


class GradientMap(dict):
    """Parameter-name -> gradient mapping returned by backward().

    Gradients of any other tensor that took part in the graph are
    available through of().
    """

    def __init__(self, named: Mapping[str, np.ndarray], by_id: Dict[int, np.ndarray]):
        super().__init__(named)
        self._by_id = by_id

    def of(self, tensor: Tensor) -> Optional[np.ndarray]:
        return self._by_id.get(id(tensor))


def backward(loss: Tensor, store: Optional[Mapping[str, Tensor]] = None) -> GradientMap:
    """Differentiate a scalar loss with respect to every tracked tensor.

    Args:
        loss: Scalar tensor recorded on a tape
        store: Optional name -> tensor mapping (usually a ParameterStore);
            every name gets an entry, zero if it did not take part

    Returns:
        GradientMap keyed by parameter name

    Raises:
        GradientError: If loss is not scalar, not on a tape, or the tape was
            already consumed
    """
    if loss.size != 1:
        raise GradientError(f"backward() expects a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None or loss.tape_id is None:
        raise GradientError("Loss is not connected to a gradient tape")
    if tape.consumed:
        raise GradientError("backward() already ran on this tape; call reset() first")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes[: loss.tape_id + 1]):
        grad = grads.get(id(node))
        if grad is None:
            continue
        func = node.creator
        for source, source_grad in zip(func.inputs, func.backward(grad)):
            if source_grad is None or not source.grad_enabled:
                continue
            source_grad = unbroadcast(source_grad, source.shape)
            key = id(source)
            grads[key] = grads[key] + source_grad if key in grads else source_grad
    tape.consumed = True

    named: Dict[str, np.ndarray] = {}
    if store is not None:
        for name, tensor in store.items():
            grad = grads.get(id(tensor))
            named[name] = grad if grad is not None else np.zeros_like(tensor.data)
    logger.debug(f"backward visited {loss.tape_id + 1} nodes on tape {tape.tape_id}")
    return GradientMap(named, grads)
