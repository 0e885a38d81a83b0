"""Named parameter storage with seeded initialization."""

import logging
import math
import zlib
from dataclasses import dataclass
from typing import Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import CheckpointError, ConfigurationError, DimensionError
from core.tensor import Tensor, get_default_dtype


@dataclass
class ParameterInfo:
    """Registration record for one parameter."""
    name: str
    shape: Tuple[int, ...]
    init: str  # "uniform", "zeros" or "ones"
    bound: float  # half-width of the uniform range (0 for constant inits)
    owner: str  # registering module


class ParameterStore(Mapping[str, Tensor]):
    """Registry of every trainable tensor, keyed by unique name.

    Each parameter is drawn from its own generator seeded by (seed, crc32(name)),
    so values do not depend on registration order.
    """

    INITIALIZERS = ("uniform", "zeros", "ones")

    def __init__(self, seed: int = 0, dtype: Optional[np.dtype] = None):
        """Initialize an empty store.

        Args:
            seed: Initializer seed
            dtype: Parameter dtype (default: current tensor default dtype)
        """
        self.seed = int(seed)
        self.dtype = np.dtype(dtype) if dtype is not None else get_default_dtype()
        self.logger = logging.getLogger(__name__)
        self._params: Dict[str, Tensor] = {}
        self._info: Dict[str, ParameterInfo] = {}

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise ConfigurationError(f"Unknown parameter: {name}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def register(
        self,
        name: str,
        shape: Sequence[int],
        fan_in: Optional[int] = None,
        init: str = "uniform",
        bound: Optional[float] = None,
        owner: str = "",
    ) -> Tensor:
        """Create a parameter.

        Args:
            name: Unique parameter name
            shape: Parameter extents
            fan_in: Input width for the default ±1/sqrt(fan_in) range
            init: 'uniform', 'zeros' or 'ones'
            bound: Explicit half-width overriding the fan-in rule
            owner: Name of the registering module

        Raises:
            ConfigurationError: On duplicate name or unknown initializer
        """
        if name in self._params:
            raise ConfigurationError(
                f"Parameter '{name}' already registered by '{self._info[name].owner}'"
            )
        if init not in self.INITIALIZERS:
            raise ConfigurationError(f"Unknown initializer: {init}")
        shape = tuple(int(s) for s in shape)

        if init == "uniform":
            if bound is None:
                if not fan_in:
                    raise ConfigurationError(f"Parameter '{name}' needs fan_in or bound")
                bound = 1.0 / math.sqrt(fan_in)
            rng = np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])
            values = rng.uniform(-bound, bound, size=shape)
        else:
            bound = 0.0
            values = np.zeros(shape) if init == "zeros" else np.ones(shape)

        tensor = Tensor(values, grad_enabled=True, dtype=self.dtype, name=name)
        self._params[name] = tensor
        self._info[name] = ParameterInfo(name=name, shape=shape, init=init, bound=float(bound), owner=owner)
        return tensor

    def register_linear(self, name: str, in_features: int, out_features: int,
                        owner: str = "", zero: bool = False) -> None:
        """Register '<name>.weight' (in x out) and '<name>.bias' (out) for a 1x1 projection."""
        init = "zeros" if zero else "uniform"
        self.register(f"{name}.weight", (in_features, out_features), fan_in=in_features, init=init, owner=owner)
        self.register(f"{name}.bias", (out_features,), fan_in=in_features, init=init, owner=owner)

    def info(self, name: str) -> ParameterInfo:
        if name not in self._info:
            raise ConfigurationError(f"Unknown parameter: {name}")
        return self._info[name]

    def owner(self, name: str) -> str:
        return self.info(name).owner

    def assign(self, name: str, values: np.ndarray) -> None:
        """Replace a parameter's values, keeping its identity and dtype."""
        tensor = self[name]
        values = np.asarray(values)
        if values.shape != tensor.shape:
            raise DimensionError(f"Cannot assign shape {values.shape} to '{name}' of shape {tensor.shape}")
        array = np.array(values, dtype=self.dtype)
        array.setflags(write=False)
        tensor.data = array

    def num_elements(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Copy of every parameter array, in registration order."""
        return {name: np.array(t.data) for name, t in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        """Assign values from a name -> array mapping.

        Raises:
            CheckpointError: On missing/unexpected names (strict) or shape mismatch
        """
        missing = [n for n in self._params if n not in state]
        unexpected = [n for n in state if n not in self._params]
        if strict and (missing or unexpected):
            raise CheckpointError(
                f"Checkpoint does not match model: missing={missing[:5]} unexpected={unexpected[:5]}"
            )
        for name, values in state.items():
            if name not in self._params:
                continue
            if tuple(values.shape) != self._params[name].shape:
                raise CheckpointError(
                    f"Shape mismatch for '{name}': {tuple(values.shape)} vs {self._params[name].shape}"
                )
            self.assign(name, values)
        self.logger.debug(f"Loaded {len(state)} parameters into store")
