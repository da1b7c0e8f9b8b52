import logging
import math
from typing import Iterator

import numpy as np

from dic.engine import ops
from dic.engine.tensor import Parameter, Tensor, resolve_dtype
from dic.engine.winograd import transform_filter, winograd_conv3x3
from dic.errors import ConfigError
from dic.utils.rng import stream

logger = logging.getLogger(__name__)


class ParameterStore:
    """Name-keyed registry that creates and owns every parameter of a model.

    Initial values are drawn in creation order from one seeded stream, in 64-bit,
    then cast, so a float32 and a float64 build of the same seed agree.
    """

    def __init__(self, seed: int, dtype="float32"):
        self.dtype = resolve_dtype(dtype)
        self._rng = stream(seed, "init")
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name}", code="duplicate_parameter")
        param = Parameter(np.asarray(data, dtype=self.dtype), name=name)
        self._params[name] = param
        return param

    def normal(self, name: str, shape: tuple[int, ...], std: float) -> Parameter:
        return self.add(name, self._rng.standard_normal(shape) * std)

    def zeros(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Parameter:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def num_params(self) -> int:
        return sum(p.data.size for p in self._params.values())


class Conv3x3:
    def __init__(
        self, store: ParameterStore, name: str, cin: int, cout: int,
        stride: int = 1, zero_init: bool = False, winograd_eligible: bool = True,
    ):
        shape = (cout, cin, 3, 3)
        if zero_init:
            self.weight = store.zeros(f"{name}.weight", shape)
        else:
            self.weight = store.normal(f"{name}.weight", shape, 1.0 / math.sqrt(cin * 9))
        self.bias = store.zeros(f"{name}.bias", (cout,))
        self.name = name
        self.stride = stride
        self.winograd_eligible = winograd_eligible and stride == 1
        self.winograd = False
        self._filter_src: np.ndarray | None = None
        self._filter: np.ndarray | None = None

    def _transformed(self) -> np.ndarray:
        # Cache keyed on the weight buffer; optimizer updates swap the buffer.
        if self._filter_src is not self.weight.data:
            self._filter = transform_filter(self.weight.data)
            self._filter_src = self.weight.data
        return self._filter

    def __call__(self, x: Tensor) -> Tensor:
        if self.winograd and self.winograd_eligible:
            return winograd_conv3x3(x, self.weight, self.bias, transformed=self._transformed())
        return ops.conv3x3_direct(x, self.weight, self.bias, stride=self.stride)


class PatchConv:
    """2x2 stride-2 patch embedding."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int):
        self.weight = store.normal(f"{name}.weight", (cout, cin, 2, 2), 1.0 / math.sqrt(cin * 4))
        self.bias = store.zeros(f"{name}.bias", (cout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.patchify_conv(x, self.weight, self.bias)


class GroupNorm:
    def __init__(self, store: ParameterStore, name: str, channels: int, groups: int, eps: float = 1e-5):
        self.gamma = store.ones(f"{name}.weight", (channels,))
        self.beta = store.zeros(f"{name}.bias", (channels,))
        self.groups = groups
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ops.group_norm(x, self.groups, self.gamma, self.beta, self.eps)


class Linear:
    def __init__(self, store: ParameterStore, name: str, din: int, dout: int, zero_init: bool = False):
        if zero_init:
            self.weight = store.zeros(f"{name}.weight", (dout, din))
        else:
            self.weight = store.normal(f"{name}.weight", (dout, din), 1.0 / math.sqrt(din))
        self.bias = store.zeros(f"{name}.bias", (dout,))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Embedding:
    def __init__(self, store: ParameterStore, name: str, rows: int, dim: int, std: float = 0.02):
        self.table = store.normal(f"{name}.weight", (rows, dim), std)

    def __call__(self, indices: np.ndarray) -> Tensor:
        return ops.embedding(self.table, indices)
