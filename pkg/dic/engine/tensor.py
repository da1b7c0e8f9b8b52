"""Dense tensors with tape-based reverse-mode differentiation.

A `Tape` is opened around one forward pass; every differentiable op executed
while it is active appends a record holding its inputs, output and a backward
closure over the intermediates it saved. `backward` walks the records in
reverse exactly once and then clears the tape.
"""
import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from dic.errors import GradientError

logger = logging.getLogger(__name__)

FLOAT_DTYPES = {"float32": np.float32, "float64": np.float64}

_ACTIVE_TAPE: ContextVar["Tape | None"] = ContextVar("dic_active_tape", default=None)


def resolve_dtype(dtype: str | np.dtype | type | None) -> np.dtype:
    if dtype is None:
        return np.dtype(np.float32)
    if isinstance(dtype, str) and dtype in FLOAT_DTYPES:
        return np.dtype(FLOAT_DTYPES[dtype])
    return np.dtype(dtype)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # Operator sugar; the differentiable implementations live in ops.
    def __add__(self, other):
        from dic.engine import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from dic.engine import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from dic.engine import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from dic.engine import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float):
        from dic.engine import ops
        return ops.mul(self, 1.0 / float(other))

    def __neg__(self):
        from dic.engine import ops
        return ops.mul(self, -1.0)


class Parameter(Tensor):
    """Trainable leaf tensor with a hierarchical, model-unique name."""

    __slots__ = ()

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, name=name, dtype=dtype)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered op records of one forward pass; consumed by one `backward`."""

    def __init__(self):
        self._records: list[TapeRecord] = []
        self._cleared = False
        self._token = None

    def __enter__(self) -> "Tape":
        if self._cleared:
            raise GradientError("cannot record on a cleared tape", code="tape_cleared")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> tuple[TapeRecord, ...]:
        return tuple(self._records)

    @property
    def cleared(self) -> bool:
        return self._cleared

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, backward) -> None:
        self._records.append(TapeRecord(op, inputs, output, backward))

    def clear(self) -> None:
        self._records.clear()
        self._cleared = True


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def is_recording(*tensors: Tensor) -> bool:
    return _ACTIVE_TAPE.get() is not None and any(t.requires_grad for t in tensors)


def backward(loss: Tensor, tape: Tape, leaves: Iterable[Tensor] = ()) -> None:
    """Populate `.grad` on every requires-grad leaf reachable from `loss`.

    Leaves listed in `leaves` that the loss does not depend on receive zero
    gradients. The tape is cleared afterwards.
    """
    if loss.data.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.shape}", code="non_scalar_loss")
    if tape.cleared:
        raise GradientError("backward called on a cleared tape", code="tape_cleared")

    produced = {id(rec.output) for rec in tape.records}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    found: dict[int, Tensor] = {}

    for rec in reversed(tape.records):
        upstream = grads.pop(id(rec.output), None)
        if upstream is None:
            continue
        input_grads = rec.backward(upstream)
        for tensor, g in zip(rec.inputs, input_grads):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key not in produced:
                found[key] = tensor
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    for key, tensor in found.items():
        tensor.grad = np.asarray(grads[key], dtype=tensor.dtype).reshape(tensor.shape)
    for tensor in leaves:
        if id(tensor) not in found:
            tensor.grad = np.zeros_like(tensor.data)
    if id(loss) not in produced and loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    tape.clear()
