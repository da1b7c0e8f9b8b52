from typing import Callable, Sequence

import numpy as np
import pytest

from dic.config.model_config import ModelConfig, preset
from dic.config.run_config import CheckpointConfig, OptimConfig, RunConfig
from dic.engine import ops
from dic.engine.tensor import Tape, Tensor, backward

TINY = dict(base_channels=8, groups=2, image_size=8, freq_dim=16, num_timesteps=10)


def tiny_config(**overrides) -> ModelConfig:
    """DiC-micro shrunk to 8x8 / 8 channels; fast enough for per-test builds."""
    return preset("DiC-micro", **{**TINY, **overrides})


def tiny_run(tmp_path, iterations: int = 4, batch_size: int = 4, every: int = 2, **model_overrides) -> RunConfig:
    return RunConfig(
        model=tiny_config(**model_overrides),
        optim=OptimConfig(iterations=iterations, batch_size=batch_size, lr=1e-3),
        checkpoint=CheckpointConfig(
            path=str(tmp_path / "dic.ckpt"), every=every, metrics_path=str(tmp_path / "metrics.csv")
        ),
        eval_every=2,
    )


def numerical_grad(fn: Callable[[np.ndarray], float], array: np.ndarray, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + h
        plus = fn(array)
        array[index] = original - h
        minus = fn(array)
        array[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


def assert_op_gradients(build: Callable[..., Tensor], arrays: Sequence[np.ndarray], seed: int = 0) -> None:
    """Tape gradients of sum(build(*inputs) * R) against central differences, float64."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    projection = np.random.default_rng(seed).standard_normal(out_shape)

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = ops.sum(ops.mul(build(*tensors), Tensor(projection)))
    backward(loss, tape, leaves=tensors)

    for i, tensor in enumerate(tensors):
        def scalar(value: np.ndarray, i=i) -> float:
            inputs = [Tensor(value) if j == i else Tensor(a) for j, a in enumerate(arrays)]
            return float((build(*inputs).data * projection).sum())

        numeric = numerical_grad(scalar, arrays[i].copy())
        np.testing.assert_allclose(tensor.grad, numeric, rtol=1e-5, atol=1e-7)


@pytest.fixture
def micro_config() -> ModelConfig:
    return preset("DiC-micro")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
