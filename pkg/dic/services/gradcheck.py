"""Central finite-difference checks of tape gradients."""
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dic.config.model_config import ModelConfig, preset
from dic.engine import ops
from dic.engine.tensor import Parameter, Tape, Tensor, backward
from dic.services.dataset import ToyDataset
from dic.services.diffusion import make_schedule, q_sample
from dic.services.model import DiCModel, build_model
from dic.utils.rng import stream

logger = logging.getLogger(__name__)


@dataclass
class TensorCheck:
    name: str
    coords: int
    max_rel_err: float


@dataclass
class GradCheckReport:
    tolerance: float
    checks: list[TensorCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    @property
    def failures(self) -> list[TensorCheck]:
        return [c for c in self.checks if c.max_rel_err >= self.tolerance]


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)


def check_gradients(
    loss_fn: Callable[[], Tensor], params: dict[str, Tensor], rng: np.random.Generator,
    coords: int = 20, h: float = 1e-5, tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare backward() against central differences at sampled coordinates of each tensor."""
    with Tape() as tape:
        loss = loss_fn()
    backward(loss, tape, leaves=params.values())
    analytic = {name: p.grad.copy() for name, p in params.items()}

    report = GradCheckReport(tolerance)
    for name, p in params.items():
        original = p.data
        picks = rng.choice(original.size, size=min(coords, original.size), replace=False)
        worst = 0.0
        for index in picks:
            values = []
            for delta in (h, -h):
                shifted = original.copy()
                shifted.flat[index] += delta
                p.data = shifted
                values.append(loss_fn().item())
            p.data = original
            numeric = (values[0] - values[1]) / (2 * h)
            worst = max(worst, relative_error(float(analytic[name].flat[index]), numeric))
        report.checks.append(TensorCheck(name, len(picks), worst))
    return report


def perturb(model: DiCModel, seed: int, scale: float = 0.1) -> None:
    """Move every parameter off its initialization so no gradient is trivially zero."""
    rng = stream(seed, "gradcheck-perturb")
    for p in model.parameters().values():
        p.data = (p.data + scale * rng.standard_normal(p.shape)).astype(p.dtype)


def model_gradcheck(
    config: ModelConfig | None = None, seed: int = 0, batch: int = 2,
    coords: int = 20, h: float = 1e-5, tolerance: float = 1e-4,
) -> GradCheckReport:
    """Full forward + MSE loss on a float64 model with fixed x0, t, y and noise."""
    config = config or preset("DiC-micro")
    model = build_model(config, seed=seed, dtype="float64")
    perturb(model, seed)
    rng = stream(seed, "gradcheck")
    data = ToyDataset(config.num_classes, config.image_size, config.in_channels, seed=seed, dtype=np.float64)
    x0, y = data.batch(0, batch)
    y[-1] = config.num_classes
    schedule = make_schedule(config.num_timesteps)
    t = rng.integers(0, schedule.T, size=batch)
    noise = rng.standard_normal(x0.shape)
    x_t = Tensor(q_sample(x0, t, noise, schedule))
    target = Tensor(noise)

    def loss_fn() -> Tensor:
        return ops.mse_loss(model.forward(x_t, t, y), target)

    params: dict[str, Parameter] = model.parameters()
    report = check_gradients(loss_fn, params, rng, coords=coords, h=h, tolerance=tolerance)
    logger.info(
        f"Gradient check over {len(report.checks)} tensors: max rel err {report.max_rel_err:.3e} "
        f"({'pass' if report.passed else 'FAIL'})"
    )
    return report
