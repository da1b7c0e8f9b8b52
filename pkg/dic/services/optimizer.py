import logging
import math

import numpy as np

from dic.engine.tensor import Parameter

logger = logging.getLogger(__name__)


def grad_norm(params: dict[str, Parameter]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            g = p.grad.astype(np.float64)
            total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


class AdamW:
    """Adam with decoupled weight decay. Updates swap in fresh parameter buffers."""

    def __init__(
        self, params: dict[str, Parameter], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
        eps: float = 1e-8, weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = (p.data - self.lr * update).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {f"optim.m/{name}": m for name, m in self.m.items()}
        state.update({f"optim.v/{name}": v for name, v in self.v.items()})
        return state

    def load_state(self, state: dict[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params.items():
            self.m[name] = np.asarray(state[f"optim.m/{name}"], dtype=p.dtype).reshape(p.shape)
            self.v[name] = np.asarray(state[f"optim.v/{name}"], dtype=p.dtype).reshape(p.shape)
        self.step_count = step_count


class EMA:
    """Exponential moving average of parameters."""

    def __init__(self, params: dict[str, Parameter], decay: float = 0.9999):
        self.decay = decay
        self.shadow = {name: p.data.copy() for name, p in params.items()}

    def update(self, params: dict[str, Parameter]) -> None:
        for name, p in params.items():
            self.shadow[name] = (self.decay * self.shadow[name] + (1.0 - self.decay) * p.data).astype(p.dtype)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"ema/{name}": data for name, data in self.shadow.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name in self.shadow:
            self.shadow[name] = np.asarray(state[f"ema/{name}"], dtype=self.shadow[name].dtype)
