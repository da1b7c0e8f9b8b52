"""Linear probe classifier used to score class separability of generated samples."""
import logging

import numpy as np
from scipy.special import softmax

from dic.services.dataset import ToyDataset
from dic.services.diffusion import NoiseSchedule, sample
from dic.utils.rng import stream

logger = logging.getLogger(__name__)


class ProbeClassifier:
    """Softmax regression on standardized, flattened pixels."""

    def __init__(self, num_classes: int, dim: int):
        self.num_classes = num_classes
        self.weight = np.zeros((dim, num_classes))
        self.bias = np.zeros(num_classes)
        self.mean = np.zeros(dim)
        self.std = np.ones(dim)

    def _features(self, x: np.ndarray) -> np.ndarray:
        flat = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        return (flat - self.mean) / self.std

    def fit(self, x: np.ndarray, y: np.ndarray, epochs: int = 200, lr: float = 0.5, l2: float = 1e-3) -> "ProbeClassifier":
        flat = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        self.mean = flat.mean(axis=0)
        self.std = flat.std(axis=0) + 1e-6
        feats = self._features(x)
        onehot = np.eye(self.num_classes)[np.asarray(y)]
        n = len(feats)
        for _ in range(epochs):
            probs = softmax(feats @ self.weight + self.bias, axis=1)
            diff = (probs - onehot) / n
            self.weight -= lr * (feats.T @ diff + l2 * self.weight)
            self.bias -= lr * diff.sum(axis=0)
        return self

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self._features(x) @ self.weight + self.bias, axis=1)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(x) == np.asarray(y)).mean())


def train_probe(dataset: ToyDataset, n: int = 1000) -> ProbeClassifier:
    x, y = dataset.batch(0, n)
    probe = ProbeClassifier(dataset.num_classes, x[0].size).fit(x, y)
    logger.info(f"Probe train accuracy {probe.accuracy(x, y):.3f} on {n} samples")
    return probe


def guidance_separability(
    model, schedule: NoiseSchedule, probe: ProbeClassifier, scales, n: int, seed: int = 0, progress: bool = False,
) -> dict[float, float]:
    """Probe accuracy of n samples (classes round-robin) per guidance scale.

    Every scale starts from the same noise stream.
    """
    labels = np.arange(n, dtype=np.int64) % probe.num_classes
    results = {}
    for s in scales:
        images = sample(
            model, n, labels, float(s), schedule, stream(seed, "guidance"), dtype=model.dtype, progress=progress
        )
        results[float(s)] = probe.accuracy(images, labels)
        logger.info(f"cfg={s}: probe accuracy {results[float(s)]:.3f}")
    return results
