"""Deterministic class-conditional toy images.

Class k draws from a fixed base pattern (Gaussian blob, ring or stripes,
cycling with k and shifting position, radius or frequency as k grows) plus
i.i.d. Gaussian pixel noise, clipped to [-1, 1]. Sample `index` depends only
on (seed, index).
"""
import asyncio
import logging
from contextlib import suppress
from typing import AsyncIterator

import numpy as np

from dic.utils.rng import stream

logger = logging.getLogger(__name__)

PATTERNS = ("blob", "ring", "stripes")


class ToyDataset:
    def __init__(
        self, num_classes: int, image_size: int, channels: int, noise_std: float = 0.1,
        seed: int = 0, dtype=np.float32,
    ):
        self.num_classes = num_classes
        self.image_size = image_size
        self.channels = channels
        self.noise_std = noise_std
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._patterns = np.stack([self._pattern(k) for k in range(num_classes)])

    def _pattern(self, k: int) -> np.ndarray:
        r = self.image_size
        coords = (np.arange(r, dtype=np.float64) + 0.5) / r
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        kind, level = PATTERNS[k % 3], k // 3
        if kind == "blob":
            cy = 0.3 + 0.4 * ((level * 0.37) % 1.0)
            cx = 0.3 + 0.4 * ((level * 0.61) % 1.0)
            base = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.12 ** 2))
        elif kind == "ring":
            radius = 0.25 + 0.1 * (level % 3)
            dist = np.sqrt((yy - 0.5) ** 2 + (xx - 0.5) ** 2)
            base = np.exp(-((dist - radius) ** 2) / (2 * 0.05 ** 2))
        else:
            freq = 2 + level
            axis = xx if level % 2 == 0 else yy
            base = 0.5 + 0.5 * np.cos(2 * np.pi * freq * axis)
        image = 2.0 * base - 1.0
        # Alternate channel polarity so every channel carries the class signal.
        signs = np.array([1.0 if c % 2 == 0 else -1.0 for c in range(self.channels)])
        return signs[:, None, None] * image[None]

    def mean_image(self, k: int) -> np.ndarray:
        return self._patterns[k].astype(self.dtype)

    def sample(self, index: int) -> tuple[np.ndarray, int]:
        rng = stream(self.seed, "data", index)
        y = int(rng.integers(self.num_classes))
        noise = rng.standard_normal(self._patterns[y].shape) * self.noise_std
        x0 = np.clip(self._patterns[y] + noise, -1.0, 1.0)
        return x0.astype(self.dtype), y

    def batch(self, step: int, batch_size: int) -> tuple[np.ndarray, np.ndarray]:
        samples = [self.sample(step * batch_size + i) for i in range(batch_size)]
        x0 = np.stack([s[0] for s in samples])
        y = np.array([s[1] for s in samples], dtype=np.int64)
        return x0, y

    def __iter__(self):
        index = 0
        while True:
            yield self.sample(index)
            index += 1


def generate_toy_dataset(
    num_classes: int, image_size: int, channels: int, seed: int, noise_std: float = 0.1, dtype=np.float32,
):
    """Endless stream of (x0, y), sample i a function of (seed, i) only."""
    return iter(ToyDataset(num_classes, image_size, channels, noise_std, seed, dtype))


_DONE = object()


async def prefetch_batches(
    dataset: ToyDataset, batch_size: int, start: int, stop: int, depth: int = 4,
) -> AsyncIterator[tuple[int, np.ndarray, np.ndarray]]:
    """Yield (step, x0, y) for steps [start, stop) in order, generated ahead in a worker thread."""
    queue: asyncio.Queue = asyncio.Queue(maxsize=max(1, depth))

    async def produce() -> None:
        try:
            for step in range(start, stop):
                x0, y = await asyncio.to_thread(dataset.batch, step, batch_size)
                await queue.put((step, x0, y))
        except Exception as e:
            logger.error(f"Error generating batch: {str(e)}")
            await queue.put(e)
            return
        await queue.put(_DONE)

    producer = asyncio.create_task(produce())
    try:
        while True:
            item = await queue.get()
            if item is _DONE:
                break
            if isinstance(item, Exception):
                raise item
            yield item
    finally:
        producer.cancel()
        with suppress(asyncio.CancelledError):
            await producer
