import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from dic.config.settings import settings
from dic.engine.ops import conv3x3_direct
from dic.engine.tensor import Tensor, resolve_dtype
from dic.engine.winograd import winograd_conv3x3, winograd_mult_count
from dic.utils.rng import stream
from dic.utils.table import format_table

logger = logging.getLogger(__name__)

# (N, Cin, H, W, Cout): trunk layer shapes of DiC-S at 32x32 plus the C>=64, H>=16 sanity shape.
DEFAULT_SHAPES: tuple[tuple[int, int, int, int, int], ...] = (
    (1, 64, 16, 16, 64),
    (1, 96, 32, 32, 96),
    (1, 192, 16, 16, 192),
    (1, 384, 8, 8, 384),
)

BENCH_HEADERS = ("layer shape", "direct ms", "winograd ms", "speedup", "mult ratio")


@dataclass
class BenchRow:
    shape: tuple[int, int, int, int, int]
    direct_ms: float
    winograd_ms: float
    mult_ratio: Fraction

    @property
    def speedup(self) -> float:
        return self.direct_ms / self.winograd_ms if self.winograd_ms > 0 else float("inf")

    def cells(self) -> list[object]:
        n, cin, h, w, cout = self.shape
        return [
            f"{n}x{cin}x{h}x{w}->{cout}", f"{self.direct_ms:.3f}", f"{self.winograd_ms:.3f}",
            f"{self.speedup:.2f}x", str(self.mult_ratio),
        ]


def best_ms(fn: Callable[[], object], repeats: int) -> float:
    fn()
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        timings.append((time.perf_counter() - started) * 1000.0)
    return min(timings)


def run_bench(
    shapes: Sequence[tuple[int, int, int, int, int]] = DEFAULT_SHAPES, repeats: int | None = None,
    seed: int = 0, dtype="float32",
) -> list[BenchRow]:
    """Wall time of direct vs Winograd conv, filter transform included."""
    repeats = repeats or settings.BENCH_REPEATS
    dt = resolve_dtype(dtype)
    rows = []
    for i, (n, cin, h, w, cout) in enumerate(shapes):
        rng = stream(seed, "bench", i)
        x = Tensor(rng.standard_normal((n, cin, h, w)).astype(dt))
        weight = Tensor(rng.standard_normal((cout, cin, 3, 3)).astype(dt))
        direct = best_ms(lambda: conv3x3_direct(x, weight), repeats)
        wino = best_ms(lambda: winograd_conv3x3(x, weight), repeats)
        ratio = winograd_mult_count(h, w, cin, cout).ratio
        rows.append(BenchRow((n, cin, h, w, cout), direct, wino, ratio))
        logger.info(f"bench {n}x{cin}x{h}x{w}->{cout}: direct {direct:.2f} ms, winograd {wino:.2f} ms")
    return rows


def format_bench(rows: Sequence[BenchRow]) -> str:
    return format_table(BENCH_HEADERS, [row.cells() for row in rows])


def winograd_agrees(shape: tuple[int, int, int, int, int], seed: int = 0, dtype="float64") -> float:
    """Max abs difference between the two conv paths on random data."""
    n, cin, h, w, cout = shape
    rng = stream(seed, "agree")
    dt = resolve_dtype(dtype)
    x = Tensor(rng.standard_normal((n, cin, h, w)).astype(dt))
    weight = Tensor(rng.standard_normal((cout, cin, 3, 3)).astype(dt))
    bias = Tensor(rng.standard_normal(cout).astype(dt))
    return float(np.max(np.abs(conv3x3_direct(x, weight, bias).data - winograd_conv3x3(x, weight, bias).data)))
