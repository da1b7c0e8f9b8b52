import asyncio
import io
import logging
from pathlib import Path

import aiofiles
import numpy as np
from PIL import Image

from dic.config.settings import settings
from dic.services.checkpoint import load_model
from dic.services.diffusion import make_schedule, sample
from dic.utils.rng import stream

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 255], linear, clipped; CHW -> HWC with three channels."""
    scaled = np.clip(np.rint((np.asarray(image, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)
    c = scaled.shape[0]
    if c >= 3:
        rgb = scaled[:3]
    else:
        rgb = np.repeat(scaled[:1], 3, axis=0)
    return np.ascontiguousarray(rgb.transpose(1, 2, 0))


def encode_ppm(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PPM")
    return buf.getvalue()


class SampleService:
    def __init__(self, concurrency: int | None = None):
        self.concurrency = concurrency or settings.SAMPLE_CONCURRENCY
        self.semaphore: asyncio.Semaphore | None = None

    async def _write(self, path: Path, payload: bytes) -> Path:
        async with self.semaphore:
            try:
                async with aiofiles.open(path, "wb") as f:
                    await f.write(payload)
            except OSError as e:
                logger.error(f"Error writing {path}: {str(e)}")
                raise
        return path

    async def write_samples(self, samples: np.ndarray, out_dir: str | Path, prefix: str = "sample") -> list[Path]:
        """One PPM (P6) and one raw little-endian f32 dump per sample."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        # Bound to the running loop, so created per call.
        self.semaphore = asyncio.Semaphore(self.concurrency)
        jobs = []
        for i, image in enumerate(samples):
            stem = out_dir / f"{prefix}_{i:03d}"
            jobs.append(self._write(stem.with_suffix(".ppm"), encode_ppm(image)))
            jobs.append(self._write(stem.with_suffix(".f32"), np.asarray(image, dtype="<f4").tobytes()))
        paths = await asyncio.gather(*jobs)
        logger.info(f"Wrote {len(samples)} samples to {out_dir}")
        return list(paths)

    def generate(
        self, ckpt: str | Path, class_label: int, cfg: float, n: int, out_dir: str | Path,
        seed: int = 0, use_ema: bool = True, winograd: bool = False, progress: bool = True,
    ) -> list[Path]:
        model, run, _ = load_model(ckpt, use_ema=use_ema)
        if winograd:
            model.use_winograd(True)
        schedule = make_schedule(run.model.num_timesteps, run.schedule.beta_start, run.schedule.beta_end)
        labels = np.full(n, class_label, dtype=np.int64)
        logger.info(f"Sampling {n} images of class {class_label} at cfg={cfg} from {ckpt}")
        images = sample(
            model, n, labels, cfg, schedule, stream(seed, "sample"), dtype=model.dtype, progress=progress
        )
        return asyncio.run(self.write_samples(images, out_dir, prefix=f"class{class_label}"))
