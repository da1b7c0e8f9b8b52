import asyncio
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

from tqdm import tqdm

from dic.config.run_config import RunConfig
from dic.config.settings import settings
from dic.engine.tensor import Tape, backward
from dic.errors import ConfigError, TrainingDivergedError
from dic.services.analyzer import count_flops
from dic.services.checkpoint import read_checkpoint, save_model
from dic.services.dataset import ToyDataset, prefetch_batches
from dic.services.diffusion import make_schedule, training_loss
from dic.services.model import DiCModel, build_model
from dic.services.optimizer import EMA, AdamW, grad_norm
from dic.utils.rng import stream

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("step", "loss", "grad_norm", "wallclock_ms")


@dataclass
class TrainResult:
    model: DiCModel
    final_step: int
    losses: list[float] = field(default_factory=list)
    checkpoint_path: Path | None = None
    metrics_path: Path | None = None


def step_gflops(run: RunConfig) -> float:
    """Forward + backward estimate for one optimizer step."""
    return count_flops(run.model) * run.optim.batch_size * 3 / 1e9


class Trainer:
    def __init__(self, run: RunConfig, resume: str | Path | None = None, progress: bool = True):
        self.run = run
        self.progress = progress
        self.schedule = make_schedule(run.model.num_timesteps, run.schedule.beta_start, run.schedule.beta_end)
        self.model = build_model(run.model, seed=run.seed, dtype=run.dtype)
        self.params = self.model.parameters()
        opt = run.optim
        self.optimizer = AdamW(self.params, opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay)
        self.ema = EMA(self.params, opt.ema_decay) if opt.ema else None
        self.dataset = ToyDataset(
            run.model.num_classes, run.model.image_size, run.model.in_channels,
            run.data.noise_std, run.seed, self.model.dtype,
        )
        self.step = 0
        self.resumed = False
        if resume is not None:
            self._resume(Path(resume))

    def _resume(self, path: Path) -> None:
        data = read_checkpoint(path)
        saved = data.run_config()
        for section in ("model", "schedule", "seed", "dtype"):
            if getattr(saved, section) != getattr(self.run, section):
                raise ConfigError(
                    f"checkpoint {section} differs from the run config", field=section, code="resume_mismatch"
                )
        self.model.load_state(data.params())
        self.optimizer.load_state(data.group("optim."), data.step)
        if self.ema is not None and data.group("ema/"):
            self.ema.load_state(data.group("ema/"))
        self.step = data.step
        self.resumed = True
        logger.info(f"Resumed from {path} at step {self.step}")

    def train_step(self, step: int, x0, y) -> tuple[float, float]:
        """One optimizer step; randomness comes from the step's own stream."""
        rng = stream(self.run.seed, "train", step)
        self.optimizer.zero_grad()
        with Tape() as tape:
            loss = training_loss(self.model, x0, y, rng, self.schedule)
        backward(loss, tape, leaves=self.params.values())
        value = loss.item()
        norm = grad_norm(self.params)
        if not (math.isfinite(value) and math.isfinite(norm)):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}", step=step, lr=self.optimizer.lr, grad_norm=norm
            )
        self.optimizer.step()
        if self.ema is not None:
            self.ema.update(self.params)
        return value, norm

    def _open_metrics(self) -> tuple[Path, object, csv.writer]:
        path = Path(self.run.checkpoint.metrics_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        append = self.resumed and path.exists() and self._truncate_metrics(path)
        f = path.open("a" if append else "w", newline="", encoding="utf-8")
        writer = csv.writer(f)
        if not append:
            writer.writerow(METRICS_COLUMNS)
        return path, f, writer

    def _truncate_metrics(self, path: Path) -> bool:
        """Drop rows at or past the resume step; False when there is nothing to keep."""
        with path.open(newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        if not rows or tuple(rows[0]) != METRICS_COLUMNS:
            return False
        kept = [rows[0], *(r for r in rows[1:] if r and int(r[0]) < self.step)]
        if len(kept) < len(rows):
            logger.warning(f"Dropping {len(rows) - len(kept)} metrics rows past step {self.step} in {path}")
            with path.open("w", newline="", encoding="utf-8") as f:
                csv.writer(f).writerows(kept)
        return True

    def _save(self, step: int) -> Path:
        path = Path(self.run.checkpoint.path)
        save_model(path, self.model, self.run, step=step, optimizer=self.optimizer, ema=self.ema)
        return path

    async def train_async(self) -> TrainResult:
        run = self.run
        total = run.optim.iterations
        estimate = step_gflops(run)
        if estimate > settings.WARN_STEP_GFLOPS:
            logger.warning(
                f"Estimated {estimate:.1f} GFLOPs per step exceeds {settings.WARN_STEP_GFLOPS}; "
                f"this config is not meant for desk-scale training"
            )
        logger.info(f"Training {run.model.variant.value} from step {self.step} to {total}, batch {run.optim.batch_size}")

        result = TrainResult(self.model, self.step)
        metrics_path, metrics_file, writer = self._open_metrics()
        result.metrics_path = metrics_path
        bar = tqdm(total=total, initial=self.step, desc="train", disable=not self.progress)
        try:
            batches = prefetch_batches(self.dataset, run.optim.batch_size, self.step, total, run.data.prefetch)
            async for step, x0, y in batches:
                started = time.perf_counter()
                loss, norm = await asyncio.to_thread(self.train_step, step, x0, y)
                elapsed_ms = (time.perf_counter() - started) * 1000.0
                writer.writerow([step, repr(loss), repr(norm), f"{elapsed_ms:.3f}"])
                result.losses.append(loss)
                self.step = step + 1
                bar.update(1)
                bar.set_postfix(loss=f"{loss:.4f}")
                if self.step % run.eval_every == 0:
                    recent = result.losses[-run.eval_every:]
                    logger.info(f"step {self.step}: mean loss {sum(recent) / len(recent):.5f}")
                if self.step % run.checkpoint.every == 0 and self.step < total:
                    metrics_file.flush()
                    await asyncio.to_thread(self._save, self.step)
        except TrainingDivergedError as e:
            logger.error(f"Error during training: {str(e)}")
            raise
        finally:
            bar.close()
            metrics_file.close()

        result.checkpoint_path = await asyncio.to_thread(self._save, self.step)
        result.final_step = self.step
        return result

    def train(self) -> TrainResult:
        return asyncio.run(self.train_async())


def train(run: RunConfig, resume: str | Path | None = None, progress: bool = True) -> TrainResult:
    return Trainer(run, resume=resume, progress=progress).train()
