"""Roadmap ablations: the four architectures and the cumulative conditioning steps."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from dic.config.model_config import Activation, Injection, ModelConfig, Variant
from dic.config.run_config import CheckpointConfig, RunConfig
from dic.config.settings import settings
from dic.engine import ops
from dic.engine.tensor import Tensor
from dic.errors import ConfigError
from dic.services.analyzer import analyze
from dic.services.dataset import ToyDataset
from dic.services.diffusion import NoiseSchedule, make_schedule, q_sample
from dic.services.model import DiCModel
from dic.services.trainer import Trainer
from dic.utils.rng import stream
from dic.utils.table import format_table

logger = logging.getLogger(__name__)

EVAL_OFFSET = 1_000_000


def architecture_suite(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Isotropic -> +skip -> hourglass -> hourglass with sparse skips."""
    return [
        ("Isotropic", base.replace(variant=Variant.ISOTROPIC)),
        ("Isotropic + Skip", base.replace(variant=Variant.ISOTROPIC_SKIP)),
        ("U-Net Hourglass", base.replace(variant=Variant.UNET_DENSE)),
        ("U-Net + Sparse Skip", base.replace(variant=Variant.UNET_SPARSE_SKIP)),
    ]


def conditioning_suite(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Each step keeps the previous ones; the last step is the full DiC recipe."""
    baseline = base.replace(
        variant=Variant.UNET_SPARSE_SKIP, stage_specific_embeddings=False, injection=Injection.PRE_BLOCK,
        gating=False, activation=Activation.SILU,
    )
    specific = baseline.replace(stage_specific_embeddings=True)
    mid = specific.replace(injection=Injection.MID_BLOCK)
    gated = mid.replace(gating=True)
    return [
        ("Sparse-skip baseline", baseline),
        ("+ stage-specific embeddings", specific),
        ("+ mid-block injection", mid),
        ("+ conditional gating", gated),
        ("+ GELU", gated.replace(activation=Activation.GELU)),
    ]


SUITES = {"architecture": architecture_suite, "conditioning": conditioning_suite}


@dataclass
class AblationRow:
    name: str
    config: ModelConfig
    params: int
    gflops: float
    eval_losses: list[float] = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.eval_losses)) if self.eval_losses else float("nan")


def evaluate_loss(model: DiCModel, schedule: NoiseSchedule, dataset: ToyDataset, seed: int, n: int = 256) -> float:
    """Denoising loss on a held-out batch with fixed t and noise, no label drop."""
    rng = stream(seed, "eval")
    x0, y = dataset.batch(EVAL_OFFSET, n)
    t = rng.integers(0, schedule.T, size=n)
    noise = rng.standard_normal(x0.shape).astype(x0.dtype)
    pred = model.forward(Tensor(q_sample(x0, t, noise, schedule)), t, y)
    return ops.mse_loss(pred, Tensor(noise)).item()


def run_ablation(
    suite: str, base: RunConfig, seeds: Sequence[int] = (0,), out_dir: str | Path | None = None,
    progress: bool = False,
) -> list[AblationRow]:
    if suite not in SUITES:
        raise ConfigError(f"unknown suite {suite}; choose from {', '.join(SUITES)}", field="--suite")
    out_dir = Path(out_dir or settings.OUTPUT_DIR) / "ablate" / suite
    rows = []
    for name, config in SUITES[suite](base.model):
        report = analyze(config)
        row = AblationRow(name, config, report.params, report.flops_direct / 1e9)
        slug = name.lower().replace(" ", "_").replace("+", "plus").replace("-", "_")
        for seed in seeds:
            run_dir = out_dir / slug / f"seed{seed}"
            run = base.replace(
                model=config, seed=seed,
                checkpoint=CheckpointConfig(
                    path=str(run_dir / "dic.ckpt"), every=base.checkpoint.every,
                    metrics_path=str(run_dir / "metrics.csv"),
                ),
            )
            trainer = Trainer(run, progress=progress)
            trainer.train()
            schedule = make_schedule(config.num_timesteps, run.schedule.beta_start, run.schedule.beta_end)
            loss = evaluate_loss(trainer.model, schedule, trainer.dataset, seed)
            row.eval_losses.append(loss)
            logger.info(f"[{suite}] {name} seed={seed}: eval loss {loss:.5f}")
        rows.append(row)
    return rows


def seed_wins(better: AblationRow, worse: AblationRow) -> int:
    """Seeds on which `better` ends at or below `worse`."""
    return sum(a <= b for a, b in zip(better.eval_losses, worse.eval_losses))


def format_ablation(rows: Sequence[AblationRow]) -> str:
    seeds = max((len(r.eval_losses) for r in rows), default=0)
    headers = ["model", "params", "GFLOPs", *[f"seed{i}" for i in range(seeds)], "mean loss"]
    body = [
        [r.name, r.params, f"{r.gflops:.4f}", *[f"{v:.5f}" for v in r.eval_losses], f"{r.mean_loss:.5f}"]
        for r in rows
    ]
    return format_table(headers, body)
