"""Timestep and class conditioning.

Each stage owns a condition embedding at its own channel width (or, in shared
mode, projects one base-width embedding). Every block owns a modulation head
that turns its stage's embedding into (scale, shift, gate).
"""
import logging
from dataclasses import dataclass

import numpy as np

from dic.config.model_config import ModelConfig
from dic.engine import ops
from dic.engine.tensor import Tensor
from dic.errors import ShapeError
from dic.services.layers import Embedding, Linear, ParameterStore

logger = logging.getLogger(__name__)


def timestep_embedding(t, dim: int, dtype=np.float64) -> np.ndarray:
    """Interleaved sin/cos at frequencies 10000^(-2i/dim); shape t.shape + (dim,)."""
    if dim < 2 or dim % 2:
        raise ShapeError(f"embedding dim must be even, got {dim}", field="dim")
    steps = np.asarray(t, dtype=np.float64)
    freqs = 1.0 / 10000.0 ** (np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = steps[..., None] * freqs
    emb = np.empty(steps.shape + (dim,), dtype=np.float64)
    emb[..., 0::2] = np.sin(angles)
    emb[..., 1::2] = np.cos(angles)
    return emb.astype(dtype)


def apply_label_drop(y: np.ndarray, p: float, rng: np.random.Generator, null_index: int) -> np.ndarray:
    """Replace each label by `null_index` with probability p.

    Called once per step, upstream of every stage, so all stages see the same y'.
    """
    if not 0.0 <= p < 1.0:
        raise ShapeError(f"label drop probability must be in [0, 1), got {p}", field="label_drop_prob")
    y = np.asarray(y, dtype=np.int64)
    if p == 0.0:
        return y.copy()
    dropped = rng.random(y.shape) < p
    return np.where(dropped, null_index, y)


def check_indices(t: np.ndarray, y: np.ndarray, num_timesteps: int, num_classes: int) -> None:
    if t.size and (t.min() < 0 or t.max() >= num_timesteps):
        raise ShapeError(f"timestep out of range [0, {num_timesteps})", field="t", code="index_out_of_range")
    if y.size and (y.min() < 0 or y.max() > num_classes):
        raise ShapeError(f"class index out of range [0, {num_classes}]", field="y", code="index_out_of_range")


@dataclass
class Modulation:
    scale: Tensor
    shift: Tensor
    gate: Tensor | None = None


class StageEmbedder:
    """time MLP(sinusoid) + class table row, at one channel width."""

    def __init__(self, store: ParameterStore, name: str, freq_dim: int, hidden: int, channels: int, rows: int):
        self.time_fc1 = Linear(store, f"{name}.time_fc1", freq_dim, hidden)
        self.time_fc2 = Linear(store, f"{name}.time_fc2", hidden, channels)
        self.class_table = Embedding(store, f"{name}.class_table", rows, channels)

    def __call__(self, emb: Tensor, y: np.ndarray, act) -> Tensor:
        return ops.add(self.time_fc2(act(self.time_fc1(emb))), self.class_table(y))


class ModulationHead:
    def __init__(self, store: ParameterStore, name: str, channels: int, gating: bool):
        self.scale = Linear(store, f"{name}.scale", channels, channels, zero_init=True)
        self.shift = Linear(store, f"{name}.shift", channels, channels, zero_init=True)
        self.gate = Linear(store, f"{name}.gate", channels, channels, zero_init=True) if gating else None

    def __call__(self, vec: Tensor) -> Modulation:
        gate = self.gate(vec) if self.gate is not None else None
        return Modulation(self.scale(vec), self.shift(vec), gate)


class ConditionTables:
    def __init__(self, store: ParameterStore, config: ModelConfig):
        self.config = config
        self.dtype = store.dtype
        self.act = ops.ACTIVATIONS[config.activation.value]
        self.plan = {s.stage_id: s for s in config.stage_plan()}
        rows = config.num_classes + 1
        ratio = config.cond_mlp_ratio
        self.embedders: dict[str, StageEmbedder] = {}
        self.projections: dict[str, Linear] = {}
        self.shared: StageEmbedder | None = None
        if config.stage_specific_embeddings:
            for sid, stage in self.plan.items():
                self.embedders[sid] = StageEmbedder(
                    store, f"cond.{sid}", config.freq_dim, ratio * stage.channels, stage.channels, rows
                )
        else:
            c = config.base_channels
            self.shared = StageEmbedder(store, "cond.shared", config.freq_dim, ratio * c, c, rows)
            for sid, stage in self.plan.items():
                self.projections[sid] = Linear(store, f"cond.{sid}.proj", c, stage.channels)
        self.heads: dict[str, list[ModulationHead]] = {
            sid: [ModulationHead(store, f"cond.{sid}.block{b}", stage.channels, config.gating) for b in range(stage.depth)]
            for sid, stage in self.plan.items()
        }

    def stage_vectors(
        self, t: np.ndarray, y: np.ndarray, stages=None, labels_seen: dict[str, np.ndarray] | None = None
    ) -> dict[str, Tensor]:
        """act(c_s) for each requested stage; every head of the stage reads it."""
        stages = list(self.plan) if stages is None else list(stages)
        emb = Tensor(timestep_embedding(t, self.config.freq_dim, self.dtype))
        out = {}
        shared = self.shared(emb, y, self.act) if self.shared is not None else None
        for sid in stages:
            if shared is not None:
                c = self.projections[sid](shared)
            else:
                c = self.embedders[sid](emb, y, self.act)
            if labels_seen is not None:
                labels_seen[sid] = np.array(y, copy=True)
            out[sid] = self.act(c)
        return out

    def modulation(self, stage: str, site: int, vec: Tensor) -> Modulation:
        return self.heads[stage][site](vec)


def stage_condition(tables: ConditionTables, t, y, stage: str, site: int) -> Modulation:
    """(scale, shift, gate) for block `site` of `stage`."""
    if stage not in tables.plan:
        raise ShapeError(f"unknown stage {stage}", field="stage")
    if not 0 <= site < tables.plan[stage].depth:
        raise ShapeError(f"stage {stage} has no block {site}", field="site")
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    check_indices(t, y, tables.config.num_timesteps, tables.config.num_classes)
    vec = tables.stage_vectors(t, y, stages=[stage])[stage]
    return tables.modulation(stage, site, vec)
