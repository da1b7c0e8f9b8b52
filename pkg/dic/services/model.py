"""DiC denoiser: purely 3x3-convolutional hourglass with sparse skips.

Layout for the hourglass variants (C = base channels, R = image size):

    stem 3x3 (in -> C) @R
    enc0  blocks @R,   C    -> down (stride-2 3x3, C -> 2C)
    enc1  blocks @R/2, 2C   -> down (2C -> 4C)
    mid   blocks @R/4, 4C
    dec1  up (nearest x2 + 3x3, 4C -> 2C), blocks @R/2 with skip merges
    dec0  up (2C -> C), blocks @R with skip merges
    head  GroupNorm + act + 3x3 (C -> in)

Isotropic variants patchify 2x2 and keep every stage at R/2 and C.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from dic.config.model_config import Injection, ModelConfig, StageSpec
from dic.engine import ops
from dic.engine.tensor import Parameter, Tensor
from dic.errors import CheckpointError, ShapeError
from dic.services.conditioning import ConditionTables, Modulation, check_indices
from dic.services.layers import Conv3x3, GroupNorm, ParameterStore, PatchConv

logger = logging.getLogger(__name__)


@dataclass
class ForwardTrace:
    """Instrumentation filled by one forward pass."""

    stage_labels: dict[str, np.ndarray] = field(default_factory=dict)
    skips: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    merges: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)


def _modulate(h: Tensor, mod: Modulation) -> Tensor:
    n, c = mod.scale.shape
    scale = ops.reshape(mod.scale, (n, c, 1, 1))
    shift = ops.reshape(mod.shift, (n, c, 1, 1))
    return ops.add(ops.mul(h, ops.add(scale, 1.0)), shift)


class BasicBlock:
    """Residual unit: two 3x3 convs, each preceded by GroupNorm and activation."""

    def __init__(self, store: ParameterStore, name: str, channels: int, config: ModelConfig):
        self.channels = channels
        self.norm1 = GroupNorm(store, f"{name}.norm1", channels, config.groups)
        self.conv1 = Conv3x3(store, f"{name}.conv1", channels, channels)
        self.norm2 = GroupNorm(store, f"{name}.norm2", channels, config.groups)
        self.conv2 = Conv3x3(store, f"{name}.conv2", channels, channels)
        self.act = ops.ACTIVATIONS[config.activation.value]
        self.injection = config.injection

    def __call__(self, x: Tensor, mod: Modulation | None) -> Tensor:
        return basic_block_forward(x, mod, self)


def basic_block_forward(x: Tensor, cond: Modulation | None, block: BasicBlock) -> Tensor:
    if x.ndim != 4 or x.shape[1] != block.channels:
        raise ShapeError(f"block expects {block.channels} channels, got input {x.shape}", field="channels")
    if cond is not None and cond.scale.shape[1] != block.channels:
        raise ShapeError(f"condition width {cond.scale.shape[1]} does not match block {block.channels}")
    pre = cond is not None and block.injection is Injection.PRE_BLOCK
    mid = cond is not None and block.injection is Injection.MID_BLOCK

    h = block.norm1(x)
    if pre:
        h = _modulate(h, cond)
    h = block.conv1(block.act(h))
    h = block.norm2(h)
    if mid:
        h = _modulate(h, cond)
    h = block.conv2(block.act(h))

    if cond is not None and cond.gate is not None:
        n, c = cond.gate.shape
        h = ops.mul(ops.reshape(cond.gate, (n, c, 1, 1)), h)
    return ops.add(x, h)


class Upsample:
    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int):
        self.conv = Conv3x3(store, f"{name}.conv", cin, cout)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(ops.upsample_nearest2x(x))


class Stage:
    def __init__(self, store: ParameterStore, prefix: str, spec: StageSpec, config: ModelConfig):
        self.spec = spec
        self.blocks = [BasicBlock(store, f"{prefix}.block{b}", spec.channels, config) for b in range(spec.depth)]


class DiCModel:
    """Parameters plus topology; a pure function (x, t, y) -> predicted noise."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype="float32"):
        self.config = config
        self.seed = seed
        self.store = ParameterStore(seed, dtype)
        store = self.store
        plan = config.stage_plan()
        self.plan = plan
        c, cin = config.base_channels, config.in_channels
        hourglass = config.variant.hourglass

        if hourglass:
            self.stem = Conv3x3(store, "stem", cin, c, winograd_eligible=False)
        else:
            self.stem = PatchConv(store, "stem", cin, c)

        self.encoder: list[Stage] = []
        self.downs: list[Conv3x3] = []
        for s in (0, 1):
            self.encoder.append(Stage(store, f"enc.stage{s}", plan[s], config))
            if hourglass:
                ch = plan[s].channels
                self.downs.append(Conv3x3(store, f"enc.stage{s}.down", ch, 2 * ch, stride=2))
        self.mid = Stage(store, "mid", plan[2], config)

        self.decoder: list[Stage] = []
        self.ups: list[Upsample] = []
        self.merges: list[dict[int, Conv3x3]] = []
        for s, spec in ((1, plan[3]), (0, plan[4])):
            if hourglass:
                self.ups.append(Upsample(store, f"dec.stage{s}.up", 2 * spec.channels, spec.channels))
            self.decoder.append(Stage(store, f"dec.stage{s}", spec, config))
            positions = config.skip_positions(plan[s].depth)
            self.merges.append({
                spec.depth - k: Conv3x3(store, f"dec.stage{s}.merge{k}", 2 * spec.channels, spec.channels)
                for k in positions
            })

        self.head_norm = GroupNorm(store, "head.norm", c, config.groups)
        out_channels = cin if hourglass else cin * 4
        self.head_conv = Conv3x3(store, "head.conv", c, out_channels, zero_init=True, winograd_eligible=False)
        self.cond = ConditionTables(store, config)
        self.act = ops.ACTIVATIONS[config.activation.value]
        logger.info(
            f"Built {config.variant.value} model: {self.num_params} params, "
            f"{len(self.store)} tensors, seed={seed}, dtype={self.dtype}"
        )

    # ------------------------------------------------------------ registry

    @property
    def dtype(self) -> np.dtype:
        return self.store.dtype

    @property
    def num_params(self) -> int:
        return self.store.num_params

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def label_drop_prob(self) -> float:
        return self.config.label_drop_prob

    def parameters(self) -> dict[str, Parameter]:
        return dict(self.store.items())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.store.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.store.names()) - set(state)
        extra = set(state) - set(self.store.names())
        if missing or extra:
            raise CheckpointError(
                f"parameter names differ: missing={sorted(missing)[:3]} unexpected={sorted(extra)[:3]}",
                path="<state>",
            )
        for name, param in self.store.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"{name}: expected {param.shape}, got {value.shape}", field=name)
            param.data = np.ascontiguousarray(value, dtype=self.dtype)

    def copy(self) -> "DiCModel":
        clone = DiCModel(self.config, self.seed, self.dtype)
        clone.load_state({name: data.copy() for name, data in self.state_dict().items()})
        return clone

    def conv_layers(self) -> list[Conv3x3]:
        convs = [self.stem] if isinstance(self.stem, Conv3x3) else []
        for stage in [*self.encoder, self.mid, *self.decoder]:
            for block in stage.blocks:
                convs += [block.conv1, block.conv2]
        convs += self.downs + [up.conv for up in self.ups]
        for merges in self.merges:
            convs += list(merges.values())
        return convs + [self.head_conv]

    def use_winograd(self, enabled: bool = True) -> None:
        """Route eligible stride-1 3x3 convs through the Winograd kernel (inference only)."""
        for conv in self.conv_layers():
            conv.winograd = enabled and conv.winograd_eligible
        logger.info(f"Winograd inference path {'enabled' if enabled else 'disabled'}")

    # ------------------------------------------------------------ forward

    def _check_inputs(self, x: Tensor, t: np.ndarray, y: np.ndarray) -> None:
        cfg = self.config
        expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"expected input [N,{','.join(map(str, expected))}], got {x.shape}", field="x")
        if t.shape != (x.shape[0],) or y.shape != (x.shape[0],):
            raise ShapeError(f"t and y must have shape ({x.shape[0]},)", field="t")
        check_indices(t, y, cfg.num_timesteps, cfg.num_classes)

    def forward_features(self, x, t, y, trace: ForwardTrace | None = None, bypass_blocks: bool = False) -> Tensor:
        """Trunk output before the head; `bypass_blocks` replaces every block by identity."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        t = np.asarray(t, dtype=np.int64).reshape(-1)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        self._check_inputs(x, t, y)
        vectors = self.cond.stage_vectors(t, y, labels_seen=trace.stage_labels if trace is not None else None)

        def run(stage: Stage, h: Tensor, merges: dict[int, Conv3x3] | None = None, skips=None) -> Tensor:
            sid = stage.spec.stage_id
            positions = self.config.skip_positions(stage.spec.depth) if merges is None and skips is not None else ()
            for b, block in enumerate(stage.blocks):
                if merges is not None and b in merges:
                    skip = skips.pop()
                    if trace is not None:
                        trace.merges.append((sid, skip.shape))
                    h = merges[b](ops.concat_channels(h, skip))
                if not bypass_blocks:
                    h = block(h, self.cond.modulation(sid, b, vectors[sid]))
                if (b + 1) in positions:
                    skips.append(h)
                    if trace is not None:
                        trace.skips.append((sid, h.shape))
            return h

        h = self.stem(x)
        skip_stacks: list[list[Tensor]] = [[], []]
        for s, stage in enumerate(self.encoder):
            h = run(stage, h, skips=skip_stacks[s])
            if self.downs:
                h = self.downs[s](h)
        h = run(self.mid, h)
        for i, stage in enumerate(self.decoder):
            if self.ups:
                h = self.ups[i](h)
            h = run(stage, h, merges=self.merges[i], skips=skip_stacks[1 - i])
        return h

    def forward(self, x, t, y, trace: ForwardTrace | None = None) -> Tensor:
        h = self.forward_features(x, t, y, trace=trace)
        return self.head(h)

    __call__ = forward

    def head(self, h: Tensor) -> Tensor:
        out = self.head_conv(self.act(self.head_norm(h)))
        if not self.config.variant.hourglass:
            out = ops.depth_to_space(out, 2)
        return out


def build_model(config: ModelConfig, seed: int = 0, dtype="float32") -> DiCModel:
    return DiCModel(config, seed=seed, dtype=dtype)
