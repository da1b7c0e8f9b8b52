"""Static parameter, FLOPs and receptive-field analysis of a ModelConfig.

The analyzer walks the same graph `DiCModel.forward` executes, symbolically,
one record per op, so it can size presets far too large to instantiate. FLOPs
are per image. Convolutions and linears cost `flops_per_mac` per
multiply-accumulate; GroupNorm and activations cost one per element; adds,
concats, reshapes, upsampling and table lookups are free.

Winograd FLOPs replace every eligible conv (stride-1 3x3 inside the trunk;
stems, heads and stride-2 convs stay direct) by 16 products per tile and
channel pair, plus the transform additions when `include_transforms` is set.
"""
import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from dic.config.model_config import ModelConfig, preset
from dic.engine.winograd import (
    FILTER_TRANSFORM_OPS,
    INPUT_TRANSFORM_OPS,
    OUTPUT_TRANSFORM_OPS,
    winograd_mult_count,
)

logger = logging.getLogger(__name__)

# Published (params, FLOPs, Winograd FLOPs) per preset.
CALIBRATION_TARGETS: dict[str, tuple[float, float, float]] = {
    "DiC-S": (32.8e6, 5.9e9, 2.9e9),
    "DiC-B": (129.5e6, 23.5e9, 11.8e9),
    "DiC-XL": (702.3e6, 116.1e9, 57.2e9),
    "DiC-H": (1034.4e6, 204.4e9, 97.2e9),
}
STAGE_EMBEDDING_OVERHEAD = 14.06e6

CSV_COLUMNS = ("name", "type", "in_shape", "out_shape", "params", "flops_direct", "flops_wino", "rf")


@dataclass
class LayerRecord:
    name: str
    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    params: int = 0
    flops_direct: int = 0
    flops_wino: int = 0
    winograd_eligible: bool = False
    rf: int | None = None

    def csv_row(self) -> list[str]:
        return [
            self.name, self.kind, "x".join(map(str, self.in_shape)), "x".join(map(str, self.out_shape)),
            str(self.params), str(self.flops_direct), str(self.flops_wino), "" if self.rf is None else str(self.rf),
        ]


@dataclass
class AnalysisReport:
    config: ModelConfig
    resolution: int
    flops_per_mac: int
    include_transforms: bool
    layers: list[LayerRecord] = field(default_factory=list)
    receptive_field: int = 1

    @property
    def params(self) -> int:
        return sum(r.params for r in self.layers)

    @property
    def flops_direct(self) -> int:
        return sum(r.flops_direct for r in self.layers)

    @property
    def flops_winograd(self) -> int:
        return sum(r.flops_wino for r in self.layers)

    @property
    def winograd_ratio(self) -> float:
        return self.flops_winograd / self.flops_direct if self.flops_direct else 1.0

    def by_kind(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for r in self.layers:
            totals[r.kind] = totals.get(r.kind, 0) + r.flops_direct
        return totals

    def by_module(self) -> dict[str, int]:
        """Direct FLOPs grouped by the first two components of the layer name."""
        totals: dict[str, int] = {}
        for r in self.layers:
            key = ".".join(r.name.split(".")[:2])
            totals[key] = totals.get(key, 0) + r.flops_direct
        return totals

    def header(self) -> str:
        return (
            f"# {self.config.variant.value} C={self.config.base_channels} depths={list(self.config.stage_depths)} "
            f"resolution={self.resolution} flops_per_mac={self.flops_per_mac} "
            f"winograd_transforms={'on' if self.include_transforms else 'off'} "
            f"(norm/activation: 1 FLOP per element; add/concat/upsample: 0)"
        )

    def write_csv(self, out: TextIO) -> None:
        writer = csv.writer(out)
        writer.writerow(CSV_COLUMNS)
        for record in self.layers:
            writer.writerow(record.csv_row())

    def save_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as f:
            self.write_csv(f)
        logger.info(f"Wrote {len(self.layers)} layer rows to {path}")


class _Tracer:
    """Shape-only replay of the forward pass."""

    def __init__(self, report: AnalysisReport):
        self.report = report
        self.fpm = report.flops_per_mac
        self.rf = Fraction(1)
        self.jump = Fraction(1)

    def _add(self, record: LayerRecord) -> None:
        self.report.layers.append(record)

    def _spatial(self, kernel: int, stride: int) -> int:
        self.rf += (kernel - 1) * self.jump
        self.jump *= stride
        return int(self.rf)

    def conv3x3(self, name: str, shape: tuple[int, int, int], cout: int, stride: int = 1, eligible: bool = True):
        cin, h, w = shape
        ho, wo = h // stride, w // stride
        macs = cout * ho * wo * cin * 9
        direct = macs * self.fpm
        eligible = eligible and stride == 1
        wino = direct
        if eligible:
            count = winograd_mult_count(h, w, cin, cout)
            tiles = count.winograd_mults // (16 * cin * cout)
            wino = count.winograd_mults * self.fpm
            if self.report.include_transforms:
                wino += (INPUT_TRANSFORM_OPS * cin + OUTPUT_TRANSFORM_OPS * cout) * tiles + FILTER_TRANSFORM_OPS * cin * cout
        rf = self._spatial(3, stride)
        out = (cout, ho, wo)
        self._add(LayerRecord(name, "conv3x3", shape, out, cout * cin * 9 + cout, direct, wino, eligible, rf))
        return out

    def patchify(self, name: str, shape: tuple[int, int, int], cout: int):
        cin, h, w = shape
        out = (cout, h // 2, w // 2)
        flops = cout * out[1] * out[2] * cin * 4 * self.fpm
        rf = self._spatial(2, 2)
        self._add(LayerRecord(name, "patchify_conv", shape, out, cout * cin * 4 + cout, flops, flops, False, rf))
        return out

    def elementwise(self, name: str, kind: str, shape: tuple[int, ...], params: int = 0):
        numel = 1
        for extent in shape:
            numel *= extent
        rf = int(self.rf) if len(shape) == 3 else None
        self._add(LayerRecord(name, kind, shape, shape, params, numel, numel, False, rf))
        return shape

    def group_norm(self, name: str, shape):
        return self.elementwise(name, "group_norm", shape, params=2 * shape[0])

    def act(self, name: str, shape):
        return self.elementwise(name, self.report.config.activation.value, shape)

    def linear(self, name: str, din: int, dout: int):
        flops = din * dout * self.fpm
        self._add(LayerRecord(name, "linear", (din,), (dout,), din * dout + dout, flops, flops))
        return (dout,)

    def embedding(self, name: str, rows: int, dim: int):
        self._add(LayerRecord(name, "embedding", (1,), (dim,), rows * dim))
        return (dim,)

    def upsample(self, name: str, shape):
        c, h, w = shape
        self.jump /= 2
        out = (c, 2 * h, 2 * w)
        self._add(LayerRecord(name, "upsample_nearest2x", shape, out, rf=int(self.rf)))
        return out

    def depth_to_space(self, name: str, shape):
        c, h, w = shape
        self.jump /= 2
        out = (c // 4, 2 * h, 2 * w)
        self._add(LayerRecord(name, "depth_to_space", shape, out, rf=int(self.rf)))
        return out

    def concat(self, name: str, shape, skip_shape, skip_rf: Fraction):
        self.rf = max(self.rf, skip_rf)
        out = (shape[0] + skip_shape[0], shape[1], shape[2])
        self._add(LayerRecord(name, "concat", shape, out, rf=int(self.rf)))
        return out


def _trace_conditioning(tr: _Tracer, config: ModelConfig) -> None:
    plan = config.stage_plan()
    rows, freq, ratio = config.num_classes + 1, config.freq_dim, config.cond_mlp_ratio

    def embedder(prefix: str, channels: int) -> None:
        hidden = ratio * channels
        tr.linear(f"{prefix}.time_fc1", freq, hidden)
        tr.act(f"{prefix}.time_act", (hidden,))
        tr.linear(f"{prefix}.time_fc2", hidden, channels)
        tr.embedding(f"{prefix}.class_table", rows, channels)

    if config.stage_specific_embeddings:
        for stage in plan:
            embedder(f"cond.{stage.stage_id}", stage.channels)
    else:
        embedder("cond.shared", config.base_channels)
        for stage in plan:
            tr.linear(f"cond.{stage.stage_id}.proj", config.base_channels, stage.channels)
    for stage in plan:
        sid, c = stage.stage_id, stage.channels
        tr.act(f"cond.{sid}.act", (c,))
        for b in range(stage.depth):
            for head in ("scale", "shift", "gate")[: config.cond_channels]:
                tr.linear(f"cond.{sid}.block{b}.{head}", c, c)


def _trace_block(tr: _Tracer, prefix: str, shape) -> None:
    c = shape[0]
    tr.group_norm(f"{prefix}.norm1", shape)
    tr.act(f"{prefix}.act1", shape)
    tr.conv3x3(f"{prefix}.conv1", shape, c)
    tr.group_norm(f"{prefix}.norm2", shape)
    tr.act(f"{prefix}.act2", shape)
    tr.conv3x3(f"{prefix}.conv2", shape, c)


def _trace_trunk(tr: _Tracer, config: ModelConfig) -> None:
    plan = config.stage_plan()
    hourglass = config.variant.hourglass
    c, cin, r = config.base_channels, config.in_channels, tr.report.resolution

    shape = (cin, r, r)
    if hourglass:
        shape = tr.conv3x3("stem", shape, c, eligible=False)
    else:
        shape = tr.patchify("stem", shape, c)

    stacks: list[list[tuple[tuple, Fraction]]] = [[], []]
    for s in (0, 1):
        positions = config.skip_positions(plan[s].depth)
        for b in range(plan[s].depth):
            _trace_block(tr, f"enc.stage{s}.block{b}", shape)
            if b + 1 in positions:
                stacks[s].append((shape, tr.rf))
        if hourglass:
            shape = tr.conv3x3(f"enc.stage{s}.down", shape, 2 * shape[0], stride=2)
    for b in range(plan[2].depth):
        _trace_block(tr, f"mid.block{b}", shape)
    for s, spec in ((1, plan[3]), (0, plan[4])):
        if hourglass:
            shape = tr.upsample(f"dec.stage{s}.up.upsample", shape)
            shape = tr.conv3x3(f"dec.stage{s}.up.conv", shape, spec.channels)
        merges = {spec.depth - k: k for k in config.skip_positions(plan[s].depth)}
        for b in range(spec.depth):
            if b in merges:
                skip_shape, skip_rf = stacks[s].pop()
                merged = tr.concat(f"dec.stage{s}.concat{merges[b]}", shape, skip_shape, skip_rf)
                shape = tr.conv3x3(f"dec.stage{s}.merge{merges[b]}", merged, spec.channels)
            _trace_block(tr, f"dec.stage{s}.block{b}", shape)

    tr.group_norm("head.norm", shape)
    tr.act("head.act", shape)
    if hourglass:
        tr.conv3x3("head.conv", shape, cin, eligible=False)
    else:
        shape = tr.conv3x3("head.conv", shape, cin * 4, eligible=False)
        tr.depth_to_space("head.unpatchify", shape)


def analyze(
    config: ModelConfig, resolution: int | None = None, flops_per_mac: int = 1, include_transforms: bool = True
) -> AnalysisReport:
    if resolution is not None and resolution != config.image_size:
        config = config.replace(image_size=resolution)
    report = AnalysisReport(config, config.image_size, flops_per_mac, include_transforms)
    tracer = _Tracer(report)
    _trace_conditioning(tracer, config)
    _trace_trunk(tracer, config)
    report.receptive_field = int(tracer.rf)
    return report


def count_params(config: ModelConfig) -> int:
    return analyze(config).params


def count_flops(
    config: ModelConfig, resolution: int | None = None, winograd: bool = False,
    flops_per_mac: int = 1, include_transforms: bool = True,
) -> int:
    report = analyze(config, resolution, flops_per_mac, include_transforms)
    return report.flops_winograd if winograd else report.flops_direct


def receptive_field(config: ModelConfig) -> int:
    """Receptive field in input pixels, max over skip branches."""
    return analyze(config).receptive_field


def receptive_field_of(layers: Iterable[tuple[int, int]]) -> int:
    """Receptive field of a plain chain of (kernel, stride) layers."""
    rf, jump = 1, 1
    for kernel, stride in layers:
        rf += (kernel - 1) * jump
        jump *= stride
    return rf


@dataclass
class CalibrationRow:
    preset: str
    params: int
    flops: int
    flops_wino: int
    target_params: float
    target_flops: float
    target_wino: float

    @staticmethod
    def deviation(value: float, target: float) -> float:
        return 100.0 * (value - target) / target

    def cells(self) -> list[object]:
        return [
            self.preset,
            f"{self.params / 1e6:.2f}", f"{self.deviation(self.params, self.target_params):+.1f}%",
            f"{self.flops / 1e9:.2f}", f"{self.deviation(self.flops, self.target_flops):+.1f}%",
            f"{self.flops_wino / 1e9:.2f}", f"{self.deviation(self.flops_wino, self.target_wino):+.1f}%",
            f"{self.flops_wino / self.flops:.3f}",
        ]


CALIBRATION_HEADERS = ("preset", "params(M)", "dev", "GFLOPs", "dev", "wino GFLOPs", "dev", "ratio")


def calibration_table(
    names: Sequence[str] = tuple(CALIBRATION_TARGETS), flops_per_mac: int = 1, include_transforms: bool = True
) -> list[CalibrationRow]:
    rows = []
    for name in names:
        report = analyze(preset(name), flops_per_mac=flops_per_mac, include_transforms=include_transforms)
        target = CALIBRATION_TARGETS[name]
        rows.append(CalibrationRow(name, report.params, report.flops_direct, report.flops_winograd, *target))
    return rows


def stage_embedding_overhead(config: ModelConfig) -> tuple[int, int]:
    """(params, FLOPs) added by stage-specific over shared embeddings."""
    specific = analyze(config.replace(stage_specific_embeddings=True))
    shared = analyze(config.replace(stage_specific_embeddings=False))
    return specific.params - shared.params, specific.flops_direct - shared.flops_direct

