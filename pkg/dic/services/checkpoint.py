""""DIC1" checkpoint files.

Layout, little-endian throughout:

    b"DIC1" | u32 version | u32 text length | key=value text (UTF-8)
    u32 record count | records...
    record: u32 name length | name | u32 rank | u32 extents[rank] | f32 data

The text block is the run config plus `state.*` keys. Records hold the model
parameters, then optimizer moments (`optim.m/`, `optim.v/`) and EMA weights
(`ema/`) when present.
"""
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_exponential

from dic.config.run_config import RunConfig, from_pairs
from dic.config.settings import settings
from dic.errors import CheckpointError, DiCError
from dic.services.model import DiCModel, build_model
from dic.services.optimizer import EMA, AdamW
from dic.utils import kv

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

MAGIC = b"DIC1"
VERSION = 1


@dataclass
class CheckpointData:
    text: str
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def meta(self) -> dict[str, str]:
        return dict(kv.parse_lines(self.text, "<checkpoint>"))

    def run_config(self) -> RunConfig:
        pairs = [(k, v) for k, v in kv.parse_lines(self.text, "<checkpoint>") if not k.startswith("state.")]
        return from_pairs(pairs)

    @property
    def step(self) -> int:
        return int(self.meta().get("state.step", "0"))

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        return {name: data for name, data in self.tensors.items() if name.startswith(prefix)}

    def params(self) -> dict[str, np.ndarray]:
        return {name: data for name, data in self.tensors.items() if "/" not in name}


def encode(text: str, tensors: dict[str, np.ndarray]) -> bytes:
    body = text.encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(body)), body, struct.pack("<I", len(tensors))]
    for name, data in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(data, dtype="<f4")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode(blob: bytes, path: str = "<bytes>") -> CheckpointData:
    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError("truncated checkpoint", path=path, offset=offset)
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    def u32() -> int:
        return struct.unpack("<I", take(4))[0]

    if take(4) != MAGIC:
        raise CheckpointError("not a DIC1 checkpoint", path=path)
    version = u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}", path=path)
    text = take(u32()).decode("utf-8")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(u32()):
        name = take(u32()).decode("utf-8")
        rank = u32()
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if offset != len(blob):
        raise CheckpointError(f"{len(blob) - offset} trailing bytes", path=path)
    return CheckpointData(text, tensors)


@retry(
    stop=stop_after_attempt(settings.CHECKPOINT_RETRIES),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    retry=retry_if_exception_type(OSError),
    reraise=True,
)
def _write_atomic(path: Path, blob: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except OSError:
        tmp.unlink(missing_ok=True)
        raise


def write_checkpoint(path: str | Path, text: str, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    try:
        _write_atomic(path, encode(text, tensors))
    except OSError as e:
        logger.error(f"Error writing checkpoint {path}: {str(e)}")
        raise CheckpointError(f"cannot write checkpoint: {e}", path=str(path)) from e
    logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors)")


def read_checkpoint(path: str | Path) -> CheckpointData:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        logger.error(f"Error reading checkpoint {path}: {str(e)}")
        raise CheckpointError(f"cannot read checkpoint: {e}", path=str(path)) from e
    return decode(blob, str(path))


def save_model(
    path: str | Path, model: DiCModel, run: RunConfig, step: int = 0,
    optimizer: AdamW | None = None, ema: EMA | None = None,
) -> None:
    text = run.serialize() + kv.render([("state.step", str(step))])
    tensors = dict(model.state_dict())
    if optimizer is not None:
        tensors.update(optimizer.state_dict())
    if ema is not None:
        tensors.update(ema.state_dict())
    write_checkpoint(path, text, tensors)


def load_model(path: str | Path, use_ema: bool = False) -> tuple[DiCModel, RunConfig, CheckpointData]:
    """Rebuild the model described by a checkpoint and load its weights."""
    data = read_checkpoint(path)
    try:
        run = data.run_config()
        model = build_model(run.model, seed=run.seed, dtype=run.dtype)
        weights = data.params()
        if use_ema and data.group("ema/"):
            weights = {name[len("ema/"):]: value for name, value in data.group("ema/").items()}
            logger.info(f"Using EMA weights from {path}")
        model.load_state(weights)
    except CheckpointError as e:
        raise CheckpointError(e.message, path=str(path)) from e
    except DiCError:
        logger.error(f"Error loading checkpoint {path}: config or shapes do not match")
        raise
    return model, run, data
