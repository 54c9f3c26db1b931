"""Momentum SGD training loop, evaluation and the binary checkpoint format."""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset, Manifest
from .metrics import ConfusionMatrix, MetricsReport
from .model import HfcnConfig, build, forward, predict
from .objective import LAMBDA_GROUPS, composite_loss, validate_lambdas
from .tensor import NonFiniteError, ParamStore, Tensor, backward

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "CheckpointError",
    "sgd_step",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "format_log_line",
]

log = logging.getLogger(__name__)

MAGIC = b"HFCN"
VERSION = 1
VELOCITY_PREFIX = "velocity/"


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 10
    epochs: int = 50
    momentum: float = 0.9
    lambdas: tuple[float, ...] = LAMBDA_GROUPS["model7"]
    seed: int = 0
    checkpoint: str | None = None
    eval_every: int = 0

    def validate(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        self.lambdas = validate_lambdas(self.lambdas)
        return self


@dataclass
class Checkpoint:
    config: HfcnConfig
    params: ParamStore
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def sgd_step(params: ParamStore, velocity: dict[str, np.ndarray], lr: float, momentum: float):
    """In place: ``v = momentum * v + g``; ``p = p - lr * v``, in name order."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p.data)
        v *= momentum
        v += p.grad
        p.data -= lr * v


def format_log_line(epoch: int, breakdown: list[float], report: MetricsReport | None = None) -> str:
    fields = [str(epoch)] + [f"{v:.17g}" for v in breakdown]
    if report is not None:
        fields += [f"{v:.17g}" for v in (report.mean_iou, report.mean_class_accuracy, report.pixel_accuracy)]
    return "\t".join(fields)


def evaluate(params: ParamStore, dataset: Dataset, batch_size: int = 10) -> MetricsReport:
    cm = ConfusionMatrix(params.config.num_classes, dataset.manifest.ignore_index)
    for batch in dataset.batches(batch_size, seed=None):
        cm.accumulate(predict(forward(params, batch.images)), batch.labels)
    return cm.report()


def train(model_config: HfcnConfig, train_config: TrainConfig, manifest: Manifest,
          log_path=None, params: ParamStore | None = None) -> tuple[Checkpoint, list[str]]:
    """Run the full schedule; returns the final checkpoint and the epoch log lines."""
    train_config.validate()
    model_config.validate()
    if model_config.num_classes != manifest.num_classes:
        raise ValueError(f"model has {model_config.num_classes} classes, manifest has {manifest.num_classes}")
    data = Dataset(manifest, "train")
    if len(data) == 0:
        raise ValueError("training split is empty")
    val = Dataset(manifest, "val") if train_config.eval_every else None
    params = params if params is not None else build(model_config, train_config.seed)
    velocity: dict[str, np.ndarray] = {}
    ckpt = Checkpoint(model_config, params, velocity, 0, {}, _meta(manifest, train_config))
    lines = []
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(1, train_config.epochs + 1):
            sums = np.zeros(7)
            nb = 0
            for batch in data.batches(train_config.batch_size, train_config.seed, epoch):
                try:
                    params.zero_grad()
                    bundle = forward(params, batch.images)
                    br = composite_loss(bundle, batch.labels, train_config.lambdas, manifest.ignore_index)
                    backward(br.loss)
                    sgd_step(params, velocity, train_config.lr, train_config.momentum)
                except NonFiniteError as e:
                    names = [str(data.paths[i][0]) for i in batch.indices]
                    raise NonFiniteError(f"epoch {epoch}, batch {names}: {e}") from e
                sums += br.as_row()
                nb += 1
            means = list(sums / nb)
            report = None
            eval_epoch = train_config.eval_every and (epoch % train_config.eval_every == 0
                                                      or epoch == train_config.epochs)
            if eval_epoch and val is not None and len(val):
                report = evaluate(params, val, train_config.batch_size)
            line = format_log_line(epoch, means, report)
            lines.append(line)
            log.info(line)
            if log_file:
                log_file.write(line + "\n")
                log_file.flush()
            ckpt.epoch = epoch
            ckpt.rng_state = {"seed": train_config.seed, "epoch": epoch}
            if train_config.checkpoint and (eval_epoch or epoch == train_config.epochs):
                save_checkpoint(ckpt, train_config.checkpoint)
    finally:
        if log_file:
            log_file.close()
    return ckpt, lines


def _meta(manifest: Manifest, tc: TrainConfig) -> dict:
    d = asdict(tc)
    d["lambdas"] = list(tc.lambdas)
    d.pop("checkpoint")
    return {
        "classes": list(manifest.classes),
        "palette": [list(c) for c in manifest.palette],
        "ignore_index": manifest.ignore_index,
        "train": d,
    }


# -- binary checkpoint --------------------------------------------------------
# "HFCN" | u32 version | u32 len + JSON config block | u32 tensor count |
# per tensor: u16 name len, name, u8 rank, u64 extents, float64 LE row-major


def _write_tensor(buf, name: str, arr: np.ndarray):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)) + raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    block = {"model": ckpt.config.to_dict(), "epoch": ckpt.epoch, "rng": ckpt.rng_state, **ckpt.meta}
    cfg = json.dumps(block, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tensors = [(n, t.data) for n, t in ckpt.params.items()]
    tensors += [(VELOCITY_PREFIX + n, ckpt.velocity[n]) for n in ckpt.params.names() if n in ckpt.velocity]
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(checkpoint_bytes(ckpt))
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (cfg_len,) = r.unpack("<I")
    try:
        block = json.loads(r.take(cfg_len).decode("utf-8"))
        config = HfcnConfig.from_dict(block.pop("model"))
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"bad config block: {e}") from None
    (count,) = r.unpack("<I")
    expected = build(config, 0)
    params = ParamStore(config)
    velocity = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q")
        total = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * total), dtype="<f8").astype(np.float64).reshape(shape)
        if name.startswith(VELOCITY_PREFIX):
            base = name[len(VELOCITY_PREFIX):]
            if base not in expected or expected[base].shape != shape:
                raise CheckpointError(f"velocity tensor {name!r} does not match the model")
            velocity[base] = arr.copy()
        else:
            if name not in expected:
                raise CheckpointError(f"unexpected tensor {name!r}")
            if expected[name].shape != shape:
                raise CheckpointError(f"tensor {name!r} has shape {shape}, model needs {expected[name].shape}")
            params.add(name, Tensor(arr.copy()))
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after last tensor")
    missing = [n for n in expected if n not in params]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters {missing[:3]}")
    epoch = block.pop("epoch", 0)
    rng = block.pop("rng", {})
    return Checkpoint(config, params, velocity, epoch, rng, block)
