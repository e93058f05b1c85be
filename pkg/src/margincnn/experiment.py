"""Experiment driver: run configuration, training loop, evaluation, metrics.

A run is fully determined by a TrainConfig.  All randomness flows from one
seed through three named Philox streams (init, shuffle, dropout), so two
runs that differ only in the loss head share identical initial weights,
batch order, and dropout masks.  Metric floats are quantized to 9
significant digits when a record is created; the CSV writer prints that
same precision, so read_metrics(write_metrics(...)) is exact.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import data
from .errors import ConfigError, FormatError, TrainingError
from .layers import (
    Conv2dParams,
    DenseParams,
    ModelParams,
    cnn_backward,
    cnn_forward,
    init_model,
)
from .objectives import HeadKind, LossHead, head_loss, predict
from .optim import AdamConfig, adam_init, adam_step
from .tensor import Rng

# Stream ids under the experiment seed.  Dropout gets its own stream so the
# shuffle order is unaffected by how much per-step mask entropy is drawn.
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_DROPOUT = 2

HEAD_ALIASES = {
    "softmax": HeadKind.SOFTMAX_CE,
    "svm": HeadKind.L2_SVM,
    "l2svm": HeadKind.L2_SVM,
    "l1svm": HeadKind.L1_SVM,
}

MODEL_MAGIC = b"MCNN"
MODEL_VERSION = 1

CSV_COLUMNS = ("step", "train_accuracy", "loss_total", "loss_data", "loss_reg", "wall_ms")


@dataclass
class TrainConfig:
    """One training run.  Defaults are the reference recipe: batch 128,
    dropout 0.5, Adam at 1e-3, 10000 steps, SVM penalty C=1."""

    dataset: str = "mnist"
    head: str = "softmax"
    batch_size: int = 128
    dropout_p: float = 0.5
    learning_rate: float = 1e-3
    steps: int = 10000
    svm_c: float = 1.0
    seed: int = 42
    input_extent: int = 28
    pool_stride: int = 2
    log_every: int = 100
    out_dir: str | None = None
    data_dir: str | None = None
    raw_pixels: bool = False
    conv1_filters: int = 32
    conv2_filters: int = 64
    fc_units: int = 1024
    train_subset: int | None = None

    def __post_init__(self):
        if self.dataset not in data.DATASETS:
            raise ConfigError(f"dataset must be one of {data.DATASETS}, got {self.dataset!r}")
        if self.head not in HEAD_ALIASES:
            raise ConfigError(f"head must be one of {tuple(HEAD_ALIASES)}, got {self.head!r}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.svm_c <= 0:
            raise ConfigError(f"svm_c must be > 0, got {self.svm_c}")
        if self.input_extent not in (28, 32):
            raise ConfigError(f"input_extent must be 28 or 32, got {self.input_extent}")
        if self.pool_stride not in (1, 2):
            raise ConfigError(f"pool_stride must be 1 or 2, got {self.pool_stride}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        for name in ("conv1_filters", "conv2_filters", "fc_units"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.train_subset is not None and self.train_subset < 1:
            raise ConfigError(f"train_subset must be >= 1, got {self.train_subset}")

    @property
    def head_kind(self) -> HeadKind:
        return HEAD_ALIASES[self.head]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _q9(x: float) -> float:
    """Snap to 9 significant digits (idempotent, exact through a .9g print)."""
    return float(f"{float(x):.9g}")


@dataclass(frozen=True)
class MetricRecord:
    """One logged training step, measured on the batch before its update."""

    step: int
    train_accuracy: float
    loss_total: float
    loss_data: float
    loss_reg: float
    wall_ms: float

    def __post_init__(self):
        object.__setattr__(self, "step", int(self.step))
        for name in ("train_accuracy", "loss_total", "loss_data", "loss_reg", "wall_ms"):
            object.__setattr__(self, name, _q9(getattr(self, name)))


@dataclass
class RunSummary:
    total_steps: int
    mean_train_accuracy: float | None
    mean_train_loss: float | None
    test_accuracy: float | None
    config: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def summarize(
    records: Sequence[MetricRecord],
    cfg: TrainConfig,
    test_accuracy: float | None = None,
) -> RunSummary:
    """Arithmetic means over all logged records; None fields when empty."""
    mean_acc = mean_loss = None
    if records:
        mean_acc = sum(r.train_accuracy for r in records) / len(records)
        mean_loss = sum(r.loss_total for r in records) / len(records)
    return RunSummary(
        total_steps=cfg.steps,
        mean_train_accuracy=mean_acc,
        mean_train_loss=mean_loss,
        test_accuracy=test_accuracy,
        config=cfg.to_dict(),
    )


def _load_train_split(cfg: TrainConfig) -> data.DatasetSplit:
    split = data.load_split(
        data.resolve_data_dir(cfg.data_dir), cfg.dataset, "train", raw_pixels=cfg.raw_pixels
    )
    if cfg.train_subset is not None:
        k = min(cfg.train_subset, split.n)
        split = dataclasses.replace(split, images=split.images[:k], labels=split.labels[:k])
    if cfg.input_extent != split.images.shape[1]:
        split = data.pad_images(split, cfg.input_extent)
    if cfg.batch_size > split.n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds the {split.n} training samples")
    return split


def run_train(
    cfg: TrainConfig,
    time_source: Callable[[], float] = time.perf_counter,
    progress: Callable[[MetricRecord], None] | None = None,
) -> tuple[ModelParams, list[MetricRecord]]:
    """Train for exactly cfg.steps optimizer steps, cycling epochs as needed.

    Records are taken every cfg.log_every steps (1-based), from the train-mode
    forward pass on the batch BEFORE its update.  ``time_source`` exists so
    tests can pin wall_ms; the default is the process performance counter.
    """
    train = _load_train_split(cfg)
    head = LossHead(kind=cfg.head_kind, penalty_c=cfg.svm_c)
    init_rng = Rng(cfg.seed, STREAM_INIT)
    shuffle_rng = Rng(cfg.seed, STREAM_SHUFFLE)
    dropout_rng = Rng(cfg.seed, STREAM_DROPOUT)
    model = init_model(
        init_rng,
        input_extent=cfg.input_extent,
        conv1_filters=cfg.conv1_filters,
        conv2_filters=cfg.conv2_filters,
        fc_units=cfg.fc_units,
        pool_stride=cfg.pool_stride,
    )
    state = adam_init(model)
    adam_cfg = AdamConfig(learning_rate=cfg.learning_rate)

    records: list[MetricRecord] = []
    t0 = time_source()
    step = 0
    while step < cfg.steps:
        for batch in data.batches(train, cfg.batch_size, shuffle=True, rng=shuffle_rng):
            if step >= cfg.steps:
                break
            step += 1
            scores, caches = cnn_forward(
                batch.x, model, mode="train", rng=dropout_rng, dropout_p=cfg.dropout_p
            )
            loss, grad_scores, grad_w_reg = head_loss(
                scores, batch.encoding, head, model.fc2.weight
            )
            if not np.isfinite(loss.total):
                raise TrainingError(f"non-finite loss {loss.total} at step {step}")
            if step % cfg.log_every == 0:
                acc = float(np.mean(predict(scores) == batch.labels))
                rec = MetricRecord(
                    step=step,
                    train_accuracy=acc,
                    loss_total=loss.total,
                    loss_data=loss.data_term,
                    loss_reg=loss.reg_term,
                    wall_ms=(time_source() - t0) * 1000.0,
                )
                records.append(rec)
                if progress is not None:
                    progress(rec)
            grads = cnn_backward(grad_scores, caches, model)
            if grad_w_reg is not None:
                grads["fc2.weight"] += grad_w_reg
            model, state = adam_step(model, grads, state, adam_cfg)
    return model, records


def evaluate(model: ModelParams, split: data.DatasetSplit, batch_size: int = 256) -> float:
    """Accuracy over the full split in eval mode (dropout is the identity).

    Batched without shuffling; the result does not depend on batch_size.
    """
    correct = 0
    for batch in data.batches(split, min(batch_size, split.n), shuffle=False):
        scores, _ = cnn_forward(batch.x, model, mode="eval")
        correct += int(np.sum(predict(scores) == batch.labels))
    return correct / split.n


def write_metrics(
    records: Sequence[MetricRecord],
    summary: RunSummary | None,
    out_dir: str | Path,
    plots: bool = True,
) -> list[Path]:
    """Persist metrics.csv (one row per record), summary.json, and curve plots.

    Floats are printed with 9 significant digits, exactly the precision the
    records carry, so the CSV round-trips bit-exactly.
    """
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "metrics.csv"
        lines = [",".join(CSV_COLUMNS)]
        for r in records:
            lines.append(
                f"{r.step},{r.train_accuracy:.9g},{r.loss_total:.9g},"
                f"{r.loss_data:.9g},{r.loss_reg:.9g},{r.wall_ms:.9g}"
            )
        csv_path.write_text("\n".join(lines) + "\n", newline="\n")
        written.append(csv_path)
        if summary is not None:
            sum_path = out / "summary.json"
            sum_path.write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
            written.append(sum_path)
    except OSError as e:
        raise OSError(f"writing metrics under {out}: {e}") from e
    if plots and records:
        from . import plots as plots_mod

        written.extend(plots_mod.render_curves(records, out))
    return written


def read_metrics(path: str | Path) -> list[MetricRecord]:
    """Parse a metrics.csv back into records."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise FormatError(f"{path}: expected header {','.join(CSV_COLUMNS)}")
    records = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(CSV_COLUMNS):
            raise FormatError(f"{path}: bad row {ln!r}")
        records.append(
            MetricRecord(
                step=int(parts[0]),
                train_accuracy=float(parts[1]),
                loss_total=float(parts[2]),
                loss_data=float(parts[3]),
                loss_reg=float(parts[4]),
                wall_ms=float(parts[5]),
            )
        )
    return records


def save_model(model: ModelParams, path: str | Path) -> None:
    """Write a flat binary container: magic, version, JSON metadata, then
    named float64 little-endian tensors."""
    meta = json.dumps({"pool_size": model.pool_size, "pool_stride": model.pool_stride})
    tensors = model.named_tensors()
    blob = bytearray()
    blob += MODEL_MAGIC
    blob += struct.pack("<I", MODEL_VERSION)
    meta_bytes = meta.encode("utf-8")
    blob += struct.pack("<I", len(meta_bytes)) + meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<I", len(name_bytes)) + name_bytes
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated model file")
        out = self.raw[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_model(path: str | Path) -> ModelParams:
    """Read a container written by save_model."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4) != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    version = r.u32()
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        ndim = r.take(1)[0]
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)
    if r.off != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.off} trailing bytes")
    needed = (
        "conv1.kernels", "conv1.bias", "conv2.kernels", "conv2.bias",
        "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
    )
    missing = [n for n in needed if n not in tensors]
    if missing:
        raise FormatError(f"{path}: missing tensors {missing}")
    return ModelParams(
        conv1=Conv2dParams(kernels=tensors["conv1.kernels"], bias=tensors["conv1.bias"]),
        conv2=Conv2dParams(kernels=tensors["conv2.kernels"], bias=tensors["conv2.bias"]),
        fc1=DenseParams(weight=tensors["fc1.weight"], bias=tensors["fc1.bias"]),
        fc2=DenseParams(weight=tensors["fc2.weight"], bias=tensors["fc2.bias"]),
        pool_size=int(meta.get("pool_size", 2)),
        pool_stride=int(meta.get("pool_stride", 2)),
    )
