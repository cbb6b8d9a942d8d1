"""Training loop with best-validation checkpointing and learning-rate decay."""

from __future__ import annotations

import io
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, TextIO

import numpy as np

from . import kernels as K
from .checkpoint import read_checkpoint, save_checkpoint
from .data import SPLITS, Batch, DatasetManifest, ManifestError, iter_batches, load_image, load_split
from .kernels import DTYPE
from .model import HEAD_L2, Model

log = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr")


@dataclass
class TrainConfig:
    batch_size: int = 80
    epochs: int = 15
    initial_lr: float = 0.01
    lr_decay_factor: float = 0.5
    lr_floor: float = 1e-6
    momentum: float = 0.9
    l2: float = HEAD_L2
    seed: int = 0
    interactive: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError(f"lr_decay_factor must be in (0, 1), got {self.lr_decay_factor}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.initial_lr <= 0 or self.lr_floor < 0:
            raise ValueError("learning rates must be positive")
        if self.l2 != HEAD_L2:
            raise ValueError(f"the L2 strength is fixed by the head at {HEAD_L2}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    learning_rate: float
    wall_seconds: float


@dataclass
class TrainState:
    model: Model
    velocity: dict[str, np.ndarray]
    lr: float
    best_val_accuracy: float = -np.inf
    history: list[EpochRecord] = field(default_factory=list)
    checkpoint_path: Path | None = None
    saved_epochs: list[int] = field(default_factory=list)

    @classmethod
    def start(cls, model: Model, config: TrainConfig, checkpoint_path=None) -> "TrainState":
        velocity = {k: np.zeros_like(v) for k, v in model.parameters().items()}
        return cls(model, velocity, config.initial_lr,
                   checkpoint_path=Path(checkpoint_path) if checkpoint_path else None)


def sgd_momentum_step(params, grads, velocity, lr: float, momentum: float) -> None:
    """In place: ``v <- momentum * v - lr * g``; ``w <- w + v``."""
    for name, w in params.items():
        g, v = grads[name], velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise K.ShapeError(f"{name}: param {w.shape}, grad {g.shape}, velocity {v.shape}")
        v *= DTYPE(momentum)
        v -= DTYPE(lr) * g
        w += v


def evaluate(model: Model, batches: Iterable[Batch]):
    """Infer-mode loss (cross-entropy plus the head's L2 term), accuracy and confusion matrix.

    ``confusion[true, predicted]``; ties in the logits resolve to the lower class index.
    """
    k = model.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    loss_sum, n = 0.0, 0
    for batch in batches:
        logits = model.forward(batch.images, "infer")
        loss, _, _ = K.softmax_cross_entropy(logits, batch.labels)
        loss_sum += loss * len(batch.labels)
        n += len(batch.labels)
        np.add.at(confusion, (batch.labels, logits.argmax(axis=1)), 1)
    if n == 0:
        raise ValueError("evaluate needs at least one sample")
    return loss_sum / n + model.regularization_loss(), float(np.trace(confusion) / n), confusion


def _train_pass(state: TrainState, batches: Iterable[Batch], momentum: float, rng) -> tuple[float, float]:
    model = state.model
    params = model.parameters()
    loss_sum, correct, n = 0.0, 0, 0
    for batch in batches:
        loss, probs, grads = model.loss_and_grads(batch.images, batch.labels, "train", rng)
        sgd_momentum_step(params, grads, state.velocity, state.lr, momentum)
        m = len(batch.labels)
        loss_sum += loss * m
        correct += int((probs.argmax(axis=1) == batch.labels).sum())
        n += m
    if n == 0:
        raise ValueError("training split produced no batches")
    return loss_sum / n, correct / n


def run_epoch(state: TrainState, train_batches: Iterable[Batch], val_batches: Iterable[Batch],
              config: TrainConfig, rng: np.random.Generator | None = None,
              evaluator: Callable = evaluate) -> EpochRecord:
    """One pass over the training batches, then validation and the checkpoint / decay rule.

    A strictly better validation accuracy saves a checkpoint; anything else
    (ties included) multiplies the learning rate by the decay factor, down to
    the floor. The record carries the learning rate used during this epoch.
    """
    start = time.perf_counter()
    epoch = len(state.history) + 1
    lr_used = state.lr
    train_loss, train_acc = _train_pass(state, train_batches, config.momentum, rng)
    val_loss, val_acc, _ = evaluator(state.model, val_batches)
    if val_acc > state.best_val_accuracy:
        state.best_val_accuracy = val_acc
        state.saved_epochs.append(epoch)
        if state.checkpoint_path is not None:
            save_checkpoint(state.model, {"epoch": epoch, "best_val_accuracy": val_acc, "learning_rate": lr_used},
                            state.checkpoint_path)
    else:
        state.lr = max(state.lr * config.lr_decay_factor, config.lr_floor)
    record = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc, lr_used,
                         max(time.perf_counter() - start, 1e-9))
    state.history.append(record)
    return record


def _ask_for_more(stream: TextIO, out: TextIO) -> int:
    while True:
        out.write("additional epochs (0 to stop): ")
        out.flush()
        line = stream.readline()
        if not line:
            return 0
        try:
            value = int(line.strip())
        except ValueError:
            out.write(f"not a number: {line.strip()!r}\n")
            continue
        if value < 0:
            out.write("enter a non-negative integer\n")
            continue
        return value


def fit(model: Model, manifest: DatasetManifest, config: TrainConfig, out_dir=None,
        input_stream: TextIO | None = None, prompt_stream: TextIO | None = None,
        metrics_path=None, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainState:
    """Train on the manifest's train split, validating on its val split after every epoch.

    Runs ``config.epochs`` epochs, then (if ``config.interactive``) keeps
    asking ``input_stream`` for more until it answers 0 or ends. Before
    returning, the model is restored to the best-validation checkpoint.
    """
    missing = [s for s in SPLITS if not manifest.split(s)]
    if missing:
        raise ManifestError(f"manifest has no entries for split(s): {', '.join(missing)}")
    res = model.config.resolution
    train_x, train_y, train_paths = load_split(manifest, "train", res)
    val_x, val_y, val_paths = load_split(manifest, "val", res)

    ckpt = Path(out_dir) / "best.ckpt" if out_dir is not None else None
    state = TrainState.start(model, config, ckpt)
    val_batches = list(iter_batches(val_x, val_y, config.batch_size, paths=val_paths))

    def run(n_epochs):
        for _ in range(n_epochs):
            epoch = len(state.history) + 1
            train_batches = iter_batches(train_x, train_y, config.batch_size, config.seed, epoch, train_paths)
            record = run_epoch(state, train_batches, val_batches, config, K.make_rng(config.seed, epoch))
            log.info("epoch %d: train loss %.4f acc %.4f | val loss %.4f acc %.4f | lr %g",
                     record.epoch, record.train_loss, record.train_accuracy,
                     record.val_loss, record.val_accuracy, record.learning_rate)
            if metrics_path is not None:
                write_metrics(state.history, metrics_path)
            if on_epoch is not None:
                on_epoch(record)

    run(config.epochs)
    if config.interactive:
        stream = input_stream if input_stream is not None else sys.stdin
        out = prompt_stream if prompt_stream is not None else sys.stderr
        while (more := _ask_for_more(stream, out)) > 0:
            run(more)
    if metrics_path is not None and not state.history:
        write_metrics(state.history, metrics_path)
    restore_best(state)
    return state


def restore_best(state: TrainState) -> None:
    if state.checkpoint_path is not None and state.checkpoint_path.exists():
        _, _, tensors = read_checkpoint(state.checkpoint_path)
        state.model.load_state_dict(tensors)


def predict(model: Model, image_path) -> tuple[int, np.ndarray]:
    """Class index and probability vector for one image; ties resolve to class 0."""
    x = load_image(image_path, model.config.resolution)
    probs = K.softmax(model.forward(x, "infer"))[0]
    return int(np.argmax(probs)), probs


# ---------------------------------------------------------------------------
# metrics file
# ---------------------------------------------------------------------------

class MetricsError(ValueError):
    pass


def format_metrics(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    buf.write(",".join(METRICS_FIELDS) + "\n")
    for r in history:
        buf.write(f"{r.epoch},{r.train_loss!r},{r.train_accuracy!r},{r.val_loss!r},{r.val_accuracy!r},"
                  f"{r.learning_rate!r}\n")
    return buf.getvalue()


def write_metrics(history: list[EpochRecord], path) -> None:
    Path(path).write_text(format_metrics(history), encoding="utf-8", newline="")


def read_metrics(path) -> list[dict[str, float]]:
    """Parse a metrics file; raises MetricsError naming the offending line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MetricsError(f"{path}: empty metrics file")
    if tuple(lines[0].split(",")) != METRICS_FIELDS:
        raise MetricsError(f"{path}:1: header must be {','.join(METRICS_FIELDS)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(METRICS_FIELDS):
            raise MetricsError(f"{path}:{lineno}: expected {len(METRICS_FIELDS)} fields, got {len(parts)}")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise MetricsError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
        if not all(np.isfinite(values)):
            raise MetricsError(f"{path}:{lineno}: non-finite value in {line!r}")
        rows.append(dict(zip(METRICS_FIELDS, values)))
    if not rows:
        raise MetricsError(f"{path}: no epoch rows")
    return rows


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
