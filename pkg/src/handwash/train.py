"""Head training loop, per-epoch history and the loss/accuracy plot."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import DatasetManifest, FrameSample, stack_frames
from .errors import ConfigError, DivergenceError, TrainDataError
from .model import TransferModel, save_checkpoint

log = logging.getLogger(__name__)

LOSSES = ("categorical_cross_entropy",)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    loss: str = "categorical_cross_entropy"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.loss not in LOSSES:
            raise ConfigError(f"unsupported loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


class TrainHistory(list):
    """List of :class:`EpochRecord`, one per epoch."""

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self])

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self], indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainHistory":
        return cls(EpochRecord(**r) for r in json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


def _labels(samples: list[FrameSample]) -> np.ndarray:
    return np.array([s.label.id for s in samples], dtype=np.int64)


def extract_features(model: TransferModel, samples: list[FrameSample], chunk: int = 64) -> np.ndarray:
    """Backbone features for ``samples``, read from disk chunk by chunk."""
    parts = [np.empty((0, model.backbone_spec.feature_dim))]
    for i in range(0, len(samples), chunk):
        parts.append(model.features(stack_frames(samples[i : i + chunk], model.input_spec)))
    return np.concatenate(parts)


def _evaluate(head, x, y) -> tuple[float, float]:
    probs = head.predict_proba(x)
    loss = float(-np.log(np.maximum(probs[np.arange(len(y)), y], np.finfo(float).tiny)).mean())
    acc = float((probs.argmax(axis=1) == y).mean())
    return loss, acc


def train_on_features(
    model: TransferModel,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainConfig = TrainConfig(),
    on_improve: Callable[[TransferModel, EpochRecord], None] | None = None,
) -> tuple[TransferModel, TrainHistory]:
    """Minibatch SGD on the head only, over precomputed backbone features.

    Losses and accuracies are measured in evaluation mode over the full
    split at the end of each epoch.
    """
    if len(x_train) == 0 or len(x_val) == 0:
        raise TrainDataError("training and validation splits must both be non-empty")
    if not model.is_frozen:
        raise ConfigError("backbone must be frozen before training")
    trainable = [k for k, v in model.trainable_mask.items() if v]
    head = model.head.copy()
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    best = -1.0
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = head.loss_and_grads(x_train[idx], y_train[idx], rng)
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            for name in trainable:
                head.params[name] -= config.learning_rate * grads[name]
        train_loss, train_acc = _evaluate(head, x_train, y_train)
        val_loss, val_acc = _evaluate(head, x_val, y_val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(epoch)
        rec = EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc)
        history.append(rec)
        log.info(
            "epoch %d/%d loss=%.4f acc=%.4f val_loss=%.4f val_acc=%.4f",
            epoch, config.epochs, train_loss, train_acc, val_loss, val_acc,
        )
        if val_acc > best:
            best = val_acc
            if on_improve is not None:
                on_improve(model.with_head(head.copy()), rec)
    return model.with_head(head), history


def train(
    model: TransferModel,
    manifest: DatasetManifest,
    config: TrainConfig = TrainConfig(),
    checkpoint_dir=None,
) -> tuple[TransferModel, TrainHistory]:
    """Train the head on the manifest's train split.

    The backbone is frozen and nothing is augmented, so features are
    computed once per sample and reused every epoch. When
    ``checkpoint_dir`` is set the model is saved whenever val accuracy
    improves.
    """
    if manifest.registry != model.registry:
        raise ConfigError("manifest and model use different label registries")
    if manifest.splits is None:
        raise TrainDataError("manifest has no train/val split")
    train_s, val_s = manifest.train, manifest.val
    if not train_s or not val_s:
        raise TrainDataError("training and validation splits must both be non-empty")
    if not model.is_frozen:
        raise ConfigError("backbone must be frozen before training")
    x_train = extract_features(model, train_s)
    x_val = extract_features(model, val_s)

    on_improve = None
    if checkpoint_dir is not None:
        def on_improve(m, rec):
            save_checkpoint(m, checkpoint_dir)
    return train_on_features(model, x_train, _labels(train_s), x_val, _labels(val_s), config, on_improve)


def emit_curves(history: TrainHistory, out) -> Path:
    """Plot train/val loss and accuracy against epoch into one PNG."""
    if len(history) == 0:
        raise ConfigError("cannot plot an empty history")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = history.series("epoch")
    fig, ax = plt.subplots(figsize=(8, 5))
    try:
        ax.plot(epochs, history.series("train_loss"), marker=".", label="train_loss")
        ax.plot(epochs, history.series("val_loss"), marker=".", label="val_loss")
        ax.plot(epochs, history.series("train_acc"), marker=".", label="train_acc")
        ax.plot(epochs, history.series("val_acc"), marker=".", label="val_acc")
        ax.set_title("Training Loss and Accuracy")
        ax.set_xlabel("Epoch #")
        ax.set_ylabel("Loss/Accuracy")
        ax.legend(loc="best")
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out)
    finally:
        plt.close(fig)
    return out
