"""Transfer model: frozen feature backbone plus a trainable dense head.

The head is a small numpy MLP (ReLU hidden layers with inverted dropout,
softmax output) with hand-written backprop. Backbones expose
``features(batch)`` and ``parameters()``; only the head is ever updated.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import cv2
import numpy as np

from .dataset import LabelRegistry, PreprocessSpec
from .errors import ConfigError, ShapeError, WeightsUnavailableError

RESNET50 = "pretrained_resnet50"
STUB = "stub"
BACKBONE_KINDS = (RESNET50, STUB)
RESNET50_FEATURES = 2048
CACHE_ENV = "HANDWASH_CACHE"
CHECKPOINT_VERSION = 1

# torchvision normalisation std, 0..1 scale, RGB
_TORCH_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class BackboneSpec:
    kind: str = STUB
    feature_dim: int = 128
    input: PreprocessSpec = field(default_factory=PreprocessSpec)
    seed: int = 0
    weights_path: str | None = None

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.kind == RESNET50:
            if self.feature_dim != RESNET50_FEATURES:
                raise ConfigError(f"{RESNET50} produces {RESNET50_FEATURES} features")
            if (self.input.target_height, self.input.target_width) != (224, 224):
                raise ConfigError(f"{RESNET50} takes 224x224 input")

    @classmethod
    def resnet50(cls, weights_path=None) -> "BackboneSpec":
        return cls(RESNET50, RESNET50_FEATURES, PreprocessSpec(), 0, weights_path)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "feature_dim": self.feature_dim,
            "input": self.input.to_dict(),
            "seed": self.seed,
            "weights_path": self.weights_path,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BackboneSpec":
        return cls(
            d["kind"],
            int(d["feature_dim"]),
            PreprocessSpec.from_dict(d["input"]),
            int(d.get("seed", 0)),
            d.get("weights_path"),
        )


@dataclass(frozen=True)
class HeadSpec:
    hidden_sizes: tuple[int, ...] = (512,)
    dropout_rate: float = 0.5
    num_classes: int = 3
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if any(h <= 0 for h in self.hidden_sizes):
            raise ConfigError("hidden sizes must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.num_classes < 2:
            raise ConfigError("a classifier head needs at least 2 classes")

    def to_dict(self) -> dict:
        return {
            "hidden_sizes": list(self.hidden_sizes),
            "dropout_rate": self.dropout_rate,
            "num_classes": self.num_classes,
            "init_seed": self.init_seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HeadSpec":
        return cls(tuple(d["hidden_sizes"]), float(d["dropout_rate"]), int(d["num_classes"]), int(d["init_seed"]))


def _check_batch(batch, spec: PreprocessSpec) -> np.ndarray:
    batch = np.asarray(batch)
    if batch.ndim != 4 or batch.shape[1:] != spec.shape:
        raise ShapeError(f"expected batch of shape (B, {', '.join(map(str, spec.shape))}), got {batch.shape}")
    return batch


class StubBackbone:
    """Seeded stand-in for a pretrained CNN.

    Area-downsamples the input to a 16x16 grid, rescales to unit pixel
    range, then applies a fixed random projection and ``tanh``.
    """

    grid = 16

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        in_dim = self.grid * self.grid * 3
        rng = np.random.default_rng([spec.seed, spec.feature_dim])
        self._params = {
            "backbone.projection": rng.normal(0.0, 2.0 / np.sqrt(in_dim), (in_dim, spec.feature_dim)),
            "backbone.offset": rng.uniform(-0.5, 0.5, spec.feature_dim),
        }
        for p in self._params.values():
            p.setflags(write=False)

    @property
    def identifier(self) -> str:
        return f"stub-seed{self.spec.seed}-dim{self.spec.feature_dim}"

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self._params)

    def features(self, batch: np.ndarray) -> np.ndarray:
        batch = _check_batch(batch, self.spec.input)
        g = self.grid
        pooled = np.empty((len(batch), g * g * 3), dtype=np.float64)
        for i, img in enumerate(batch):
            pooled[i] = cv2.resize(img.astype(np.float32), (g, g), interpolation=cv2.INTER_AREA).ravel()
        pooled /= 255.0
        return np.tanh(pooled @ self._params["backbone.projection"] + self._params["backbone.offset"])


def resolve_weights(spec: BackboneSpec) -> Path:
    if spec.weights_path:
        candidates = [Path(spec.weights_path)]
    else:
        root = os.environ.get(CACHE_ENV)
        if not root:
            raise WeightsUnavailableError(f"no weights_path given and ${CACHE_ENV} is unset")
        candidates = sorted(Path(root).glob("resnet50*.pth")) + sorted(Path(root).glob("resnet50*.pt"))
    for c in candidates:
        if c.is_file():
            return c
    raise WeightsUnavailableError(f"ResNet50 ImageNet weights not found (looked at {[str(c) for c in candidates] or root})")


class ResNet50Backbone:
    """torchvision ResNet50 with the classifier removed (global-pool output)."""

    def __init__(self, spec: BackboneSpec, batch_size: int = 16):
        import torch
        import torchvision

        path = resolve_weights(spec)
        net = torchvision.models.resnet50(weights=None)
        try:
            state = torch.load(path, map_location="cpu", weights_only=True)
            net.load_state_dict(state)
        except Exception as exc:  # corrupt or mismatched file
            raise WeightsUnavailableError(f"cannot load ResNet50 weights from {path}: {exc}") from exc
        net.fc = torch.nn.Identity()
        for p in net.parameters():
            p.requires_grad = False
        net.eval()
        self.spec = spec
        self.weights_file = path
        self._net = net
        self._torch = torch
        self._batch_size = batch_size

    @property
    def identifier(self) -> str:
        return f"resnet50:{self.weights_file.name}"

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"backbone.{k}": v.detach().cpu().numpy() for k, v in self._net.state_dict().items()}

    def features(self, batch: np.ndarray) -> np.ndarray:
        batch = _check_batch(batch, self.spec.input).astype(np.float32)
        if self.spec.input.channel_order == "BGR":
            batch = batch[..., ::-1]
        batch = batch / (255.0 * _TORCH_STD)
        out = np.empty((len(batch), RESNET50_FEATURES), dtype=np.float64)
        torch = self._torch
        with torch.no_grad():
            for i in range(0, len(batch), self._batch_size):
                x = torch.from_numpy(np.ascontiguousarray(batch[i : i + self._batch_size].transpose(0, 3, 1, 2)))
                out[i : i + len(x)] = self._net(x).numpy()
        return out


def build_backbone(spec: BackboneSpec):
    if spec.kind == STUB:
        return StubBackbone(spec)
    return ResNet50Backbone(spec)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class Head:
    """Dense ReLU layers with dropout, then a softmax class layer.

    Kernels use Glorot-uniform initialisation and biases start at zero.
    Parameters are float64 numpy arrays keyed ``head.dense_<i>.kernel`` and
    ``head.dense_<i>.bias``.
    """

    def __init__(self, spec: HeadSpec, in_dim: int, params: Mapping[str, np.ndarray] | None = None):
        self.spec = spec
        self.in_dim = in_dim
        self.sizes = (in_dim,) + spec.hidden_sizes + (spec.num_classes,)
        if params is None:
            rng = np.random.default_rng(spec.init_seed)
            params = {}
            for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                params[f"head.dense_{i}.kernel"] = rng.uniform(-limit, limit, (fan_in, fan_out))
                params[f"head.dense_{i}.bias"] = np.zeros(fan_out)
        self.params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.params[f"head.dense_{i}.kernel"].shape != (fan_in, fan_out):
                raise ConfigError(f"head layer {i} kernel has the wrong shape")

    @property
    def num_layers(self) -> int:
        return len(self.sizes) - 1

    def copy(self) -> "Head":
        return Head(self.spec, self.in_dim, self.params)

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def _layer(self, i):
        return self.params[f"head.dense_{i}.kernel"], self.params[f"head.dense_{i}.bias"]

    def logits(self, x: np.ndarray, rng: np.random.Generator | None = None, cache: list | None = None) -> np.ndarray:
        """Forward to pre-softmax scores. Dropout is active only when ``rng`` is given."""
        a = np.asarray(x, dtype=np.float64)
        keep = 1.0 - self.spec.dropout_rate
        for i in range(self.num_layers - 1):
            w, b = self._layer(i)
            z = a @ w + b
            a_next = np.maximum(z, 0.0)
            mask = None
            if rng is not None and self.spec.dropout_rate > 0:
                mask = (rng.random(a_next.shape) < keep) / keep
                a_next = a_next * mask
            if cache is not None:
                cache.append((a, z, mask))
            a = a_next
        w, b = self._layer(self.num_layers - 1)
        if cache is not None:
            cache.append((a, None, None))
        return a @ w + b

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return np.exp(_log_softmax(self.logits(x)))

    def loss(self, x: np.ndarray, y: np.ndarray) -> float:
        """Mean categorical cross-entropy in evaluation mode."""
        logp = _log_softmax(self.logits(x))
        return float(-logp[np.arange(len(y)), y].mean())

    def loss_and_grads(
        self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        y = np.asarray(y)
        cache: list = []
        logp = _log_softmax(self.logits(x, rng, cache))
        n = len(y)
        loss = float(-logp[np.arange(n), y].mean())

        delta = np.exp(logp)
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = {}
        for i in reversed(range(self.num_layers)):
            a_in, _, _ = cache[i]
            w, _ = self._layer(i)
            grads[f"head.dense_{i}.kernel"] = a_in.T @ delta
            grads[f"head.dense_{i}.bias"] = delta.sum(axis=0)
            if i == 0:
                break
            delta = delta @ w.T
            _, z_prev, mask_prev = cache[i - 1]
            if mask_prev is not None:
                delta = delta * mask_prev
            delta = delta * (z_prev > 0)
        return loss, grads


def checksum(params: Mapping[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class TransferModel:
    backbone: object
    head: Head
    registry: LabelRegistry
    trainable_mask: dict[str, bool]

    @property
    def backbone_spec(self) -> BackboneSpec:
        return self.backbone.spec

    @property
    def input_spec(self) -> PreprocessSpec:
        return self.backbone.spec.input

    @property
    def num_classes(self) -> int:
        return self.head.spec.num_classes

    @property
    def is_frozen(self) -> bool:
        return not any(self.trainable_mask[k] for k in self.backbone.parameters())

    def parameters(self) -> dict[str, np.ndarray]:
        return {**self.backbone.parameters(), **self.head.params}

    def trainable_parameter_count(self) -> int:
        return sum(p.size for k, p in self.parameters().items() if self.trainable_mask[k])

    def backbone_checksum(self) -> str:
        return checksum(self.backbone.parameters())

    def features(self, batch: np.ndarray, chunk: int = 64) -> np.ndarray:
        batch = _check_batch(batch, self.input_spec)
        if len(batch) == 0:
            return np.empty((0, self.backbone.spec.feature_dim))
        return np.concatenate([self.backbone.features(batch[i : i + chunk]) for i in range(0, len(batch), chunk)])

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Class probabilities (evaluation mode, no dropout)."""
        return self.head.predict_proba(self.features(batch))

    def with_head(self, head: Head) -> "TransferModel":
        return replace(self, head=head, trainable_mask=dict(self.trainable_mask))


def freeze_backbone(model: TransferModel) -> TransferModel:
    mask = dict(model.trainable_mask)
    for name in model.backbone.parameters():
        mask[name] = False
    return replace(model, trainable_mask=mask)


def assemble(
    backbone: BackboneSpec,
    head: HeadSpec,
    registry: LabelRegistry | None = None,
    freeze: bool = True,
) -> TransferModel:
    """Pretrained backbone (classifier removed) topped by a fresh head.

    Freezing happens here by default, the way a base model is marked
    non-trainable before the new layers go on top.
    """
    registry = registry or LabelRegistry()
    if head.num_classes != len(registry):
        raise ConfigError(f"head has {head.num_classes} classes but registry has {len(registry)}")
    bb = build_backbone(backbone)
    h = Head(head, backbone.feature_dim)
    mask = {name: True for name in bb.parameters()}
    mask.update({name: True for name in h.params})
    model = TransferModel(bb, h, registry, mask)
    return freeze_backbone(model) if freeze else model


def save_checkpoint(model: TransferModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "version": CHECKPOINT_VERSION,
        "backbone": model.backbone_spec.to_dict(),
        "backbone_id": model.backbone.identifier,
        "backbone_checksum": model.backbone_checksum(),
        "head": model.head.spec.to_dict(),
        "labels": list(model.registry.names),
    }
    np.savez(directory / "head.npz", **model.head.params)
    (directory / "model.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return directory


def load_checkpoint(directory) -> TransferModel:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        with np.load(directory / "head.npz") as z:
            params = {k: z[k] for k in z.files}
    except FileNotFoundError as exc:
        raise ConfigError(f"no model checkpoint in {directory}") from exc
    registry = LabelRegistry(meta["labels"])
    head_spec = HeadSpec.from_dict(meta["head"])
    if head_spec.num_classes != len(registry):
        raise ConfigError(
            f"checkpoint head predicts {head_spec.num_classes} classes but its registry lists {len(registry)}"
        )
    bb_spec = BackboneSpec.from_dict(meta["backbone"])
    bb = build_backbone(bb_spec)
    if checksum(bb.parameters()) != meta["backbone_checksum"]:
        raise ConfigError(f"backbone {bb.identifier} does not match the checkpoint's backbone checksum")
    head = Head(head_spec, bb_spec.feature_dim, params)
    mask = {name: False for name in bb.parameters()}
    mask.update({name: True for name in head.params})
    return TransferModel(bb, head, registry, mask)
