"""Label registry, frame manifests, preprocessing and stratified splitting."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import cv2
import numpy as np

from .errors import ConfigError, ParseError, PreprocessError, SplitError

DEFAULT_CLASS_NAMES = ("FingersInterlaced", "Linear", "Palm2Palm")
# ImageNet per-channel means, RGB order, 0..255 scale
IMAGENET_MEANS = (123.68, 116.779, 103.939)
DEFAULT_VAL_FRACTION = 0.25
MANIFEST_VERSION = 1

TRAIN = "train"
VAL = "val"


@dataclass(frozen=True, order=True)
class ClassLabel:
    id: int
    name: str


class LabelRegistry:
    """Closed, ordered set of class labels. Ids follow registry order from 0."""

    def __init__(self, names: Iterable[str] = DEFAULT_CLASS_NAMES):
        names = tuple(names)
        if not names:
            raise ConfigError("label registry needs at least one class")
        if any(not isinstance(n, str) or not n for n in names):
            raise ConfigError("class names must be non-empty strings")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate class names in {names!r}")
        self._labels = tuple(ClassLabel(i, n) for i, n in enumerate(names))
        self._by_name = {lab.name: lab for lab in self._labels}
        self._names = tuple(names)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __len__(self):
        return len(self._labels)

    def __iter__(self):
        return iter(self._labels)

    def __getitem__(self, index: int) -> ClassLabel:
        return self._labels[index]

    def __contains__(self, label):
        if isinstance(label, ClassLabel):
            return self._by_name.get(label.name) == label
        return label in self._by_name

    def __eq__(self, other):
        return isinstance(other, LabelRegistry) and self.names == other.names

    def __hash__(self):
        return hash(self.names)

    def __repr__(self):
        return f"LabelRegistry({list(self.names)!r})"

    def by_name(self, name: str) -> ClassLabel:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(name) from None


@dataclass(frozen=True)
class FrameSample:
    image_path: Path
    label: ClassLabel
    source_video: str
    frame_index: int

    def __post_init__(self):
        object.__setattr__(self, "image_path", Path(self.image_path))
        if self.frame_index < 0:
            raise ConfigError(f"negative frame index {self.frame_index}")

    @property
    def key(self) -> tuple[str, int]:
        return (self.source_video, self.frame_index)


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable list of samples plus an optional train/val assignment.

    ``splits`` is parallel to ``samples``; ``None`` means no split was made yet.
    """

    samples: tuple[FrameSample, ...]
    registry: LabelRegistry = field(default_factory=LabelRegistry)
    splits: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        for s in self.samples:
            if s.label not in self.registry:
                raise ConfigError(f"label {s.label.name!r} not in registry")
        if self.splits is not None:
            splits = tuple(self.splits)
            if len(splits) != len(self.samples):
                raise ConfigError("split assignment must cover every sample exactly once")
            bad = set(splits) - {TRAIN, VAL}
            if bad:
                raise ConfigError(f"unknown split names {sorted(bad)}")
            object.__setattr__(self, "splits", splits)

    def __len__(self):
        return len(self.samples)

    def split_of(self, index: int) -> str | None:
        return None if self.splits is None else self.splits[index]

    def subset(self, split: str) -> list[FrameSample]:
        if self.splits is None:
            raise SplitError("manifest has no split assignment")
        return [s for s, sp in zip(self.samples, self.splits) if sp == split]

    @property
    def train(self) -> list[FrameSample]:
        return self.subset(TRAIN)

    @property
    def val(self) -> list[FrameSample]:
        return self.subset(VAL)

    def class_counts(self) -> dict[str, int]:
        counts = {name: 0 for name in self.registry.names}
        for s in self.samples:
            counts[s.label.name] += 1
        return counts


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def stratum_val_count(class_count: int, val_fraction: float) -> int:
    """Validation quota for one class: half-up rounding, clamped to [1, n-1]."""
    n = round_half_up(class_count * Fraction(str(val_fraction)))
    return min(max(n, 1), class_count - 1)


def make_split(
    manifest: DatasetManifest,
    val_fraction: float = DEFAULT_VAL_FRACTION,
    seed: int = 0,
) -> DatasetManifest:
    """Stratified, seeded train/val assignment.

    Each class is shuffled independently with a generator derived from
    ``seed`` and the class id, so adding a class never perturbs another
    class's assignment.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    by_class: dict[int, list[int]] = {lab.id: [] for lab in manifest.registry}
    for i, s in enumerate(manifest.samples):
        by_class[s.label.id].append(i)

    splits = [TRAIN] * len(manifest.samples)
    for class_id, indices in by_class.items():
        if not indices:
            continue
        if len(indices) < 2:
            name = manifest.registry[class_id].name
            raise SplitError(f"class {name!r} has {len(indices)} sample(s); need at least 2")
        k = stratum_val_count(len(indices), val_fraction)
        rng = np.random.default_rng([seed, class_id])
        for pos in rng.permutation(len(indices))[:k]:
            splits[indices[pos]] = VAL
    return DatasetManifest(manifest.samples, manifest.registry, tuple(splits))


@dataclass(frozen=True)
class PreprocessSpec:
    target_height: int = 224
    target_width: int = 224
    channel_means: tuple[float, float, float] = IMAGENET_MEANS
    channel_order: str = "RGB"

    def __post_init__(self):
        if self.target_height <= 0 or self.target_width <= 0:
            raise ConfigError("target dimensions must be positive")
        if len(self.channel_means) != 3:
            raise ConfigError("channel_means needs exactly 3 values")
        if self.channel_order not in ("RGB", "BGR"):
            raise ConfigError(f"channel_order must be RGB or BGR, got {self.channel_order!r}")
        object.__setattr__(self, "channel_means", tuple(float(m) for m in self.channel_means))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.target_height, self.target_width, 3)

    def to_dict(self) -> dict:
        return {
            "target_height": self.target_height,
            "target_width": self.target_width,
            "channel_means": list(self.channel_means),
            "channel_order": self.channel_order,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PreprocessSpec":
        return cls(
            int(d["target_height"]),
            int(d["target_width"]),
            tuple(d["channel_means"]),
            d["channel_order"],
        )


def preprocess_frame(image: np.ndarray, spec: PreprocessSpec = PreprocessSpec()) -> np.ndarray:
    """Resize an RGB raster, subtract channel means, reorder channels.

    Input is taken to be RGB (decoders in this package convert from
    OpenCV's BGR at read time). Means are given in RGB order.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise PreprocessError(f"expected non-empty HxWx3 raster, got shape {image.shape}")
    h, w = image.shape[:2]
    if (h, w) != (spec.target_height, spec.target_width):
        interp = cv2.INTER_AREA if h > spec.target_height or w > spec.target_width else cv2.INTER_LINEAR
        image = cv2.resize(image, (spec.target_width, spec.target_height), interpolation=interp)
    out = image.astype(np.float32) - np.asarray(spec.channel_means, dtype=np.float32)
    if spec.channel_order == "BGR":
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def read_image(path) -> np.ndarray:
    """Load an image file as an RGB uint8 raster."""
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise PreprocessError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


# -- manifest file ---------------------------------------------------------

def _sample_record(s: FrameSample, split: str | None) -> dict:
    return {
        "path": str(s.image_path),
        "label": s.label.name,
        "video": s.source_video,
        "frame": s.frame_index,
        "split": split,
    }


def dumps_manifest(manifest: DatasetManifest) -> str:
    lines = [json.dumps({"version": MANIFEST_VERSION, "labels": list(manifest.registry.names)})]
    for i, s in enumerate(manifest.samples):
        lines.append(json.dumps(_sample_record(s, manifest.split_of(i))))
    return "\n".join(lines) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_manifest(manifest), encoding="utf-8")
    return path


def loads_manifest(text: str, registry: LabelRegistry | None = None) -> DatasetManifest:
    lines = text.splitlines()
    if not lines:
        raise ParseError("missing header", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed header: {exc.msg}", line=1) from None
    if not isinstance(header, dict) or header.get("version") != MANIFEST_VERSION or "labels" not in header:
        raise ParseError("header must be {version: 1, labels: [...]}", line=1)
    file_registry = LabelRegistry(header["labels"])
    if registry is None:
        registry = file_registry
    elif registry != file_registry:
        extra = [n for n in file_registry.names if n not in registry]
        if extra:
            raise ParseError(f"unknown label {extra[0]!r}", line=1)

    samples, splits = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            path, label, video, frame = rec["path"], rec["label"], rec["video"], rec["frame"]
            split = rec.get("split")
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"malformed record ({exc.__class__.__name__})", line=lineno) from None
        if label not in registry:
            raise ParseError(f"unknown label {label!r}", line=lineno)
        if not isinstance(frame, int) or frame < 0:
            raise ParseError(f"bad frame index {frame!r}", line=lineno)
        if split not in (None, TRAIN, VAL):
            raise ParseError(f"bad split {split!r}", line=lineno)
        samples.append(FrameSample(Path(path), registry.by_name(label), str(video), frame))
        splits.append(split)

    if not samples or all(sp is None for sp in splits):
        return DatasetManifest(tuple(samples), registry)
    if any(sp is None for sp in splits):
        raise ParseError("split assignment present for some records but not all")
    return DatasetManifest(tuple(samples), registry, tuple(splits))


def load_manifest(path, registry: LabelRegistry | None = None) -> DatasetManifest:
    return loads_manifest(Path(path).read_text(encoding="utf-8"), registry)


def stack_frames(samples: Sequence[FrameSample], spec: PreprocessSpec) -> np.ndarray:
    """Read and preprocess samples into one float32 batch."""
    out = np.empty((len(samples),) + spec.shape, dtype=np.float32)
    for i, s in enumerate(samples):
        out[i] = preprocess_frame(read_image(s.image_path), spec)
    return out
