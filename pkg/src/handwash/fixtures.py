"""Synthetic gesture clips standing in for the private recordings.

Each class has a distinct motion archetype drawn over seeded noise:

* ``Linear``: one bright blob sliding left to right.
* ``Palm2Palm``: two blobs approaching and separating.
* ``FingersInterlaced``: vertical stripes whose phase oscillates.

Frames are grayscale replicated to three channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .dataset import ClassLabel, LabelRegistry
from .errors import ConfigError, HandwashError

MIN_SIZE = 32
NOISE_STD = 12.0
BACKGROUND = 40.0
BLOB_LEVEL = 215.0
STRIPE_PERIOD = 16


class FixtureIOError(HandwashError, OSError):
    pass


@dataclass(frozen=True)
class FixtureSpec:
    class_id: ClassLabel
    num_frames: int = 30
    height: int = 64
    width: int = 64
    seed: int = 0


def _blob(yy, xx, cy, cx, radius):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2))


def _linear(t, n, yy, xx, h, w, rng_params):
    radius = 0.12 * min(h, w)
    cy = rng_params["cy"] * h
    margin = 2 * radius
    # strictly increasing column, clip to clip
    cx = margin + (w - 2 * margin) * (t + 0.5) / n
    return BLOB_LEVEL * _blob(yy, xx, cy, cx, radius)


def _palm2palm(t, n, yy, xx, h, w, rng_params):
    radius = 0.12 * min(h, w)
    cy = rng_params["cy"] * h
    centre = w / 2.0
    cycles = rng_params["cycles"]
    phase = rng_params["phase"]
    # half-separation swings between 1.5 and 3.3 radii
    half_gap = radius * (2.4 + 0.9 * np.cos(2 * np.pi * cycles * t / n + phase))
    img = _blob(yy, xx, cy, centre - half_gap, radius) + _blob(yy, xx, cy, centre + half_gap, radius)
    return BLOB_LEVEL * np.minimum(img, 1.0)


def _interlaced(t, n, yy, xx, h, w, rng_params):
    cycles = rng_params["cycles"]
    shift = 0.5 * STRIPE_PERIOD * np.sin(2 * np.pi * cycles * t / n + rng_params["phase"])
    stripes = 0.5 + 0.5 * np.cos(2 * np.pi * (xx - shift) / STRIPE_PERIOD)
    return BLOB_LEVEL * 0.8 * stripes


_ARCHETYPES = {
    "Linear": _linear,
    "Palm2Palm": _palm2palm,
    "FingersInterlaced": _interlaced,
}


def generate_clip(spec: FixtureSpec) -> np.ndarray:
    """Return a ``num_frames x H x W x 3`` uint8 array, a pure function of ``spec``."""
    if spec.height < MIN_SIZE or spec.width < MIN_SIZE:
        raise ConfigError(f"fixture frames must be at least {MIN_SIZE}x{MIN_SIZE}")
    if spec.num_frames < 1:
        raise ConfigError("num_frames must be positive")
    try:
        draw = _ARCHETYPES[spec.class_id.name]
    except KeyError:
        raise ConfigError(f"no fixture archetype for class {spec.class_id.name!r}") from None

    rng = np.random.default_rng([spec.seed, spec.class_id.id])
    params = {
        "cy": rng.uniform(0.35, 0.65),
        "cycles": rng.uniform(1.0, 2.0),
        "phase": rng.uniform(0, 2 * np.pi),
    }
    h, w, n = spec.height, spec.width, spec.num_frames
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    frames = np.empty((n, h, w, 3), dtype=np.uint8)
    for t in range(n):
        img = BACKGROUND + draw(t, n, yy, xx, h, w, params) + rng.normal(0.0, NOISE_STD, (h, w))
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)[..., None]
    return frames


def write_clip(frames: np.ndarray, path, fps: float = 25.0) -> Path:
    """Encode RGB frames to a lossless FFV1 ``.avi`` container."""
    path = Path(path)
    h, w = frames.shape[1:3]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"FFV1"), fps, (w, h))
    if not writer.isOpened():
        raise FixtureIOError(f"cannot open video writer for {path}")
    try:
        for f in frames:
            writer.write(cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
    finally:
        writer.release()
    return path


def generate_corpus(
    root,
    per_class: int = 2,
    frames_per_clip: int = 30,
    dims: tuple[int, int] = (64, 64),
    seed: int = 0,
    registry: LabelRegistry | None = None,
    fmt: str = "clips",
) -> Path:
    """Write a directory-per-class corpus under ``root``.

    ``fmt="clips"`` writes one encoded clip per sample; ``fmt="frames"``
    writes the stills directly, named like extracted frames.
    """
    if per_class < 1:
        raise ConfigError("per_class must be at least 1")
    if fmt not in ("clips", "frames"):
        raise ConfigError(f"unknown fixture format {fmt!r}")
    registry = registry or LabelRegistry()
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for label in registry:
            class_dir = root / label.name
            class_dir.mkdir(exist_ok=True)
            for k in range(per_class):
                spec = FixtureSpec(label, frames_per_clip, dims[0], dims[1], seed=seed * 100003 + k)
                frames = generate_clip(spec)
                stem = f"{label.name}_{k:03d}"
                if fmt == "clips":
                    write_clip(frames, class_dir / f"{stem}.avi")
                else:
                    for t, f in enumerate(frames):
                        ok = cv2.imwrite(str(class_dir / f"{stem}_{t:05d}.png"), cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
                        if not ok:
                            raise FixtureIOError(f"cannot write frame under {class_dir}")
    except PermissionError as exc:
        raise FixtureIOError(str(exc)) from exc
    return root
