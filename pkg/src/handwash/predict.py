"""Per-frame clip inference with rolling-average smoothing and annotated stills."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

from .dataset import ClassLabel, LabelRegistry, preprocess_frame
from .errors import ConfigError, FrameRangeError
from .ingest import ClipRef, iter_frames, read_frames
from .model import TransferModel

DEFAULT_WINDOW = 25


def rolling_mean(raw: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over the last ``min(t + 1, window)`` rows.

    Early rows average only the frames seen so far, with no padding.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    raw = np.asarray(raw, dtype=np.float64)
    out = np.empty_like(raw)
    for t in range(len(raw)):
        out[t] = raw[max(t + 1 - window, 0) : t + 1].mean(axis=0)
    return out


@dataclass(frozen=True)
class TimelineRecord:
    frame_index: int
    raw_probs: tuple[float, ...]
    smoothed_probs: tuple[float, ...]
    label: ClassLabel


class PredictionTimeline(list):
    """Frame-ordered list of :class:`TimelineRecord`."""

    @classmethod
    def from_probs(
        cls,
        raw: np.ndarray,
        registry: LabelRegistry,
        window: int = DEFAULT_WINDOW,
        frame_indices: Iterable[int] | None = None,
    ) -> "PredictionTimeline":
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[1] != len(registry):
            raise ConfigError(f"probabilities have {raw.shape[-1]} classes, registry has {len(registry)}")
        smoothed = rolling_mean(raw, window)
        frames = range(len(raw)) if frame_indices is None else list(frame_indices)
        # argmax returns the first maximum, i.e. the lowest class id on ties
        labels = smoothed.argmax(axis=1) if len(raw) else []
        return cls(
            TimelineRecord(int(f), tuple(map(float, r)), tuple(map(float, s)), registry[int(k)])
            for f, r, s, k in zip(frames, raw, smoothed, labels)
        )

    @property
    def labels(self) -> list[ClassLabel]:
        return [r.label for r in self]

    def raw(self) -> np.ndarray:
        return np.array([r.raw_probs for r in self])

    def smoothed(self) -> np.ndarray:
        return np.array([r.smoothed_probs for r in self])

    def by_frame(self) -> dict[int, TimelineRecord]:
        return {r.frame_index: r for r in self}

    def to_json(self) -> str:
        return json.dumps(
            [
                {
                    "frame_index": r.frame_index,
                    "raw_probs": list(r.raw_probs),
                    "smoothed_probs": list(r.smoothed_probs),
                    "label": r.label.name,
                }
                for r in self
            ],
            indent=2,
        ) + "\n"

    @classmethod
    def from_json(cls, text: str, registry: LabelRegistry) -> "PredictionTimeline":
        return cls(
            TimelineRecord(d["frame_index"], tuple(d["raw_probs"]), tuple(d["smoothed_probs"]), registry.by_name(d["label"]))
            for d in json.loads(text)
        )


def predict_clip(
    model: TransferModel,
    clip: ClipRef,
    window: int = DEFAULT_WINDOW,
    registry: LabelRegistry | None = None,
    batch_size: int = 32,
) -> PredictionTimeline:
    """Classify every frame of ``clip`` and smooth the class distributions."""
    registry = registry or model.registry
    if len(registry) != model.num_classes:
        raise ConfigError(f"model predicts {model.num_classes} classes but registry has {len(registry)}")
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    probs, batch = [], []
    for frame in iter_frames(clip.path):
        batch.append(preprocess_frame(frame, model.input_spec))
        if len(batch) == batch_size:
            probs.append(model.forward(np.stack(batch)))
            batch = []
    if batch:
        probs.append(model.forward(np.stack(batch)))
    raw = np.concatenate(probs) if probs else np.empty((0, model.num_classes))
    clip.frame_count = len(raw)
    return PredictionTimeline.from_probs(raw, registry, window)


def annotated_name(clip_stem: str, frame_index: int) -> str:
    return f"{clip_stem}_{frame_index:05d}_pred.png"


def annotate_frames(clip: ClipRef, timeline: PredictionTimeline, out_dir, frames: Iterable[int] = ()) -> list[Path]:
    """Overlay the smoothed label on selected frames and save them as PNG."""
    wanted = sorted(set(int(f) for f in frames))
    if not wanted:
        return []
    records = timeline.by_frame()
    n = clip.frame_count if clip.frame_count is not None else len(timeline)
    for f in wanted:
        if f < 0 or f >= n or f not in records:
            raise FrameRangeError(f, n)
    images = read_frames(clip.path, wanted)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for f in wanted:
        rec = records[f]
        img = cv2.cvtColor(images[f], cv2.COLOR_RGB2BGR)
        h, w = img.shape[:2]
        scale = max(w / 640.0, 0.35)
        thickness = max(int(round(2 * scale)), 1)
        text = f"{rec.label.name} {max(rec.smoothed_probs):.2f}"
        cv2.putText(img, text, (max(int(8 * scale), 2), max(int(30 * scale), 12)), cv2.FONT_HERSHEY_SIMPLEX,
                    scale, (0, 255, 0), thickness, cv2.LINE_AA)
        path = out_dir / annotated_name(clip.stem, f)
        cv2.imwrite(str(path), img)
        written.append(path)
    return written
