"""Frame extraction from gesture clips and manifest building from a corpus tree."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import cv2
import numpy as np

from .dataset import ClassLabel, DatasetManifest, FrameSample, LabelRegistry
from .errors import CorpusLayoutError, DecodeError, EmptyClipError, FrameRangeError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp"}
VIDEO_SUFFIXES = {".avi", ".mp4", ".mov", ".mkv", ".m4v"}
JPEG_QUALITY = 95
_FRAME_NAME = re.compile(r"^(?P<stem>.+)_(?P<index>\d{5,})$")


@dataclass
class ClipRef:
    path: Path
    label_hint: ClassLabel | None = None
    frame_count: int | None = None

    def __post_init__(self):
        self.path = Path(self.path)

    @property
    def stem(self) -> str:
        return self.path.stem

    @classmethod
    def open(cls, path, registry: LabelRegistry | None = None) -> "ClipRef":
        """Probe ``path`` and take the label hint from its parent directory."""
        path = Path(path)
        hint = None
        if registry is not None and path.parent.name in registry:
            hint = registry.by_name(path.parent.name)
        return cls(path, hint, probe(path))


def _capture(path: Path) -> cv2.VideoCapture:
    if not path.is_file():
        raise DecodeError(f"no such clip: {path}")
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        cap.release()
        raise DecodeError(f"cannot decode {path}")
    return cap


def iter_frames(path) -> Iterator[np.ndarray]:
    """Yield decoded frames of a clip as RGB uint8 rasters."""
    path = Path(path)
    cap = _capture(path)
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            yield cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
    finally:
        cap.release()


def probe(path) -> int:
    """Count decodable frames. Container metadata is not trusted."""
    n = sum(1 for _ in iter_frames(path))
    if n == 0:
        raise DecodeError(f"no decodable frames in {path}")
    return n


def read_frames(path, indices=None) -> dict[int, np.ndarray]:
    """Decode selected frames (all when ``indices`` is None)."""
    wanted = None if indices is None else set(indices)
    out = {}
    n = 0
    for n, frame in enumerate(iter_frames(path), start=1):
        t = n - 1
        if wanted is None or t in wanted:
            out[t] = frame
    if wanted:
        missing = sorted(wanted - out.keys())
        if missing:
            raise FrameRangeError(missing[0], n)
    return out


def frame_filename(clip_stem: str, frame_index: int, suffix: str = ".jpg") -> str:
    return f"{clip_stem}_{frame_index:05d}{suffix}"


def extract_frames(clip: ClipRef, stride: int = 1, out_dir=".") -> list[FrameSample]:
    """Write every ``stride``-th frame of ``clip`` as a JPEG under ``out_dir``."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if clip.label_hint is None:
        raise CorpusLayoutError(f"clip {clip.path} has no class label")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = []
    decoded = 0
    try:
        for t, frame in enumerate(iter_frames(clip.path)):
            decoded += 1
            if t % stride:
                continue
            target = out_dir / frame_filename(clip.stem, t)
            ok = cv2.imwrite(
                str(target),
                cv2.cvtColor(frame, cv2.COLOR_RGB2BGR),
                [cv2.IMWRITE_JPEG_QUALITY, JPEG_QUALITY],
            )
            if not ok:
                raise OSError(f"failed to write {target}")
            samples.append(FrameSample(target, clip.label_hint, clip.stem, t))
    except cv2.error as exc:
        raise DecodeError(f"cannot decode {clip.path}: {exc}") from exc
    if decoded == 0:
        raise EmptyClipError(f"no decodable frames in {clip.path}")
    clip.frame_count = decoded
    return samples


def _class_dirs(corpus_root: Path, registry: LabelRegistry) -> dict[str, Path]:
    if not corpus_root.is_dir():
        raise CorpusLayoutError(f"corpus root {corpus_root} is not a directory")
    dirs = {}
    for label in registry:
        d = corpus_root / label.name
        if not d.is_dir():
            raise CorpusLayoutError(f"missing class directory {d}")
        dirs[label.name] = d
    return dirs


def find_clips(corpus_root, registry: LabelRegistry) -> list[ClipRef]:
    """Every video under each class directory, sorted by path."""
    clips = []
    for name, d in _class_dirs(Path(corpus_root), registry).items():
        found = sorted(p for p in d.iterdir() if p.suffix.lower() in VIDEO_SUFFIXES)
        if not found:
            raise CorpusLayoutError(f"class {name} has no clips in {d}")
        label = registry.by_name(name)
        clips.extend(ClipRef(p, label) for p in found)
    return clips


@dataclass
class ManifestBuild:
    manifest: DatasetManifest
    warnings: list[str] = field(default_factory=list)


def _parse_frame_name(stem: str) -> tuple[str, int]:
    m = _FRAME_NAME.match(stem)
    if m:
        return m.group("stem"), int(m.group("index"))
    return stem, 0


def scan_corpus(corpus_root, registry: LabelRegistry | None = None) -> ManifestBuild:
    """Like :func:`build_manifest` but also returns skipped-file warnings."""
    registry = registry or LabelRegistry()
    corpus_root = Path(corpus_root)
    dirs = _class_dirs(corpus_root, registry)
    samples, warnings = [], []
    for label in registry:
        d = dirs[label.name]
        count = 0
        for p in sorted(d.iterdir()):
            if not p.is_file():
                continue
            if p.suffix.lower() not in IMAGE_SUFFIXES:
                msg = f"skipped non-image file {p}"
                log.warning(msg)
                warnings.append(msg)
                continue
            video, index = _parse_frame_name(p.stem)
            samples.append(FrameSample(p, label, video, index))
            count += 1
        if count == 0:
            raise CorpusLayoutError(label.name)
    samples.sort(key=lambda s: str(s.image_path))
    seen = set()
    for s in samples:
        if s.key in seen:
            raise CorpusLayoutError(f"duplicate frame {s.frame_index} for video {s.source_video!r}")
        seen.add(s.key)
    return ManifestBuild(DatasetManifest(tuple(samples), registry), warnings)


def build_manifest(corpus_root, registry: LabelRegistry | None = None) -> DatasetManifest:
    return scan_corpus(corpus_root, registry).manifest


def extract_corpus(
    corpus_root, out_root, registry: LabelRegistry | None = None, stride: int = 1
) -> DatasetManifest:
    """Extract every clip of a class-per-directory corpus into ``out_root``."""
    registry = registry or LabelRegistry()
    out_root = Path(out_root)
    samples = []
    for clip in find_clips(corpus_root, registry):
        samples.extend(extract_frames(clip, stride, out_root / clip.label_hint.name))
    samples.sort(key=lambda s: str(s.image_path))
    return DatasetManifest(tuple(samples), registry)
