"""``handwash`` command line: fixtures | extract | split | train | eval | predict.

Exit codes: 0 success, 1 internal error, 2 user or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .dataset import DEFAULT_VAL_FRACTION, LabelRegistry, load_manifest, make_split, save_manifest
from .errors import ConfigError, HandwashError
from .fixtures import generate_corpus
from .ingest import ClipRef, extract_corpus
from .metrics import classification_report, render_text
from .model import BACKBONE_KINDS, STUB, BackboneSpec, HeadSpec, assemble, load_checkpoint
from .predict import DEFAULT_WINDOW, annotate_frames, predict_clip
from .train import TrainConfig, emit_curves, extract_features, train

log = logging.getLogger("handwash")

EXIT_OK, EXIT_INTERNAL, EXIT_USER = 0, 1, 2


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _frame_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated frame numbers, got {text!r}") from None


def cmd_fixtures(args) -> int:
    root = generate_corpus(
        args.out, args.per_class, args.frames, (args.size, args.size), args.seed, fmt=args.format
    )
    print(root)
    return EXIT_OK


def cmd_extract(args) -> int:
    manifest = extract_corpus(args.corpus, args.out, LabelRegistry(), args.stride)
    path = save_manifest(manifest, args.manifest or Path(args.out) / "manifest.jsonl")
    counts = manifest.class_counts()
    log.info("extracted %d frames: %s", len(manifest), counts)
    print(path)
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = make_split(load_manifest(args.manifest), args.val_fraction, args.seed)
    print(save_manifest(manifest, args.out or args.manifest))
    return EXIT_OK


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    presplit = manifest.splits is not None
    split_seed = args.seed if args.split_seed is None else args.split_seed
    if not presplit:
        manifest = make_split(manifest, args.val_fraction, split_seed)
    if args.backbone == STUB:
        backbone = BackboneSpec(STUB, args.feature_dim, seed=args.seed)
    else:
        backbone = BackboneSpec.resnet50(args.weights)
    head = HeadSpec(tuple(args.hidden), args.dropout, len(manifest.registry), args.seed)
    config = TrainConfig(args.epochs, args.batch_size, args.lr, args.seed)

    run_config = {
        "package_version": __version__,
        "manifest": str(args.manifest),
        "labels": list(manifest.registry.names),
        "split": {"val_fraction": args.val_fraction, "seed": split_seed, "presplit": presplit},
        "backbone": backbone.to_dict(),
        "head": head.to_dict(),
        "train": config.to_dict(),
    }
    for key, value in run_config.items():
        log.info("config %s = %s", key, value)

    run = Path(args.out)
    run.mkdir(parents=True, exist_ok=True)
    _write_json(run / "config.json", run_config)
    save_manifest(manifest, run / "manifest.jsonl")

    model = assemble(backbone, head, manifest.registry)
    before = model.backbone_checksum()
    trained, history = train(model, manifest, config, checkpoint_dir=run / "model")
    if trained.backbone_checksum() != before:
        raise RuntimeError("backbone parameters changed during training")
    history.save(run / "history.json")
    emit_curves(history, run / "curves.png")
    last = history[-1]
    print(f"epochs={len(history)} train_loss={last.train_loss:.4f} val_acc={last.val_acc:.4f} run={run}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = Path(args.run)
    manifest = load_manifest(args.manifest or run / "manifest.jsonl")
    samples = manifest.val if manifest.splits is not None else list(manifest.samples)
    y_true = [s.label.id for s in samples]
    if args.predictions:
        y_pred = json.loads(Path(args.predictions).read_text(encoding="utf-8"))
        if not isinstance(y_pred, list):
            raise ConfigError("predictions file must hold a JSON list of labels")
    else:
        model = load_checkpoint(run / "model")
        if model.registry != manifest.registry:
            raise ConfigError("model and manifest use different label registries")
        y_pred = model.head.predict_proba(extract_features(model, samples)).argmax(axis=1).tolist()
    rep = classification_report(y_true, y_pred, manifest.registry)
    run.mkdir(parents=True, exist_ok=True)
    (run / "report.json").write_text(rep.to_json(), encoding="utf-8")
    text = render_text(rep)
    (run / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_predict(args) -> int:
    run = Path(args.run)
    model = load_checkpoint(run / "model")
    clip = ClipRef.open(args.clip, model.registry)
    timeline = predict_clip(model, clip, args.window)
    out = Path(args.out) if args.out else run / "predictions" / clip.stem
    out.mkdir(parents=True, exist_ok=True)
    (out / "timeline.json").write_text(timeline.to_json(), encoding="utf-8")
    written = annotate_frames(clip, timeline, out, args.annotate_frames)
    counts = {}
    for lab in timeline.labels:
        counts[lab.name] = counts.get(lab.name, 0) + 1
    print(f"frames={len(timeline)} labels={counts} stills={len(written)} out={out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handwash", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fixtures", help="generate a synthetic gesture corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=20)
    s.add_argument("--frames", type=int, default=30)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--format", choices=("clips", "frames"), default="clips")
    s.set_defaults(func=cmd_fixtures)

    s = sub.add_parser("extract", help="decode corpus clips into frames and write a manifest")
    s.add_argument("--corpus", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--manifest", help="manifest path (default OUT/manifest.jsonl)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("split", help="assign a stratified train/val split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="output manifest (default: overwrite input)")
    s.add_argument("--val-fraction", type=float, default=DEFAULT_VAL_FRACTION)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train the classification head")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--backbone", choices=BACKBONE_KINDS, default=STUB)
    s.add_argument("--weights", help="ResNet50 ImageNet weights file (default: $HANDWASH_CACHE/resnet50*.pth)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--split-seed", type=int)
    s.add_argument("--val-fraction", type=float, default=DEFAULT_VAL_FRACTION)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--hidden", type=int, nargs="*", default=[512])
    s.add_argument("--dropout", type=float, default=0.5)
    s.add_argument("--feature-dim", type=int, default=128, help="stub backbone width")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="write report.json and report.txt for a run")
    s.add_argument("--run", required=True)
    s.add_argument("--manifest", help="default: RUN/manifest.jsonl")
    s.add_argument("--predictions", help="JSON list of predicted labels, one per evaluated sample")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="per-frame prediction on one clip")
    s.add_argument("--run", required=True)
    s.add_argument("--clip", required=True)
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    s.add_argument("--annotate-frames", type=_frame_list, default=[])
    s.add_argument("--out", help="default: RUN/predictions/<clip stem>")
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (HandwashError, FileNotFoundError) as exc:
        print(f"error: {exc.__class__.__name__}: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
