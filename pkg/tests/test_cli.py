import json
from pathlib import Path

import numpy as np
import pytest

from handwash.cli import main
from handwash.dataset import DatasetManifest, FrameSample, LabelRegistry, save_manifest
from handwash.fixtures import FixtureSpec, generate_clip, write_clip
from handwash.metrics import parse_text

REG = LabelRegistry()


@pytest.fixture(scope="module")
def extracted(clip_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("extracted")
    assert main(["extract", "--corpus", str(clip_corpus), "--out", str(out), "--stride", "5"]) == 0
    return out / "manifest.jsonl"


@pytest.fixture(scope="module")
def run_dir(extracted, tmp_path_factory):
    run = tmp_path_factory.mktemp("run")
    assert main(["train", "--manifest", str(extracted), "--epochs", "4", "--seed", "1", "--out", str(run)]) == 0
    return run


def test_extract_writes_manifest(extracted):
    lines = extracted.read_text().splitlines()
    assert json.loads(lines[0])["labels"] == list(REG.names)
    recs = [json.loads(line) for line in lines[1:]]
    assert len(recs) == 3 * 2 * 6
    per_clip = {}
    for r in recs:
        per_clip[r["video"]] = per_clip.get(r["video"], 0) + 1
    assert set(per_clip.values()) == {6}
    assert {r["label"] for r in recs} == set(REG.names)


def test_extract_missing_corpus(tmp_path, capsys):
    assert main(["extract", "--corpus", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert "nope" in capsys.readouterr().err


def test_split_command(extracted, tmp_path):
    out = tmp_path / "split.jsonl"
    assert main(["split", "--manifest", str(extracted), "--out", str(out), "--seed", "3"]) == 0
    splits = [json.loads(line)["split"] for line in out.read_text().splitlines()[1:]]
    assert splits.count("val") == 3 * 3  # 12 per class, quarter = 3


def test_train_run_directory(run_dir):
    for name in ("config.json", "history.json", "curves.png", "manifest.jsonl", "model/model.json", "model/head.npz"):
        assert (run_dir / name).exists(), name
    assert len(json.loads((run_dir / "history.json").read_text())) == 4
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["train"]["epochs"] == 4 and cfg["backbone"]["kind"] == "stub"


def test_train_is_reproducible(extracted, run_dir, tmp_path):
    assert main(["train", "--manifest", str(extracted), "--epochs", "4", "--seed", "1", "--out", str(tmp_path)]) == 0
    for name in ("history.json", "config.json", "manifest.jsonl", "model/model.json"):
        assert (tmp_path / name).read_bytes() == (run_dir / name).read_bytes(), name


def test_eval_layout(run_dir):
    assert main(["eval", "--run", str(run_dir)]) == 0
    cells = parse_text((run_dir / "report.txt").read_text())
    assert list(cells) == [*REG.names, "Micro avg", "Macro avg", "Weighted avg"]
    rep = json.loads((run_dir / "report.json").read_text())
    assert rep["version"] == 1 and rep["micro_avg"]["support"] == 9


def _val_manifest(tmp_path, supports):
    samples, splits = [], []
    for label, n in zip(REG, supports):
        for i in range(n + 2):
            samples.append(FrameSample(Path(f"/unused/{label.name}_{i:05d}.jpg"), label, label.name, i))
            splits.append("val" if i < n else "train")
    return save_manifest(DatasetManifest(tuple(samples), REG, tuple(splits)), tmp_path / "m.jsonl")


def test_eval_injected_truth(tmp_path):
    m = _val_manifest(tmp_path, (3, 4, 5))
    preds = tmp_path / "p.json"
    preds.write_text(json.dumps(["FingersInterlaced"] * 3 + ["Linear"] * 4 + ["Palm2Palm"] * 5))
    assert main(["eval", "--run", str(tmp_path / "r"), "--manifest", str(m), "--predictions", str(preds)]) == 0
    for p, r, f, _ in parse_text((tmp_path / "r" / "report.txt").read_text()).values():
        assert str(p) == str(r) == str(f) == "1.00"


def test_eval_injected_reference_matrix(tmp_path, capsys):
    m = _val_manifest(tmp_path, (14, 14, 13))
    preds = tmp_path / "p.json"
    preds.write_text(json.dumps([0] * 14 + [1] * 14 + [0] * 12 + [1]))
    assert main(["eval", "--run", str(tmp_path / "r"), "--manifest", str(m), "--predictions", str(preds)]) == 0
    cells = parse_text(capsys.readouterr().out)
    got = {k: (str(p), str(r), str(f), s) for k, (p, r, f, s) in cells.items()}
    assert got == {
        "FingersInterlaced": ("0.54", "1.00", "0.70", 14),
        "Linear": ("0.93", "1.00", "0.97", 14),
        "Palm2Palm": ("0.00", "0.00", "0.00", 13),
        "Micro avg": ("0.68", "0.68", "0.68", 41),
        "Macro avg": ("0.49", "0.67", "0.56", 41),
        "Weighted avg": ("0.50", "0.68", "0.57", 41),
    }


@pytest.fixture(scope="module")
def long_clip(tmp_path_factory):
    d = tmp_path_factory.mktemp("long") / "Linear"
    d.mkdir()
    return write_clip(generate_clip(FixtureSpec(REG[1], num_frames=80, seed=9)), d / "Linear.avi")


def test_predict_window_one(run_dir, long_clip, tmp_path):
    out = tmp_path / "p"
    assert main(["predict", "--run", str(run_dir), "--clip", str(long_clip), "--window", "1", "--out", str(out)]) == 0
    tl = json.loads((out / "timeline.json").read_text())
    assert len(tl) == 80
    for rec in tl:
        assert rec["label"] == REG.names[int(np.argmax(rec["raw_probs"]))]
        assert rec["raw_probs"] == rec["smoothed_probs"]


def test_predict_annotates(run_dir, long_clip, tmp_path):
    out = tmp_path / "p"
    args = ["predict", "--run", str(run_dir), "--clip", str(long_clip), "--annotate-frames", "38,60,64", "--out", str(out)]
    assert main(args) == 0
    assert sorted(p.name for p in out.glob("*.png")) == [
        "Linear_00038_pred.png", "Linear_00060_pred.png", "Linear_00064_pred.png",
    ]


def test_predict_out_of_range_frame(run_dir, long_clip, tmp_path):
    args = ["predict", "--run", str(run_dir), "--clip", str(long_clip), "--annotate-frames", "200", "--out", str(tmp_path)]
    assert main(args) == 2


def test_predict_with_mismatched_model(run_dir, long_clip, tmp_path, capsys):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(run_dir / "model", bad / "model")
    meta = json.loads((bad / "model" / "model.json").read_text())
    meta["labels"] = meta["labels"][:2]
    (bad / "model" / "model.json").write_text(json.dumps(meta))
    assert main(["predict", "--run", str(bad), "--clip", str(long_clip)]) == 2
    assert "ConfigError" in capsys.readouterr().err


def test_fixtures_command(tmp_path):
    assert main(["fixtures", "--out", str(tmp_path / "c"), "--per-class", "1", "--frames", "4"]) == 0
    assert len(list((tmp_path / "c").rglob("*.avi"))) == 3
