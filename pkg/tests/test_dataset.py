import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from handwash.dataset import (
    DatasetManifest,
    FrameSample,
    LabelRegistry,
    PreprocessSpec,
    dumps_manifest,
    load_manifest,
    loads_manifest,
    make_split,
    preprocess_frame,
    save_manifest,
    stratum_val_count,
)
from handwash.errors import ConfigError, ParseError, PreprocessError, SplitError


def synthetic_manifest(counts, registry=None):
    registry = registry or LabelRegistry()
    samples = []
    for label, n in zip(registry, counts):
        for i in range(n):
            samples.append(FrameSample(Path(f"/data/{label.name}/v_{i:05d}.jpg"), label, f"{label.name}_v", i))
    return DatasetManifest(tuple(samples), registry)


def test_registry_order_and_ids():
    reg = LabelRegistry()
    assert reg.names == ("FingersInterlaced", "Linear", "Palm2Palm")
    assert [lab.id for lab in reg] == [0, 1, 2]
    assert reg.by_name("Palm2Palm").id == 2
    assert "Circular" not in reg


@pytest.mark.parametrize("names", [[], ["A", "A"], ["A", ""]])
def test_registry_rejects_bad_names(names):
    with pytest.raises(ConfigError):
        LabelRegistry(names)


def test_registry_is_extensible():
    reg = LabelRegistry(["A", "B", "C", "D", "E", "F"])
    assert len(reg) == 6 and reg[5].name == "F"


def test_split_quarter_of_eight():
    m = make_split(synthetic_manifest([4, 4], LabelRegistry(["A", "B"])), 0.25, seed=99)
    assert len(m.val) == 2
    assert sorted(s.label.name for s in m.val) == ["A", "B"]


def test_split_same_seed_same_assignment():
    m = synthetic_manifest([10, 7, 9])
    assert make_split(m, 0.25, 7).splits == make_split(m, 0.25, 7).splits


def test_split_errors():
    with pytest.raises(SplitError):
        make_split(synthetic_manifest([1, 4, 4]), 0.25, 0)
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            make_split(synthetic_manifest([4, 4, 4]), bad, 0)


def test_stratum_rounding_is_half_up_and_clamped():
    assert stratum_val_count(54, 0.25) == 14  # 13.5 rounds up
    assert stratum_val_count(52, 0.25) == 13
    assert stratum_val_count(2, 0.01) == 1
    assert stratum_val_count(2, 0.99) == 1
    assert stratum_val_count(15, 0.1) == 2  # 1.5 exactly, despite binary 0.1


def test_162_frames_to_41_validation():
    # 55/55/52 is one class-count triple whose quarter quotas are 14/14/13
    m = make_split(synthetic_manifest([55, 55, 52]), 0.25, 0)
    assert len(m.val) == 41
    assert [sum(1 for s in m.val if s.label.id == c) for c in range(3)] == [14, 14, 13]


@settings(max_examples=60, deadline=None)
@given(
    counts=st.lists(st.integers(2, 40), min_size=3, max_size=3),
    fraction=st.floats(0.01, 0.99),
    seed=st.integers(0, 2**31),
)
def test_split_partition_property(counts, fraction, seed):
    m = make_split(synthetic_manifest(counts), fraction, seed)
    assert len(m.train) + len(m.val) == len(m)
    assert not {s.key for s in m.train} & {s.key for s in m.val}
    for label, n in zip(m.registry, counts):
        k = sum(1 for s in m.val if s.label == label)
        assert k == stratum_val_count(n, fraction)
        assert 1 <= k <= n - 1


def test_preprocess_identity():
    img = np.arange(224 * 224 * 3, dtype=np.int64).reshape(224, 224, 3) % 256
    spec = PreprocessSpec(224, 224, (0, 0, 0), "RGB")
    out = preprocess_frame(img.astype(np.uint8), spec)
    np.testing.assert_array_equal(out, img.astype(np.float32))


def test_preprocess_shape_and_mean_cancellation():
    img = np.full((240, 320, 3), 77, np.uint8)
    out = preprocess_frame(img, PreprocessSpec(224, 224, (77, 77, 77)))
    assert out.shape == (224, 224, 3)
    assert not out.any()


def test_preprocess_channel_order():
    img = np.zeros((4, 4, 3), np.uint8)
    img[..., 0] = 10
    out = preprocess_frame(img, PreprocessSpec(4, 4, (0, 0, 0), "BGR"))
    assert (out[..., 2] == 10).all() and not out[..., 0].any()


def test_preprocess_shape_idempotent():
    spec = PreprocessSpec(50, 70, (0, 0, 0))
    out = preprocess_frame(np.zeros((33, 91, 3), np.uint8), spec)
    again = preprocess_frame(np.clip(np.rint(out), 0, 255).astype(np.uint8), spec)
    assert again.shape == out.shape


@pytest.mark.parametrize("shape", [(0, 10, 3), (10, 10), (10, 10, 4), (10, 10, 1)])
def test_preprocess_rejects_bad_rasters(shape):
    with pytest.raises(PreprocessError):
        preprocess_frame(np.zeros(shape, np.uint8))


def test_preprocess_spec_validation():
    with pytest.raises(ConfigError):
        PreprocessSpec(0, 10)
    with pytest.raises(ConfigError):
        PreprocessSpec(10, 10, channel_order="RBG")


def test_manifest_empty_round_trip(tmp_path):
    m = DatasetManifest((), LabelRegistry())
    path = save_manifest(m, tmp_path / "m.jsonl")
    assert path.read_text().count("\n") == 1
    assert load_manifest(path) == m


def test_manifest_round_trip_with_split(tmp_path):
    m = make_split(synthetic_manifest([55, 55, 52]), 0.25, 3)
    path = save_manifest(m, tmp_path / "m.jsonl")
    lines = path.read_text().splitlines()
    assert len(lines) == 163
    assert json.loads(lines[0]) == {"version": 1, "labels": ["FingersInterlaced", "Linear", "Palm2Palm"]}
    assert set(json.loads(lines[1])) == {"path", "label", "video", "frame", "split"}
    assert load_manifest(path) == m
    assert dumps_manifest(load_manifest(path)) == dumps_manifest(m)


def test_manifest_unknown_label():
    text = dumps_manifest(synthetic_manifest([1, 1, 1]))
    text = text.replace('"label": "Linear"', '"label": "Circular"')
    with pytest.raises(ParseError, match="Circular") as exc:
        loads_manifest(text)
    assert exc.value.line == 3


def test_manifest_malformed_line_number():
    text = dumps_manifest(synthetic_manifest([2, 1, 1])).splitlines()
    text[2] = "{not json"
    with pytest.raises(ParseError) as exc:
        loads_manifest("\n".join(text))
    assert exc.value.line == 3
    with pytest.raises(ParseError) as exc:
        loads_manifest('{"version": 1, "labels": ["A"]}\n{"path": "x"}\n')
    assert exc.value.line == 2


def test_manifest_rejects_partial_split():
    m = make_split(synthetic_manifest([2, 2, 2]), 0.5, 0)
    lines = dumps_manifest(m).splitlines()
    rec = json.loads(lines[1])
    rec["split"] = None
    lines[1] = json.dumps(rec)
    with pytest.raises(ParseError):
        loads_manifest("\n".join(lines))
