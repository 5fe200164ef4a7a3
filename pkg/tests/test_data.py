import json
import struct

import numpy as np
import pytest

from text2pressure.data import (CLASS_LABELS, DEFAULT_SPLIT, MANIFEST_NAME, PAPER_SPLIT_FRAMES, PSEQ_MAGIC,
                                SENSOR_MAX_MMHG, BadMagicError, ConfigError, DatasetManifest, DimensionMismatchError,
                                ManifestEntry, PressureSequence, SynthConfig, TruncatedPayloadError, allocate_counts,
                                decode_sequence, load_sequence, make_real_proxy, normalize, save_sequence,
                                split_dataset, synth_dataset, synth_sequences)


def small_cfg(**kw):
    base = dict(sequences_per_class=3, frames_per_sequence=120, height=80, width=28, seed=7)
    base.update(kw)
    return SynthConfig(**base)


def test_synth_counts(tmp_path):
    m = synth_dataset(small_cfg(classes=("basic", "yoga")), tmp_path)
    assert m.total_sequences == 6
    assert m.total_frames == 720
    assert (tmp_path / MANIFEST_NAME).exists()
    assert len(list(tmp_path.glob("*.pseq"))) == 6


def test_synth_is_byte_deterministic(tmp_path):
    cfg = small_cfg(classes=("dance",), frames_per_sequence=20, height=16, width=8)
    synth_dataset(cfg, tmp_path / "a")
    synth_dataset(cfg, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_synth_seed_changes_frames():
    a = synth_sequences(small_cfg(seed=7, frames_per_sequence=10, height=16, width=8))
    b = synth_sequences(small_cfg(seed=8, frames_per_sequence=10, height=16, width=8))
    assert any(not np.array_equal(x.frames, y.frames) for x, y in zip(a, b))


def test_synth_frames_obey_sensor_bounds():
    for s in synth_sequences(small_cfg(sequences_per_class=2, frames_per_sequence=30)):
        s.check_values()
        assert s.frames.min() >= 0 and s.frames.max() <= SENSOR_MAX_MMHG
        assert s.class_label in CLASS_LABELS and s.description


def test_invalid_config_writes_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ConfigError) as err:
        synth_dataset(small_cfg(sequences_per_class=0), out)
    assert err.value.field == "sequences_per_class"
    assert not out.exists()


def test_radii_must_fit():
    with pytest.raises(ConfigError):
        SynthConfig.from_dict({"templates": {"yoga": {"radius_rows": 0.7}}})


def test_nearest_centroid_separability():
    def feats(seqs):
        return np.stack([s.frames.mean(0).ravel() for s in seqs]), np.array([s.class_label for s in seqs])

    xtr, ytr = feats(synth_sequences(SynthConfig(sequences_per_class=20, seed=1, height=40, width=14)))
    xte, yte = feats(synth_sequences(SynthConfig(sequences_per_class=20, seed=2, height=40, width=14)))
    cents = {c: xtr[ytr == c].mean(0) for c in CLASS_LABELS}
    pred = np.array([min(cents, key=lambda c: np.sum((x - cents[c]) ** 2)) for x in xte])
    f1 = []
    for c in CLASS_LABELS:
        tp = np.sum((pred == c) & (yte == c))
        p, r = tp / max(np.sum(pred == c), 1), tp / max(np.sum(yte == c), 1)
        f1.append(0.0 if p + r == 0 else 2 * p * r / (p + r))
    assert np.mean(f1) >= 0.9


def test_pseq1_layout(tmp_path):
    seq = PressureSequence(np.array([[[0, 1], [2, 3]]], dtype=np.float32))
    p = tmp_path / "x.pseq"
    save_sequence(seq, p)
    raw = p.read_bytes()
    assert raw == PSEQ_MAGIC + struct.pack("<IHH", 1, 2, 2) + struct.pack("<4f", 0, 1, 2, 3)


def test_round_trip_bit_exact(tmp_path):
    for i, s in enumerate(synth_sequences(small_cfg(sequences_per_class=1, frames_per_sequence=12))):
        p = tmp_path / f"{i}.pseq"
        save_sequence(s, p)
        back = load_sequence(p)
        assert back.frames.tobytes() == s.frames.tobytes()


def test_nan_rejected_no_file(tmp_path):
    f = np.zeros((2, 3, 3), dtype=np.float32)
    f[1, 1, 1] = np.nan
    p = tmp_path / "bad.pseq"
    with pytest.raises(ValueError):
        save_sequence(PressureSequence(f), p)
    assert not p.exists()


def test_decode_errors_are_distinct():
    good = PSEQ_MAGIC + struct.pack("<IHH", 10, 2, 2) + b"\0" * (4 * 4 * 10)
    assert decode_sequence(good).shape == (10, 2, 2)
    with pytest.raises(BadMagicError):
        decode_sequence(b"XXXX1" + good[5:])
    with pytest.raises(TruncatedPayloadError):
        decode_sequence(good[: -16])  # 9 frames of payload for T=10
    with pytest.raises(DimensionMismatchError):
        decode_sequence(good + b"\0" * 4)
    codes = {BadMagicError.code, TruncatedPayloadError.code, DimensionMismatchError.code}
    assert len(codes) == 3


def test_load_uses_sibling_manifest(tmp_path):
    m = synth_dataset(small_cfg(sequences_per_class=1, frames_per_sequence=8, height=8, width=6), tmp_path)
    e = m.entries[0]
    s = load_sequence(tmp_path / e.path)
    assert (s.class_label, s.description, s.subject_id) == (e.class_label, e.description, e.subject_id)
    lone = tmp_path / "lone"
    lone.mkdir()
    (lone / "z.pseq").write_bytes((tmp_path / e.path).read_bytes())
    s2 = load_sequence(lone / "z.pseq")
    assert s2.class_label is None and s2.description == ""


def test_normalize_values_and_no_double():
    s = PressureSequence(np.array([[[5000.0, 0.0, 2500.0]]], dtype=np.float32))
    n = normalize(s)
    assert n.normalized
    np.testing.assert_array_equal(n.frames[0, 0], [1.0, 0.0, 0.5])
    with pytest.raises(ValueError):
        normalize(n)


def test_split_small_counts(tmp_path):
    entries = [ManifestEntry(f"s{i}.pseq", "", "basic", None, 120) for i in range(10)]
    m = split_dataset(DatasetManifest(entries), (0.8, 0.1, 0.1), seed=3)
    names = list(m.splits.values())
    assert (names.count("train"), names.count("test"), names.count("val")) == (8, 1, 1)
    assert split_dataset(DatasetManifest(entries), (0.8, 0.1, 0.1), seed=3).splits == m.splits
    assert set(m.splits) == {e.path for e in entries}


def test_split_paper_fractions_on_frames():
    assert allocate_counts(86_400, DEFAULT_SPLIT) == list(PAPER_SPLIT_FRAMES)
    # 720 sequences of 120 frames each gives the same frame-level counts up to one sequence
    counts = allocate_counts(720, DEFAULT_SPLIT)
    for c, frames in zip(counts, PAPER_SPLIT_FRAMES):
        assert abs(c * 120 - frames) <= 120


def test_split_needs_enough_sequences():
    entries = [ManifestEntry("a.pseq", "", None, None, 3), ManifestEntry("b.pseq", "", None, None, 3)]
    with pytest.raises(ValueError):
        split_dataset(DatasetManifest(entries))
    with pytest.raises(ValueError):
        split_dataset(DatasetManifest(entries * 3), (0.5, 0.5, 0.1))


@pytest.mark.parametrize("n", [3, 7, 31, 100])
def test_split_sizes_within_one(n):
    entries = [ManifestEntry(f"s{i}.pseq", "", None, None, 1) for i in range(n)]
    m = split_dataset(DatasetManifest(entries), seed=n)
    for name, frac in zip(("train", "test", "val"), DEFAULT_SPLIT):
        got = sum(1 for v in m.splits.values() if v == name)
        assert abs(got - n * frac) <= 1


def test_manifest_json_round_trip(tmp_path):
    m = synth_dataset(small_cfg(sequences_per_class=1, frames_per_sequence=8, height=8, width=6), tmp_path)
    m = split_dataset(m, seed=1)
    m.save(tmp_path / "m2.json")
    doc = json.loads((tmp_path / "m2.json").read_text())
    assert set(doc) == {"entries", "seed", "splits"}
    back = DatasetManifest.load_file(tmp_path / "m2.json")
    assert back == m
    assert sum(len(back.subset(k).entries) for k in ("train", "test", "val")) == back.total_sequences


def test_real_proxy_differs_and_is_floored(tmp_path):
    cfg = small_cfg(sequences_per_class=1, frames_per_sequence=10, height=16, width=8)
    proxy = make_real_proxy(cfg, tmp_path).load_all()
    clean = synth_sequences(cfg, prefix="real-")
    for p, c in zip(proxy, clean):
        assert p.activity_id == c.activity_id
        assert not np.array_equal(p.frames, c.frames)
        nz = p.frames[p.frames > 0]
        assert nz.min() >= 40.0
        ratio = p.frames[(p.frames > 0) & (c.frames > 0)] / c.frames[(p.frames > 0) & (c.frames > 0)]
        assert ratio.min() >= 0.9 - 1e-6 and ratio.max() <= 1.1 + 1e-6


def test_sequence_invariants():
    with pytest.raises(ValueError):
        PressureSequence(np.zeros((0, 2, 2)))
    with pytest.raises(ValueError):
        PressureSequence(np.zeros((1, 2, 2)), class_label="running")
    s = PressureSequence(np.full((1, 2, 2), 2.0), normalized=True)
    with pytest.raises(ValueError):
        s.check_values()
