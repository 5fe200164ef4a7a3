import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from text2pressure.data import PressureSequence
from text2pressure.metrics import (GaussianStats, MetricReport, NotPSDError, PCAFeatures, binarized_r2,
                                   evaluate_pairs, fid, frechet_distance, gaussian_stats, macro_f1, per_class_f1, r2)


def stats1d(mu, sd):
    return GaussianStats(np.array([mu]), np.array([[sd * sd]]), 10)


def test_gaussian_stats_by_hand():
    g = gaussian_stats([[0, 0], [2, 2]])
    np.testing.assert_array_equal(g.mu, [1, 1])
    np.testing.assert_array_equal(g.sigma, [[2, 2], [2, 2]])
    assert np.all(gaussian_stats([[1, 3]] * 4).sigma == 0)
    with pytest.raises(ValueError):
        gaussian_stats([[1, 2]])


def test_frechet_examples():
    assert frechet_distance(stats1d(0, 1), stats1d(0, 1)) == pytest.approx(0, abs=1e-6)
    assert frechet_distance(stats1d(0, 1), stats1d(1, 1)) == pytest.approx(1.0, abs=1e-12)
    assert frechet_distance(stats1d(0, 1), stats1d(0, 2)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(1e-3, 30), st.floats(-50, 50), st.floats(1e-3, 30))
def test_frechet_1d_closed_form(m1, s1, m2, s2):
    expect = (m1 - m2) ** 2 + (s1 - s2) ** 2
    assert abs(frechet_distance(stats1d(m1, s1), stats1d(m2, s2)) - expect) <= 1e-8 * max(1.0, expect)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_frechet_symmetric_nonnegative(d, seed):
    rng = np.random.default_rng(seed)
    a = gaussian_stats(rng.standard_normal((3 * d + 4, d)))
    b = gaussian_stats(rng.standard_normal((3 * d + 4, d)) * 2 + 1)
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0
    assert ab == pytest.approx(ba, rel=1e-9, abs=1e-9)
    assert frechet_distance(a, a) == pytest.approx(0, abs=1e-6)


def test_frechet_rejects_bad_input():
    a = GaussianStats(np.zeros(2), np.eye(2), 5)
    with pytest.raises(ValueError):
        frechet_distance(a, stats1d(0, 1))
    bad = GaussianStats(np.zeros(2), np.diag([1.0, -0.5]), 5)
    with pytest.raises(NotPSDError):
        frechet_distance(bad, a)


def seqs_from(rng, n=6, T=10, H=4, W=3):
    return [PressureSequence(rng.random((T, H, W)).astype(np.float32), normalized=True) for _ in range(n)]


def test_fid_identity_symmetry_and_shift(rng):
    a, b = seqs_from(rng), seqs_from(rng)
    space = PCAFeatures.fit(a, 6)
    assert fid(a, a, space) <= 1e-6
    assert fid(a, b, space) == pytest.approx(fid(b, a, space), abs=1e-9)
    shifted = [s.with_frames(s.frames + np.float32(0.1)) for s in a]
    assert fid(a, shifted, space) > fid(a, a, space)


def test_fid_by_name_and_codec(tiny_seqs, tiny_codec):
    assert fid(tiny_seqs, tiny_seqs, "pca-flat") <= 1e-6
    assert fid(tiny_seqs, tiny_seqs, "codec-latent", tiny_codec) <= 1e-6
    with pytest.raises(ValueError):
        fid(tiny_seqs, tiny_seqs, "codec-latent")


def test_fid_small_sample_warns(rng):
    a = seqs_from(rng, n=1, T=3, H=4, W=4)
    with pytest.warns(RuntimeWarning):
        fid(a, a, PCAFeatures.fit(seqs_from(rng, n=4, H=4, W=4), 8))


def test_r2_examples():
    t = np.array([0.0, 1.0, 2.0, 5.0])
    assert r2(t, t) == 1.0
    assert r2(np.full(4, t.mean()), t) == pytest.approx(0.0, abs=1e-15)
    assert r2(np.array([0.5, 0.5]), np.array([0.0, 1.0])) == 0.0
    assert r2(np.ones(3), np.zeros(3)) == -math.inf
    assert r2(np.zeros(3), np.zeros(3)) == 1.0
    with pytest.raises(ValueError):
        r2(np.zeros(3), np.zeros(4))


def test_binarized_r2_examples():
    target = np.array([0.0, 0.0, 0.5, 0.5])
    pred = np.array([0.5, 0.5, 0.0, 0.0])
    assert binarized_r2(target, target) == 1.0
    assert binarized_r2(pred, target) == -3.0
    assert binarized_r2(pred, target, tau=0.9) == 1.0


def brute_r2(p, t):
    p, t = np.ravel(p).tolist(), np.ravel(t).tolist()
    m = sum(t) / len(t)
    ss_res = sum((a - b) ** 2 for a, b in zip(p, t))
    ss_tot = sum((b - m) ** 2 for b in t)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else -math.inf
    return 1 - ss_res / ss_tot


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 40))
def test_r2_matches_definition(seed, n):
    rng = np.random.default_rng(seed)
    p, t = rng.random(n), rng.random(n)
    assert r2(p, t) == pytest.approx(brute_r2(p, t), abs=1e-10)
    mp, mt = (p > 0.3).astype(float), (t > 0.3).astype(float)
    assert binarized_r2(p, t, 0.3) == pytest.approx(brute_r2(mp, mt), abs=1e-10)
    assert r2(p, t) <= 1.0
    perm = rng.permutation(n)
    assert r2(p[perm], t[perm]) == pytest.approx(r2(p, t), abs=1e-10)
    assert binarized_r2(p, p, 0.3) == 1.0


def test_r2_on_sequence_sets(rng):
    a, b = seqs_from(rng, n=3), seqs_from(rng, n=3)
    flat_a = np.concatenate([s.frames.ravel() for s in a])
    flat_b = np.concatenate([s.frames.ravel() for s in b])
    assert r2(a, b) == pytest.approx(brute_r2(flat_a, flat_b), abs=1e-10)
    with pytest.raises(ValueError):
        r2(a[:2], b)


def test_macro_f1_examples():
    assert macro_f1(list("abcd"), list("abcd"), "abcd") == 1.0
    assert macro_f1(list("abab"), list("aabb"), "ab") == 0.5
    assert macro_f1(list("aaaa"), list("aabb"), "ab") == pytest.approx(1 / 3)
    assert per_class_f1(list("aa"), list("aa"), "abc")["c"] == 1.0
    with pytest.raises(ValueError):
        macro_f1([], [], "ab")
    with pytest.raises(ValueError):
        macro_f1(["z"], ["a"], "ab")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=30))
def test_macro_f1_relabel_invariant(pairs):
    pred, truth = [p for p, _ in pairs], [t for _, t in pairs]
    mapping = {0: 2, 1: 3, 2: 0, 3: 1}
    a = macro_f1(pred, truth, range(4))
    b = macro_f1([mapping[p] for p in pred], [mapping[t] for t in truth], range(4))
    assert a == pytest.approx(b, abs=1e-12)


def test_report_json_and_evaluate_pairs(rng, tmp_path):
    a = seqs_from(rng, n=4)
    rep = evaluate_pairs(a, a, PCAFeatures.fit(a, 5), tau=0.05)
    assert rep.fid <= 1e-6 and rep.r2 == 1.0 and rep.binarized_r2 == 1.0
    assert rep.config["feature_space"] == "pca-flat" and rep.config["tau"] == 0.05
    assert MetricReport(r2=-math.inf).to_json()["r2"] == "-inf"
    rep.save(tmp_path / "r.json")
    assert "feature_space" in (tmp_path / "r.json").read_text()
