"""Acceptance criteria, one test per criterion.

Each test records a short measurement with ``record_property("detail", ...)``;
conftest prints one PASS/FAIL line per criterion at the end of the run.
Timings are measured on whatever machine runs the suite; the budgets are
the ones stated for a 4-core CPU, so a single-core pass is conservative.
"""

import json
import math
import shutil
import socket
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from text2pressure.cli import run as cli_run
from text2pressure.codec import (Codebook, CodecConfig, LatentSequence, ema_update, encode, quantize, reconstruct,
                                 reconstruction_mse, straight_through, train_codec)
from text2pressure.data import CLASS_LABELS, SynthConfig, make_real_proxy, normalize, synth_sequences
from text2pressure.generator import (GeneratorConfig, generate_batch, init_generator, text_to_pressure, tokenize,
                                     train_generator)
from text2pressure.har import ExperimentPlan, run_experiment
from text2pressure.metrics import (GaussianStats, PCAFeatures, binarized_r2, evaluate_pairs, fid, frechet_distance, r2)
from text2pressure.text import HashingEmbedder, embed

H, W = 16, 8
SEEDS3 = (0, 1, 2)


def toy_corpus(seed=1, per_class=16, prefix=""):
    cfg = SynthConfig(sequences_per_class=per_class, frames_per_sequence=120, height=H, width=W, seed=seed)
    return [normalize(s) for s in synth_sequences(cfg, prefix)]


@pytest.fixture(scope="module")
def toy():
    return toy_corpus()


@pytest.fixture(scope="module")
def held_out():
    return toy_corpus(seed=2, per_class=4, prefix="held-")


@pytest.fixture(scope="module")
def toy_codec(toy):
    cfg = CodecConfig(height=H, width=W, codebook_size=128, latent_dim=32, steps=2000, seed=0)
    t0 = time.perf_counter()
    ckpt = train_codec(toy, cfg)
    return ckpt, time.perf_counter() - t0


@pytest.fixture(scope="module")
def memorized(toy, toy_codec):
    codec, _ = toy_codec
    pairs = [(s.description, s) for s in (toy[0], toy[16], toy[32], toy[48])]
    cfg = GeneratorConfig(layers=2, heads=4, width=128, max_len=64, steps=400, lr=1e-3, seed=0)
    return pairs, train_generator(pairs, codec, cfg)


def test_criterion_01_codec_round_trip(toy_codec, held_out, record_property):
    """criterion 01: toy codec reaches held-out reconstruction MSE < 0.005 within 2,000 steps, < 10 min"""
    ckpt, seconds = toy_codec
    mse = reconstruction_mse(ckpt, held_out)
    record_property("detail", f"held-out MSE {mse:.5f}, {len(ckpt.history)} steps, {seconds:.0f}s")
    assert len(ckpt.history) <= 2000
    assert mse < 0.005
    assert seconds < 600


def test_criterion_02_quantizer_oracle(record_property):
    """criterion 02: quantize equals exhaustive argmin (lowest id on ties) on 10,000 latents"""
    rng = np.random.default_rng(2)
    checked = mismatches = 0
    for trial in range(10):
        K = int(rng.integers(1, 513))
        D = int(rng.integers(1, 33))
        cb_entries = rng.standard_normal((K, D))
        lat = rng.standard_normal((1000, D))
        if K > 2:
            # exact ties: duplicate entries and latents sitting on a code
            cb_entries[K - 1] = cb_entries[0]
            lat[:50] = cb_entries[rng.integers(0, K, 50)]
        cb = Codebook(cb_entries, np.zeros(K), np.zeros((K, D)), np.zeros(K, dtype=np.int64))
        idx, q, _ = quantize(LatentSequence(lat, 4, 4000), cb)
        # brute force, accumulating squared differences dimension by dimension
        dist = np.zeros((lat.shape[0], K))
        for d in range(D):
            diff = lat[:, d][:, None] - cb_entries[:, d][None, :]
            dist += diff * diff
        expect = np.argmin(dist, axis=1)  # first minimum == lowest id
        mismatches += int(np.sum(idx != expect))
        checked += lat.shape[0]
        np.testing.assert_array_equal(q.vectors, cb_entries[idx])
    record_property("detail", f"{checked} latents, {mismatches} mismatches")
    assert checked == 10_000 and mismatches == 0


def test_criterion_03_straight_through(record_property):
    """criterion 03: gradient at encoder output equals gradient at quantizer output exactly (100 probes)"""
    rng = np.random.default_rng(3)
    exact = 0
    for _ in range(100):
        n, d = int(rng.integers(1, 20)), int(rng.integers(1, 16))
        z = torch.tensor(rng.standard_normal((n, d)), requires_grad=True)
        q = torch.tensor(rng.standard_normal((n, d)))
        out = straight_through(z * 1.0, q)
        out.retain_grad()
        w = torch.tensor(rng.standard_normal((n, d)))
        probe = (torch.tanh(out) * w).sum() + (out ** 2).mean()
        probe.backward()
        exact += bool(torch.equal(z.grad, out.grad))
    record_property("detail", f"{exact}/100 exact")
    assert exact == 100


def test_criterion_04_ema_convergence(record_property):
    """criterion 04: alpha = 2/(N+1) with N=99; 2,000 EMA updates put each used code within 1e-2 of its cluster mean"""
    rng = np.random.default_rng(4)
    D = 6
    centres = rng.standard_normal((4, D)) * 3
    cb = Codebook.empty(4, D, horizon=99)
    assert cb.alpha == 0.02
    cb.entries = centres + rng.standard_normal((4, D)) * 0.5
    for _ in range(2000):
        labels = rng.integers(0, 4, size=256)
        batch = centres[labels] + rng.standard_normal((256, D)) * 0.1
        idx, _, _ = quantize(LatentSequence(batch, 4, 1024), cb)
        ema_update(cb, batch, idx, rng)
    err = np.linalg.norm(cb.entries - centres, axis=1)
    record_property("detail", f"max distance {err.max():.4f}")
    assert np.all(cb.usage > 0)
    assert err.max() < 1e-2


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    """Full hermetic CLI pipeline, run twice in separate directories."""
    root = tmp_path_factory.mktemp("e2e")
    doc = {
        "seed": 0,
        "synth": {"sequences_per_class": 6, "frames_per_sequence": 64, "height": 8, "width": 6},
        "codec": {"codebook_size": 128, "latent_dim": 16, "hidden": 32, "res_blocks": 1, "steps": 150,
                  "eval_every": 25, "batch_size": 8, "schedule": {"warmup_steps": 100}},
        "embedding": {"provider": "hash", "dim": 64},
        "generator": {"layers": 1, "heads": 2, "width": 32, "max_len": 20, "steps": 60, "batch_size": 8,
                      "lr": 1e-3},
        "generate": {"sampling": "top-k", "top_k": 5},
        "metrics": {"feature_space": "codec-latent"},
        "har": {"real": {"sequences_per_class": 4}, "evaluation": {"sequences_per_class": 3}, "repetitions": 2,
                "window_len": 16, "stride": 16, "model": {"hidden": 8, "epochs": 3}},
    }
    cfg = root / "config.json"
    cfg.write_text(json.dumps(doc, indent=2))
    codes = {}
    real_connect = socket.socket.connect

    def no_network(self, *a, **k):
        raise AssertionError("network access attempted")

    socket.socket.connect = no_network
    try:
        for rep in ("a", "b"):
            # both runs use the same run directory, since paths end up in reports
            for cmd in ("synth", "train-codec", "train-generator", "generate", "evaluate", "har"):
                codes[(rep, cmd)] = cli_run([cmd, "--config", str(cfg), "--run-dir", str(root / "run")])
            shutil.move(str(root / "run"), str(root / rep))
    finally:
        socket.socket.connect = real_connect
    return root, codes


def test_criterion_05_loss_decomposition(e2e, record_property):
    """criterion 05: logged total = w_r*L_r + w_q*L_q (1e-6 rel) at every step; w_q non-decreasing, w_r non-increasing"""
    import csv

    root, codes = e2e
    assert codes[("a", "train-codec")] == 0
    with open(root / "a" / "codec" / "loss.csv") as fh:
        rows = [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]
    worst = max(abs(r["total"] - (r["w_r"] * r["L_r"] + r["w_q"] * r["L_q"])) / max(abs(r["total"]), 1e-300)
                for r in rows)
    w_q = [r["w_q"] for r in rows]
    w_r = [r["w_r"] for r in rows]
    record_property("detail", f"{len(rows)} rows, worst relative error {worst:.2e}, w_q {w_q[0]}->{w_q[-1]}")
    assert worst <= 1e-6
    assert all(b >= a for a, b in zip(w_q, w_q[1:]))
    assert all(b <= a for a, b in zip(w_r, w_r[1:]))
    assert w_q[-1] == 1.0


def test_criterion_06_ablation_direction(toy, held_out, record_property):
    """criterion 06: FID(plain VQ) >= FID(residual + annealing + EMA) on 3 seeds in a fixed feature space"""
    space = PCAFeatures.fit(held_out, 64)
    rows = []
    for seed in SEEDS3:
        scores = {}
        for name, flags in (("plain", dict(residual=False, ema=False, anneal=False)), ("full", {})):
            cfg = CodecConfig(height=H, width=W, codebook_size=128, latent_dim=32, steps=600, seed=seed, **flags)
            ck = train_codec(toy, cfg)
            recon = [reconstruct(s, ck) for s in held_out]
            scores[name] = fid(held_out, recon, space)
        rows.append(scores)
    record_property("detail", ", ".join(f"seed {s}: plain {r['plain']:.3f} vs full {r['full']:.3f}"
                                        for s, r in zip(SEEDS3, rows)))
    assert all(r["plain"] >= r["full"] for r in rows)


def test_criterion_07_metric_oracles(record_property):
    """criterion 07: Frechet 1-D closed form (1e-8), fid(X,X) <= 1e-6, r2 / binarized_r2 vs brute force (1e-10)"""
    rng = np.random.default_rng(7)
    worst_fd = 0.0
    for _ in range(1000):
        m1, m2 = rng.uniform(-10, 10, 2)
        s1, s2 = rng.uniform(0.01, 10, 2)
        got = frechet_distance(GaussianStats(np.array([m1]), np.array([[s1 * s1]]), 2),
                               GaussianStats(np.array([m2]), np.array([[s2 * s2]]), 2))
        worst_fd = max(worst_fd, abs(got - ((m1 - m2) ** 2 + (s1 - s2) ** 2)))
    assert worst_fd <= 1e-8

    from text2pressure.data import PressureSequence

    xs = [PressureSequence(rng.random((12, 6, 4)).astype(np.float32), normalized=True) for _ in range(8)]
    self_fid = fid(xs, xs, PCAFeatures.fit(xs, 16))
    assert self_fid <= 1e-6

    def brute(p, t):
        p, t = p.ravel().tolist(), t.ravel().tolist()
        mean = sum(t) / len(t)
        res = sum((a - b) ** 2 for a, b in zip(p, t))
        tot = sum((b - mean) ** 2 for b in t)
        if tot == 0:
            return 1.0 if res == 0 else -math.inf
        return 1 - res / tot

    worst_r2 = 0.0
    for _ in range(100):
        shape = tuple(int(v) for v in rng.integers(1, 6, size=3))
        p, t = rng.random(shape), rng.random(shape)
        tau = float(rng.uniform(0.05, 0.95))
        for got, want in ((r2(p, t), brute(p, t)),
                          (binarized_r2(p, t, tau), brute((p > tau).astype(float), (t > tau).astype(float)))):
            if math.isinf(want):
                assert got == want
            else:
                worst_r2 = max(worst_r2, abs(got - want))
    record_property("detail", f"frechet err {worst_fd:.1e}, fid(X,X) {self_fid:.1e}, r2 err {worst_r2:.1e}")
    assert worst_r2 <= 1e-10


def test_criterion_08_generator_memorization(toy_codec, memorized, record_property):
    """criterion 08: greedy generation reproduces all 4 training token sequences; text->pressure is 120 x H x W"""
    codec, _ = toy_codec
    pairs, gen = memorized
    prov = HashingEmbedder(gen.config.text_dim)
    conds = np.stack([embed(t, prov).vector for t, _ in pairs])
    outs = generate_batch(conds, gen, replace(gen.config, sampling="greedy"))
    hits = sum(o.tokens == tokenize(s, codec).tokens for o, (_, s) in zip(outs, pairs))
    seqs = text_to_pressure([t for t, _ in pairs], gen, codec, prov, target_T=120)
    shapes = {s.frames.shape for s in seqs}
    record_property("detail", f"{hits}/4 exact, final loss {gen.history[-1]['loss']:.4f}, shapes {shapes}")
    assert hits == 4
    assert shapes == {(120, H, W)}
    assert all(0.0 <= s.frames.min() and s.frames.max() <= 1.0 for s in seqs)


def test_criterion_09_termination_and_closure(toy_codec, memorized, record_property):
    """criterion 09: 1,000 generations from untrained and trained checkpoints end in END, length <= max_len+1, ids in range"""
    codec, _ = toy_codec
    _, trained = memorized
    untrained = init_generator(replace(trained.config, seed=99), codec)
    K = codec.config.codebook_size
    prov = HashingEmbedder(trained.config.text_dim)
    conds = np.stack([embed(f"prompt number {i} with some words", prov).vector for i in range(500)])
    bad = total = 0
    for ck in (untrained, trained):
        for sampling in ("greedy", "top-k"):
            cfg = replace(ck.config, sampling=sampling, top_k=20)
            for t in generate_batch(conds[:250] if sampling == "greedy" else conds[250:], ck, cfg,
                                    seeds=range(250)):
                total += 1
                ok = (t.tokens[-1] == K and len(t) <= ck.config.max_len + 1
                      and all(0 <= x < K for x in t.tokens[:-1]))
                bad += not ok
    record_property("detail", f"{total} generations, {bad} violations")
    assert total == 1000 and bad == 0


def test_criterion_10_vq_vs_continuous_baseline(toy, toy_codec, record_property):
    """criterion 10: binarized_r2(VQ tokens) >= binarized_r2(continuous baseline) on 3 seeds, same feature space"""
    codec, _ = toy_codec
    pairs = [(s.description, s) for s in toy]
    texts = [t for t, _ in pairs]
    space = PCAFeatures.fit(toy, 32)
    rows = []
    for seed in SEEDS3:
        res = {}
        for mode in ("tokens", "continuous"):
            cfg = GeneratorConfig(layers=2, heads=4, width=128, steps=400, lr=1e-3, seed=seed, mode=mode)
            g = train_generator(pairs, codec, cfg)
            out = text_to_pressure(texts, g, codec, target_T=120, seeds=range(len(texts)))
            res[mode] = evaluate_pairs(out, toy, space)
        rows.append(res)
    record_property("detail", ", ".join(
        f"seed {s}: VQ {r['tokens'].binarized_r2:.3f} vs baseline {r['continuous'].binarized_r2:.3f}"
        for s, r in zip(SEEDS3, rows)))
    assert all(r["tokens"].binarized_r2 >= r["continuous"].binarized_r2 for r in rows)


def test_criterion_11_har_ordering(toy, toy_codec, tmp_path, record_property):
    """criterion 11: over 5 seeds F1(real-proxy) > F1(synthetic) and F1(combined) >= F1(real-proxy) - 0.02, < 30 min"""
    t0 = time.perf_counter()
    codec, _ = toy_codec
    pairs = [(s.description, s) for s in toy]
    gen = train_generator(pairs, codec, GeneratorConfig(layers=2, heads=4, width=128, steps=600, lr=1e-3))
    # same per-class budget for every source: 12 texts per class, 12 real-proxy recordings per class
    prompts = [s for c in CLASS_LABELS for s in [x for x in toy if x.class_label == c][:12]]
    texts = [s.description for s in prompts]
    cfg = replace(gen.config, sampling="top-k", top_k=10)
    synthetic = text_to_pressure(texts, gen, codec, cfg=cfg, target_T=120, seeds=range(len(texts)))
    for i, (s, src) in enumerate(zip(synthetic, prompts)):
        s.class_label = src.class_label
        s.activity_id = f"syn-{i:04d}"
    proxy = SynthConfig(sequences_per_class=12, frames_per_sequence=120, height=H, width=W)
    real = [normalize(s) for s in make_real_proxy(replace(proxy, seed=2), tmp_path / "real").load_all()]
    evaluation = [normalize(s) for s in
                  make_real_proxy(replace(proxy, seed=3), tmp_path / "eval", prefix="eval-").load_all()]
    plan = ExperimentPlan({"real": real, "synthetic": synthetic}, evaluation, repetitions=5)
    agg = run_experiment(plan, tmp_path / "har").aggregates
    seconds = time.perf_counter() - t0
    syn, rl, comb = (agg[k]["mean"] for k in ("synthetic-only", "real-only", "combined"))
    record_property("detail", f"synthetic {syn:.3f}, real {rl:.3f}, combined {comb:.3f}, {seconds:.0f}s")
    assert rl > syn
    assert comb >= rl - 0.02
    assert seconds < 1800


def test_criterion_12_hermetic_end_to_end(e2e, record_property):
    """criterion 12: synth -> train-codec -> train-generator -> generate -> evaluate -> har, offline, exit 0, bit-identical rerun"""
    root, codes = e2e
    assert all(c == 0 for c in codes.values()), codes
    compared = 0
    for f in sorted((root / "a").rglob("*")):
        if f.is_file() and f.name != "run-manifest.json":
            other = root / "b" / f.relative_to(root / "a")
            assert other.read_bytes() == f.read_bytes(), f
            compared += 1
    for stage in ("synth", "codec", "generator", "generate", "evaluate", "har"):
        a = json.loads((root / "a" / stage / "run-manifest.json").read_text())
        b = json.loads((root / "b" / stage / "run-manifest.json").read_text())
        assert a["config_snapshot"] == b["config_snapshot"]
        assert a["tool_version"] == b["tool_version"]
    record_property("detail", f"{len(codes)} commands exit 0, {compared} artifacts identical")
    assert compared > 0
