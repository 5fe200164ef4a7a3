"""``text2pressure`` command line: synth, train-codec, train-generator, generate, evaluate, har.

Every command reads one JSON config with per-module sections and writes
its outputs under ``<run_dir>/<stage>/`` together with ``run-manifest.json``
and a byte-for-byte copy of the config. Failures print a single JSON line
on stderr and exit with a stable code:

    2  a file named on the command line or in the config is missing
    3  the config (or the HAR plan) is invalid
    4  an upstream artifact (dataset, checkpoint, generated set) is missing
    5  artifacts disagree (codec hash, vocabulary, embedding provider)
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, file_sha256
from .data import (DEFAULT_SPLIT, MANIFEST_NAME, SENSOR_MAX_MMHG, ConfigError, DatasetManifest,
                   ManifestEntry, PressureSequence, SynthConfig, encode_sequence, make_real_proxy,
                   normalize, split_dataset, synth_dataset)
from .metrics import DEFAULT_TAU, FEATURE_SPACES, PCA_COMPONENTS, evaluate_pairs, feature_space
from .text import CachedEmbedder, RemoteEmbedder, make_provider

log = logging.getLogger("text2pressure")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_FILE = 2
EXIT_INVALID_CONFIG = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_MISMATCH = 5

SECTIONS = ("seed", "run_dir", "synth", "codec", "embedding", "generator", "generate", "metrics", "har")

STAGE_DIRS = {
    "synth": "synth",
    "train-codec": "codec",
    "train-generator": "generator",
    "generate": "generate",
    "evaluate": "evaluate",
    "har": "har",
}


class CLIError(Exception):
    def __init__(self, code: int, kind: str, message: str, **extra):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.extra = extra


def missing_artifact(path: Path, what: str) -> CLIError:
    return CLIError(EXIT_MISSING_ARTIFACT, "missing_artifact", f"{what} not found: {path}; run the upstream command first",
                    path=str(path))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    raw: bytes
    path: Path
    seed: int
    run_dir: Path
    synth: SynthConfig
    split: tuple[float, ...]
    codec: dict
    embedding: dict
    generator: dict
    generate: dict
    metrics: dict
    har: dict
    doc: dict = field(default_factory=dict)

    def stage_dir(self, command: str) -> Path:
        return self.run_dir / STAGE_DIRS[command]

    @property
    def dataset_manifest(self) -> Path:
        return self.run_dir / "synth" / "data" / MANIFEST_NAME

    @property
    def codec_path(self) -> Path:
        return self.run_dir / "codec" / "codec.ckpt"

    @property
    def generator_path(self) -> Path:
        return self.run_dir / "generator" / "generator.ckpt"

    @property
    def generated_index(self) -> Path:
        return self.run_dir / "generate" / "index.json"

    def codec_config(self):
        from .codec import CodecConfig

        return CodecConfig.from_dict(self.codec)

    def generator_config(self):
        from .generator import GeneratorConfig

        return GeneratorConfig.from_dict(self.generator)


def _section(doc: dict, name: str) -> dict:
    sec = doc.get(name, {})
    if sec is None:
        return {}
    if not isinstance(sec, dict):
        raise ConfigError(name, "section must be a JSON object")
    return dict(sec)


def load_run_config(path: str | os.PathLike, run_dir: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse and validate every section before any work starts."""
    path = Path(path)
    if not path.is_file():
        raise CLIError(EXIT_MISSING_FILE, "missing_file", f"config file not found: {path}", path=str(path))
    raw = path.read_bytes()
    try:
        doc = json.loads(raw)
    except ValueError as exc:
        raise ConfigError("config", f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be a JSON object")
    for key in doc:
        if key not in SECTIONS:
            raise ConfigError(key, "unknown config section")

    base_seed = int(doc.get("seed", 0)) if seed is None else int(seed)

    def seeded(sec: dict) -> dict:
        # --seed wins everywhere; otherwise a section's own seed wins over the global one
        if seed is not None or "seed" not in sec:
            sec["seed"] = base_seed
        return sec

    synth_doc = seeded(_section(doc, "synth"))
    split = tuple(synth_doc.pop("split", DEFAULT_SPLIT))
    if len(split) != 3 or any(f <= 0 for f in split) or abs(sum(split) - 1) > 1e-9:
        raise ConfigError("synth.split", "expected three positive fractions summing to 1")
    synth = SynthConfig.from_dict(synth_doc)

    codec_doc = seeded(_section(doc, "codec"))
    codec_doc.setdefault("height", synth.height)
    codec_doc.setdefault("width", synth.width)
    if (codec_doc["height"], codec_doc["width"]) != (synth.height, synth.width):
        raise ConfigError("codec.height", f"codec grid {(codec_doc['height'], codec_doc['width'])} "
                                          f"differs from synth grid {(synth.height, synth.width)}")

    embedding = _section(doc, "embedding")
    embedding.setdefault("provider", "hash")
    if embedding["provider"] not in ("hash", "remote"):
        raise ConfigError("embedding.provider", "must be 'hash' or 'remote'")
    unknown = set(embedding) - {"provider", "dim", "seed", "url", "timeout", "cache_dir"}
    if unknown:
        raise ConfigError(f"embedding.{sorted(unknown)[0]}", "unknown embedding option")
    embedding.setdefault("dim", 512)

    gen_doc = seeded(_section(doc, "generator"))
    gen_doc.setdefault("text_dim", embedding["dim"])
    if gen_doc["text_dim"] != embedding["dim"]:
        raise ConfigError("generator.text_dim", "must equal embedding.dim")

    generate = _section(doc, "generate")
    unknown = set(generate) - {"texts", "texts_file", "target_T", "sampling", "top_k", "temperature"}
    if unknown:
        raise ConfigError(f"generate.{sorted(unknown)[0]}", "unknown generate option")
    if "texts" in generate and (not isinstance(generate["texts"], list)
                                or not all(isinstance(t, str) and t.strip() for t in generate["texts"])):
        raise ConfigError("generate.texts", "must be a list of non-empty strings")
    target_T = generate.get("target_T", synth.frames_per_sequence)
    if target_T is not None and int(target_T) < 1:
        raise ConfigError("generate.target_T", "must be >= 1")
    generate["target_T"] = target_T

    metrics = _section(doc, "metrics")
    unknown = set(metrics) - {"feature_space", "pca_components", "tau", "reference", "generated"}
    if unknown:
        raise ConfigError(f"metrics.{sorted(unknown)[0]}", "unknown metrics option")
    metrics.setdefault("feature_space", "codec-latent")
    metrics.setdefault("pca_components", PCA_COMPONENTS)
    metrics.setdefault("tau", DEFAULT_TAU)
    metrics.setdefault("reference", "train")
    if metrics["feature_space"] not in FEATURE_SPACES:
        raise ConfigError("metrics.feature_space", f"must be one of {FEATURE_SPACES}")
    if not 0 < float(metrics["tau"]) < 1:
        raise ConfigError("metrics.tau", "must be in (0, 1)")
    if int(metrics["pca_components"]) < 1:
        raise ConfigError("metrics.pca_components", "must be >= 1")
    if metrics["reference"] not in ("train", "test", "val", "all"):
        raise ConfigError("metrics.reference", "must be train, test, val or all")

    har = _section(doc, "har")
    unknown = set(har) - {"real", "evaluation", "noise", "floor_mmhg", "recipes", "repetitions", "seeds",
                          "window_len", "stride", "model", "augment_scale", "sources"}
    if unknown:
        raise ConfigError(f"har.{sorted(unknown)[0]}", "unknown har option")
    if seed is not None or "seeds" not in har:
        har["seeds"] = [base_seed + r for r in range(int(har.get("repetitions", 5)))]
    if int(har.get("repetitions", 5)) < 1:
        raise ConfigError("har.repetitions", "must be >= 1")
    if len(har["seeds"]) != int(har.get("repetitions", 5)):
        raise ConfigError("har.seeds", "one seed per repetition")
    if not 0 <= float(har.get("noise", 0.10)) < 1:
        raise ConfigError("har.noise", "must be in [0, 1)")
    for part in ("real", "evaluation"):
        sub = har.get(part, {})
        if part == "evaluation" and isinstance(sub, str):
            continue  # path to an existing manifest
        if not isinstance(sub, dict) or set(sub) - {"seed", "sequences_per_class"}:
            raise ConfigError(f"har.{part}", "expected {seed, sequences_per_class}")
    from .har import HARConfig

    HARConfig.from_dict(har.get("model", {}))

    if run_dir is not None:
        rd = Path(run_dir)
    else:
        rd = Path(doc.get("run_dir", "runs/default"))
        if not rd.is_absolute():
            rd = path.parent / rd

    cfg = RunConfig(raw, path, base_seed, rd, synth, split, codec_doc, embedding, gen_doc, generate, metrics, har, doc)
    codec_cfg = cfg.codec_config()
    cfg.generator_config().validate(codec_cfg.codebook_size + 1)
    return cfg


def make_embedder(cfg: RunConfig):
    """Config provider with secrets (URL, key) taken from the environment when set."""
    spec = dict(cfg.embedding)
    cache_dir = spec.pop("cache_dir", None)
    if spec["provider"] == "remote":
        url = os.environ.get("TEXT2PRESSURE_EMBED_URL") or spec.get("url")
        if not url:
            raise ConfigError("embedding.url", "remote provider needs a URL (config or TEXT2PRESSURE_EMBED_URL)")
        provider = RemoteEmbedder(url=url, dim=spec["dim"], timeout=spec.get("timeout", 10.0))
    else:
        provider = make_provider(spec)
    if cache_dir:
        root = Path(cache_dir)
        if not root.is_absolute():
            root = cfg.path.parent / root
        provider = CachedEmbedder(provider, root)
    return provider


# ---------------------------------------------------------------------------
# run bookkeeping


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config_path: str
    config_snapshot: str
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    tool_version: str = __version__

    def add_input(self, path: Path) -> None:
        self.inputs[str(path)] = file_sha256(path)

    def to_json(self) -> dict:
        return {"command": self.command, "config_path": self.config_path, "config_snapshot": self.config_snapshot,
                "inputs": self.inputs, "outputs": sorted(self.outputs), "timings": self.timings,
                "tool_version": self.tool_version}


class Stage:
    """Context for one command: collects outputs, writes the run manifest at the end."""

    def __init__(self, command: str, cfg: RunConfig):
        self.cfg = cfg
        self.dir = cfg.stage_dir(command)
        self.manifest = RunManifest(command, str(cfg.path), cfg.raw.decode("utf-8"))
        self.manifest.add_input(cfg.path)
        self._t0 = time.perf_counter()
        self.manifest.timings["started"] = _now()
        self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, data: bytes) -> Path:
        p = self.dir / name
        _atomic_write(p, data)
        self.output(p)
        return p

    def output(self, path: Path) -> None:
        self.manifest.outputs.append(str(path))

    def time(self, label: str, t0: float) -> None:
        self.manifest.timings[label] = round(time.perf_counter() - t0, 3)

    def finish(self) -> RunManifest:
        _atomic_write(self.dir / "config.json", self.cfg.raw)
        self.manifest.timings["seconds"] = round(time.perf_counter() - self._t0, 3)
        self.manifest.timings["finished"] = _now()
        _atomic_write(self.dir / "run-manifest.json", _json_bytes(self.manifest.to_json()))
        return self.manifest


def _history_csv(history: list[dict], columns: list[str]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in history:
        w.writerow([rec[c] if isinstance(rec[c], int) else repr(float(rec[c])) for c in columns])
    return buf.getvalue().encode("utf-8")


def _load_dataset(cfg: RunConfig, stage: Stage | None = None) -> DatasetManifest:
    p = cfg.dataset_manifest
    if not p.is_file():
        raise missing_artifact(p, "dataset manifest")
    if stage is not None:
        stage.manifest.add_input(p)
    return DatasetManifest.load_file(p)


def _split(manifest: DatasetManifest, name: str) -> list[PressureSequence]:
    sub = manifest if name == "all" else manifest.subset(name)
    return [normalize(s) for s in sub.load_all()]


def _load_codec(cfg: RunConfig, stage: Stage):
    from .codec import CodecCheckpoint

    if not cfg.codec_path.is_file():
        raise missing_artifact(cfg.codec_path, "codec checkpoint")
    stage.manifest.add_input(cfg.codec_path)
    return CodecCheckpoint.load(cfg.codec_path)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> RunManifest:
    stage = Stage("synth", cfg)
    t0 = time.perf_counter()
    out = stage.dir / "data"
    manifest = synth_dataset(cfg.synth, out)
    manifest = split_dataset(manifest, cfg.split, seed=cfg.seed)
    manifest.save(out / MANIFEST_NAME)
    for e in manifest.entries:
        stage.output(manifest.resolve(e))
    stage.output(out / MANIFEST_NAME)
    stage.time("synth", t0)
    counts = {s: sum(1 for v in manifest.splits.values() if v == s) for s in ("train", "test", "val")}
    log.info("wrote %d sequences (%d frames) to %s; split %s", manifest.total_sequences,
             manifest.total_frames, out, counts)
    return stage.finish()


CODEC_COLUMNS = ["step", "L_r", "L_q", "w_r", "w_q", "total"]


def cmd_train_codec(cfg: RunConfig) -> RunManifest:
    from .codec import train_codec

    stage = Stage("train-codec", cfg)
    manifest = _load_dataset(cfg, stage)
    train = _split(manifest, "train")
    val = _split(manifest, "val")
    t0 = time.perf_counter()
    ckpt = train_codec(train, cfg.codec_config(), val=val or None)
    stage.time("train", t0)
    digest = ckpt.save(cfg.codec_path)
    stage.output(cfg.codec_path)
    stage.write("loss.csv", _history_csv(ckpt.history, CODEC_COLUMNS))
    stage.manifest.inputs["codec_hash"] = digest
    log.info("codec %s trained for %d steps", digest[:12], len(ckpt.history))
    return stage.finish()


def cmd_train_generator(cfg: RunConfig) -> RunManifest:
    from .generator import train_generator

    stage = Stage("train-generator", cfg)
    manifest = _load_dataset(cfg, stage)
    codec = _load_codec(cfg, stage)
    pairs = [(s.description, s) for s in _split(manifest, "train")]
    t0 = time.perf_counter()
    gen = train_generator(pairs, codec, cfg.generator_config(), provider=make_embedder(cfg))
    stage.time("train", t0)
    gen.save(cfg.generator_path)
    stage.output(cfg.generator_path)
    stage.write("loss.csv", _history_csv(gen.history, ["step", "loss"]))
    log.info("generator trained for %d steps, final loss %.4f", len(gen.history), gen.history[-1]["loss"])
    return stage.finish()


def _read_texts(path: Path) -> list[str]:
    """A JSON list, a dataset manifest / generation index, or one text per line."""
    if not path.is_file():
        raise CLIError(EXIT_MISSING_FILE, "missing_file", f"texts file not found: {path}", path=str(path))
    body = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(body)
    except ValueError:
        return [line.strip() for line in body.splitlines() if line.strip()]
    if isinstance(doc, list):
        return [str(t) for t in doc]
    if isinstance(doc, dict) and "entries" in doc:
        return [e["description"] for e in doc["entries"]]
    raise ConfigError("generate.texts_file", "expected a JSON list or a manifest with entries")


def _unique(texts) -> list[str]:
    seen, out = set(), []
    for t in texts:
        if t.strip() and t not in seen:
            seen.add(t)
            out.append(t)
    return out


def _render_png(seq: PressureSequence, path: Path, title: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise CLIError(EXIT_FAILURE, "missing_dependency", "--plot needs matplotlib (pip install artifact[plot])") from exc
    frames = seq.frames
    picks = np.linspace(0, seq.T - 1, num=min(8, seq.T)).round().astype(int)
    fig, axes = plt.subplots(1, len(picks), figsize=(1.4 * len(picks), 3.2), squeeze=False)
    vmax = max(float(frames.max()), 1e-6)
    for ax, t in zip(axes[0], picks):
        ax.imshow(frames[t], cmap="magma", vmin=0.0, vmax=vmax, aspect="auto")
        ax.set_title(f"t={t}", fontsize=7)
        ax.axis("off")
    fig.suptitle(title, fontsize=8)
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def cmd_generate(cfg: RunConfig, texts: list[str] | None = None, texts_file: str | None = None,
                 plot: bool = False) -> RunManifest:
    from .generator import CheckpointMismatchError, GeneratorCheckpoint, text_to_pressure

    stage = Stage("generate", cfg)
    codec = _load_codec(cfg, stage)
    if not cfg.generator_path.is_file():
        raise missing_artifact(cfg.generator_path, "generator checkpoint")
    stage.manifest.add_input(cfg.generator_path)
    gen = GeneratorCheckpoint.load(cfg.generator_path, codec=codec)
    provider = make_embedder(cfg)
    if gen.provider_id and gen.provider_id != provider.provider_id:
        raise CheckpointMismatchError(f"generator was trained with embedding provider {gen.provider_id!r}, "
                                      f"config gives {provider.provider_id!r}")

    # labels for texts that come from the dataset, so generations can feed the HAR harness
    label_of = {}
    if cfg.dataset_manifest.is_file():
        for e in DatasetManifest.load_file(cfg.dataset_manifest).entries:
            label_of.setdefault(e.description, e.class_label)

    gcfg = cfg.generate
    if texts:
        chosen = list(texts)
    elif texts_file or gcfg.get("texts_file"):
        p = Path(texts_file) if texts_file else cfg.path.parent / gcfg["texts_file"]
        stage.manifest.add_input(p)
        chosen = _read_texts(p)
    elif gcfg.get("texts"):
        chosen = list(gcfg["texts"])
    else:
        manifest = _load_dataset(cfg, stage)
        chosen = [e.description for e in manifest.subset("train").entries]
    chosen = _unique(chosen)
    if not chosen:
        raise ConfigError("generate.texts", "no texts to generate from")

    overrides = {k: gcfg[k] for k in ("sampling", "top_k", "temperature") if k in gcfg}
    run_cfg = replace(gen.config, seed=cfg.seed, **overrides)
    run_cfg.validate(gen.vocab_size)
    seeds = [cfg.seed + i for i in range(len(chosen))]
    t0 = time.perf_counter()
    seqs = text_to_pressure(chosen, gen, codec, provider, run_cfg, gcfg["target_T"], seeds)
    stage.time("generate", t0)

    entries, mapping = [], {}
    for i, (text, seq) in enumerate(zip(chosen, seqs)):
        name = f"gen-{i:04d}.pseq"
        raw = seq.with_frames(seq.frames * np.float32(SENSOR_MAX_MMHG), normalized=False,
                              activity_id=f"gen-{i:04d}", class_label=label_of.get(text))
        stage.write(name, encode_sequence(raw))
        entries.append(ManifestEntry(name, text, raw.class_label, None, raw.T))
        mapping[text] = name
        if plot:
            png = stage.dir / f"gen-{i:04d}.png"
            _render_png(seq, png, text)
            stage.output(png)
    index = DatasetManifest(entries, cfg.seed).to_json()
    index["texts"] = mapping
    index["sampling"] = run_cfg.sampling
    stage.write("index.json", _json_bytes(index))
    log.info("generated %d sequences with %s decoding", len(chosen), run_cfg.sampling)
    return stage.finish()


def _pair_by_description(generated: list[PressureSequence], reference: list[PressureSequence]):
    """k-th reference with a description pairs with the k-th generation of it (cycling)."""
    by_text: dict[str, list[PressureSequence]] = {}
    for g in generated:
        by_text.setdefault(g.description, []).append(g)
    seen: dict[str, int] = {}
    gen, ref = [], []
    for r in reference:
        pool = by_text.get(r.description)
        if not pool:
            continue
        k = seen.get(r.description, 0)
        seen[r.description] = k + 1
        gen.append(pool[k % len(pool)])
        ref.append(r)
    return gen, ref


def cmd_evaluate(cfg: RunConfig) -> RunManifest:
    stage = Stage("evaluate", cfg)
    m = cfg.metrics
    manifest = _load_dataset(cfg, stage)
    reference = _split(manifest, m["reference"])
    gen_path = Path(m["generated"]) if m.get("generated") else cfg.generated_index
    if m.get("generated") and not gen_path.is_absolute():
        gen_path = cfg.path.parent / gen_path
    if not gen_path.is_file():
        raise missing_artifact(gen_path, "generated set")
    stage.manifest.add_input(gen_path)
    generated = [normalize(s) for s in DatasetManifest.load_file(gen_path).load_all()]
    gen, ref = _pair_by_description(generated, reference)
    if not gen:
        raise CLIError(EXIT_MISSING_ARTIFACT, "no_pairs",
                       f"no generated sequence shares a description with the {m['reference']} split",
                       path=str(gen_path))
    codec = _load_codec(cfg, stage) if m["feature_space"] == "codec-latent" else None
    space = feature_space(m["feature_space"], ref, codec, int(m["pca_components"]))
    t0 = time.perf_counter()
    report = evaluate_pairs(gen, ref, space, float(m["tau"]))
    stage.time("evaluate", t0)
    report.config.update({"reference_split": m["reference"], "generated": str(gen_path),
                          "pca_components": int(m["pca_components"]) if codec is None else None,
                          "config": cfg.doc})
    stage.write("report.json", _json_bytes(report.to_json()))
    print(json.dumps({k: report.to_json()[k] for k in ("fid", "r2", "binarized_r2")}, sort_keys=True))
    return stage.finish()


def cmd_har(cfg: RunConfig) -> RunManifest:
    from .har import STANDARD_RECIPES, ExperimentPlan, HARConfig, augment, run_experiment

    stage = Stage("har", cfg)
    h = cfg.har
    synth = cfg.synth
    real_spec = h.get("real", {})
    eval_spec = h.get("evaluation", {})
    noise = float(h.get("noise", 0.10))
    floor = float(h.get("floor_mmhg", 40.0))

    def proxy(spec: dict, default_seed: int, where: str, prefix: str) -> list[PressureSequence]:
        sc = replace(synth, seed=int(spec.get("seed", default_seed)),
                     sequences_per_class=int(spec.get("sequences_per_class", synth.sequences_per_class)))
        m = make_real_proxy(sc, stage.dir / where, noise=noise, floor_mmhg=floor, prefix=prefix)
        stage.output(stage.dir / where / MANIFEST_NAME)
        return [normalize(s) for s in m.load_all()]

    recipes = h.get("recipes") or dict(STANDARD_RECIPES)
    needed = {p for parts in recipes.values() for p in parts}
    sources: dict[str, list[PressureSequence]] = {}
    t0 = time.perf_counter()
    if "synthetic" in needed or "augmented" in needed:
        if not cfg.generated_index.is_file():
            raise missing_artifact(cfg.generated_index, "generated set (run generate first)")
        stage.manifest.add_input(cfg.generated_index)
        syn = [normalize(s) for s in DatasetManifest.load_file(cfg.generated_index).load_all()]
        unlabeled = [s.activity_id for s in syn if s.class_label is None]
        if unlabeled:
            raise ConfigError("har.recipes", f"generated sequence {unlabeled[0]} has no class label; "
                                             "generate from dataset descriptions")
        sources["synthetic"] = syn
        if "augmented" in needed:
            sources["augmented"] = augment(syn, seed=cfg.seed, scale=float(h.get("augment_scale", 0.2)))
    if "real" in needed:
        sources["real"] = proxy(real_spec, cfg.seed + 1000, "real", "real-")

    def external(path: str, what: str) -> list[PressureSequence]:
        p = Path(path) if Path(path).is_absolute() else cfg.path.parent / path
        if not p.is_file():
            raise missing_artifact(p, what)
        stage.manifest.add_input(p)
        return [normalize(s) for s in DatasetManifest.load_file(p).load_all()]

    if isinstance(eval_spec, str):
        evaluation = external(eval_spec, "HAR evaluation set")
    else:
        evaluation = proxy(eval_spec, cfg.seed + 2000, "eval", "eval-")
    for name, path in (h.get("sources") or {}).items():
        sources[name] = external(path, f"HAR source {name!r}")
    stage.time("data", t0)

    plan = ExperimentPlan(sources, evaluation, recipes=recipes, repetitions=int(h.get("repetitions", 5)),
                          seeds=list(h["seeds"]), window_len=int(h.get("window_len", 32)),
                          stride=int(h.get("stride", 16)), model=HARConfig.from_dict(h.get("model", {})))
    plan.validate()  # leakage and unknown sources fail here, before any training
    t0 = time.perf_counter()
    result = run_experiment(plan, stage.dir)
    stage.time("experiment", t0)
    stage.output(stage.dir / "aggregates.json")
    for r in sorted((stage.dir / "reports").glob("*.json")):
        stage.output(r)
    table = result.table()
    stage.write("table.txt", (table + "\n").encode("utf-8"))
    print(table)
    return stage.finish()


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="text2pressure", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("synth", "write the procedural dataset and its split"),
                        ("train-codec", "train the VQ codec on the train split"),
                        ("train-generator", "train the text-to-token transformer"),
                        ("generate", "generate pressure sequences from text"),
                        ("evaluate", "score generated sequences against the dataset"),
                        ("har", "run the activity-recognition training-set comparison")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--run-dir", help="override run_dir from the config")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "generate":
            p.add_argument("--text", action="append", help="text prompt (repeatable)")
            p.add_argument("--texts", help="JSON list, manifest, or one-text-per-line file")
            p.add_argument("--plot", action="store_true", help="also render PNG heatmap strips")
    return parser


def _fail(err: CLIError) -> int:
    doc = {"error": err.kind, "exit_code": err.code, "message": str(err), **err.extra}
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return err.code


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .generator import CheckpointMismatchError
    from .har import LeakageError

    try:
        import torch

        torch.set_num_threads(1)  # thread count changes float reduction order; reruns must match bit for bit
        cfg = load_run_config(args.config, args.run_dir, args.seed)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train-codec":
            cmd_train_codec(cfg)
        elif args.command == "train-generator":
            cmd_train_generator(cfg)
        elif args.command == "generate":
            cmd_generate(cfg, args.text, args.texts, args.plot)
        elif args.command == "evaluate":
            cmd_evaluate(cfg)
        elif args.command == "har":
            cmd_har(cfg)
    except CLIError as err:
        return _fail(err)
    except ConfigError as err:
        return _fail(CLIError(EXIT_INVALID_CONFIG, "invalid_config", str(err), field=err.field))
    except LeakageError as err:
        return _fail(CLIError(EXIT_INVALID_CONFIG, "leakage", str(err), field="har.recipes"))
    except CheckpointMismatchError as err:
        return _fail(CLIError(EXIT_MISMATCH, "artifact_mismatch", str(err)))
    except CheckpointError as err:
        return _fail(CLIError(EXIT_MISMATCH, "bad_checkpoint", str(err)))
    except Exception as err:  # noqa: BLE001 - last-resort JSON error for scripted pipelines
        log.debug("unhandled error", exc_info=True)
        return _fail(CLIError(EXIT_FAILURE, type(err).__name__, str(err)))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
