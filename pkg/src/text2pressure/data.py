"""Pressure sequences: procedural synthesis, PSEQ1 file format, manifests, splits.

The procedural generator stands in for the motion-capture -> body-model ->
pressure-simulation chain. Each activity class is a small set of elliptical
Gaussian contact blobs whose centres and load shares follow class-specific
periodic trajectories, scaled so the summed load stays roughly constant.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

CLASS_LABELS = ("basic", "dance", "yoga", "workout")
SENSOR_MAX_MMHG = 5000.0
CANONICAL_GRID = (80, 28)
FRAME_RATE_HZ = 20.0

PSEQ_MAGIC = b"PSEQ1"
_HEADER = struct.Struct("<5sIHH")
MANIFEST_NAME = "manifest.json"

# frame-level train/test/val counts reported for the 86,400-frame corpus
PAPER_SPLIT_FRAMES = (66_200, 5_120, 15_080)
DEFAULT_SPLIT = tuple(n / sum(PAPER_SPLIT_FRAMES) for n in PAPER_SPLIT_FRAMES)
SPLIT_NAMES = ("train", "test", "val")


class PressureFormatError(ValueError):
    """Raised when a PSEQ1 file cannot be decoded."""

    code = "format"


class BadMagicError(PressureFormatError):
    code = "bad_magic"


class TruncatedPayloadError(PressureFormatError):
    code = "truncated"


class DimensionMismatchError(PressureFormatError):
    code = "dimension_mismatch"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# ---------------------------------------------------------------------------
# domain types


@dataclass
class PressureSequence:
    frames: np.ndarray  # (T, H, W) float32
    activity_id: str = ""
    class_label: str | None = None
    description: str = ""
    subject_id: str | None = None
    normalized: bool = False

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {frames.shape}")
        if frames.shape[0] < 1:
            raise ValueError("a sequence needs at least one frame")
        if self.class_label is not None and self.class_label not in CLASS_LABELS:
            raise ValueError(f"unknown class label {self.class_label!r}")
        self.frames = frames

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def check_values(self) -> None:
        """Raise if any cell is non-finite, negative or above the unit ceiling."""
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("non-finite pressure value")
        if self.frames.min() < 0:
            raise ValueError("negative pressure value")
        ceiling = 1.0 if self.normalized else SENSOR_MAX_MMHG
        if self.frames.max() > ceiling:
            raise ValueError(f"pressure above ceiling {ceiling}")

    def with_frames(self, frames: np.ndarray, **changes) -> "PressureSequence":
        return replace(self, frames=frames, **changes)


@dataclass
class ManifestEntry:
    path: str
    description: str
    class_label: str | None
    subject_id: str | None
    frames: int

    @property
    def sequence_id(self) -> str:
        return Path(self.path).stem


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int = 0
    splits: dict[str, str] | None = None
    root: Path = field(default=Path("."), compare=False)

    @property
    def total_frames(self) -> int:
        return sum(e.frames for e in self.entries)

    @property
    def total_sequences(self) -> int:
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def subset(self, split: str) -> "DatasetManifest":
        if self.splits is None:
            raise ValueError("manifest has no split assignment")
        keep = [e for e in self.entries if self.splits.get(e.path) == split]
        return DatasetManifest(keep, self.seed, None, self.root)

    def load(self, entry: ManifestEntry) -> PressureSequence:
        seq = load_sequence(self.resolve(entry), with_metadata=False)
        seq.activity_id = entry.sequence_id
        seq.class_label = entry.class_label
        seq.description = entry.description
        seq.subject_id = entry.subject_id
        return seq

    def load_all(self) -> list[PressureSequence]:
        return [self.load(e) for e in self.entries]

    def to_json(self) -> dict:
        doc = {"entries": [asdict(e) for e in self.entries], "seed": self.seed}
        if self.splits is not None:
            doc["splits"] = dict(self.splits)
        return doc

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        _atomic_write_text(path, json.dumps(self.to_json(), indent=2) + "\n")
        return path

    @classmethod
    def from_json(cls, doc: dict, root: Path) -> "DatasetManifest":
        entries = [
            ManifestEntry(
                path=e["path"],
                description=e.get("description", ""),
                class_label=e.get("class_label"),
                subject_id=e.get("subject_id"),
                frames=int(e["frames"]),
            )
            for e in doc["entries"]
        ]
        return cls(entries, int(doc.get("seed", 0)), doc.get("splits"), root)

    @classmethod
    def load_file(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        with open(path) as fh:
            doc = json.load(fh)
        return cls.from_json(doc, path.parent)


@dataclass
class ClassTemplate:
    """Blob geometry for one activity class, in fractions of the grid."""

    radius_rows: float
    radius_cols: float
    peak: float  # nominal per-contact pressure in mmHg
    amplitude: float  # trajectory excursion, fraction of the grid
    frequency: float  # cycles per second


DEFAULT_TEMPLATES = {
    "basic": ClassTemplate(radius_rows=0.055, radius_cols=0.08, peak=1400.0, amplitude=0.28, frequency=0.45),
    "dance": ClassTemplate(radius_rows=0.05, radius_cols=0.08, peak=1300.0, amplitude=0.16, frequency=0.8),
    "yoga": ClassTemplate(radius_rows=0.07, radius_cols=0.1, peak=1100.0, amplitude=0.02, frequency=0.12),
    "workout": ClassTemplate(radius_rows=0.045, radius_cols=0.075, peak=1200.0, amplitude=0.05, frequency=0.5),
}


@dataclass
class SynthConfig:
    sequences_per_class: int = 60
    frames_per_sequence: int = 120
    height: int = CANONICAL_GRID[0]
    width: int = CANONICAL_GRID[1]
    seed: int = 0
    classes: tuple[str, ...] = CLASS_LABELS
    templates: dict[str, ClassTemplate] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))

    def validate(self) -> None:
        for name in ("sequences_per_class", "frames_per_sequence", "height", "width"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if not self.classes:
            raise ConfigError("classes", "at least one class required")
        for c in self.classes:
            if c not in CLASS_LABELS:
                raise ConfigError("classes", f"unknown class {c!r}")
            if c not in self.templates:
                raise ConfigError("templates", f"missing template for {c!r}")
            t = self.templates[c]
            if not (0 < t.radius_rows < 0.5 and 0 < t.radius_cols < 0.5):
                raise ConfigError(f"templates.{c}", "contact radii must fit inside the grid")
            if not (0 < t.peak <= SENSOR_MAX_MMHG):
                raise ConfigError(f"templates.{c}.peak", "peak pressure must be in (0, 5000]")
            if not (0 <= t.amplitude < 0.5):
                raise ConfigError(f"templates.{c}.amplitude", "must be in [0, 0.5)")
            if t.frequency <= 0:
                raise ConfigError(f"templates.{c}.frequency", "must be > 0")

    @classmethod
    def from_dict(cls, doc: dict) -> "SynthConfig":
        doc = dict(doc)
        known = {"sequences_per_class", "frames_per_sequence", "height", "width", "seed", "classes", "templates"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown synth option")
        templates = dict(DEFAULT_TEMPLATES)
        for name, t in (doc.pop("templates", None) or {}).items():
            try:
                templates[name] = replace(templates.get(name, DEFAULT_TEMPLATES["basic"]), **t)
            except TypeError as exc:
                raise ConfigError(f"templates.{name}", str(exc)) from None
        if "classes" in doc:
            doc["classes"] = tuple(doc["classes"])
        try:
            cfg = cls(templates=templates, **doc)
        except TypeError as exc:
            raise ConfigError("synth", str(exc)) from None
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# procedural rendering

_SPEED_WORDS = ((0.85, "slowly"), (1.15, "at a steady pace"), (math.inf, "briskly"))

_DESCRIPTIONS = {
    "basic": (
        "a person walks back and forth along the mat {speed}",
        "someone paces forward and backward {speed}",
        "a person takes small steps up and down the mat {speed}",
    ),
    "dance": (
        "a person dances in a small circle {speed}",
        "someone steps around in a turning dance {speed}",
        "a person sways and twirls on the spot {speed}",
    ),
    "yoga": (
        "a person holds a wide warrior stance {speed} shifting weight",
        "someone balances in a lunge pose {speed} with one hand down",
        "a person stretches in a deep yoga stance {speed}",
    ),
    "workout": (
        "a person does push-ups {speed}",
        "someone performs a plank with push-ups {speed}",
        "a person lowers the chest to the floor and pushes back up {speed}",
    ),
}


def _speed_word(rel_freq: float) -> str:
    for bound, word in _SPEED_WORDS:
        if rel_freq < bound:
            return word
    return _SPEED_WORDS[-1][1]


def _blob(rows: np.ndarray, cols: np.ndarray, cy, cx, ry, rx, amp) -> np.ndarray:
    """Sum of axis-aligned Gaussians. cy, cx, amp: (T, n); returns (T, H, W)."""
    dy = (rows[None, None, :, None] - cy[:, :, None, None]) / ry
    dx = (cols[None, None, None, :] - cx[:, :, None, None]) / rx
    g = np.exp(-0.5 * (dy * dy + dx * dx))
    return np.einsum("tn,tnhw->thw", amp, g)


def _trajectory(label: str, tmpl: ClassTemplate, t: np.ndarray, rng: np.random.Generator, H: int, W: int):
    """Blob centres (rows, cols) and load shares for one sequence, each (T, n)."""
    freq = tmpl.frequency * rng.uniform(0.7, 1.3)
    phase = rng.uniform(0, 2 * np.pi)
    amp = tmpl.amplitude * rng.uniform(0.8, 1.2)
    oy, ox = rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)
    w = 2 * np.pi * freq * t + phase

    if label == "basic":
        # walk along the long axis; feet alternate stance
        y = 0.5 + oy + amp * np.sin(w)
        step = np.sin(4 * w)
        cy = np.stack([y + 0.04 * step, y - 0.04 * step], axis=1)
        cx = np.stack([np.full_like(t, 0.38 + ox), np.full_like(t, 0.62 + ox)], axis=1)
        left = 0.5 + 0.45 * step
        load = np.stack([left, 1.0 - left], axis=1)
    elif label == "dance":
        # feet orbit a fixed centre
        cy0, cx0 = 0.5 + oy, 0.5 + ox
        cy = np.stack([cy0 + amp * np.sin(w), cy0 - amp * np.sin(w)], axis=1)
        cx = np.stack([cx0 + 1.6 * amp * np.cos(w), cx0 - 1.6 * amp * np.cos(w)], axis=1)
        left = 0.5 + 0.4 * np.sin(3 * w)
        load = np.stack([left, 1.0 - left], axis=1)
    elif label == "yoga":
        # static wide stance plus one hand, slow weight shift
        sway = amp * np.sin(w)
        cy = np.stack([np.full_like(t, 0.25 + oy), np.full_like(t, 0.75 + oy), np.full_like(t, 0.5 + oy)], axis=1)
        cx = np.stack([np.full_like(t, 0.5 + ox) + sway, np.full_like(t, 0.5 + ox) - sway, np.full_like(t, 0.2 + ox)], axis=1)
        shift = 0.12 * np.sin(w)
        load = np.stack([0.42 + shift, 0.42 - shift, np.full_like(t, 0.16)], axis=1)
    elif label == "workout":
        # plank: hands near the top, feet near the bottom, load rocks between them
        rock = 0.25 * np.sin(w)
        cy = np.stack([np.full_like(t, 0.2 + oy)] * 2 + [np.full_like(t, 0.85 + oy)] * 2, axis=1)
        cy[:, :2] += amp * np.sin(w)[:, None]
        cx = np.stack([np.full_like(t, v + ox) for v in (0.25, 0.75, 0.44, 0.56)], axis=1)
        hands = 0.3 + rock
        load = np.stack([hands, hands, 0.5 - hands * 0.5, 0.5 - hands * 0.5], axis=1)
        load = load / load.sum(axis=1, keepdims=True)
    else:  # pragma: no cover - guarded by SynthConfig.validate
        raise ValueError(label)

    return cy * (H - 1), cx * (W - 1), load, freq / tmpl.frequency


def render_sequence(label: str, tmpl: ClassTemplate, n_frames: int, H: int, W: int,
                    rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Render one raw (mmHg) sequence; returns frames and the relative tempo."""
    t = np.arange(n_frames, dtype=np.float64) / FRAME_RATE_HZ
    cy, cx, load, tempo = _trajectory(label, tmpl, t, rng, H, W)
    ry = max(tmpl.radius_rows * H, 0.6) * rng.uniform(0.9, 1.1)
    rx = max(tmpl.radius_cols * W, 0.6) * rng.uniform(0.9, 1.1)
    body = tmpl.peak * rng.uniform(0.85, 1.15) * load.shape[1]
    rows = np.arange(H, dtype=np.float64)
    cols = np.arange(W, dtype=np.float64)
    frames = _blob(rows, cols, cy, cx, ry, rx, body * load)
    # the mat reads zero outside contact
    frames[frames < 0.02 * tmpl.peak] = 0.0
    np.clip(frames, 0.0, SENSOR_MAX_MMHG, out=frames)
    return frames.astype(np.float32), tempo


def synth_sequences(cfg: SynthConfig, prefix: str = "") -> list[PressureSequence]:
    """Generate the procedural dataset in memory (raw mmHg)."""
    cfg.validate()
    out = []
    for ci, label in enumerate(cfg.classes):
        tmpl = cfg.templates[label]
        descs = _DESCRIPTIONS[label]
        for i in range(cfg.sequences_per_class):
            rng = np.random.default_rng([cfg.seed, CLASS_LABELS.index(label), i])
            frames, tempo = render_sequence(label, tmpl, cfg.frames_per_sequence, cfg.height, cfg.width, rng)
            desc = descs[i % len(descs)].format(speed=_speed_word(tempo))
            out.append(PressureSequence(
                frames=frames,
                activity_id=f"{prefix}{label}-{i:04d}",
                class_label=label,
                description=desc,
                subject_id=f"{prefix}subject-{(i // len(descs)) % 10:02d}",
            ))
    return out


def synth_dataset(cfg: SynthConfig, out_dir: str | os.PathLike, prefix: str = "") -> DatasetManifest:
    """Write one PSEQ1 file per sequence plus ``manifest.json``; pure in ``cfg``."""
    cfg.validate()
    out_dir = Path(out_dir)
    _ensure_writable(out_dir)
    return write_dataset(synth_sequences(cfg, prefix), out_dir, cfg.seed)


def make_real_proxy(cfg: SynthConfig, out_dir: str | os.PathLike, noise: float = 0.10,
                    floor_mmhg: float = 40.0, prefix: str = "real-") -> DatasetManifest:
    """Differently seeded oracle slice with multiplicative noise and sensor-floor clipping.

    Stands in for recordings from a physical mat: readings are perturbed by
    up to ``noise`` per cell and anything below ``floor_mmhg`` reads zero.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    _ensure_writable(out_dir)
    rng = np.random.default_rng([cfg.seed, 0x5EA1])
    seqs = []
    for seq in synth_sequences(cfg, prefix):
        f = seq.frames.astype(np.float64) * rng.uniform(1 - noise, 1 + noise, size=seq.frames.shape)
        f[f < floor_mmhg] = 0.0
        np.clip(f, 0.0, SENSOR_MAX_MMHG, out=f)
        seqs.append(seq.with_frames(f.astype(np.float32)))
    return write_dataset(seqs, out_dir, cfg.seed)


def write_dataset(seqs: Iterable[PressureSequence], out_dir: str | os.PathLike, seed: int = 0) -> DatasetManifest:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in seqs:
        name = f"{seq.activity_id}.pseq"
        save_sequence(seq, out_dir / name)
        entries.append(ManifestEntry(name, seq.description, seq.class_label, seq.subject_id, seq.T))
    manifest = DatasetManifest(entries, seed, None, out_dir)
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


def _ensure_writable(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PSEQ1 format


def encode_sequence(seq: PressureSequence) -> bytes:
    frames = np.asarray(seq.frames)
    if not np.all(np.isfinite(frames)):
        raise ValueError("refusing to save non-finite pressure values")
    T, H, W = frames.shape
    header = _HEADER.pack(PSEQ_MAGIC, T, H, W)
    return header + np.ascontiguousarray(frames, dtype="<f4").tobytes()


def save_sequence(seq: PressureSequence, path: str | os.PathLike) -> None:
    _atomic_write_bytes(Path(path), encode_sequence(seq))


def decode_sequence(buf: bytes) -> np.ndarray:
    if len(buf) < len(PSEQ_MAGIC) or buf[: len(PSEQ_MAGIC)] != PSEQ_MAGIC:
        raise BadMagicError(f"bad magic {buf[:5]!r}, expected {PSEQ_MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError("header truncated")
    _, T, H, W = _HEADER.unpack_from(buf)
    if T < 1 or H < 1 or W < 1:
        raise DimensionMismatchError(f"invalid dimensions T={T} H={H} W={W}")
    expected = T * H * W * 4
    payload = len(buf) - _HEADER.size
    if payload < expected:
        raise TruncatedPayloadError(f"payload has {payload} bytes, header declares {expected}")
    if payload > expected:
        raise DimensionMismatchError(f"payload has {payload - expected} trailing bytes beyond T*H*W")
    return np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(T, H, W).astype(np.float32)


def load_sequence(path: str | os.PathLike, with_metadata: bool = True) -> PressureSequence:
    """Read a PSEQ1 file; metadata comes from a sibling ``manifest.json`` if present."""
    path = Path(path)
    frames = decode_sequence(path.read_bytes())
    seq = PressureSequence(frames=frames, activity_id=path.stem)
    if with_metadata:
        manifest_path = path.parent / MANIFEST_NAME
        if manifest_path.exists():
            try:
                manifest = DatasetManifest.load_file(manifest_path)
            except (OSError, ValueError, KeyError) as exc:
                log.warning("ignoring unreadable manifest %s: %s", manifest_path, exc)
            else:
                for e in manifest.entries:
                    if Path(e.path).name == path.name:
                        seq.class_label = e.class_label
                        seq.description = e.description
                        seq.subject_id = e.subject_id
                        break
    return seq


# ---------------------------------------------------------------------------
# preprocessing


def normalize(seq: PressureSequence) -> PressureSequence:
    if seq.normalized:
        raise ValueError("sequence is already normalized")
    return seq.with_frames((seq.frames / np.float32(SENSOR_MAX_MMHG)).astype(np.float32), normalized=True)


def allocate_counts(n: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; ties go to the earlier slot."""
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    short = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def split_dataset(manifest: DatasetManifest, fractions: Sequence[float] = DEFAULT_SPLIT,
                  seed: int = 0) -> DatasetManifest:
    """Assign whole sequences to train/test/val after a seeded shuffle."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != len(SPLIT_NAMES):
        raise ValueError("expected (train, test, val) fractions")
    if any(f <= 0 for f in fractions):
        raise ValueError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions sum to {sum(fractions)}, not 1")
    n = len(manifest.entries)
    if n < len(fractions):
        raise ValueError(f"{n} sequences cannot fill {len(fractions)} partitions")

    order = np.random.default_rng(seed).permutation(n)
    counts = allocate_counts(n, fractions)
    splits: dict[str, str] = {}
    start = 0
    for name, c in zip(SPLIT_NAMES, counts):
        for i in order[start:start + c]:
            splits[manifest.entries[i].path] = name
        start += c
    return DatasetManifest(list(manifest.entries), manifest.seed, splits, manifest.root)
