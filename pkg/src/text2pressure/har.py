"""Activity-recognition harness for comparing training sets of pressure data.

A small 1-D CNN classifies fixed-length windows. ``run_experiment`` trains
one model per (recipe, repetition), scores it with macro F1 on a held-out
evaluation set, and aggregates mean and standard deviation per recipe.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import CLASS_LABELS, SENSOR_MAX_MMHG, ConfigError, DatasetManifest, PressureSequence, normalize
from .metrics import MetricReport, macro_f1, per_class_f1

log = logging.getLogger(__name__)

STANDARD_RECIPES = {
    "synthetic-only": ["synthetic"],
    "real-only": ["real"],
    "combined": ["real", "synthetic"],
    "combined-augmented": ["real", "synthetic", "augmented"],
}


class LeakageError(ValueError):
    """Training and evaluation sets share sequences."""


@dataclass
class HARExample:
    window: np.ndarray  # (window_len, H, W)
    label: str
    sequence_id: str = ""


def windowize(seqs, window_len: int = 32, stride: int = 16) -> list[HARExample]:
    """Sliding windows over each sequence; sequences shorter than the window are skipped."""
    if window_len < 1 or stride < 1:
        raise ValueError("window_len and stride must be >= 1")
    if isinstance(seqs, DatasetManifest):
        seqs = seqs.load_all()
    out = []
    for s in seqs:
        if s.class_label is None:
            raise ValueError(f"sequence {s.activity_id!r} has no class label")
        frames = s.frames if s.normalized else normalize(s).frames
        if s.T < window_len:
            log.warning("skipping %s: %d frames is shorter than the %d-frame window", s.activity_id, s.T, window_len)
            continue
        for start in range(0, s.T - window_len + 1, stride):
            out.append(HARExample(frames[start:start + window_len], s.class_label, s.activity_id))
    return out


def augment(seqs: Sequence[PressureSequence], seed: int = 0, scale: float = 0.2,
            prefix: str = "aug-") -> list[PressureSequence]:
    """Jittered copies: per-sequence gain in [1 - scale, 1 + scale] and a random circular time shift."""
    rng = np.random.default_rng(seed)
    out = []
    for s in seqs:
        gain = rng.uniform(1 - scale, 1 + scale)
        shift = int(rng.integers(0, s.T))
        ceiling = 1.0 if s.normalized else SENSOR_MAX_MMHG
        f = np.minimum(np.roll(s.frames, shift, axis=0) * np.float32(gain), np.float32(ceiling))
        out.append(s.with_frames(f.astype(np.float32), activity_id=prefix + s.activity_id))
    return out


@dataclass
class HARConfig:
    hidden: int = 32
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    val_fraction: float = 0.2
    patience: int = 5
    seed: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "HARConfig":
        names = {f.name for f in fields(cls)}
        for k in doc:
            if k not in names:
                raise ConfigError(f"har.model.{k}", "unknown HAR model option")
        return cls(**doc)


class WindowCNN(nn.Module):
    def __init__(self, channels: int, n_classes: int, hidden: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(channels, hidden, 5, padding=2),
            nn.ReLU(),
            nn.MaxPool1d(2),
            nn.Conv1d(hidden, hidden, 5, padding=2),
            nn.ReLU(),
            nn.AdaptiveAvgPool1d(1),
            nn.Flatten(),
            nn.LayerNorm(hidden),
            nn.Linear(hidden, n_classes),
        )

    def forward(self, x):
        # per-window standardisation: removes overall load scale, keeps layout and motion
        mu = x.mean(dim=(1, 2), keepdim=True)
        sd = x.std(dim=(1, 2), keepdim=True)
        return self.net((x - mu) / (sd + 1e-6))


@dataclass
class HARModel:
    classes: list[str]
    window_len: int
    grid: tuple[int, int]
    net: WindowCNN
    history: list[dict] = field(default_factory=list)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k, v in self.net.state_dict().items():
            h.update(k.encode())
            h.update(v.detach().numpy().tobytes())
        return h.hexdigest()

    @torch.no_grad()
    def predict(self, examples: Sequence[HARExample]) -> list[str]:
        self.net.eval()
        x = _to_tensor(examples)
        logits = torch.cat([self.net(x[i:i + 256]) for i in range(0, len(x), 256)])
        return [self.classes[i] for i in logits.argmax(dim=1).tolist()]


def _to_tensor(examples: Sequence[HARExample]) -> torch.Tensor:
    w = np.stack([e.window for e in examples]).astype(np.float32)
    n, t = w.shape[:2]
    return torch.from_numpy(np.ascontiguousarray(w.reshape(n, t, -1).transpose(0, 2, 1)))


def init_har(classes: Sequence[str], window_len: int, grid: tuple[int, int], cfg: HARConfig | None = None) -> HARModel:
    cfg = cfg or HARConfig()
    torch.manual_seed(cfg.seed)
    return HARModel(list(classes), window_len, tuple(grid), WindowCNN(grid[0] * grid[1], len(classes), cfg.hidden))


def train_har(examples: Sequence[HARExample], cfg: HARConfig | None = None,
              classes: Sequence[str] | None = None) -> HARModel:
    """Cross-entropy training with early stopping on a sequence-level validation carve-out."""
    cfg = cfg or HARConfig()
    if not examples:
        raise ValueError("no training examples")
    present = sorted({e.label for e in examples}, key=CLASS_LABELS.index)
    if len(present) < 2:
        raise ValueError(f"need at least two classes, got {present}")
    classes = list(classes) if classes is not None else present
    lengths = {e.window.shape for e in examples}
    if len(lengths) != 1:
        raise ValueError(f"mixed window shapes {sorted(lengths)}")
    shape = lengths.pop()
    model = init_har(classes, shape[0], shape[1:], cfg)
    lookup = {c: i for i, c in enumerate(classes)}

    rng = np.random.default_rng(cfg.seed)
    seq_ids = sorted({e.sequence_id for e in examples})
    n_val = int(round(len(seq_ids) * cfg.val_fraction)) if len(seq_ids) > 1 else 0
    val_ids = set(rng.permutation(seq_ids)[:n_val].tolist()) if n_val else set()
    train = [e for e in examples if e.sequence_id not in val_ids]
    val = [e for e in examples if e.sequence_id in val_ids]
    if not train:
        train, val = list(examples), []

    x = _to_tensor(train)
    y = torch.tensor([lookup[e.label] for e in train])
    xv = _to_tensor(val) if val else None
    yv = torch.tensor([lookup[e.label] for e in val]) if val else None

    opt = torch.optim.Adam(model.net.parameters(), lr=cfg.lr)
    best = (math.inf, copy.deepcopy(model.net.state_dict()))
    stale = 0
    for epoch in range(cfg.epochs):
        model.net.train()
        perm = torch.from_numpy(rng.permutation(len(x)))
        total = 0.0
        for i in range(0, len(x), cfg.batch_size):
            b = perm[i:i + cfg.batch_size]
            loss = F.cross_entropy(model.net(x[b]), y[b])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.item()) * len(b)
        rec = {"epoch": epoch, "train_loss": total / len(x)}
        if xv is not None:
            model.net.eval()
            with torch.no_grad():
                vl = float(F.cross_entropy(model.net(xv), yv).item())
            rec["val_loss"] = vl
            if vl < best[0]:
                best = (vl, copy.deepcopy(model.net.state_dict()))
                stale = 0
            else:
                stale += 1
        model.history.append(rec)
        if xv is not None and stale >= cfg.patience:
            break
    if xv is not None:
        model.net.load_state_dict(best[1])
    model.net.eval()
    return model


def eval_har(model: HARModel, examples: Sequence[HARExample]) -> MetricReport:
    if not examples:
        raise ValueError("no evaluation examples")
    unknown = {e.label for e in examples} - set(model.classes)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} not among model classes {model.classes}")
    if examples[0].window.shape != (model.window_len, *model.grid):
        raise ValueError("window geometry does not match the model")
    pred = model.predict(examples)
    truth = [e.label for e in examples]
    return MetricReport(
        macro_f1=macro_f1(pred, truth, model.classes),
        per_class_f1=per_class_f1(pred, truth, model.classes),
        config={"classes": model.classes, "n_examples": len(examples),
                "absent_class_convention": "F1=1 when a class is absent from predictions and truth"},
    )


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentPlan:
    sources: dict[str, list[PressureSequence]]
    evaluation: list[PressureSequence]
    recipes: dict[str, list[str]] = field(default_factory=lambda: {k: v for k, v in STANDARD_RECIPES.items()
                                                                   if k != "combined-augmented"})
    repetitions: int = 5
    seeds: list[int] | None = None
    window_len: int = 32
    stride: int = 16
    model: HARConfig = field(default_factory=HARConfig)

    def run_seeds(self) -> list[int]:
        seeds = self.seeds if self.seeds is not None else list(range(self.repetitions))
        if len(seeds) != self.repetitions:
            raise ConfigError("har.seeds", f"{len(seeds)} seeds for {self.repetitions} repetitions")
        return list(seeds)

    def validate(self) -> None:
        if self.repetitions < 1:
            raise ConfigError("har.repetitions", "must be >= 1")
        if not self.evaluation:
            raise ConfigError("har.evaluation", "evaluation set is empty")
        for name, parts in self.recipes.items():
            for p in parts:
                if p not in self.sources:
                    raise ConfigError(f"har.recipes.{name}", f"unknown source {p!r}")
        self.run_seeds()
        check_leakage(self)

    @classmethod
    def from_json(cls, doc: dict, base: Path) -> "ExperimentPlan":
        """``{"sources": {name: manifest}, "evaluation": manifest, "recipes": ..., ...}``; paths relative to ``base``."""
        def load(p):
            return [normalize(s) if not s.normalized else s
                    for s in DatasetManifest.load_file(Path(base) / p).load_all()]

        try:
            sources = {k: load(v) for k, v in doc["sources"].items()}
            evaluation = load(doc["evaluation"])
        except KeyError as exc:
            raise ConfigError(f"har.{exc.args[0]}", "missing") from None
        plan = cls(sources, evaluation,
                   recipes=doc.get("recipes") or {k: v for k, v in STANDARD_RECIPES.items() if all(s in sources for s in v)},
                   repetitions=int(doc.get("repetitions", 5)), seeds=doc.get("seeds"),
                   window_len=int(doc.get("window_len", 32)), stride=int(doc.get("stride", 16)),
                   model=HARConfig.from_dict(doc.get("model", {})))
        return plan


def check_leakage(plan: ExperimentPlan) -> None:
    eval_ids = {s.activity_id for s in plan.evaluation}
    for name, parts in plan.recipes.items():
        train_ids = {s.activity_id for p in parts for s in plan.sources[p]}
        shared = eval_ids & train_ids
        if shared:
            raise LeakageError(f"recipe {name!r} trains on {len(shared)} evaluation sequences, "
                               f"e.g. {sorted(shared)[0]!r}")


@dataclass
class ExperimentResult:
    reports: list[dict]
    aggregates: dict[str, dict]

    def table(self) -> str:
        rows = [f"{'recipe':<22} {'macro F1':>18}"]
        for name, a in self.aggregates.items():
            rows.append(f"{name:<22} {a['mean']:.3f} ± {a['std']:.3f}")
        return "\n".join(rows)


def run_experiment(plan: ExperimentPlan, out_dir: str | Path | None = None) -> ExperimentResult:
    """Train and score every recipe x repetition; returns per-run reports and per-recipe mean ± std."""
    plan.validate()
    seeds = plan.run_seeds()
    eval_ex = windowize(plan.evaluation, plan.window_len, plan.stride)
    classes = sorted({e.label for e in eval_ex} | {s.class_label for src in plan.sources.values() for s in src},
                     key=CLASS_LABELS.index)
    reports = []
    aggregates = {}
    for name, parts in plan.recipes.items():
        train_ex = windowize([s for p in parts for s in plan.sources[p]], plan.window_len, plan.stride)
        scores = []
        for rep, seed in enumerate(seeds):
            model = train_har(train_ex, replace(plan.model, seed=seed), classes)
            rpt = eval_har(model, eval_ex)
            rpt.config.update({"recipe": name, "sources": parts, "repetition": rep, "seed": seed,
                               "n_train_windows": len(train_ex), "window_len": plan.window_len,
                               "stride": plan.stride})
            doc = rpt.to_json()
            reports.append(doc)
            scores.append(rpt.macro_f1)
            if out_dir is not None:
                p = Path(out_dir) / "reports"
                p.mkdir(parents=True, exist_ok=True)
                (p / f"{name}-rep{rep}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        aggregates[name] = {"mean": float(np.mean(scores)), "std": float(np.std(scores)),
                            "n": len(scores), "scores": [float(s) for s in scores]}
    result = ExperimentResult(reports, aggregates)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "aggregates.json").write_text(json.dumps(aggregates, indent=2, sort_keys=True) + "\n")
    return result
