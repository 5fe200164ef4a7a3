"""Evaluation metrics: Fréchet distance, R², binarized (contact-mask) R², macro F1."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .data import PressureSequence

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.02
PCA_COMPONENTS = 64
FEATURE_SPACES = ("codec-latent", "pca-flat")


class NotPSDError(ValueError):
    pass


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def gaussian_stats(features) -> GaussianStats:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two samples for a covariance")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite features")
    mu = x.mean(axis=0)
    c = x - mu
    s = c.T @ c / (x.shape[0] - 1)
    return GaussianStats(mu, (s + s.T) / 2, x.shape[0])


def _psd_sqrt_eig(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    w, v = np.linalg.eigh((m + m.T) / 2)
    tol = 1e-8 * max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -tol:
        raise NotPSDError(f"{what} has eigenvalue {w.min():.3e} below tolerance")
    return np.clip(w, 0.0, None), v


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    tr((S_a S_b)^{1/2}) is taken from the symmetric product S_a^{1/2} S_b S_a^{1/2},
    which has the same eigenvalues as S_a S_b.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"dimension mismatch {a.mu.shape} vs {b.mu.shape}")
    wa, va = _psd_sqrt_eig(a.sigma, "first covariance")
    sqrt_a = (va * np.sqrt(wa)) @ va.T
    w, _ = _psd_sqrt_eig(sqrt_a @ b.sigma @ sqrt_a, "covariance product")
    diff = a.mu - b.mu
    d = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.sum(np.sqrt(w)))
    if d < -1e-6:
        raise NotPSDError(f"negative Fréchet distance {d}")
    return max(d, 0.0)


# ---------------------------------------------------------------------------
# feature spaces


@dataclass
class PCAFeatures:
    """Flattened frames projected onto principal components of a reference set."""

    mean: np.ndarray
    components: np.ndarray  # (k, H*W)
    name: str = "pca-flat"

    @classmethod
    def fit(cls, seqs: Sequence[PressureSequence], n_components: int = PCA_COMPONENTS) -> "PCAFeatures":
        x = _flat_frames(seqs)
        mean = x.mean(axis=0)
        _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
        k = min(n_components, vt.shape[0])
        comps = vt[:k]
        # fix the sign of each axis so the basis is reproducible
        signs = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
        signs[signs == 0] = 1.0
        return cls(mean, comps * signs[:, None])

    def __call__(self, seqs: Sequence[PressureSequence]) -> np.ndarray:
        return (_flat_frames(seqs) - self.mean) @ self.components.T


@dataclass
class CodecFeatures:
    """Pre-quantisation encoder vectors of a frozen codec."""

    ckpt: object
    name: str = "codec-latent"

    def __call__(self, seqs: Sequence[PressureSequence]) -> np.ndarray:
        from .codec import encode

        return np.concatenate([encode(s, self.ckpt).vectors for s in seqs], axis=0)


def _flat_frames(seqs: Sequence[PressureSequence]) -> np.ndarray:
    return np.concatenate([np.asarray(s.frames, dtype=np.float64).reshape(s.T, -1) for s in seqs], axis=0)


def feature_space(name: str, real: Sequence[PressureSequence] | None = None, codec=None,
                  n_components: int = PCA_COMPONENTS):
    if name == "codec-latent":
        if codec is None:
            raise ValueError("codec-latent features need a codec checkpoint")
        return CodecFeatures(codec)
    if name == "pca-flat":
        if real is None:
            raise ValueError("pca-flat features need a reference set to fit on")
        return PCAFeatures.fit(real, n_components)
    raise ValueError(f"unknown feature space {name!r}; expected one of {FEATURE_SPACES}")


def fid(real_seqs: Sequence[PressureSequence], gen_seqs: Sequence[PressureSequence],
        feature_space_or_name="codec-latent", codec=None) -> float:
    """Fréchet distance between Gaussian fits of per-frame (or per-latent) features.

    ``feature_space_or_name`` is either a fitted space (``PCAFeatures``,
    ``CodecFeatures``) or a name; ``pca-flat`` by name is fit on ``real_seqs``.
    """
    if not real_seqs or not gen_seqs:
        raise ValueError("both sets must be non-empty")
    space = feature_space_or_name
    if isinstance(space, str):
        space = feature_space(space, real_seqs, codec)
    fr = space(real_seqs)
    fg = space(gen_seqs)
    for f, which in ((fr, "real"), (fg, "generated")):
        if f.shape[0] < f.shape[1] + 1:
            warnings.warn(f"{which} set has {f.shape[0]} feature samples for dimension {f.shape[1]}; "
                          "covariance is ill-conditioned", RuntimeWarning, stacklevel=2)
    return frechet_distance(gaussian_stats(fr), gaussian_stats(fg))


# ---------------------------------------------------------------------------
# regression scores


def _stack_cells(seqs) -> np.ndarray:
    if isinstance(seqs, PressureSequence):
        return np.asarray(seqs.frames, dtype=np.float64).ravel()
    if isinstance(seqs, np.ndarray):
        return seqs.astype(np.float64).ravel()
    parts = [np.asarray(s.frames if isinstance(s, PressureSequence) else s, dtype=np.float64).ravel() for s in seqs]
    return np.concatenate(parts) if parts else np.zeros(0)


def _paired(pred, target) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(pred, (list, tuple)) and isinstance(target, (list, tuple)):
        if len(pred) != len(target):
            raise ValueError(f"{len(pred)} predictions for {len(target)} targets")
        for p, t in zip(pred, target):
            ps = p.frames.shape if isinstance(p, PressureSequence) else np.shape(p)
            ts = t.frames.shape if isinstance(t, PressureSequence) else np.shape(t)
            if ps != ts:
                raise ValueError(f"shape mismatch {ps} vs {ts}")
    p, t = _stack_cells(pred), _stack_cells(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return p, t


def _r2_from_sums(ss_res: float, ss_tot: float) -> float:
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -math.inf
    return 1.0 - ss_res / ss_tot


def r2(pred, target) -> float:
    """1 - SS_res/SS_tot over every cell, SS_tot about the global target mean."""
    p, t = _paired(pred, target)
    return _r2_from_sums(*kernels.r2_sums(p, t))


def binarized_r2(pred, target, tau: float = DEFAULT_TAU) -> float:
    """R² of contact masks (cell > tau) — scores where contact happens, not how hard."""
    p, t = _paired(pred, target)
    return _r2_from_sums(*kernels.mask_r2_sums(p, t, tau))


# ---------------------------------------------------------------------------
# classification


def per_class_f1(predicted, truth, classes) -> dict:
    predicted = list(predicted)
    truth = list(truth)
    if len(predicted) != len(truth):
        raise ValueError("predicted and true labels differ in length")
    if not truth:
        raise ValueError("empty label lists")
    classes = list(classes)
    known = set(classes)
    for lab in predicted + truth:
        if lab not in known:
            raise ValueError(f"label {lab!r} not in class list")
    out = {}
    for c in classes:
        tp = sum(1 for p, t in zip(predicted, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(predicted, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(predicted, truth) if p != c and t == c)
        if tp + fp + fn == 0:
            out[c] = 1.0  # class absent from both sides
        else:
            out[c] = 2 * tp / (2 * tp + fp + fn)
    return out


def macro_f1(predicted, truth, classes) -> float:
    scores = per_class_f1(predicted, truth, classes)
    return float(sum(scores.values()) / len(scores))


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    fid: float | None = None
    r2: float | None = None
    binarized_r2: float | None = None
    macro_f1: float | None = None
    per_class_f1: dict | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        doc = asdict(self)
        for k in ("fid", "r2", "binarized_r2", "macro_f1"):
            v = doc[k]
            if isinstance(v, float) and not math.isfinite(v):
                doc[k] = "-inf" if v < 0 else "inf"
        return doc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def evaluate_pairs(generated: Sequence[PressureSequence], reference: Sequence[PressureSequence],
                   space, tau: float = DEFAULT_TAU) -> MetricReport:
    """FID / R² / binarized R² of generated sequences against their paired references."""
    gen, ref = [], []
    for g, r in zip(generated, reference):
        T = min(g.T, r.T)
        gen.append(g.with_frames(g.frames[:T]))
        ref.append(r.with_frames(r.frames[:T]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        f = fid(ref, gen, space)
    return MetricReport(
        fid=f,
        r2=r2(gen, ref),
        binarized_r2=binarized_r2(gen, ref, tau),
        config={"feature_space": getattr(space, "name", str(space)), "tau": tau,
                "n_generated": len(gen), "n_reference": len(ref)},
    )
