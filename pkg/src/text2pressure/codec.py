"""Vector-quantised temporal autoencoder for pressure sequences.

Frames are flattened to ``H*W`` channels and processed by 1-D convolutions
over time. The encoder downsamples time by ``l``; each latent vector is
snapped to its nearest codebook entry; the decoder mirrors the encoder. The
codebook is maintained with exponential moving averages of per-code counts
and sums, and the loss weights follow a linear annealing schedule.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import kernels
from .checkpoint import arrays_to_state, container_bytes, load_container, save_container, state_to_arrays
from .data import ConfigError, PressureSequence

log = logging.getLogger(__name__)

CODEC_FORMAT_VERSION = 1
SUPPORTED_CODEBOOK_SIZES = (128, 256, 512)
EMA_EPS = 1e-5
DEAD_CODE_THRESHOLD = 1e-3


class GeometryError(ValueError):
    pass


class NonFiniteLossError(FloatingPointError):
    pass


# ---------------------------------------------------------------------------
# configuration and small records


@dataclass
class AnnealSchedule:
    warmup_steps: int = 1000
    w_r_start: float = 1.0
    w_r_end: float = 1.0
    w_q_start: float = 0.0
    w_q_end: float = 1.0

    def validate(self) -> None:
        for name in ("w_r_start", "w_r_end", "w_q_start", "w_q_end"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"anneal.{name}", "weights must lie in [0, 1]")
        if self.w_q_end < self.w_q_start:
            raise ConfigError("anneal.w_q_end", "w_q must not decrease")
        if self.w_r_end > self.w_r_start:
            raise ConfigError("anneal.w_r_end", "w_r must not increase")
        if self.warmup_steps < 0:
            raise ConfigError("anneal.warmup_steps", "must be >= 0")


def anneal_weights(t: int, sched: AnnealSchedule) -> tuple[float, float]:
    """Linear ramp from start to end weights over the warmup, flat afterwards."""
    if t < 0:
        raise ValueError("step must be non-negative")
    if sched.warmup_steps == 0 or t >= sched.warmup_steps:
        return sched.w_r_end, sched.w_q_end
    frac = t / sched.warmup_steps
    w_r = sched.w_r_start + (sched.w_r_end - sched.w_r_start) * frac
    w_q = sched.w_q_start + (sched.w_q_end - sched.w_q_start) * frac
    return w_r, w_q


@dataclass
class LossBreakdown:
    total: float
    reconstruction: float
    quantization: float
    w_r: float
    w_q: float
    step: int


@dataclass
class CodecConfig:
    height: int = 80
    width: int = 28
    downsample: int = 4
    latent_dim: int = 64
    codebook_size: int = 512
    hidden: int = 128
    res_blocks: int = 3
    residual: bool = True
    ema: bool = True
    anneal: bool = True
    ema_horizon: int = 99
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    lr: float = 1e-3
    lr_decay: float = 0.9995
    batch_size: int = 16
    steps: int = 2000
    eval_every: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name in ("height", "width", "downsample", "latent_dim", "hidden", "batch_size", "steps",
                     "eval_every", "patience"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"codec.{name}", "must be >= 1")
        if self.res_blocks < 0:
            raise ConfigError("codec.res_blocks", "must be >= 0")
        if self.codebook_size not in SUPPORTED_CODEBOOK_SIZES:
            raise ConfigError("codec.codebook_size", f"must be one of {SUPPORTED_CODEBOOK_SIZES}")
        if self.ema_horizon < 1:
            raise ConfigError("codec.ema_horizon", "must be >= 1")
        if not 0 < self.lr:
            raise ConfigError("codec.lr", "must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("codec.lr_decay", "must be in (0, 1]")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("codec.val_fraction", "must be in [0, 1)")
        self.schedule.validate()

    @property
    def alpha(self) -> float:
        return 2.0 / (self.ema_horizon + 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "CodecConfig":
        doc = dict(doc)
        names = {f.name for f in fields(cls)}
        for k in doc:
            if k not in names:
                raise ConfigError(f"codec.{k}", "unknown codec option")
        sched = doc.pop("schedule", None)
        try:
            cfg = cls(**doc)
            if sched is not None:
                cfg.schedule = AnnealSchedule(**sched) if isinstance(sched, dict) else sched
        except TypeError as exc:
            raise ConfigError("codec", str(exc)) from None
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# codebook and quantiser


@dataclass
class Codebook:
    entries: np.ndarray  # (K, D) float64
    ema_counts: np.ndarray  # (K,)
    ema_sums: np.ndarray  # (K, D)
    usage: np.ndarray  # (K,) int64
    horizon: int = 99

    @classmethod
    def empty(cls, size: int, dim: int, horizon: int = 99) -> "Codebook":
        return cls(np.zeros((size, dim)), np.zeros(size), np.zeros((size, dim)),
                   np.zeros(size, dtype=np.int64), horizon)

    @property
    def alpha(self) -> float:
        return 2.0 / (self.horizon + 1)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def copy(self) -> "Codebook":
        return copy.deepcopy(self)


@dataclass
class LatentSequence:
    vectors: np.ndarray  # (ceil(T/l), D)
    downsample: int
    frames: int  # T of the encoded sequence, used to trim on decode

    def __len__(self) -> int:
        return self.vectors.shape[0]


def quantize(lat: LatentSequence, cb: Codebook) -> tuple[np.ndarray, LatentSequence, float]:
    """Nearest-entry lookup; returns (indices, quantized latents, mean squared distance)."""
    vecs = np.asarray(lat.vectors, dtype=np.float64)
    if cb.size == 0:
        raise ValueError("empty codebook")
    if vecs.shape[1] != cb.dim:
        raise GeometryError(f"latent width {vecs.shape[1]} does not match codebook width {cb.dim}")
    idx, dist = kernels.nearest_codes(vecs, cb.entries)
    quantized = LatentSequence(cb.entries[idx].copy(), lat.downsample, lat.frames)
    l_q = float(dist.mean()) if len(dist) else 0.0
    return idx, quantized, l_q


def ema_update(cb: Codebook, batch_latents: np.ndarray, batch_indices: np.ndarray,
               rng: np.random.Generator | None = None) -> Codebook:
    """One exponential-moving-average step on per-code counts and sums (in place).

    counts_k <- (1-a) counts_k + a n_k;  sums_k <- (1-a) sums_k + a S_k;
    entry_k = sums_k / (counts_k + eps). Codes whose count falls below the
    dead-code threshold are re-seeded from a random batch latent.
    """
    batch_latents = np.asarray(batch_latents, dtype=np.float64)
    if batch_latents.shape[0] == 0:
        return cb
    a = cb.alpha
    n_k, s_k = kernels.scatter_sums(batch_latents, batch_indices, cb.size)
    cb.ema_counts *= 1.0 - a
    cb.ema_counts += a * n_k
    cb.ema_sums *= 1.0 - a
    cb.ema_sums += a * s_k
    cb.entries = cb.ema_sums / (cb.ema_counts[:, None] + EMA_EPS)
    cb.usage += n_k.astype(np.int64)
    dead = np.flatnonzero(cb.ema_counts < DEAD_CODE_THRESHOLD)
    if dead.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.integers(0, batch_latents.shape[0], size=dead.size)
        cb.entries[dead] = batch_latents[pick]
        cb.ema_sums[dead] = 0.0
        cb.ema_counts[dead] = 0.0
    return cb


class StraightThrough(torch.autograd.Function):
    """Forward returns the quantised tensor; backward hands the gradient to the encoder unchanged."""

    @staticmethod
    def forward(ctx, z, q):
        return q.clone()

    @staticmethod
    def backward(ctx, grad):
        return grad, None


def straight_through(z: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    return StraightThrough.apply(z, q)


# ---------------------------------------------------------------------------
# networks


class ResBlock(nn.Module):
    def __init__(self, chan: int, residual: bool = True):
        super().__init__()
        self.residual = residual
        self.net = nn.Sequential(
            nn.ReLU(),
            nn.Conv1d(chan, chan, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(chan, chan, 1),
        )

    def forward(self, x):
        return x + self.net(x) if self.residual else self.net(x)


class Encoder(nn.Module):
    def __init__(self, in_ch: int, hidden: int, latent_dim: int, downsample: int, n_blocks: int, residual: bool):
        super().__init__()
        layers = [
            nn.Conv1d(in_ch, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(hidden, hidden, downsample, stride=downsample),
        ]
        layers += [ResBlock(hidden, residual) for _ in range(n_blocks)]
        layers += [nn.ReLU(), nn.Conv1d(hidden, latent_dim, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, out_ch: int, hidden: int, latent_dim: int, downsample: int, n_blocks: int, residual: bool):
        super().__init__()
        layers = [nn.Conv1d(latent_dim, hidden, 3, padding=1)]
        layers += [ResBlock(hidden, residual) for _ in range(n_blocks)]
        layers += [
            nn.ReLU(),
            nn.Upsample(scale_factor=downsample, mode="nearest"),
            nn.Conv1d(hidden, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv1d(hidden, out_ch, 3, padding=1),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class VQCodec(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        ch = cfg.height * cfg.width
        self.encoder = Encoder(ch, cfg.hidden, cfg.latent_dim, cfg.downsample, cfg.res_blocks, cfg.residual)
        self.decoder = Decoder(ch, cfg.hidden, cfg.latent_dim, cfg.downsample, cfg.res_blocks, cfg.residual)


def reflect_indices(n: int, total: int) -> np.ndarray:
    """Time indices that reflect-pad a length-``n`` axis out to ``total``."""
    i = np.arange(total)
    if n == 1:
        return np.zeros(total, dtype=np.int64)
    period = 2 * (n - 1)
    i = i % period
    return np.where(i < n, i, period - i).astype(np.int64)


def padded_length(T: int, l: int) -> int:
    return int(math.ceil(T / l)) * l


def frames_to_channels(frames: np.ndarray, l: int) -> torch.Tensor:
    """(T, H, W) -> (1, H*W, T_pad) with reflect padding in time."""
    T = frames.shape[0]
    idx = reflect_indices(T, padded_length(T, l))
    x = np.asarray(frames, dtype=np.float32)[idx].reshape(len(idx), -1).T
    return torch.from_numpy(np.ascontiguousarray(x))[None]


# ---------------------------------------------------------------------------
# checkpoint


@dataclass
class CodecCheckpoint:
    config: CodecConfig
    model: VQCodec
    codebook: Codebook
    history: list[dict] = field(default_factory=list)

    @property
    def geometry(self) -> dict:
        c = self.config
        return {"height": c.height, "width": c.width, "downsample": c.downsample,
                "latent_dim": c.latent_dim, "codebook_size": c.codebook_size}

    def _payload(self) -> tuple[dict, dict]:
        arrays = state_to_arrays(self.model.state_dict(), "model.")
        arrays.update({
            "codebook.entries": self.codebook.entries,
            "codebook.ema_counts": self.codebook.ema_counts,
            "codebook.ema_sums": self.codebook.ema_sums,
            "codebook.usage": self.codebook.usage,
        })
        header = {"geometry": self.geometry, "config": self.config.to_dict(),
                  "ema_horizon": self.codebook.horizon}
        return header, arrays

    def save(self, path: str | Path) -> str:
        """Write the checkpoint; returns its content hash."""
        header, arrays = self._payload()
        return save_container(path, "codec", CODEC_FORMAT_VERSION, header, arrays)

    def content_hash(self) -> str:
        header, arrays = self._payload()
        return hashlib.sha256(container_bytes("codec", CODEC_FORMAT_VERSION, header, arrays)).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "CodecCheckpoint":
        header, arrays, _ = load_container(path, "codec", CODEC_FORMAT_VERSION)
        cfg = CodecConfig.from_dict(header["config"])
        model = VQCodec(cfg)
        model.load_state_dict(arrays_to_state(arrays, "model."))
        model.eval()
        cb = Codebook(arrays["codebook.entries"].astype(np.float64),
                      arrays["codebook.ema_counts"].astype(np.float64),
                      arrays["codebook.ema_sums"].astype(np.float64),
                      arrays["codebook.usage"].astype(np.int64),
                      int(header["ema_horizon"]))
        if cb.entries.shape != (cfg.codebook_size, cfg.latent_dim):
            raise GeometryError("codebook shape disagrees with checkpoint geometry")
        return cls(cfg, model, cb)


def init_checkpoint(cfg: CodecConfig) -> CodecCheckpoint:
    """Randomly initialised codec; the codebook is seeded from N(0, 1)."""
    cfg.validate()
    torch.manual_seed(cfg.seed)
    model = VQCodec(cfg)
    model.eval()
    rng = np.random.default_rng(cfg.seed)
    cb = Codebook.empty(cfg.codebook_size, cfg.latent_dim, cfg.ema_horizon)
    cb.entries = rng.standard_normal((cfg.codebook_size, cfg.latent_dim))
    return CodecCheckpoint(cfg, model, cb)


# ---------------------------------------------------------------------------
# inference operations


def _check_geometry(seq: PressureSequence, ckpt: CodecCheckpoint) -> None:
    if seq.grid != (ckpt.config.height, ckpt.config.width):
        raise GeometryError(f"grid {seq.grid} does not match codec grid "
                            f"{(ckpt.config.height, ckpt.config.width)}")


@torch.no_grad()
def encode(seq: PressureSequence, ckpt: CodecCheckpoint) -> LatentSequence:
    if not seq.normalized:
        raise ValueError("encode expects a normalized sequence")
    _check_geometry(seq, ckpt)
    x = frames_to_channels(seq.frames, ckpt.config.downsample)
    z = ckpt.model.encoder(x)[0].T.numpy().astype(np.float64)
    return LatentSequence(z, ckpt.config.downsample, seq.T)


@torch.no_grad()
def decode(quantized: LatentSequence, ckpt: CodecCheckpoint, **meta) -> PressureSequence:
    vecs = np.asarray(quantized.vectors)
    if vecs.ndim != 2 or vecs.shape[1] != ckpt.config.latent_dim:
        raise GeometryError(f"latent width {vecs.shape[-1]} does not match codec width {ckpt.config.latent_dim}")
    if quantized.downsample != ckpt.config.downsample:
        raise GeometryError("downsampling factor does not match the codec")
    q = torch.from_numpy(np.ascontiguousarray(vecs.T, dtype=np.float32))[None]
    out = ckpt.model.decoder(q)[0]  # (H*W, L*l)
    out = out[:, : quantized.frames].clamp(0.0, 1.0)
    frames = out.T.reshape(-1, ckpt.config.height, ckpt.config.width).numpy()
    return PressureSequence(frames=frames, normalized=True, **meta)


def reconstruct(seq: PressureSequence, ckpt: CodecCheckpoint) -> PressureSequence:
    _, q, _ = quantize(encode(seq, ckpt), ckpt.codebook)
    return decode(q, ckpt, activity_id=seq.activity_id, class_label=seq.class_label,
                  description=seq.description, subject_id=seq.subject_id)


def loss(x: PressureSequence, x_hat: PressureSequence, l_q: float, t: int, sched: AnnealSchedule) -> LossBreakdown:
    a = np.asarray(x.frames, dtype=np.float64)
    b = np.asarray(x_hat.frames, dtype=np.float64)
    if a.shape != b.shape:
        raise GeometryError(f"shape mismatch {a.shape} vs {b.shape}")
    l_r = float(np.mean((a - b) ** 2))
    w_r, w_q = anneal_weights(t, sched)
    return LossBreakdown(w_r * l_r + w_q * l_q, l_r, float(l_q), w_r, w_q, t)


# ---------------------------------------------------------------------------
# training


def _windows(seqs: Sequence[np.ndarray], l: int) -> int:
    """Training crop length: longest multiple of ``l`` that fits every sequence."""
    shortest = min(s.shape[0] for s in seqs)
    return max(l, (shortest // l) * l)


def _batch(seqs: Sequence[np.ndarray], ids: np.ndarray, win: int, l: int, rng: np.random.Generator) -> torch.Tensor:
    out = []
    for i in ids:
        f = seqs[i]
        T = f.shape[0]
        if T >= win:
            start = int(rng.integers(0, T - win + 1)) if T > win else 0
            f = f[start:start + win]
        else:
            f = f[reflect_indices(T, win)]
        out.append(f.reshape(win, -1).T)
    return torch.from_numpy(np.ascontiguousarray(np.stack(out), dtype=np.float32))


@torch.no_grad()
def reconstruction_mse(ckpt: CodecCheckpoint, seqs: Sequence[PressureSequence]) -> float:
    """Mean squared error of clamped reconstructions over every cell of ``seqs``."""
    err = 0.0
    n = 0
    for s in seqs:
        r = reconstruct(s, ckpt)
        err += float(np.sum((r.frames.astype(np.float64) - s.frames) ** 2))
        n += s.frames.size
    return err / max(n, 1)


def _init_codebook_from(latents: np.ndarray, cb: Codebook, rng: np.random.Generator) -> None:
    pick = rng.choice(latents.shape[0], size=cb.size, replace=latents.shape[0] < cb.size)
    cb.entries = latents[pick].copy()
    # small jitter keeps duplicated picks from tying forever
    cb.entries += 1e-3 * rng.standard_normal(cb.entries.shape) * (latents.std() + 1e-8)


def train_codec(train: Sequence[PressureSequence], cfg: CodecConfig,
                val: Sequence[PressureSequence] | None = None, on_step=None) -> CodecCheckpoint:
    """Fit the codec with straight-through quantisation and EMA (or gradient) codebook updates.

    Returns the checkpoint with the lowest validation reconstruction MSE; its
    ``history`` holds one record per optimisation step (step, L_r, L_q, w_r,
    w_q, total) plus ``val_mse`` on evaluation steps.
    """
    cfg.validate()
    if not train:
        raise ValueError("empty training set")
    for s in train:
        if not s.normalized:
            raise ValueError("training sequences must be normalized")
        if s.grid != (cfg.height, cfg.width):
            raise GeometryError(f"grid {s.grid} does not match config {(cfg.height, cfg.width)}")

    rng = np.random.default_rng(cfg.seed)
    train = list(train)
    if val is None:
        n_val = int(round(len(train) * cfg.val_fraction))
        if n_val:
            perm = rng.permutation(len(train))
            val = [train[i] for i in perm[:n_val]]
            train = [train[i] for i in perm[n_val:]]
        else:
            val = []
    val = list(val)

    ckpt = init_checkpoint(cfg)
    model = ckpt.model
    cb = ckpt.codebook
    model.train()
    params = list(model.parameters())
    code_param = None
    if not cfg.ema:
        code_param = nn.Parameter(torch.zeros(cfg.codebook_size, cfg.latent_dim))
        params.append(code_param)
    opt = torch.optim.Adam(params, lr=cfg.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=cfg.lr_decay)
    anneal = cfg.schedule if cfg.anneal else AnnealSchedule(0, cfg.schedule.w_r_end, cfg.schedule.w_r_end,
                                                             cfg.schedule.w_q_end, cfg.schedule.w_q_end)

    frames = [s.frames for s in train]
    win = _windows(frames, cfg.downsample)
    history: list[dict] = []
    best = (math.inf, None, None)
    stale = 0
    initialised = False

    for step in range(cfg.steps):
        ids = rng.choice(len(frames), size=min(cfg.batch_size, len(frames)), replace=False)
        x = _batch(frames, ids, win, cfg.downsample, rng)
        z = model.encoder(x)  # (B, D, L)
        z_flat = z.permute(0, 2, 1).reshape(-1, cfg.latent_dim)
        z_np = z_flat.detach().numpy().astype(np.float64)

        if not initialised:
            _init_codebook_from(z_np, cb, rng)
            if code_param is not None:
                code_param.data.copy_(torch.from_numpy(cb.entries.astype(np.float32)))
            initialised = True
        if code_param is not None:
            cb.entries = code_param.detach().numpy().astype(np.float64)

        idx_np, _ = kernels.nearest_codes(z_np, cb.entries)
        idx = torch.from_numpy(idx_np)
        if code_param is not None:
            q_flat = code_param[idx]
        else:
            q_flat = torch.from_numpy(cb.entries[idx_np].astype(np.float32))
        q_st = straight_through(z_flat, q_flat.detach())
        q = q_st.reshape(z.shape[0], z.shape[2], cfg.latent_dim).permute(0, 2, 1)
        x_hat = model.decoder(q)

        l_r = F.mse_loss(x_hat, x)
        l_q = ((z_flat - q_flat.detach()) ** 2).sum(dim=1).mean()
        w_r, w_q = anneal_weights(step, anneal)
        total = w_r * l_r + w_q * l_q
        objective = total
        if code_param is not None:
            objective = objective + ((z_flat.detach() - q_flat) ** 2).sum(dim=1).mean()
        if not torch.isfinite(objective):
            raise NonFiniteLossError(f"non-finite loss at step {step}: L_r={l_r.item()} L_q={l_q.item()}")

        opt.zero_grad()
        objective.backward()
        opt.step()
        sched.step()

        if cfg.ema:
            ema_update(cb, z_np, idx_np, rng)
        else:
            cb.entries = code_param.detach().numpy().astype(np.float64)
            cb.usage += np.bincount(idx_np, minlength=cb.size)

        lr_, lq_ = float(l_r.item()), float(l_q.item())
        rec = {"step": step, "L_r": lr_, "L_q": lq_, "w_r": w_r, "w_q": w_q, "total": w_r * lr_ + w_q * lq_}

        if val and ((step + 1) % cfg.eval_every == 0 or step == cfg.steps - 1):
            model.eval()
            vm = reconstruction_mse(ckpt, val)
            model.train()
            rec["val_mse"] = vm
            if vm < best[0]:
                best = (vm, copy.deepcopy(model.state_dict()), cb.copy())
                stale = 0
            else:
                stale += 1
        history.append(rec)
        if on_step is not None:
            on_step(rec)
        if stale >= cfg.patience:
            log.info("early stop at step %d (best val mse %.5f)", step, best[0])
            break

    if best[1] is not None:
        model.load_state_dict(best[1])
        ckpt.codebook = best[2]
    model.eval()
    ckpt.history = history
    return ckpt


def kfold_indices(n: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded shuffle split into ``folds`` near-equal held-out index sets."""
    if folds < 2 or folds > n:
        raise ValueError(f"cannot make {folds} folds from {n} sequences")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def train_codec_kfold(seqs: Sequence[PressureSequence], cfg: CodecConfig, folds: int = 10) -> list[tuple[CodecCheckpoint, list[int]]]:
    """One checkpoint per fold, each validated on its held-out fold."""
    seqs = list(seqs)
    out = []
    for k, held in enumerate(kfold_indices(len(seqs), folds, cfg.seed)):
        held_set = set(held.tolist())
        train = [s for i, s in enumerate(seqs) if i not in held_set]
        val = [seqs[i] for i in held]
        fold_cfg = copy.deepcopy(cfg)
        fold_cfg.seed = cfg.seed + k
        out.append((train_codec(train, fold_cfg, val=val), held.tolist()))
    return out
