"""Text-conditioned autoregressive model over codebook indices.

A projected text embedding occupies position 0 of a causal transformer;
codebook indices follow. The vocabulary is the K codebook ids plus an END
symbol with id K. Generated indices are mapped back to pressure frames by
the frozen codec decoder.

``mode="continuous"`` swaps the discrete vocabulary for direct regression of
pre-quantisation encoder vectors (MSE, fixed length). It exists only as the
baseline for the discrete-vs-continuous comparison.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import CheckpointError, arrays_to_state, load_container, save_container, state_to_arrays
from .codec import (CodecCheckpoint, GeometryError, LatentSequence, NonFiniteLossError, decode, encode,
                    quantize, reflect_indices)
from .data import ConfigError, PressureSequence
from .text import DEFAULT_DIM, HashingEmbedder, TextEmbedding, embed

log = logging.getLogger(__name__)

GENERATOR_FORMAT_VERSION = 1
SAMPLING_MODES = ("greedy", "top-k")


class CheckpointMismatchError(CheckpointError):
    """Generator was trained against a different codec."""


class TokenError(ValueError):
    pass


# ---------------------------------------------------------------------------
# token sequences


@dataclass
class TokenSequence:
    tokens: list[int]
    end_id: int  # == codebook size K
    max_len: int = 64

    def __post_init__(self):
        self.tokens = [int(t) for t in self.tokens]
        for i, t in enumerate(self.tokens):
            if t < 0 or t > self.end_id:
                raise TokenError(f"token {t} outside [0, {self.end_id}]")
            if t == self.end_id and i != len(self.tokens) - 1:
                raise TokenError(f"END at interior position {i}")

    @property
    def indices(self) -> list[int]:
        return self.tokens[:-1] if self.terminated else list(self.tokens)

    @property
    def terminated(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == self.end_id

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize(seq: PressureSequence, codec: CodecCheckpoint) -> TokenSequence:
    idx, _, _ = quantize(encode(seq, codec), codec.codebook)
    K = codec.config.codebook_size
    return TokenSequence(list(idx) + [K], K, max_len=max(len(idx), 1))


def detokenize(tokens: TokenSequence | Sequence[int], codec: CodecCheckpoint, target_T: int | None = None,
               **meta) -> PressureSequence:
    """Codebook lookup + codec decode. Output has ``l * n`` frames, or ``target_T`` when given."""
    K = codec.config.codebook_size
    toks = list(tokens.tokens if isinstance(tokens, TokenSequence) else tokens)
    for i, t in enumerate(toks):
        if t < 0 or t > K:
            raise TokenError(f"token {t} outside [0, {K}]")
        if t == K and i != len(toks) - 1:
            raise TokenError(f"END at interior position {i}")
    if toks and toks[-1] == K:
        toks = toks[:-1]
    if not toks:
        raise TokenError("no codebook indices to decode")
    vecs = codec.codebook.entries[np.asarray(toks, dtype=np.int64)]
    return decode_latents(vecs, codec, target_T, **meta)


def decode_latents(vecs: np.ndarray, codec: CodecCheckpoint, target_T: int | None = None, **meta) -> PressureSequence:
    l = codec.config.downsample
    n_frames = l * vecs.shape[0]
    seq = decode(LatentSequence(vecs, l, n_frames), codec, **meta)
    if target_T is not None and target_T != n_frames:
        if target_T < 1:
            raise ValueError("target_T must be >= 1")
        seq = seq.with_frames(seq.frames[reflect_indices(n_frames, target_T)] if target_T > n_frames
                              else seq.frames[:target_T])
    return seq


# ---------------------------------------------------------------------------
# model


@dataclass
class GeneratorConfig:
    layers: int = 4
    heads: int = 4
    width: int = 256
    max_len: int = 64
    sampling: str = "greedy"
    top_k: int = 10
    temperature: float = 1.0
    seed: int = 0
    text_dim: int = DEFAULT_DIM
    dropout: float = 0.0
    min_len: int = 1
    lr: float = 5e-4
    steps: int = 2000
    batch_size: int = 32
    grad_clip: float = 1.0
    mode: str = "tokens"

    def validate(self, vocab_size: int | None = None) -> None:
        for name in ("layers", "heads", "width", "max_len", "text_dim", "steps", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"generator.{name}", "must be >= 1")
        if self.width % self.heads:
            raise ConfigError("generator.heads", "width must be divisible by heads")
        if self.sampling not in SAMPLING_MODES:
            raise ConfigError("generator.sampling", f"must be one of {SAMPLING_MODES}")
        if self.temperature <= 0:
            raise ConfigError("generator.temperature", "must be > 0")
        if vocab_size is not None and not 1 <= self.top_k <= vocab_size:
            raise ConfigError("generator.top_k", f"must be in [1, {vocab_size}]")
        if not 0 <= self.min_len <= self.max_len:
            raise ConfigError("generator.min_len", "must be in [0, max_len]")
        if self.mode not in ("tokens", "continuous"):
            raise ConfigError("generator.mode", "must be 'tokens' or 'continuous'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        names = {f.name for f in fields(cls)}
        for k in doc:
            if k not in names:
                raise ConfigError(f"generator.{k}", "unknown generator option")
        cfg = cls(**doc)
        cfg.validate()
        return cfg


class T2PTransformer(nn.Module):
    def __init__(self, cfg: GeneratorConfig, vocab_size: int, latent_dim: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.continuous = cfg.mode == "continuous"
        self.cond = nn.Linear(cfg.text_dim, cfg.width)
        if self.continuous:
            self.inp = nn.Linear(latent_dim, cfg.width)
            self.head = nn.Linear(cfg.width, latent_dim)
        else:
            self.inp = nn.Embedding(vocab_size, cfg.width)
            self.head = nn.Linear(cfg.width, vocab_size)
        self.pos = nn.Parameter(torch.randn(cfg.max_len + 1, cfg.width) * 0.02)
        layer = nn.TransformerEncoderLayer(cfg.width, cfg.heads, 4 * cfg.width, dropout=cfg.dropout,
                                           activation="gelu", batch_first=True, norm_first=True)
        self.blocks = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.width)

    def forward(self, cond: torch.Tensor, inputs: torch.Tensor) -> torch.Tensor:
        """cond (B, text_dim); inputs (B, n) ids or (B, n, D) vectors -> (B, n+1, out)."""
        h = torch.cat([self.cond(cond)[:, None], self.inp(inputs)], dim=1)
        n = h.shape[1]
        if n > self.pos.shape[0]:
            raise TokenError(f"sequence of {n - 1} tokens exceeds max_len {self.cfg.max_len}")
        h = h + self.pos[:n]
        mask = torch.triu(torch.full((n, n), float("-inf")), diagonal=1)
        h = self.blocks(h, mask=mask, is_causal=True)
        return self.head(self.norm(h))


@dataclass
class GeneratorCheckpoint:
    config: GeneratorConfig
    model: T2PTransformer
    codec_hash: str
    vocab_size: int
    provider_id: str = ""
    latent_dim: int = 0
    continuous_len: int = 0
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> str:
        arrays = state_to_arrays(self.model.state_dict(), "model.")
        header = {"config": self.config.to_dict(), "codec_hash": self.codec_hash,
                  "vocab_size": self.vocab_size, "provider_id": self.provider_id,
                  "continuous_len": self.continuous_len, "latent_dim": self.latent_dim}
        return save_container(path, "generator", GENERATOR_FORMAT_VERSION, header, arrays)

    @classmethod
    def load(cls, path: str | Path, codec: CodecCheckpoint | None = None) -> "GeneratorCheckpoint":
        header, arrays, _ = load_container(path, "generator", GENERATOR_FORMAT_VERSION)
        cfg = GeneratorConfig.from_dict(header["config"])
        if codec is not None:
            check_codec(header["codec_hash"], header["vocab_size"], codec)
        model = T2PTransformer(cfg, header["vocab_size"], header["latent_dim"])
        model.load_state_dict(arrays_to_state(arrays, "model."))
        model.eval()
        return cls(cfg, model, header["codec_hash"], header["vocab_size"], header["provider_id"],
                   header["latent_dim"], header["continuous_len"])


def check_codec(codec_hash: str, vocab_size: int, codec: CodecCheckpoint) -> None:
    if vocab_size != codec.config.codebook_size + 1:
        raise CheckpointMismatchError(
            f"generator vocabulary {vocab_size} does not match codec K+1 = {codec.config.codebook_size + 1}")
    actual = codec.content_hash()
    if actual != codec_hash:
        raise CheckpointMismatchError(f"generator was trained against codec {codec_hash[:12]}, "
                                      f"got {actual[:12]}")


def init_generator(cfg: GeneratorConfig, codec: CodecCheckpoint, provider_id: str = "") -> GeneratorCheckpoint:
    vocab = codec.config.codebook_size + 1
    cfg.validate(vocab)
    torch.manual_seed(cfg.seed)
    model = T2PTransformer(cfg, vocab, codec.config.latent_dim)
    model.eval()
    return GeneratorCheckpoint(cfg, model, codec.content_hash(), vocab, provider_id, codec.config.latent_dim)


# ---------------------------------------------------------------------------
# inference


def _cond_tensor(cond) -> torch.Tensor:
    if isinstance(cond, TextEmbedding):
        cond = cond.vector
    return torch.as_tensor(np.asarray(cond, dtype=np.float32)).reshape(1, -1)


@torch.no_grad()
def next_token_logits(prefix: Sequence[int], cond, ckpt: GeneratorCheckpoint) -> np.ndarray:
    """Unnormalised scores over the K+1 vocabulary for the token after ``prefix``."""
    if ckpt.model.continuous:
        raise TypeError("continuous-mode checkpoints have no token vocabulary")
    prefix = [int(t) for t in prefix]
    if len(prefix) >= ckpt.config.max_len:
        raise TokenError(f"prefix length {len(prefix)} must be below max_len {ckpt.config.max_len}")
    end = ckpt.vocab_size - 1
    if any(t < 0 or t >= end for t in prefix):
        raise TokenError(f"prefix tokens must be codebook ids in [0, {end})")
    c = _cond_tensor(cond)
    if c.shape[1] != ckpt.config.text_dim:
        raise GeometryError(f"conditioning width {c.shape[1]} != {ckpt.config.text_dim}")
    x = torch.tensor([prefix], dtype=torch.long).reshape(1, len(prefix))
    return ckpt.model(c, x)[0, -1].numpy().astype(np.float64)


@torch.no_grad()
def generate_batch(conds: np.ndarray, ckpt: GeneratorCheckpoint, cfg: GeneratorConfig | None = None,
                   seeds: Sequence[int] | None = None) -> list[TokenSequence]:
    """Sample one token sequence per conditioning row; every sequence ends in END."""
    cfg = cfg or ckpt.config
    if ckpt.model.continuous:
        raise TypeError("use generate_continuous for continuous-mode checkpoints")
    model = ckpt.model
    conds = torch.as_tensor(np.asarray(conds, dtype=np.float32))
    if conds.ndim == 1:
        conds = conds[None]
    B = conds.shape[0]
    V = ckpt.vocab_size
    end = V - 1
    max_len = min(cfg.max_len, ckpt.config.max_len)
    if cfg.sampling == "top-k" and not 1 <= cfg.top_k <= V:
        raise ConfigError("generator.top_k", f"must be in [1, {V}]")
    seeds = list(seeds) if seeds is not None else [cfg.seed + i for i in range(B)]
    rngs = [np.random.default_rng(s) for s in seeds]

    seqs = torch.zeros((B, 0), dtype=torch.long)
    done = np.zeros(B, dtype=bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for step in range(max_len):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        logits = model(conds[active], seqs[active])[:, -1].double()
        if step < cfg.min_len:
            logits[:, end] = -math.inf
        if cfg.sampling == "greedy":
            nxt = torch.argmax(logits, dim=-1).numpy()
        else:
            k = min(cfg.top_k, V)
            vals, ids = torch.topk(logits / cfg.temperature, k, dim=-1)
            probs = torch.softmax(vals, dim=-1).numpy()
            ids = ids.numpy()
            nxt = np.empty(active.size, dtype=np.int64)
            for j, b in enumerate(active):
                p = probs[j] / probs[j].sum()
                nxt[j] = ids[j, rngs[b].choice(k, p=p)]
        col = torch.full((B, 1), 0, dtype=torch.long)
        col[active, 0] = torch.as_tensor(nxt, dtype=torch.long)
        seqs = torch.cat([seqs, col], dim=1)
        for j, b in enumerate(active):
            t = int(nxt[j])
            out[b].append(t)
            if t == end:
                done[b] = True
    for b in range(B):
        if not out[b] or out[b][-1] != end:
            out[b].append(end)  # forced termination at max_len
    return [TokenSequence(o, end, max_len) for o in out]


def generate(cond, cfg: GeneratorConfig | None, ckpt: GeneratorCheckpoint) -> TokenSequence:
    c = cond.vector if isinstance(cond, TextEmbedding) else cond
    cfg = cfg or ckpt.config
    return generate_batch(np.asarray(c)[None], ckpt, cfg, seeds=[cfg.seed])[0]


@torch.no_grad()
def generate_continuous(conds: np.ndarray, ckpt: GeneratorCheckpoint) -> list[np.ndarray]:
    """Greedy regression of ``continuous_len`` latent vectors per conditioning row."""
    if not ckpt.model.continuous:
        raise TypeError("checkpoint is not in continuous mode")
    conds = torch.as_tensor(np.asarray(conds, dtype=np.float32))
    if conds.ndim == 1:
        conds = conds[None]
    D = ckpt.model.head.out_features
    seqs = torch.zeros((conds.shape[0], 0, D))
    for _ in range(ckpt.continuous_len):
        nxt = ckpt.model(conds, seqs)[:, -1:]
        seqs = torch.cat([seqs, nxt], dim=1)
    return [s.numpy().astype(np.float64) for s in seqs]


def text_to_pressure(texts: Sequence[str], gen: GeneratorCheckpoint, codec: CodecCheckpoint, provider=None,
                     cfg: GeneratorConfig | None = None, target_T: int | None = None,
                     seeds: Sequence[int] | None = None) -> list[PressureSequence]:
    """Full pipeline: embed -> generate -> decode."""
    provider = provider or HashingEmbedder(gen.config.text_dim)
    conds = np.stack([embed(t, provider).vector for t in texts])
    out = []
    if gen.model.continuous:
        for t, v in zip(texts, generate_continuous(conds, gen)):
            out.append(decode_latents(v, codec, target_T, description=t))
    else:
        for t, toks in zip(texts, generate_batch(conds, gen, cfg, seeds)):
            out.append(detokenize(toks, codec, target_T, description=t))
    return out


# ---------------------------------------------------------------------------
# training


def train_generator(pairs: Sequence[tuple[str, PressureSequence]], codec: CodecCheckpoint, cfg: GeneratorConfig,
                    provider=None, on_step=None) -> GeneratorCheckpoint:
    """Teacher-forced next-token cross-entropy (or latent MSE in continuous mode).

    The codec is only read: its parameters and codebook are never touched.
    """
    if not pairs:
        raise ValueError("no training pairs")
    provider = provider or HashingEmbedder(cfg.text_dim)
    if provider.dim != cfg.text_dim:
        raise ConfigError("generator.text_dim", f"provider dimension {provider.dim} != {cfg.text_dim}")
    ckpt = init_generator(cfg, codec, provider.provider_id)
    model = ckpt.model
    K = codec.config.codebook_size
    conds = torch.as_tensor(np.stack([embed(text, provider).vector for text, _ in pairs]))

    if cfg.mode == "tokens":
        seqs = [tokenize(s, codec).tokens for _, s in pairs]
        longest = max(len(s) for s in seqs) - 1
        if longest > cfg.max_len:
            raise ConfigError("generator.max_len", f"targets have {longest} indices, above max_len {cfg.max_len}")
        n = longest + 1
        targets = torch.full((len(seqs), n), -100, dtype=torch.long)
        inputs = torch.zeros((len(seqs), n - 1), dtype=torch.long)
        for i, s in enumerate(seqs):
            targets[i, : len(s)] = torch.tensor(s)
            inputs[i, : len(s) - 1] = torch.tensor(s[:-1])
    else:
        lats = [encode(s, codec).vectors for _, s in pairs]
        n = min(len(v) for v in lats)
        if n > cfg.max_len:
            raise ConfigError("generator.max_len", f"targets have {n} vectors, above max_len {cfg.max_len}")
        feats = torch.as_tensor(np.stack([v[:n] for v in lats]).astype(np.float32))
        ckpt.continuous_len = n

    rng = np.random.default_rng(cfg.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=0.0)
    model.train()
    history = []
    for step in range(cfg.steps):
        ids = rng.choice(len(pairs), size=min(cfg.batch_size, len(pairs)), replace=False)
        ids_t = torch.as_tensor(ids)
        if cfg.mode == "tokens":
            logits = model(conds[ids_t], inputs[ids_t])
            loss_ = F.cross_entropy(logits.reshape(-1, K + 1), targets[ids_t].reshape(-1), ignore_index=-100)
        else:
            f = feats[ids_t]
            pred = model(conds[ids_t], f[:, :-1])
            loss_ = F.mse_loss(pred, f)
        if not torch.isfinite(loss_):
            raise NonFiniteLossError(f"non-finite generator loss at step {step}")
        opt.zero_grad()
        loss_.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        rec = {"step": step, "loss": float(loss_.item())}
        history.append(rec)
        if on_step is not None:
            on_step(rec)
    model.eval()
    ckpt.history = history
    return ckpt
