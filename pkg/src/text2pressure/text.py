"""Text embeddings for conditioning.

``HashingEmbedder`` is the hermetic default: a signed feature-hashing bag
of word n-grams and character trigrams, L2-normalised. ``RemoteEmbedder``
posts text to an HTTP embedding service and caches answers on disk, keyed
by a content hash of the text.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import socket
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DIM = 512


class EmbeddingError(RuntimeError):
    """Base class for provider failures; callers may fall back on these."""


class EmbeddingTimeout(EmbeddingError):
    pass


class EmbeddingUnreachable(EmbeddingError):
    pass


class EmbeddingMalformed(EmbeddingError):
    pass


@dataclass
class TextEmbedding:
    vector: np.ndarray  # float32, unit norm
    provider_id: str
    source_text_hash: str


def canonical_text(text: str) -> str:
    return " ".join(text.lower().split())


def text_hash(text: str) -> str:
    return hashlib.sha256(canonical_text(text).encode("utf-8")).hexdigest()


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise EmbeddingMalformed("embedding has zero or non-finite norm")
    return (v / n).astype(np.float32)


class HashingEmbedder:
    name = "hash-ngram"
    deterministic = True

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0, ngram: int = 2):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self.ngram = ngram

    @property
    def provider_id(self) -> str:
        return f"{self.name}-d{self.dim}-s{self.seed}"

    def _features(self, text: str) -> list[str]:
        words = re.findall(r"[a-z0-9']+", canonical_text(text))
        feats = []
        for n in range(1, self.ngram + 1):
            feats += ["w:" + " ".join(words[i:i + n]) for i in range(len(words) - n + 1)]
        padded = f" {' '.join(words)} "
        feats += ["c:" + padded[i:i + 3] for i in range(len(padded) - 2)]
        return feats

    def vector(self, text: str) -> np.ndarray:
        v = np.zeros(self.dim, dtype=np.float64)
        salt = str(self.seed).encode()
        for f in self._features(text):
            h = hashlib.blake2b(f.encode("utf-8"), digest_size=8, key=salt).digest()
            slot = int.from_bytes(h[:4], "little") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            weight = 1.0 if f.startswith("w:") else 0.5
            v[slot] += sign * weight
        return _unit(v)


class RemoteEmbedder:
    """POST ``{"text": ...}`` to ``url``; expects ``{"embedding": [floats]}``."""

    deterministic = True
    name = "remote"

    def __init__(self, url: str | None = None, dim: int = DEFAULT_DIM, timeout: float = 10.0,
                 api_key: str | None = None):
        self.url = url or os.environ.get("TEXT2PRESSURE_EMBED_URL", "")
        self.api_key = api_key if api_key is not None else os.environ.get("TEXT2PRESSURE_EMBED_KEY")
        self.dim = dim
        self.timeout = timeout
        if not self.url:
            raise ValueError("remote embedder needs a URL (TEXT2PRESSURE_EMBED_URL)")

    @property
    def provider_id(self) -> str:
        return f"remote-d{self.dim}-" + hashlib.sha256(self.url.encode()).hexdigest()[:12]

    def vector(self, text: str) -> np.ndarray:
        body = json.dumps({"text": text}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise EmbeddingTimeout(f"embedding service timed out after {self.timeout}s") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise EmbeddingTimeout(f"embedding service timed out after {self.timeout}s") from exc
            raise EmbeddingUnreachable(f"embedding service unreachable: {exc.reason}") from exc
        except OSError as exc:
            raise EmbeddingUnreachable(f"embedding service unreachable: {exc}") from exc
        try:
            doc = json.loads(raw)
            vec = np.asarray(doc["embedding"], dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise EmbeddingMalformed("response lacks a numeric 'embedding' list") from exc
        if vec.shape != (self.dim,) or not np.all(np.isfinite(vec)):
            raise EmbeddingMalformed(f"expected {self.dim} finite floats, got shape {vec.shape}")
        return _unit(vec)


class EmbeddingCache:
    """Write-once files of little-endian float32, one per text hash."""

    def __init__(self, root: str | os.PathLike, dim: int):
        self.root = Path(root)
        self.dim = dim

    @classmethod
    def for_provider(cls, root: str | os.PathLike, provider) -> "EmbeddingCache":
        return cls(Path(root) / provider.provider_id, provider.dim)

    def path(self, key: str) -> Path:
        return self.root / f"{key}.f32"

    def lookup(self, key: str) -> np.ndarray | None:
        p = self.path(key)
        if not p.exists():
            return None
        try:
            raw = p.read_bytes()
            if len(raw) != 4 * self.dim:
                raise ValueError(f"expected {4 * self.dim} bytes, found {len(raw)}")
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float32)
            if not np.all(np.isfinite(vec)):
                raise ValueError("non-finite values")
        except (OSError, ValueError) as exc:
            log.warning("ignoring corrupted embedding cache entry %s: %s", p, exc)
            return None
        return vec

    def store(self, key: str, vec: np.ndarray) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.path(key)
        tmp = p.with_name(f"{p.name}.{os.getpid()}.tmp")
        tmp.write_bytes(np.asarray(vec, dtype="<f4").tobytes())
        os.replace(tmp, p)


def cache_lookup(cache: EmbeddingCache, key: str, provider_id: str = "") -> TextEmbedding | None:
    vec = cache.lookup(key)
    return None if vec is None else TextEmbedding(vec, provider_id, key)


def embed(text: str, provider=None, cache: EmbeddingCache | None = None) -> TextEmbedding:
    if not text or not text.strip():
        raise ValueError("cannot embed empty text")
    provider = provider if provider is not None else HashingEmbedder()
    key = text_hash(text)
    if cache is not None:
        hit = cache_lookup(cache, key, provider.provider_id)
        if hit is not None:
            return hit
    vec = provider.vector(text)
    if cache is not None:
        cache.store(key, vec)
    return TextEmbedding(vec, provider.provider_id, key)


def embed_with_fallback(text: str, provider, fallback=None, cache: EmbeddingCache | None = None) -> TextEmbedding:
    """Try ``provider``; on any provider error use ``fallback`` (hashing by default)."""
    try:
        return embed(text, provider, cache)
    except EmbeddingError as exc:
        log.warning("embedding provider %s failed (%s); using fallback", provider.provider_id, exc)
        return embed(text, fallback or HashingEmbedder(provider.dim))


class CachedEmbedder:
    """Wraps a provider so every ``vector`` call goes through an on-disk cache."""

    def __init__(self, provider, cache_root: str | os.PathLike):
        self.provider = provider
        self.cache = EmbeddingCache.for_provider(cache_root, provider)

    @property
    def provider_id(self) -> str:
        return self.provider.provider_id

    @property
    def dim(self) -> int:
        return self.provider.dim

    def vector(self, text: str) -> np.ndarray:
        return embed(text, self.provider, self.cache).vector


def make_provider(spec: dict | None):
    spec = dict(spec or {})
    kind = spec.pop("provider", "hash")
    if kind == "hash":
        return HashingEmbedder(dim=spec.get("dim", DEFAULT_DIM), seed=spec.get("seed", 0))
    if kind == "remote":
        return RemoteEmbedder(url=spec.get("url"), dim=spec.get("dim", DEFAULT_DIM),
                              timeout=spec.get("timeout", 10.0))
    raise ValueError(f"unknown embedding provider {kind!r}")
