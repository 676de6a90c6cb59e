"""Deterministic text embeddings used as the similarity oracle.

The default :class:`HashedProjection` derives each token vector from a
SHAKE-256 stream keyed on ``(seed, token)``, so vectors are identical across
runs, platforms and numpy versions.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, ExternalProviderUnavailable, ProviderDimensionMismatch
from .transport import TransportError, post_json


@lru_cache(maxsize=200_000)
def _hashed_vector(seed: int, dim: int, token: str) -> np.ndarray:
    key = seed.to_bytes(8, "little", signed=False) + b"\x00" + token.encode("utf-8")
    raw = np.frombuffer(hashlib.shake_256(key).digest(8 * dim), dtype="<u8")
    vec = raw.astype(np.float64) / 2.0**63 - 1.0
    vec /= np.linalg.norm(vec)
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True)
class HashedProjection:
    seed: int = 0
    dim: int = 64

    def embed_token(self, token: str) -> np.ndarray:
        return _hashed_vector(self.seed & 0xFFFFFFFFFFFFFFFF, self.dim, token)

    def token_matrix(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.embed_token(t) for t in tokens])

    def embed_seq(self, seq: Sequence[str]) -> np.ndarray:
        if len(seq) == 0:
            return np.zeros(self.dim)
        return _normalize(self.token_matrix(seq).mean(axis=0))


@dataclass(frozen=True)
class ExternalProvider:
    """Embeddings served over HTTP: ``{"texts": [...]}`` -> ``{"vectors": [...]}``."""

    url: str
    dim: int = 64
    timeout: float = 10.0
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def _fetch(self, text: str) -> np.ndarray:
        if text in self._cache:
            return self._cache[text]
        try:
            resp = post_json(self.url, {"texts": [text]}, timeout=self.timeout)
        except (TransportError, ValueError) as exc:
            raise ExternalProviderUnavailable(str(exc)) from exc
        try:
            vec = np.asarray(resp["vectors"][0], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ExternalProviderUnavailable(f"malformed provider response: {exc}") from exc
        if vec.shape != (self.dim,):
            raise ProviderDimensionMismatch(
                f"provider returned {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise ExternalProviderUnavailable("provider returned non-finite values")
        vec = _normalize(vec)
        vec.setflags(write=False)
        self._cache[text] = vec
        return vec

    def embed_token(self, token: str) -> np.ndarray:
        return self._fetch(token)

    def token_matrix(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.embed_token(t) for t in tokens])

    def embed_seq(self, seq: Sequence[str]) -> np.ndarray:
        if len(seq) == 0:
            return np.zeros(self.dim)
        return self._fetch(" ".join(seq))


EmbeddingProvider = HashedProjection | ExternalProvider


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


def embed_token(provider: EmbeddingProvider, token: str) -> np.ndarray:
    return provider.embed_token(token)


def embed_seq(provider: EmbeddingProvider, seq: Sequence[str]) -> np.ndarray:
    return provider.embed_seq(tuple(seq))


def cosine(u, v) -> float:
    """Cosine similarity; 0.0 when either vector has zero norm."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"cannot compare {u.shape} with {v.shape}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(u @ v) / (nu * nv)
    return max(-1.0, min(1.0, c))
