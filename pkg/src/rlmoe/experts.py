"""The four scene experts, prompt retrieval and aggregation into W_MoE.

Experts are backends rather than models: :class:`CannedBackend` reads the
per-expert text shipped in each scene record, :class:`RemoteBackend` asks an
HTTP service.
"""
from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embeddings import EmbeddingProvider, cosine
from .errors import (
    AlphaNotNormalized,
    EmptyPromptStore,
    MalformedRecord,
    MalformedRemoteResponse,
    MissingExpertText,
    RemoteExpertUnavailable,
)
from .scene import SceneRecord
from .textkit import TokenSeq, tokenize
from .transport import TransportError, post_json


class ExpertKind(enum.Enum):
    TRAFFIC = "traffic"
    SIGNS = "signs"
    PEDESTRIAN = "pedestrian"
    ENVIRONMENT = "environment"


EXPERTS: Tuple[ExpertKind, ...] = tuple(ExpertKind)


@dataclass(frozen=True)
class PromptEntry:
    expert: ExpertKind
    id: str
    text: str
    embedding: np.ndarray


class PromptStore:
    """Read-only prompt list with cached embeddings and a feature projection."""

    def __init__(self, entries: Sequence[PromptEntry], provider: EmbeddingProvider,
                 feature_dim: int, projection_seed: int = 0):
        self.entries = list(entries)
        self.provider = provider
        rng = np.random.default_rng(projection_seed)
        self.projection = rng.standard_normal((feature_dim, provider.dim))

    @classmethod
    def from_lines(cls, lines, provider, feature_dim, projection_seed=0):
        entries = []
        for lineno, line in enumerate(lines, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t", 2)
            if len(parts) != 3:
                raise MalformedRecord(lineno, "expected expert<TAB>id<TAB>prompt")
            try:
                kind = ExpertKind(parts[0].strip().lower())
            except ValueError:
                raise MalformedRecord(lineno, f"unknown expert {parts[0]!r}") from None
            text = parts[2].strip()
            entries.append(PromptEntry(kind, parts[1].strip(), text,
                                       provider.embed_seq(tokenize(text))))
        return cls(entries, provider, feature_dim, projection_seed)

    @classmethod
    def load(cls, path, provider, feature_dim, projection_seed=0):
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh, provider, feature_dim, projection_seed)

    def project(self, features) -> np.ndarray:
        v = np.asarray(features, dtype=np.float64) @ self.projection
        n = np.linalg.norm(v)
        return v / n if n > 0 else v


def select_prompts(scene_features, store: PromptStore, expert: ExpertKind,
                   k: int) -> List[PromptEntry]:
    """Top-k prompts for ``expert`` by cosine to the projected scene features."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pool = [e for e in store.entries if e.expert == expert]
    if not pool:
        raise EmptyPromptStore(f"no prompts for expert {expert.value}")
    query = store.project(scene_features)
    ranked = sorted(pool, key=lambda e: (-cosine(query, e.embedding), e.id))
    return ranked[:k]


class CannedBackend:
    def describe(self, expert: ExpertKind, scene: SceneRecord,
                 prompts: Sequence[PromptEntry]) -> str:
        try:
            return scene.expert_texts[expert.value]
        except KeyError:
            raise MissingExpertText(
                f"scene {scene.scene_id} has no {expert.value} text") from None


class RemoteBackend:
    """POSTs to ``<url>/describe`` and expects ``{"text": ...}`` back."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url.rstrip("/") + "/describe"
        self.timeout = timeout

    def describe(self, expert, scene, prompts):
        payload = {
            "expert": expert.value,
            "prompts": [p.text for p in prompts],
            "features": [float(x) for x in scene.features],
            "scene_id": scene.scene_id,
        }
        try:
            resp = post_json(self.url, payload, timeout=self.timeout)
        except TransportError as exc:
            raise RemoteExpertUnavailable(str(exc)) from exc
        except ValueError as exc:
            raise MalformedRemoteResponse(str(exc)) from exc
        if not isinstance(resp, dict) or not isinstance(resp.get("text"), str):
            raise MalformedRemoteResponse(f"expected {{'text': str}}, got {resp!r}")
        return resp["text"]


def query_expert(expert: ExpertKind, scene: SceneRecord,
                 prompts: Sequence[PromptEntry], backend) -> TokenSeq:
    return tokenize(backend.describe(expert, scene, prompts))


@dataclass(frozen=True)
class ExpertBundle:
    scene_id: str
    texts: Dict[ExpertKind, TokenSeq]
    alpha: Tuple[float, float, float, float]
    aggregated: TokenSeq

    def text_list(self) -> List[TokenSeq]:
        return [self.texts[k] for k in EXPERTS]


def _check_alpha(alpha) -> Tuple[float, ...]:
    alpha = tuple(float(a) for a in alpha)
    if len(alpha) != len(EXPERTS) or min(alpha) < 0 or abs(sum(alpha) - 1.0) > 1e-9:
        raise AlphaNotNormalized(f"invalid expert weights {alpha!r}")
    return alpha


def aggregate(texts: Dict[ExpertKind, TokenSeq], alpha) -> TokenSeq:
    """Concatenate expert texts by descending weight, ties in declaration order."""
    order = sorted(range(len(EXPERTS)), key=lambda i: (-float(alpha[i]), i))
    out: Tuple[str, ...] = ()
    for i in order:
        out += tuple(texts[EXPERTS[i]])
    return out


def gather_bundle(scene: SceneRecord, alpha, backend=None,
                  store: Optional[PromptStore] = None, k: int = 3) -> ExpertBundle:
    """Query all four experts; any failure aborts the whole bundle."""
    alpha = _check_alpha(alpha)
    backend = backend or CannedBackend()

    def run(kind):
        prompts = select_prompts(scene.features, store, kind, k) if store else []
        return query_expert(kind, scene, prompts, backend)

    if isinstance(backend, RemoteBackend):
        with ThreadPoolExecutor(max_workers=len(EXPERTS)) as pool:
            results = list(pool.map(run, EXPERTS))
    else:
        results = [run(kind) for kind in EXPERTS]
    texts = dict(zip(EXPERTS, results))
    return ExpertBundle(scene.scene_id, texts, alpha, aggregate(texts, alpha))
