"""Image-fidelity metrics, the replay attack and a score-threshold membership attack."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .embeddings import cosine
from .errors import (
    DimensionMismatch,
    EmptyGallery,
    EmptyScoreList,
    ImageTooSmall,
    UnknownIdentity,
)
from .textkit import tokenize

SSIM_WINDOW = 8
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


@dataclass(frozen=True)
class GrayImage:
    width: int
    height: int
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.shape != (self.height, self.width):
            raise DimensionMismatch(f"pixel array {px.shape} != ({self.height}, {self.width})")
        if px.size and (px.min() < 0 or px.max() > 255):
            raise ValueError("pixel intensities must lie in [0, 255]")
        object.__setattr__(self, "pixels", px.astype(np.uint8))

    @classmethod
    def from_array(cls, arr) -> "GrayImage":
        arr = np.asarray(arr)
        return cls(arr.shape[1], arr.shape[0], arr)


def read_pgm(path) -> GrayImage:
    """Binary PGM (P5) reader, maxval 255."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    pos += 1
    body = np.frombuffer(data[pos:pos + width * height], dtype=np.uint8)
    if body.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return GrayImage(width, height, body.reshape(height, width))


def write_pgm(path, image: GrayImage) -> None:
    header = f"P5\n{image.width} {image.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.pixels.tobytes())


def _pair(a: GrayImage, b: GrayImage):
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"{a.width}x{a.height} vs {b.width}x{b.height}")
    return a.pixels.astype(np.float64), b.pixels.astype(np.float64)


def mse(a: GrayImage, b: GrayImage) -> float:
    x, y = _pair(a, b)
    return float(np.mean((x - y) ** 2))


def psnr(a: GrayImage, b: GrayImage) -> float:
    """PSNR in dB; ``math.inf`` for identical images."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / err)


def ssim(a: GrayImage, b: GrayImage, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all window x window uniform windows at stride 1 (population moments)."""
    x, y = _pair(a, b)
    if min(x.shape) < window:
        raise ImageTooSmall(f"images must be at least {window}x{window}")
    wx = np.lib.stride_tricks.sliding_window_view(x, (window, window))
    wy = np.lib.stride_tricks.sliding_window_view(y, (window, window))
    mx = wx.mean(axis=(-2, -1))
    my = wy.mean(axis=(-2, -1))
    dx = wx - mx[..., None, None]
    dy = wy - my[..., None, None]
    vx = (dx * dx).mean(axis=(-2, -1))
    vy = (dy * dy).mean(axis=(-2, -1))
    cxy = (dx * dy).mean(axis=(-2, -1))
    num = (2 * mx * my + C1) * (2 * cxy + C2)
    den = (mx * mx + my * my + C1) * (vx + vy + C2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------- replay attack

@dataclass
class Gallery:
    identities: List[str]
    embeddings: np.ndarray  # (n, d)

    def __len__(self) -> int:
        return len(self.identities)


def build_gallery(scenes, provider) -> Gallery:
    """One entry per identity: the embedding of all its reference text."""
    texts: Dict[str, list] = {}
    for s in scenes:
        texts.setdefault(s.identity_id, []).extend(tokenize(s.reference_text))
    ids = list(texts)
    if not ids:
        raise EmptyGallery("no identities to build a gallery from")
    return Gallery(ids, np.stack([provider.embed_seq(tuple(texts[i])) for i in ids]))


def srra(probes: Sequence[Tuple[str, str, Sequence[str]]], gallery: Gallery, provider) -> float:
    """Fraction of probes whose top-1 gallery match (ties: lowest index) is their identity."""
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    known = set(gallery.identities)
    if not probes:
        return 0.0
    hits = 0
    for scene_id, identity, text in probes:
        if identity not in known:
            raise UnknownIdentity(f"probe {scene_id}: identity {identity!r} not in gallery")
        v = provider.embed_seq(tuple(text))
        sims = [cosine(v, g) for g in gallery.embeddings]
        hits += gallery.identities[int(np.argmax(sims))] == identity
    return hits / len(probes)


# ---------------------------------------------------------------- membership inference

@dataclass(frozen=True)
class MIAResult:
    accuracy: float
    precision: float
    auc: float
    risk_score: float
    threshold: float


def _auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Mann-Whitney estimate of P(member score > non-member score), ties count one half."""
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (len(pos) * len(neg)))


def mia_attack(member_scores: Sequence[float], nonmember_scores: Sequence[float]) -> MIAResult:
    """Best balanced-accuracy threshold attack: predict member when score > threshold."""
    pos = np.asarray(member_scores, dtype=np.float64)
    neg = np.asarray(nonmember_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise EmptyScoreList("both score lists must be non-empty")
    values = np.unique(np.concatenate([pos, neg]))
    thresholds = np.concatenate([[-math.inf], (values[:-1] + values[1:]) / 2, [math.inf]])
    best = None
    for t in thresholds:
        tp = int((pos > t).sum())
        fp = int((neg > t).sum())
        bal = 0.5 * (tp / pos.size + (neg.size - fp) / neg.size)
        if best is None or bal > best[0]:
            best = (bal, t, tp / (tp + fp) if tp + fp else 0.0)
    auc = _auc(pos, neg)
    return MIAResult(best[0], best[2], auc, auc, float(best[1]))


@dataclass
class AttackReport:
    srra: Optional[float] = None
    mia: Dict[str, MIAResult] = field(default_factory=dict)

    def rows(self) -> List[Tuple[str, str, str]]:
        out = []
        if self.srra is not None:
            out.append(("srra", "replay", repr(float(self.srra))))
        for setting, r in self.mia.items():
            for name in ("accuracy", "precision", "auc", "risk_score", "threshold"):
                v = getattr(r, name)
                out.append((name, setting, "inf" if v == math.inf else "-inf" if v == -math.inf
                            else repr(float(v))))
        return out


def mia_scores(scenes, policy_params, gate_params, config, provider=None,
               backend=None) -> Dict[str, List[float]]:
    """Black-box (greedy terminal reward) and white-box (mean greedy log-prob) scores."""
    from .rlopt.reinforce import run_episodes, scene_bundle

    if not scenes:
        return {"black_box": [], "white_box": []}
    bundles = [scene_bundle(s, gate_params, backend) for s in scenes]
    traces = run_episodes(bundles, [tokenize(s.reference_text) for s in scenes], policy_params,
                          config, "greedy", provider=provider)
    return {"black_box": [t.reward.total for t in traces],
            "white_box": [float(np.mean(t.log_probs)) for t in traces]}
