"""Synthetic scene generators used by the demo, tests and acceptance runs."""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from ..experts import EXPERTS
from ..scene import SceneRecord

CONVERGENCE_REFERENCE = "dense traffic queues behind stalled truck near bridge"

# pronounceable filler words so every scene can get its own vocabulary
_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr"]
_NUCLEI = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "n", "r", "s", "l", "k", "m"]


def word_pool(n: int, seed: int = 0) -> List[str]:
    rng = np.random.default_rng(seed)
    seen, out = set(), []
    while len(out) < n:
        w = "".join(
            rng.choice(_ONSETS) + rng.choice(_NUCLEI) + rng.choice(_CODAS)
            for _ in range(int(rng.integers(2, 4)))
        )
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def _fragments(ref: Sequence[str], rng: np.random.Generator) -> List[List[str]]:
    """Four overlapping windows of 3-5 tokens spanning the reference left to right."""
    n = len(ref)
    frags = []
    anchors = np.linspace(0, n, len(EXPERTS) + 1)
    for m in range(len(EXPERTS)):
        length = int(rng.integers(3, 6))
        centre = (anchors[m] + anchors[m + 1]) / 2
        start = int(round(centre - length / 2 + rng.integers(-1, 2)))
        start = min(max(start, 0), n - length)
        frags.append(list(ref[start:start + length]))
    return frags


def _record(idx: int, ref: Sequence[str], frags, split: str, identity: str,
            rng: np.random.Generator, d_in: int, prefix: str) -> SceneRecord:
    features = tuple(float(x) for x in rng.standard_normal(d_in))
    return SceneRecord(
        scene_id=f"{prefix}{idx:04d}",
        identity_id=identity,
        split=split,
        features=features,
        expert_texts={k.value: " ".join(f) for k, f in zip(EXPERTS, frags)},
        reference_text=" ".join(ref),
    )


def convergence_scenes(n: int = 8, seed: int = 42, d_in: int = 128,
                       reference: str = CONVERGENCE_REFERENCE, split: str = "train"
                       ) -> List[SceneRecord]:
    """Scenes sharing one reference; experts hold overlapping fragments of it."""
    rng = np.random.default_rng(seed)
    ref = reference.split()
    return [_record(i, ref, _fragments(ref, rng), split, f"id{i:04d}", rng, d_in, "conv")
            for i in range(n)]


def private_scenes(n: int, split: str, seed: int = 0, d_in: int = 128, ref_len: int = 8,
                   n_distractors: int = 0, pool: Optional[List[str]] = None,
                   prefix: Optional[str] = None) -> List[SceneRecord]:
    """Scenes whose references use words no other scene shares.

    Expert fragments are overlapping windows of the reference, as in
    :func:`convergence_scenes`; ``n_distractors`` extra off-reference words
    may be dropped into each fragment.
    """
    rng = np.random.default_rng(seed)
    pool = pool or word_pool(n * (ref_len + n_distractors * 4) + 64, seed=seed + 1)
    order = rng.permutation(len(pool))
    cursor = 0
    out = []
    for i in range(n):
        ref = [pool[j] for j in order[cursor:cursor + ref_len]]
        cursor += ref_len
        frags = _fragments(ref, rng)
        for f in frags:
            for _ in range(n_distractors):
                f.insert(int(rng.integers(0, len(f) + 1)), pool[order[cursor]])
                cursor += 1
        out.append(_record(i, ref, frags, split, f"{split}-{i:04d}", rng, d_in,
                           prefix or f"{split}-"))
    return out


def demo_dataset(n: int = 8, seed: int = 0, d_in: int = 128) -> List[SceneRecord]:
    """All four splits, ``n`` scenes each, every scene with its own vocabulary."""
    out: List[SceneRecord] = []
    for offset, split in enumerate(("train", "eval", "member", "nonmember")):
        out += private_scenes(n, split, seed=seed * 10 + offset, d_in=d_in)
    return out
