"""States, the enumerated action set and the terminal reward of the edit MDP."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..experts import ExpertBundle
from ..metrics import (
    RewardBreakdown,
    composite_reward,
    conciseness_score,
    coverage_score,
    relevance_score,
)
from ..textkit import Delete, EditOp, Insert, Reorder, Stop, Substitute, TokenSeq
from .config import TrainerConfig

STOP, DELETE, REORDER, INSERT, SUBSTITUTE = range(5)


@dataclass(frozen=True)
class MDPState:
    current: TokenSeq
    bundle: ExpertBundle
    reference: TokenSeq
    step: int = 1


def initial_state(bundle: ExpertBundle, reference: Sequence[str], l_max: int = 128) -> MDPState:
    return MDPState(tuple(bundle.aggregated[:l_max]), bundle, tuple(reference), 1)


def candidate_words(current: Sequence[str], source: Sequence[str], k: int, provider) -> Tuple[str, ...]:
    """Distinct ``source`` tokens ranked by cosine to the current text (ties: lexicographic)."""
    vocab = sorted(set(source))
    if not vocab:
        return ()
    query = provider.embed_seq(tuple(current))
    sims = provider.token_matrix(vocab) @ query
    order = sorted(range(len(vocab)), key=lambda i: (-sims[i], vocab[i]))
    return tuple(vocab[i] for i in order[:k])


@dataclass(frozen=True)
class ActionSpace:
    """Ordered candidate actions for one state, materialised lazily.

    Layout: Stop | Delete(p) | Reorder(p, p+1) | Insert(p, w) | Substitute(p, w),
    with positions outer and words inner in the last two blocks.
    """

    length: int
    words: Tuple[str, ...]
    allow_insert: bool = True

    @property
    def sizes(self) -> Tuple[int, int, int, int, int]:
        n, k = self.length, len(self.words)
        return (
            1,
            n,
            max(0, n - 1),
            (n + 1) * k if self.allow_insert else 0,
            n * k,
        )

    @property
    def available_ops(self) -> Tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sizes) if s > 0)

    def __len__(self) -> int:
        return sum(self.sizes)

    def __getitem__(self, idx: int) -> EditOp:
        if idx < 0:
            idx += len(self)
        k = len(self.words)
        for op, size in enumerate(self.sizes):
            if idx < size:
                break
            idx -= size
        else:
            raise IndexError("action index out of range")
        if op == STOP:
            return Stop()
        if op == DELETE:
            return Delete(idx)
        if op == REORDER:
            return Reorder(idx, idx + 1)
        pos, w = divmod(idx, k)
        return Insert(pos, self.words[w]) if op == INSERT else Substitute(pos, self.words[w])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def op_type(self, idx: int) -> int:
        for op, size in enumerate(self.sizes):
            if idx < size:
                return op
            idx -= size
        raise IndexError("action index out of range")


def action_space(state: MDPState, k: int, provider, l_max: int = 128) -> ActionSpace:
    words = candidate_words(state.current, state.bundle.aggregated, k, provider)
    return ActionSpace(len(state.current), words, len(state.current) < l_max)


def candidate_actions(state: MDPState, k: int, provider, l_max: int = 128) -> List[EditOp]:
    return list(action_space(state, k, provider, l_max))


def terminal_reward(text: Sequence[str], bundle: ExpertBundle, reference: Sequence[str],
                    config: TrainerConfig, provider) -> RewardBreakdown:
    return composite_reward(
        relevance_score(text, reference, provider),
        conciseness_score(text, config.target_len),
        coverage_score(text, bundle.text_list(), bundle.alpha),
        config.weights,
    )
