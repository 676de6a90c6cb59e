"""Tokenization, n-grams, LCS and the edit-operation algebra.

Token sequences are plain tuples of lowercase strings so they are hashable
and can never be mutated behind a caller's back.
"""
from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

from .errors import IndexOutOfRange

TokenSeq = Tuple[str, ...]


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(word: str) -> str:
    start, end = 0, len(word)
    while start < end and _is_punct(word[start]):
        start += 1
    while end > start and _is_punct(word[end - 1]):
        end -= 1
    return word[start:end]


def tokenize(raw: str) -> TokenSeq:
    """Lowercase, split on whitespace and strip edge punctuation.

    >>> tokenize("Stop-sign at 5th Ave!")
    ('stop-sign', 'at', '5th', 'ave')
    """
    out = []
    for word in raw.lower().split():
        word = _strip_punct(word)
        if word:
            out.append(word)
    return tuple(out)


def detokenize(seq: Sequence[str]) -> str:
    return " ".join(seq)


@dataclass(frozen=True)
class Insert:
    pos: int
    word: str


@dataclass(frozen=True)
class Delete:
    pos: int


@dataclass(frozen=True)
class Substitute:
    pos: int
    word: str


@dataclass(frozen=True)
class Reorder:
    i: int
    j: int


@dataclass(frozen=True)
class Stop:
    pass


EditOp = Union[Insert, Delete, Substitute, Reorder, Stop]

# op-type order used by the policy's op head
OP_TYPES = (Stop, Delete, Reorder, Insert, Substitute)


def _check(pos: int, n: int, what: str) -> None:
    if not 0 <= pos < n:
        raise IndexOutOfRange(f"{what} index {pos} outside sequence of length {n}")


def apply_edit(seq: Sequence[str], op: EditOp) -> TokenSeq:
    """Return a new sequence with ``op`` applied; ``seq`` is left untouched."""
    seq = tuple(seq)
    n = len(seq)
    if isinstance(op, Stop):
        return seq
    if isinstance(op, Insert):
        if not 0 <= op.pos <= n:
            raise IndexOutOfRange(f"Insert index {op.pos} outside [0, {n}]")
        return seq[: op.pos] + (op.word,) + seq[op.pos:]
    if isinstance(op, Delete):
        _check(op.pos, n, "Delete")
        return seq[: op.pos] + seq[op.pos + 1:]
    if isinstance(op, Substitute):
        _check(op.pos, n, "Substitute")
        return seq[: op.pos] + (op.word,) + seq[op.pos + 1:]
    if isinstance(op, Reorder):
        _check(op.i, n, "Reorder")
        _check(op.j, n, "Reorder")
        if op.i == op.j:
            raise IndexOutOfRange("Reorder requires two distinct positions")
        out = list(seq)
        out[op.i], out[op.j] = out[op.j], out[op.i]
        return tuple(out)
    raise TypeError(f"not an edit op: {op!r}")


def ngrams(seq: Sequence[str], n: int) -> Counter:
    if n < 1:
        raise ValueError("n must be >= 1")
    seq = tuple(seq)
    return Counter(seq[i:i + n] for i in range(len(seq) - n + 1))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]
