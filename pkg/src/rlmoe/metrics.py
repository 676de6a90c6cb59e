"""Text-quality metrics and the three reward components.

All scorers take token tuples produced by :func:`rlmoe.textkit.tokenize`.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .embeddings import cosine
from .errors import (
    AlphaNotNormalized,
    EmptyCorpusStats,
    EmptyReferenceList,
    MissingLexicon,
)
from .textkit import _strip_punct, lcs_length, ngrams, tokenize


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float


def _prf(overlap: float, n_cand: int, n_ref: int) -> PRF:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f)


# ---------------------------------------------------------------- BLEU / ROUGE

def bleu(candidate: Sequence[str], references: Sequence[Sequence[str]],
         max_n: int = 4, smoothing: bool = False) -> float:
    """Sentence BLEU with uniform n-gram weights and closest-reference brevity penalty.

    With ``smoothing`` a zero clipped precision ``0/d`` is replaced by ``1/(d+1)``.
    """
    if not references:
        raise EmptyReferenceList("bleu needs at least one reference")
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in [1, 4]")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand = ngrams(candidate, n)
        max_ref: Counter = Counter()
        for ref in references:
            for g, k in ngrams(ref, n).items():
                if k > max_ref[g]:
                    max_ref[g] = k
        num = sum(min(k, max_ref[g]) for g, k in cand.items())
        den = sum(cand.values())
        if num == 0:
            if not smoothing:
                return 0.0
            num, den = num + 1, den + 1
        log_sum += math.log(num / den)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = min(1.0, math.exp(1.0 - r / c))
    return bp * math.exp(log_sum / max_n)


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> PRF:
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return _prf(overlap, sum(cand.values()), sum(ref.values()))


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> PRF:
    return _prf(lcs_length(candidate, reference), len(candidate), len(reference))


# ---------------------------------------------------------------- CIDEr-D

@dataclass
class CorpusStats:
    """Document frequencies of 1..4-grams; one document per reference set."""

    doc_count: int = 0
    doc_freq: Counter = field(default_factory=Counter)

    @classmethod
    def from_references(cls, corpus: Iterable[Sequence[Sequence[str]]]) -> "CorpusStats":
        stats = cls()
        for refs in corpus:
            seen = set()
            for ref in refs:
                for n in range(1, 5):
                    seen.update(ngrams(ref, n))
            stats.doc_freq.update(seen)
            stats.doc_count += 1
        return stats


def _tfidf(seq: Sequence[str], stats: CorpusStats):
    log_n = math.log(stats.doc_count)
    vecs, norms = [], []
    for n in range(1, 5):
        vec = {g: k * (log_n - math.log(max(1.0, stats.doc_freq.get(g, 0))))
               for g, k in ngrams(seq, n).items()}
        vecs.append(vec)
        norms.append(math.sqrt(sum(v * v for v in vec.values())))
    return vecs, norms


def cider_d(candidate: Sequence[str], references: Sequence[Sequence[str]],
            stats: CorpusStats, sigma: float = 6.0) -> float:
    if not references:
        raise EmptyReferenceList("cider_d needs at least one reference")
    if stats.doc_count == 0:
        raise EmptyCorpusStats("corpus statistics are empty")
    cvecs, cnorms = _tfidf(candidate, stats)
    total = np.zeros(4)
    for ref in references:
        rvecs, rnorms = _tfidf(ref, stats)
        delta = len(candidate) - len(ref)
        penalty = math.exp(-(delta * delta) / (2 * sigma * sigma))
        for i in range(4):
            if cnorms[i] == 0 or rnorms[i] == 0:
                continue
            dot = sum(min(v, rvecs[i][g]) * rvecs[i][g]
                      for g, v in cvecs[i].items() if g in rvecs[i])
            total[i] += dot / (cnorms[i] * rnorms[i]) * penalty
    return float(10.0 * total.mean() / len(references))


# ---------------------------------------------------------------- reward parts

@dataclass(frozen=True)
class RewardWeights:
    lambda1: float = 0.2
    lambda2: float = 0.4
    lambda3: float = 0.4

    def __post_init__(self):
        ws = (self.lambda1, self.lambda2, self.lambda3)
        if min(ws) < 0 or max(ws) <= 0:
            raise ValueError("reward weights must be non-negative with one > 0")


@dataclass(frozen=True)
class RewardBreakdown:
    relevance: float
    conciseness: float
    coverage: float
    total: float


def relevance_score(generated: Sequence[str], reference: Sequence[str], provider) -> float:
    c = cosine(provider.embed_seq(tuple(generated)), provider.embed_seq(tuple(reference)))
    return (1.0 + c) / 2.0


def conciseness_score(generated: Sequence[str], target_len: int = 40) -> float:
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    n = len(generated)
    if n < 2:
        uniq = 1.0
    else:
        bigrams = ngrams(generated, 2)
        uniq = len(bigrams) / (n - 1)
    length = math.exp(-max(0, n - target_len) / target_len)
    return uniq * length


def coverage_score(generated: Sequence[str], expert_texts: Sequence[Sequence[str]],
                   alpha: Sequence[float], smoothing: bool = True) -> float:
    """alpha-weighted mean of 0.5*BLEU-2 + 0.5*ROUGE-L recall against each expert text."""
    alpha = [float(a) for a in alpha]
    if len(expert_texts) != len(alpha):
        raise ValueError("one weight per expert text required")
    if abs(sum(alpha) - 1.0) > 1e-9 or min(alpha) < 0:
        raise AlphaNotNormalized(f"alpha sums to {sum(alpha)!r}")
    score = 0.0
    for a, text in zip(alpha, expert_texts):
        if a == 0.0:
            continue
        b = bleu(generated, [text], max_n=2, smoothing=smoothing) if text else 0.0
        score += a * (0.5 * b + 0.5 * rouge_l(generated, text).recall)
    return min(1.0, score)


def composite_reward(relevance: float, conciseness: float, coverage: float,
                     weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    total = (weights.lambda1 * relevance + weights.lambda2 * conciseness
             + weights.lambda3 * coverage)
    return RewardBreakdown(relevance, conciseness, coverage, total)


# ---------------------------------------------------------------- richness

def load_lexicon(path=None, name: Optional[str] = None) -> frozenset:
    """Read a one-entry-per-line lexicon; ``#`` starts a comment.

    Without ``path`` the bundled ``data/<name>.txt`` file is used.
    """
    try:
        if path is None:
            text = resources.files("rlmoe.data").joinpath(f"{name}.txt").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise MissingLexicon(str(path or name)) from exc
    entries = set()
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            entries.add(" ".join(tokenize(line)))
    return frozenset(entries)


def _raw_words(raw_text: str):
    """Yield ``(token, capitalized, sentence_initial)`` for every raw word."""
    initial = True
    for word in raw_text.split():
        stripped = _strip_punct(word)
        if stripped:
            yield stripped.lower(), stripped[0].isupper(), initial
            initial = False
        if word.rstrip()[-1:] in ".!?":
            initial = True


def richness_counts(generated: Sequence[str], raw_text: Optional[str],
                    entity_gazetteer: Optional[frozenset],
                    adjective_lexicon: Optional[frozenset]) -> Dict[str, int]:
    """Named entities, modifiers, word count and unique word count.

    A gazetteer hit (longest match first) counts once; otherwise a run of
    words capitalized mid-sentence in ``raw_text`` counts as one entity.
    """
    if entity_gazetteer is None or adjective_lexicon is None:
        raise MissingLexicon("both gazetteer and adjective lexicon are required")
    toks = list(generated)
    caps: List[bool] = [False] * len(toks)
    if raw_text:
        words = list(_raw_words(raw_text))
        if [w for w, _, _ in words] == toks:
            caps = [c and not first for _, c, first in words]
    max_len = max((len(e.split()) for e in entity_gazetteer), default=1)
    entities = 0
    i = 0
    while i < len(toks):
        hit = 0
        for span in range(min(max_len, len(toks) - i), 0, -1):
            if " ".join(toks[i:i + span]) in entity_gazetteer:
                hit = span
                break
        if hit:
            entities += 1
            i += hit
        elif caps[i]:
            entities += 1
            while i < len(toks) and caps[i]:
                i += 1
        else:
            i += 1
    return {
        "named_entities": entities,
        "modifiers": sum(1 for t in toks if t in adjective_lexicon),
        "word_count": len(toks),
        "unique_word_count": len(set(toks)),
    }


def text_metrics(candidate: Sequence[str], reference: Sequence[str],
                 stats: CorpusStats) -> Mapping[str, float]:
    """The per-scene text-quality row used in evaluation reports."""
    return {
        "bleu4": bleu(candidate, [reference], max_n=4, smoothing=True),
        "rouge1_f1": rouge_n(candidate, reference, 1).f1,
        "rouge2_f1": rouge_n(candidate, reference, 2).f1,
        "rougeL_f1": rouge_l(candidate, reference).f1,
        "cider_d": cider_d(candidate, [reference], stats),
    }
