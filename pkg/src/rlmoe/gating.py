"""Feed-forward gate mapping scene features to expert weights.

One tanh hidden layer followed by a max-shifted softmax over the four
experts. The gate is trained on its own, by full-batch gradient descent on
KL(target || alpha), where targets come from ROUGE-L agreement between each
expert text and the scene reference.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, MissingExpertText, NonFiniteInput
from .experts import EXPERTS
from .metrics import rouge_l
from .textkit import tokenize

N_EXPERTS = len(EXPERTS)


@dataclass
class GateParams:
    w1: np.ndarray  # (d_in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 4)
    b2: np.ndarray  # (4,)

    NAMES = ("w1", "b1", "w2", "b2")

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    def arrays(self) -> List[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "GateParams":
        return GateParams(*(a.copy() for a in self.arrays()))

    @classmethod
    def zeros(cls, d_in: int = 128, hidden: int = 64) -> "GateParams":
        return cls(np.zeros((d_in, hidden)), np.zeros(hidden),
                   np.zeros((hidden, N_EXPERTS)), np.zeros(N_EXPERTS))


def init_gate(d_in: int = 128, hidden: int = 64, seed: int = 0) -> GateParams:
    rng = np.random.default_rng(seed)
    return GateParams(
        rng.standard_normal((d_in, hidden)) / np.sqrt(d_in),
        np.zeros(hidden),
        rng.standard_normal((hidden, N_EXPERTS)) / np.sqrt(hidden),
        np.zeros(N_EXPERTS),
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_features(x, params: GateParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.d_in:
        raise DimensionMismatch(f"expected {params.d_in} features, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("gate features contain NaN or inf")
    return x


def gate_logits(features, params: GateParams) -> np.ndarray:
    x = _check_features(features, params)
    return np.tanh(x @ params.w1 + params.b1) @ params.w2 + params.b2


def gate_forward(features, params: GateParams) -> np.ndarray:
    return softmax(gate_logits(features, params))


def gate_targets(scene, temperature: float = 0.1) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ref = tokenize(scene.reference_text)
    scores = []
    for kind in EXPERTS:
        if kind.value not in scene.expert_texts:
            raise MissingExpertText(f"scene {scene.scene_id} has no {kind.value} text")
        scores.append(rouge_l(tokenize(scene.expert_texts[kind.value]), ref).f1)
    return softmax(np.asarray(scores) / temperature)


def kl_loss(target, alpha) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    safe_t = np.where(target > 0, target, 1.0)
    return np.sum(np.where(target > 0, target * (np.log(safe_t) - np.log(alpha)), 0.0), axis=-1)


def gate_gradient(features, params: GateParams, target) -> Tuple[float, GateParams]:
    """Mean KL(target || gate(features)) and its exact gradient.

    ``features`` may be one vector or a batch (rows); ``target`` matches.
    """
    x = _check_features(features, params)
    t = np.asarray(target, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x, t = x[None, :], t[None, :]
    if t.shape != (x.shape[0], N_EXPERTS):
        raise DimensionMismatch(f"target shape {t.shape} does not match batch")
    n = x.shape[0]
    h = np.tanh(x @ params.w1 + params.b1)
    alpha = softmax(h @ params.w2 + params.b2)
    loss = float(kl_loss(t, alpha).mean())
    dz = (alpha * t.sum(axis=1, keepdims=True) - t) / n
    dh = (dz @ params.w2.T) * (1.0 - h * h)
    grad = GateParams(x.T @ dh, dh.sum(axis=0), h.T @ dz, dz.sum(axis=0))
    return loss, grad


def train_gate(features: Sequence, targets: Sequence, params: GateParams,
               epochs: int = 200, learning_rate: float = 1e-2
               ) -> Tuple[GateParams, List[float]]:
    """Full-batch gradient descent; returns new params and the loss at each epoch."""
    if len(features) == 0:
        raise EmptyDataset("gate training needs at least one scene")
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    params = params.copy()
    losses = []
    for _ in range(epochs):
        loss, grad = gate_gradient(x, params, t)
        losses.append(loss)
        for p, g in zip(params.arrays(), grad.arrays()):
            p -= learning_rate * g
    return params, losses
