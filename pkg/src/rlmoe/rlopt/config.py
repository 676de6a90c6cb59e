from __future__ import annotations

from dataclasses import asdict, dataclass, field

from ..metrics import RewardWeights


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 1e-4
    gamma: float = 0.99
    beta: float = 0.01
    batch_size: int = 32
    weights: RewardWeights = field(default_factory=RewardWeights)
    t_max: int = 64
    k: int = 32
    baseline_decay: float = 0.95
    seed: int = 0
    target_len: int = 40
    l_max: int = 128
    # decoder shape
    model_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 128
    # Adam
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.t_max < 1 or self.k < 1 or self.l_max < 1 or self.target_len < 1:
            raise ValueError("t_max, k, l_max and target_len must be >= 1")
        if self.model_dim % self.n_heads:
            raise ValueError("model_dim must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        if "weights" in d and not isinstance(d["weights"], RewardWeights):
            w = d["weights"]
            d["weights"] = RewardWeights(**w) if isinstance(w, dict) else RewardWeights(*w)
        return cls(**d)
