"""Pipeline configuration, stored as JSON."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..embeddings import ExternalProvider, HashedProjection
from ..errors import ConfigurationError
from ..experts import CannedBackend, PromptStore, RemoteBackend
from ..rlopt.config import TrainerConfig


@dataclass(frozen=True)
class PipelineConfig:
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    d_in: int = 128
    gate_hidden: int = 64
    gate_epochs: int = 200
    gate_lr: float = 1e-2
    gate_temperature: float = 0.1
    embed_seed: int = 0
    embed_dim: int = 64
    # remote services are opt-in; None means offline
    expert_url: Optional[str] = None
    provider_url: Optional[str] = None
    timeout: float = 10.0
    prompts_path: Optional[str] = None
    prompt_k: int = 3

    def to_dict(self) -> dict:
        out = asdict(self)
        out["trainer"] = self.trainer.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        try:
            if "trainer" in d:
                t = d["trainer"]
                d["trainer"] = t if isinstance(t, TrainerConfig) else TrainerConfig.from_dict(t)
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from exc

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        if seed is None:
            return self
        return replace(self, trainer=replace(self.trainer, seed=int(seed)))

    def provider(self):
        if self.provider_url:
            return ExternalProvider(self.provider_url, self.embed_dim, self.timeout)
        return HashedProjection(self.embed_seed, self.embed_dim)

    def backend(self):
        return RemoteBackend(self.expert_url, self.timeout) if self.expert_url else CannedBackend()

    def prompt_store(self, provider=None) -> Optional[PromptStore]:
        if not self.prompts_path:
            return None
        return PromptStore.load(self.prompts_path, provider or self.provider(), self.d_in,
                                self.embed_seed)


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        raw = json.loads(Path(path).read_text("utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return PipelineConfig.from_dict(raw)


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", "utf-8")
