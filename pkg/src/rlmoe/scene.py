"""The scene record: one observation flowing through the pipeline."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

SPLITS = ("train", "eval", "member", "nonmember")


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    identity_id: str
    split: str
    features: Tuple[float, ...]
    expert_texts: Dict[str, str] = field(hash=False)
    reference_text: str = ""
    image_path: Optional[str] = None

    def to_json(self) -> dict:
        out = {
            "scene_id": self.scene_id,
            "identity_id": self.identity_id,
            "split": self.split,
            "features": list(self.features),
            "expert_texts": dict(self.expert_texts),
            "reference_text": self.reference_text,
        }
        if self.image_path is not None:
            out["image_path"] = self.image_path
        return out
