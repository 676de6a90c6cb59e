"""JSONL scene datasets: one SceneRecord per line."""
from __future__ import annotations

import json
import math
from typing import Iterable, List, Sequence

from ..errors import DuplicateSceneId, FeatureDimensionMismatch, MalformedRecord
from ..experts import EXPERTS
from ..scene import SPLITS, SceneRecord

_REQUIRED = ("scene_id", "identity_id", "split", "features", "expert_texts", "reference_text")


def parse_record(obj, line: int, d_in: int, require_experts: bool = True) -> SceneRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord(line, "record must be a JSON object")
    for key in _REQUIRED:
        if key not in obj:
            raise MalformedRecord(line, f"missing field {key!r}")
    for key in ("scene_id", "identity_id", "reference_text"):
        if not isinstance(obj[key], str) or not obj[key].strip():
            raise MalformedRecord(line, f"{key} must be a non-empty string")
    if obj["split"] not in SPLITS:
        raise MalformedRecord(line, f"split must be one of {', '.join(SPLITS)}")
    feats = obj["features"]
    if not isinstance(feats, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in feats):
        raise MalformedRecord(line, "features must be a list of numbers")
    if not all(math.isfinite(x) for x in feats):
        raise MalformedRecord(line, "features must be finite")
    if len(feats) != d_in:
        raise FeatureDimensionMismatch(line, f"expected {d_in} features, got {len(feats)}")
    texts = obj["expert_texts"]
    if not isinstance(texts, dict) or not all(isinstance(v, str) for v in texts.values()):
        raise MalformedRecord(line, "expert_texts must map expert names to strings")
    names = {k.value for k in EXPERTS}
    extra = set(texts) - names
    if extra:
        raise MalformedRecord(line, f"unknown expert kinds: {', '.join(sorted(extra))}")
    if require_experts and set(texts) != names:
        missing = sorted(names - set(texts))
        raise MalformedRecord(line, f"missing expert texts: {', '.join(missing)}")
    image = obj.get("image_path")
    if image is not None and not isinstance(image, str):
        raise MalformedRecord(line, "image_path must be a string")
    return SceneRecord(obj["scene_id"], obj["identity_id"], obj["split"],
                       tuple(float(x) for x in feats), dict(texts), obj["reference_text"], image)


def ingest(path, d_in: int = 128, require_experts: bool = True) -> List[SceneRecord]:
    """Load and validate a dataset; any failure names its 1-based line number.

    Blank lines are skipped. With remote experts ``require_experts`` may be
    turned off so records can omit canned texts.
    """
    records, seen = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
            rec = parse_record(obj, lineno, d_in, require_experts)
            if rec.scene_id in seen:
                raise DuplicateSceneId(
                    lineno, f"scene_id {rec.scene_id!r} already used on line {seen[rec.scene_id]}")
            seen[rec.scene_id] = lineno
            records.append(rec)
    return records


def write_dataset(records: Iterable[SceneRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")


def by_split(records: Sequence[SceneRecord], *splits: str) -> List[SceneRecord]:
    return [r for r in records if r.split in splits]

