"""Versioned text checkpoints.

Layout, one item per line:

    {JSON header: version, seed, iteration, config, tensor names and shapes}
    name<TAB>v0 v1 v2 ...        (one line per tensor, 17 significant digits)
    sha256<TAB><hex digest of every preceding byte>

17 significant digits round-trip any float64 exactly, so a save/load
cycle is bit-exact while the file stays diffable.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from ..errors import CorruptCheckpoint, ShapeMismatch, UnknownVersion
from ..gating import N_EXPERTS, GateParams
from ..rlopt.policy import DTYPE, PolicyParams, policy_shapes
from ..rlopt.reinforce import AdamState, BaselineState
from .config import PipelineConfig

FORMAT = "rlmoe-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    config: PipelineConfig
    gate: GateParams
    policy: Optional[PolicyParams] = None
    baseline: BaselineState = field(default_factory=BaselineState)
    adam: AdamState = field(default_factory=AdamState)
    iteration: int = 0
    seed: int = 0
    version: int = VERSION


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(x), ".17g") for x in values.reshape(-1))


def _tensors(ckpt: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    out = [(f"gate.{n}", a) for n, a in zip(GateParams.NAMES, ckpt.gate.arrays())]
    if ckpt.policy is not None:
        for n, t in ckpt.policy.tensors.items():
            out.append((f"policy.{n}", t.detach().numpy()))
        for n in ckpt.policy.names():
            if n in ckpt.adam.m:
                out.append((f"adam_m.{n}", ckpt.adam.m[n].numpy()))
                out.append((f"adam_v.{n}", ckpt.adam.v[n].numpy()))
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    tensors = _tensors(ckpt)
    header = {
        "format": FORMAT,
        "version": ckpt.version,
        "seed": ckpt.seed,
        "iteration": ckpt.iteration,
        "config": ckpt.config.to_dict(),
        "baseline": ckpt.baseline.value,
        "adam_step": ckpt.adam.step,
        "policy": None if ckpt.policy is None else {
            "vocab": list(ckpt.policy.vocab),
            "n_heads": ckpt.policy.n_heads,
            "embed_seed": ckpt.policy.embed_seed,
        },
        "tensors": [[name, list(a.shape)] for name, a in tensors],
    }
    lines = [json.dumps(header, sort_keys=True, ensure_ascii=False)]
    lines += [f"{name}\t{_fmt(np.asarray(a, dtype=np.float64))}" for name, a in tensors]
    body = ("\n".join(lines) + "\n").encode("utf-8")
    digest = hashlib.sha256(body).hexdigest()
    Path(path).write_bytes(body + f"sha256\t{digest}\n".encode("ascii"))


def _expected_shapes(header: dict, config: PipelineConfig) -> Dict[str, Tuple[int, ...]]:
    h = config.gate_hidden
    shapes = {"gate.w1": (config.d_in, h), "gate.b1": (h,),
              "gate.w2": (h, N_EXPERTS), "gate.b2": (N_EXPERTS,)}
    pol = header.get("policy")
    if pol is not None:
        t = config.trainer
        for n, s in policy_shapes(len(pol["vocab"]), t.model_dim, t.n_layers, t.ff_dim).items():
            shapes[f"policy.{n}"] = s
    return shapes


def load_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise CorruptCheckpoint(f"checkpoint not found: {path}") from None
    try:
        text = data.decode("utf-8")
        first, _, _ = text.partition("\n")
        header = json.loads(first)
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptCheckpoint(f"{path}: unreadable header") from None
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise CorruptCheckpoint(f"{path}: not an rlmoe checkpoint")
    if header.get("version") != VERSION:
        raise UnknownVersion(f"{path}: checkpoint version {header.get('version')!r} "
                             f"(this build reads version {VERSION})")

    body, sep, trailer = text.rstrip("\n").rpartition("\n")
    if not sep or not trailer.startswith("sha256\t"):
        raise CorruptCheckpoint(f"{path}: missing checksum trailer (truncated?)")
    if hashlib.sha256((body + "\n").encode("utf-8")).hexdigest() != trailer.split("\t", 1)[1]:
        raise CorruptCheckpoint(f"{path}: checksum mismatch")

    try:
        config = PipelineConfig.from_dict(header["config"])
        declared = [(n, tuple(s)) for n, s in header["tensors"]]
    except Exception as exc:  # noqa: BLE001 - any malformed header is corruption
        raise CorruptCheckpoint(f"{path}: bad header ({exc})") from None
    lines = body.split("\n")[1:]
    if len(lines) != len(declared):
        raise CorruptCheckpoint(f"{path}: expected {len(declared)} tensors, found {len(lines)}")

    expected = _expected_shapes(header, config)
    arrays: Dict[str, np.ndarray] = {}
    for (name, shape), line in zip(declared, lines):
        got_name, _, payload = line.partition("\t")
        if got_name != name:
            raise CorruptCheckpoint(f"{path}: expected tensor {name}, found {got_name}")
        base = name.split(".", 1)[1] if name.startswith(("adam_m.", "adam_v.")) else None
        want = expected.get(f"policy.{base}" if base else name)
        if want is None:
            raise CorruptCheckpoint(f"{path}: unexpected tensor {name}")
        if shape != want:
            raise ShapeMismatch(f"{name}: checkpoint shape {shape}, config implies {want}")
        try:
            values = np.array([float(v) for v in payload.split()], dtype=np.float64)
        except ValueError:
            raise CorruptCheckpoint(f"{path}: non-numeric value in {name}") from None
        if values.size != int(np.prod(shape)):
            raise CorruptCheckpoint(f"{path}: {name} has {values.size} values, "
                                    f"shape {shape} needs {int(np.prod(shape))}")
        arrays[name] = values.reshape(shape)
    missing = [n for n in expected if n not in arrays]
    if missing:
        raise CorruptCheckpoint(f"{path}: missing tensors {', '.join(missing)}")

    gate = GateParams(*(arrays[f"gate.{n}"] for n in GateParams.NAMES))
    policy, adam = None, AdamState(int(header.get("adam_step", 0)))
    pol = header.get("policy")
    if pol is not None:
        tensors = {n[len("policy."):]: torch.tensor(a, dtype=DTYPE)
                   for n, a in arrays.items() if n.startswith("policy.")}
        policy = PolicyParams(tuple(pol["vocab"]), tensors, int(pol["n_heads"]),
                              int(pol["embed_seed"]))
        for n, a in arrays.items():
            if n.startswith("adam_m."):
                adam.m[n[7:]] = torch.tensor(a, dtype=DTYPE)
            elif n.startswith("adam_v."):
                adam.v[n[7:]] = torch.tensor(a, dtype=DTYPE)
    baseline = header.get("baseline")
    return Checkpoint(config, gate, policy,
                      BaselineState(None if baseline is None else float(baseline)), adam,
                      int(header["iteration"]), int(header["seed"]), VERSION)
