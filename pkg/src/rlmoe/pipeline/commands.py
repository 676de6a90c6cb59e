"""End-to-end commands behind the CLI. Each one is usable as a plain function."""
from __future__ import annotations

import json
import shutil
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..embeddings import cosine
from ..errors import ConfigurationError, EmptyDataset, MissingScene
from ..experts import EXPERTS
from ..gating import gate_targets, init_gate, train_gate
from ..metrics import CorpusStats, load_lexicon, richness_counts, text_metrics
from ..privacy import AttackReport, build_gallery, mia_attack, mia_scores, srra
from ..rlopt.policy import init_policy
from ..rlopt.reinforce import run_episodes, scene_bundle, train_policy
from ..scene import SceneRecord
from ..textkit import detokenize, tokenize
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .data import by_split
from .report import (ATTACK_COLUMNS, METRIC_COLUMNS, RICHNESS_COLUMNS, STAGES,
                     TRAINING_COLUMNS, WORD_COUNT_COLUMNS, append_csv, column_means,
                     write_csv, write_summary)

OUTPUT_VERSION = 1
POLICY_SPLITS = ("train", "member")


def training_log_path(checkpoint) -> Path:
    p = Path(checkpoint)
    return p.with_name(p.name + ".train.csv")


def cmd_train_gate(records: Sequence[SceneRecord], out, config: PipelineConfig,
                   epochs: Optional[int] = None, lr: Optional[float] = None) -> Checkpoint:
    """Fit the gate on the ``train`` split and write a gate-only checkpoint."""
    scenes = by_split(records, "train")
    if not scenes:
        raise EmptyDataset("train-gate needs scenes in the 'train' split")
    seed = config.trainer.seed
    x = [s.features for s in scenes]
    t = [gate_targets(s, config.gate_temperature) for s in scenes]
    gate, _ = train_gate(x, t, init_gate(config.d_in, config.gate_hidden, seed),
                         epochs if epochs is not None else config.gate_epochs,
                         lr if lr is not None else config.gate_lr)
    ckpt = Checkpoint(config, gate, seed=seed)
    save_checkpoint(ckpt, out)
    return ckpt


def cmd_train_policy(records: Sequence[SceneRecord], checkpoint, iterations: int,
                     seed: Optional[int] = None,
                     progress: Optional[Callable[[dict], None]] = None) -> Checkpoint:
    """Train (or resume) the edit policy on the train and member splits, in place."""
    ckpt = load_checkpoint(checkpoint)
    config = ckpt.config.with_seed(seed)
    scenes = by_split(records, *POLICY_SPLITS)
    if not scenes:
        raise EmptyDataset("train-policy needs scenes in the 'train' or 'member' split")
    tc = config.trainer
    provider = config.provider()
    params = ckpt.policy
    if params is None:
        vocab = {w for s in scenes for t in s.expert_texts.values() for w in tokenize(t)}
        params = init_policy(sorted(vocab), tc.model_dim, tc.n_layers, tc.n_heads, tc.ff_dim,
                             seed=tc.seed, embed_seed=config.embed_seed)
    start = ckpt.iteration
    res = train_policy(scenes, ckpt.gate, tc, iterations, params=params,
                       baseline=ckpt.baseline, adam=ckpt.adam, provider=provider,
                       backend=config.backend(), store=config.prompt_store(provider),
                       start_iteration=start, progress=progress)
    out = Checkpoint(config, ckpt.gate, res.params, res.baseline, res.adam, res.iterations,
                     tc.seed)
    save_checkpoint(out, checkpoint)
    log_path = training_log_path(checkpoint)
    if start == 0 and log_path.exists():
        log_path.unlink()
    append_csv(log_path, TRAINING_COLUMNS, res.log.rows)
    return out


def _policy_checkpoint(checkpoint) -> Checkpoint:
    ckpt = load_checkpoint(checkpoint)
    if ckpt.policy is None:
        raise ConfigurationError(f"{checkpoint} has no trained policy; run train-policy first")
    return ckpt


def generate_records(scenes: Sequence[SceneRecord], ckpt: Checkpoint, mode: str = "greedy",
                     seed: Optional[int] = None) -> List[dict]:
    """One output record per scene: gate weights, expert texts, W_MoE, final text, reward."""
    if not scenes:
        return []
    config = ckpt.config
    provider = config.provider()
    store = config.prompt_store(provider)
    bundles = [scene_bundle(s, ckpt.gate, config.backend(), store, config.prompt_k)
               for s in scenes]
    rng = None
    if mode == "sample":
        rng = np.random.Generator(np.random.PCG64([config.trainer.seed if seed is None else seed,
                                                   ckpt.iteration, 1]))
    traces = run_episodes(bundles, [tokenize(s.reference_text) for s in scenes], ckpt.policy,
                          config.trainer, mode, rng, provider)
    out = []
    for s, b, tr in zip(scenes, bundles, traces):
        texts = {k.value: b.texts[k] for k in EXPERTS}
        top = EXPERTS[int(np.argmax(b.alpha))].value
        counts = {"initial": len(texts[top])}
        counts.update({k: len(v) for k, v in texts.items()})
        counts["aggregated"] = len(b.aggregated)
        counts["final"] = len(tr.final)
        out.append({
            "record": "scene",
            "scene_id": s.scene_id,
            "alpha": list(b.alpha),
            "expert_texts": {k: detokenize(v) for k, v in texts.items()},
            "aggregated": detokenize(b.aggregated),
            "final": detokenize(tr.final),
            "steps": len(tr),
            "reward": {"relevance": tr.reward.relevance, "conciseness": tr.reward.conciseness,
                       "coverage": tr.reward.coverage, "total": tr.reward.total},
            "word_counts": counts,
            "semantic_similarity": cosine(provider.embed_seq(tr.final),
                                          provider.embed_seq(b.aggregated)),
        })
    return out


def cmd_generate(records: Sequence[SceneRecord], checkpoint, out, mode: str = "greedy",
                 seed: Optional[int] = None) -> List[dict]:
    """Write a JSONL file: a header line, then one record per eval scene."""
    ckpt = _policy_checkpoint(checkpoint)
    scenes = by_split(records, "eval")
    rows = generate_records(scenes, ckpt, mode, seed)
    header = {"record": "header", "version": OUTPUT_VERSION, "mode": mode,
              "checkpoint_iteration": ckpt.iteration, "seed": ckpt.seed, "scenes": len(rows)}
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for obj in [header] + rows:
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
    return rows


def read_outputs(path) -> List[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if lineno == 1:
                if obj.get("record") != "header" or obj.get("version") != OUTPUT_VERSION:
                    raise ConfigurationError(f"{path}: not a generation output file")
                continue
            rows.append(obj)
    return rows


def cmd_evaluate(outputs: Sequence[dict], records: Sequence[SceneRecord], report_dir,
                 config: PipelineConfig, train_log=None) -> Dict[str, float]:
    """Per-scene and aggregate text metrics, stage word counts and richness counts."""
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    scenes = by_split(records, "eval")
    by_id = {o["scene_id"]: o for o in outputs}
    for s in scenes:
        if s.scene_id not in by_id:
            raise MissingScene(f"no generated output for eval scene {s.scene_id}")
    refs = [tokenize(s.reference_text) for s in scenes]
    stats = CorpusStats.from_references([[r] for r in refs]) if refs else None
    gazetteer, adjectives = load_lexicon(name="gazetteer"), load_lexicon(name="adjectives")

    metric_rows, count_rows, rich_rows = [], [], []
    for s, ref in zip(scenes, refs):
        o = by_id[s.scene_id]
        final = tokenize(o["final"])
        row = {"scene_id": s.scene_id}
        row.update(text_metrics(final, ref, stats))
        row.update(relevance=o["reward"]["relevance"], conciseness=o["reward"]["conciseness"],
                   coverage=o["reward"]["coverage"], reward=o["reward"]["total"],
                   semantic_similarity=o["semantic_similarity"])
        metric_rows.append(row)
        count_rows.append({"scene_id": s.scene_id, **{k: o["word_counts"][k] for k in STAGES}})
        for stage, text in (("aggregated", o["aggregated"]), ("final", o["final"])):
            rc = richness_counts(tokenize(text), None, gazetteer, adjectives)
            rich_rows.append({"scene_id": s.scene_id, "stage": stage, **rc})

    write_csv(report_dir / "metrics.csv", METRIC_COLUMNS, metric_rows)
    write_csv(report_dir / "word_counts.csv", WORD_COUNT_COLUMNS, count_rows)
    write_csv(report_dir / "richness.csv", RICHNESS_COLUMNS, rich_rows)
    agg = column_means(metric_rows, METRIC_COLUMNS[1:])
    agg.update({f"words_{k}": v for k, v in column_means(count_rows, STAGES).items()})
    write_csv(report_dir / "aggregate.csv", ("metric", "value"),
              [{"metric": k, "value": v} for k, v in agg.items()])
    if train_log is not None:
        shutil.copyfile(train_log, report_dir / "training.csv")
    write_summary(report_dir)
    return agg


def cmd_attack(records: Sequence[SceneRecord], checkpoint, kind: str, report_dir) -> AttackReport:
    """Run the replay attack (``srra``) or membership inference (``mia``) and write its CSV."""
    ckpt = _policy_checkpoint(checkpoint)
    config = ckpt.config
    provider = config.provider()
    report = AttackReport()
    if kind == "srra":
        probes_src = by_split(records, "eval")
        if not probes_src:
            raise ConfigurationError("srra needs scenes in the 'eval' split to use as probes")
        gallery = build_gallery(records, provider)
        rows = generate_records(probes_src, ckpt)
        probes = [(s.scene_id, s.identity_id, tokenize(r["final"]))
                  for s, r in zip(probes_src, rows)]
        report.srra = srra(probes, gallery, provider)
    elif kind == "mia":
        members, nonmembers = by_split(records, "member"), by_split(records, "nonmember")
        if not members or not nonmembers:
            raise ConfigurationError("mia needs both 'member' and 'nonmember' splits")
        sm = mia_scores(members, ckpt.policy, ckpt.gate, config.trainer, provider,
                        config.backend())
        sn = mia_scores(nonmembers, ckpt.policy, ckpt.gate, config.trainer, provider,
                        config.backend())
        for setting in ("black_box", "white_box"):
            report.mia[setting] = mia_attack(sm[setting], sn[setting])
    else:
        raise ConfigurationError(f"unknown attack kind {kind!r}; use srra or mia")
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    write_csv(report_dir / f"attack_{kind}.csv", ATTACK_COLUMNS,
              [dict(zip(ATTACK_COLUMNS, r)) for r in report.rows()])
    return report
