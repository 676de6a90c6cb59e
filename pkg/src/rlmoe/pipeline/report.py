"""CSV tables, the markdown summary and matplotlib figures for a report directory."""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..experts import EXPERTS  # noqa: E402

STAGES = ("initial",) + tuple(k.value for k in EXPERTS) + ("aggregated", "final")

METRIC_COLUMNS = ("scene_id", "bleu4", "rouge1_f1", "rouge2_f1", "rougeL_f1", "cider_d",
                  "relevance", "conciseness", "coverage", "reward", "semantic_similarity")
WORD_COUNT_COLUMNS = ("scene_id",) + STAGES
RICHNESS_COLUMNS = ("scene_id", "stage", "named_entities", "modifiers", "word_count",
                    "unique_word_count")
TRAINING_COLUMNS = ("iteration", "mean_reward", "mean_len", "semantic_drift")
ATTACK_COLUMNS = ("metric", "setting", "value")


def _cell(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def append_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    path = Path(path)
    if not path.exists():
        write_csv(path, columns, rows)
        return
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def column_means(rows: Sequence[dict], columns: Sequence[str]) -> Dict[str, float]:
    """Plain arithmetic means; the aggregate row of every report comes from here."""
    if not rows:
        return {c: math.nan for c in columns}
    return {c: math.fsum(float(r[c]) for r in rows) / len(rows) for c in columns}


# ---------------------------------------------------------------- figures

def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_word_counts(rows, path) -> None:
    means = column_means(rows, STAGES)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(STAGES)), [means[s] for s in STAGES], color="#4c72b0")
    ax.set_xticks(range(len(STAGES)), STAGES, rotation=30, ha="right")
    ax.set_ylabel("mean words per scene")
    ax.set_title("Word count by stage")
    _save(fig, path)


def plot_word_vs_unique(richness, path) -> None:
    stages = ["aggregated", "final"]
    words = [column_means([r for r in richness if r["stage"] == s], ["word_count"])["word_count"]
             for s in stages]
    uniq = [column_means([r for r in richness if r["stage"] == s],
                         ["unique_word_count"])["unique_word_count"] for s in stages]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = range(len(stages))
    ax.bar([i - 0.2 for i in x], words, width=0.4, label="words")
    ax.bar([i + 0.2 for i in x], uniq, width=0.4, label="unique words")
    ax.set_xticks(list(x), stages)
    ax.legend()
    ax.set_title("Word count vs unique word count")
    _save(fig, path)


def plot_entities_vs_modifiers(richness, path) -> None:
    stages = ["aggregated", "final"]
    ents = [column_means([r for r in richness if r["stage"] == s],
                         ["named_entities"])["named_entities"] for s in stages]
    mods = [column_means([r for r in richness if r["stage"] == s], ["modifiers"])["modifiers"]
            for s in stages]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = range(len(stages))
    ax.bar([i - 0.2 for i in x], ents, width=0.4, label="named entities")
    ax.bar([i + 0.2 for i in x], mods, width=0.4, label="modifiers")
    ax.set_xticks(list(x), stages)
    ax.legend()
    ax.set_title("Named entities and modifiers")
    _save(fig, path)


def plot_training_series(training, column, ylabel, title, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot([int(r["iteration"]) for r in training], [float(r[column]) for r in training])
    ax.set_xlabel("iteration")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    _save(fig, path)


# ---------------------------------------------------------------- summary

def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> List[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def write_summary(report_dir, figures: Sequence[str] = ()) -> Path:
    d = Path(report_dir)
    lines = ["# Evaluation summary", ""]
    if (d / "aggregate.csv").exists():
        agg = read_csv(d / "aggregate.csv")
        lines += ["## Aggregate metrics", ""]
        lines += _table(["metric", "mean"], [[r["metric"], f"{float(r['value']):.4f}"] for r in agg])
        lines.append("")
    for path in sorted(d.glob("attack_*.csv")):
        rows = read_csv(path)
        lines += [f"## Attack: {path.stem[len('attack_'):]}", ""]
        lines += _table(list(ATTACK_COLUMNS), [[r[c] for c in ATTACK_COLUMNS] for r in rows])
        lines.append("")
    if (d / "training.csv").exists():
        tr = read_csv(d / "training.csv")
        if tr:
            first, last = tr[0], tr[-1]
            lines += ["## Training", "",
                      f"{len(tr)} logged iterations; mean reward {float(first['mean_reward']):.4f}"
                      f" -> {float(last['mean_reward']):.4f}; semantic drift"
                      f" {float(first['semantic_drift']):.4f} -> {float(last['semantic_drift']):.4f}.",
                      ""]
    if figures:
        lines += ["## Figures", ""] + [f"![{Path(f).stem}]({Path(f).name})" for f in figures] + [""]
    out = d / "summary.md"
    out.write_text("\n".join(lines), "utf-8")
    return out


def render_report(report_dir) -> Path:
    """Draw every figure the available CSVs support, then rewrite summary.md."""
    d = Path(report_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"report directory not found: {d}")
    figures = []
    if (d / "word_counts.csv").exists():
        rows = read_csv(d / "word_counts.csv")
        if rows:
            plot_word_counts(rows, d / "word_count_progression.png")
            figures.append("word_count_progression.png")
    if (d / "richness.csv").exists():
        rich = read_csv(d / "richness.csv")
        if rich:
            plot_word_vs_unique(rich, d / "word_vs_unique.png")
            plot_entities_vs_modifiers(rich, d / "entities_vs_modifiers.png")
            figures += ["word_vs_unique.png", "entities_vs_modifiers.png"]
    if (d / "training.csv").exists():
        tr = read_csv(d / "training.csv")
        if tr:
            plot_training_series(tr, "semantic_drift", "cosine(final, aggregated)",
                                 "Semantic similarity over iterations", d / "semantic_drift.png")
            plot_training_series(tr, "mean_reward", "mean episode reward", "Reward",
                                 d / "reward_curve.png")
            figures += ["semantic_drift.png", "reward_curve.png"]
    return write_summary(d, figures)
