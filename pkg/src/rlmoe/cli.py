"""Command-line entry point: ``rlmoe <command> ...``."""
from __future__ import annotations

import json
import sys
from functools import wraps

import click

from .errors import MalformedRecord, RLMoEError
from .pipeline import commands
from .pipeline.config import load_config
from .pipeline.data import ingest, write_dataset
from .pipeline.report import render_report


def _fail(exc: BaseException, code: int = 1):
    reason = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, MalformedRecord):
        reason["line"] = exc.line
    click.echo(json.dumps(reason), err=True)
    sys.exit(code)


def guarded(fn):
    """Turn expected failures into a JSON reason on stderr and a nonzero exit."""
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (RLMoEError, OSError, ValueError, KeyError) as exc:
            _fail(exc)
    return wrapper


def _settings(ctx, seed=None):
    cfg = ctx.obj["config"]
    seed = seed if seed is not None else ctx.obj["seed"]
    return cfg.with_seed(seed)


def _load(path, cfg):
    return ingest(path, cfg.d_in, require_experts=cfg.expert_url is None)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON config file.")
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None,
              help="Overrides the configured seed.")
@click.pass_context
def main(ctx, config_path, seed):
    """Gate four scene experts and refine their text with a REINFORCE edit policy."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except RLMoEError as exc:
        _fail(exc)
    ctx.obj["seed"] = seed


@main.command("ingest")
@click.argument("path", type=click.Path(dir_okay=False))
@click.pass_context
@guarded
def ingest_cmd(ctx, path):
    """Validate a JSONL dataset and print per-split counts."""
    cfg = _settings(ctx)
    records = _load(path, cfg)
    counts = {}
    for r in records:
        counts[r.split] = counts.get(r.split, 0) + 1
    click.echo(json.dumps({"records": len(records), "splits": counts}, sort_keys=True))


@main.command("train-gate")
@click.argument("data", type=click.Path(dir_okay=False))
@click.argument("out_ckpt", type=click.Path(dir_okay=False))
@click.option("--epochs", type=click.IntRange(1), default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None)
@click.pass_context
@guarded
def train_gate_cmd(ctx, data, out_ckpt, epochs, lr, seed):
    """Fit the gate on the train split; writes a gate-only checkpoint."""
    cfg = _settings(ctx, seed)
    commands.cmd_train_gate(_load(data, cfg), out_ckpt, cfg, epochs, lr)
    click.echo(f"wrote {out_ckpt}", err=True)


@main.command("train-policy")
@click.argument("data", type=click.Path(dir_okay=False))
@click.argument("ckpt", type=click.Path(dir_okay=False))
@click.option("--iters", type=click.IntRange(1), default=100, show_default=True)
@click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None)
@click.option("--quiet", is_flag=True)
@click.pass_context
@guarded
def train_policy_cmd(ctx, data, ckpt, iters, seed, quiet):
    """Train or resume the edit policy; updates CKPT in place."""
    cfg = _settings(ctx)
    seed = seed if seed is not None else ctx.obj["seed"]
    records = _load(data, cfg)

    def progress(row):
        if not quiet and (row["iteration"] % 10 == 0 or row["iteration"] == 1):
            click.echo(f"iter {row['iteration']:5d}  reward {row['mean_reward']:.4f}  "
                       f"len {row['mean_len']:.2f}  drift {row['semantic_drift']:.4f}", err=True)

    commands.cmd_train_policy(records, ckpt, iters, seed, progress)
    click.echo(f"wrote {ckpt} and {commands.training_log_path(ckpt)}", err=True)


@main.command("generate")
@click.argument("data", type=click.Path(dir_okay=False))
@click.argument("ckpt", type=click.Path(dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--mode", type=click.Choice(["greedy", "sample"]), default="greedy",
              show_default=True)
@click.pass_context
@guarded
def generate_cmd(ctx, data, ckpt, out, mode):
    """Greedy (or sampled) rollouts for every eval scene, written as JSONL."""
    cfg = _settings(ctx)
    rows = commands.cmd_generate(_load(data, cfg), ckpt, out, mode, ctx.obj["seed"])
    click.echo(f"wrote {len(rows)} records to {out}", err=True)


@main.command("evaluate")
@click.argument("outputs", type=click.Path(dir_okay=False))
@click.argument("data", type=click.Path(dir_okay=False))
@click.argument("report_dir", type=click.Path(file_okay=False))
@click.option("--train-log", type=click.Path(dir_okay=False), default=None,
              help="Training CSV written by train-policy, copied into the report.")
@click.pass_context
@guarded
def evaluate_cmd(ctx, outputs, data, report_dir, train_log):
    """Text metrics, stage word counts and richness counts as CSV plus summary.md."""
    cfg = _settings(ctx)
    agg = commands.cmd_evaluate(commands.read_outputs(outputs), _load(data, cfg),
                                report_dir, cfg, train_log)
    click.echo(json.dumps(agg, sort_keys=True))


@main.command("attack")
@click.argument("data", type=click.Path(dir_okay=False))
@click.argument("ckpt", type=click.Path(dir_okay=False))
@click.argument("report_dir", type=click.Path(file_okay=False))
@click.option("--kind", type=click.Choice(["srra", "mia"]), required=True)
@click.pass_context
@guarded
def attack_cmd(ctx, data, ckpt, report_dir, kind):
    """Replay attack or membership inference; writes attack_<kind>.csv."""
    cfg = _settings(ctx)
    report = commands.cmd_attack(_load(data, cfg), ckpt, kind, report_dir)
    for metric, setting, value in report.rows():
        click.echo(f"{metric},{setting},{value}")


@main.command("report")
@click.argument("report_dir", type=click.Path(file_okay=False))
@guarded
def report_cmd(report_dir):
    """Render figures and summary.md from the CSVs in REPORT_DIR."""
    click.echo(str(render_report(report_dir)))


@main.command("synth")
@click.argument("out", type=click.Path(dir_okay=False))
@click.option("--kind", type=click.Choice(["demo", "convergence"]), default="demo",
              show_default=True)
@click.option("--n", type=click.IntRange(1), default=8, show_default=True)
@click.pass_context
@guarded
def synth_cmd(ctx, out, kind, n):
    """Write a synthetic dataset (for demos and smoke tests)."""
    from .pipeline import synthetic

    cfg = _settings(ctx)
    seed = cfg.trainer.seed
    if kind == "convergence":
        records = synthetic.convergence_scenes(n, seed, cfg.d_in)
    else:
        records = synthetic.demo_dataset(n, seed, cfg.d_in)
    write_dataset(records, out)
    click.echo(f"wrote {len(records)} records to {out}", err=True)


if __name__ == "__main__":
    main()
