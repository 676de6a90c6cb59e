"""Episodes, the REINFORCE estimator with baseline and entropy bonus, and training.

Rollouts run without autograd; :func:`reinforce_update` replays the stored
states with gradients enabled. This keeps :class:`EpisodeTrace` plain data
and lets the same replay serve the enumeration-based gradient check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..embeddings import HashedProjection, cosine
from ..errors import EmptyBatch, EmptyDataset, NonFiniteGradient, TaskTooLarge
from ..experts import ExpertBundle, gather_bundle
from ..gating import GateParams, gate_forward
from ..metrics import RewardBreakdown
from ..textkit import EditOp, Stop, TokenSeq, apply_edit, tokenize
from .config import TrainerConfig
from .env import ActionSpace, MDPState, action_space, initial_state, terminal_reward
from .policy import EpisodeContext, PolicyParams, action_log_probs, batch_forward


@dataclass
class EpisodeTrace:
    scene_id: str
    bundle: ExpertBundle
    reference: TokenSeq
    states: List[Tuple[TokenSeq, int]]
    actions: List[int]
    ops: List[EditOp]
    log_probs: List[float]
    entropies: List[float]
    final: TokenSeq
    reward: RewardBreakdown
    returns: List[float]

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_return(self) -> float:
        """Discounted return from the first step, the G_i used by the update."""
        return self.returns[0]


@dataclass
class BaselineState:
    value: Optional[float] = None


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)


@dataclass
class TrainingLog:
    rows: List[Dict[str, float]] = field(default_factory=list)
    episode_rewards: List[float] = field(default_factory=list)

    def column(self, name: str) -> List[float]:
        return [r[name] for r in self.rows]


def default_provider() -> HashedProjection:
    return HashedProjection(0, 64)


def _space(current, step_bundle, config, provider) -> ActionSpace:
    state = MDPState(current, step_bundle, (), 1)
    return action_space(state, config.k, provider, config.l_max)


def _choose(logp: np.ndarray, mode: str, rng) -> int:
    if mode == "greedy":
        return int(np.argmax(logp))
    probs = np.exp(logp)
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(probs) - 1)


def run_episodes(bundles: Sequence[ExpertBundle], references: Sequence[Sequence[str]],
                 params: PolicyParams, config: TrainerConfig, mode: str = "sample",
                 rng: Optional[np.random.Generator] = None, provider=None,
                 contexts: Optional[Dict[str, EpisodeContext]] = None) -> List[EpisodeTrace]:
    """Run one episode per bundle in lockstep, one batched forward per step.

    Within a step, unfinished episodes draw from ``rng`` in list order, so
    the result depends only on the inputs and the generator state.
    """
    if mode not in ("sample", "greedy"):
        raise ValueError("mode must be 'sample' or 'greedy'")
    if mode == "sample" and rng is None:
        raise ValueError("sampling needs an rng")
    provider = provider or default_provider()
    contexts = {} if contexts is None else contexts
    ctxs = []
    for b in bundles:
        ctx = contexts.get(b.scene_id)
        if ctx is None or ctx.tokens != _ctx_tokens(b):
            ctx = contexts[b.scene_id] = EpisodeContext(params, b)
        ctxs.append(ctx)
    n = len(bundles)
    current = [initial_state(b, tuple(r), config.l_max).current for b, r in zip(bundles, references)]
    logs = [dict(states=[], actions=[], ops=[], lps=[], ents=[]) for _ in range(n)]
    active = list(range(n))
    step = 1
    while active:
        spaces = [_space(current[i], bundles[i], config, provider) for i in active]
        with torch.no_grad():
            out = batch_forward(params, [(ctxs[i], current[i], step, sp)
                                         for i, sp in zip(active, spaces)])
            ents = out.entropy().numpy()
            joints = [out.joint(j).numpy() for j in range(len(active))]
        still = []
        for j, i in enumerate(active):
            logp = joints[j]
            idx = _choose(logp, mode, rng)
            op = spaces[j][idx]
            rec = logs[i]
            rec["states"].append((current[i], step))
            rec["actions"].append(idx)
            rec["ops"].append(op)
            rec["lps"].append(float(logp[idx]))
            rec["ents"].append(float(ents[j]))
            if isinstance(op, Stop):
                continue
            current[i] = apply_edit(current[i], op)
            if step < config.t_max:
                still.append(i)
        active = still
        step += 1
    traces = []
    for i, (b, r) in enumerate(zip(bundles, references)):
        rec = logs[i]
        reward = terminal_reward(current[i], b, r, config, provider)
        T = len(rec["actions"])
        returns = [config.gamma ** (T - t) * reward.total for t in range(1, T + 1)]
        traces.append(EpisodeTrace(b.scene_id, b, tuple(r), rec["states"], rec["actions"],
                                   rec["ops"], rec["lps"], rec["ents"], current[i], reward,
                                   returns))
    return traces


def run_episode(bundle: ExpertBundle, reference: Sequence[str], params: PolicyParams,
                config: TrainerConfig, mode: str = "sample",
                rng: Optional[np.random.Generator] = None, provider=None,
                ctx: Optional[EpisodeContext] = None) -> EpisodeTrace:
    """Edit ``bundle.aggregated`` until Stop or ``t_max`` steps."""
    contexts = {bundle.scene_id: ctx} if ctx is not None else None
    return run_episodes([bundle], [reference], params, config, mode, rng, provider, contexts)[0]


def scene_bundle(scene, gate_params: GateParams, backend=None, store=None,
                 prompt_k: int = 3) -> ExpertBundle:
    alpha = gate_forward(np.asarray(scene.features), gate_params)
    return gather_bundle(scene, alpha, backend, store, prompt_k)


def rollout(scene, gate_params: GateParams, policy_params: PolicyParams, config: TrainerConfig,
            mode: str = "sample", rng=None, provider=None, backend=None) -> EpisodeTrace:
    """gate -> experts -> edit episode for one scene."""
    bundle = scene_bundle(scene, gate_params, backend)
    return run_episode(bundle, tokenize(scene.reference_text), policy_params, config,
                       mode, rng, provider)


# ------------------------------------------------------------------ gradients

REPLAY_CHUNK = 256


def score_function_gradient(params: PolicyParams, items, beta: float, config, provider,
                            contexts: Optional[Dict[str, EpisodeContext]] = None
                            ) -> Dict[str, torch.Tensor]:
    """Gradient of sum_i w_i * (adv_i * sum_t log pi + beta * mean_t H) over (trace, w, adv) items.

    Every stored step is replayed with autograd in fixed-size padded chunks;
    chunking follows list order so the result does not depend on scheduling.
    """
    contexts = {} if contexts is None else contexts
    entries, c_lp, c_ent, taken = [], [], [], []
    for trace, weight, adv in items:
        ctx = contexts.get(trace.scene_id)
        if ctx is None or ctx.tokens != _ctx_tokens(trace.bundle):
            ctx = contexts[trace.scene_id] = EpisodeContext(params, trace.bundle)
        for (current, step), idx in zip(trace.states, trace.actions):
            entries.append((ctx, current, step, _space(current, trace.bundle, config, provider)))
            taken.append(idx)
            c_lp.append(weight * adv)
            c_ent.append(weight * beta / len(trace))
    names = params.names()
    total = {n: torch.zeros_like(params.tensors[n]) for n in names}
    params.requires_grad_(True)
    try:
        for lo in range(0, len(entries), REPLAY_CHUNK):
            hi = lo + REPLAY_CHUNK
            out = batch_forward(params, entries[lo:hi])
            surrogate = (torch.tensor(c_lp[lo:hi], dtype=torch.float64) * out.taken(taken[lo:hi])).sum()
            if beta:
                surrogate = surrogate + (torch.tensor(c_ent[lo:hi], dtype=torch.float64)
                                         * out.entropy()).sum()
            grads = torch.autograd.grad(surrogate, params.parameters(), allow_unused=True)
            for n, g in zip(names, grads):
                if g is not None:
                    total[n] += g
    finally:
        params.requires_grad_(False)
    return total


def _ctx_tokens(bundle) -> Tuple[str, ...]:
    return tuple(sorted(set(bundle.aggregated) | {w for t in bundle.text_list() for w in t}))


def adam_step(params: PolicyParams, grads: Dict[str, torch.Tensor], state: AdamState,
              config: TrainerConfig) -> None:
    """One Adam ascent step, in place."""
    state.step += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    with torch.no_grad():
        for name, g in grads.items():
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(g)
                state.v[name] = torch.zeros_like(g)
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            params.tensors[name] += config.learning_rate * (m / c1) / (torch.sqrt(v / c2) + config.adam_eps)


def reinforce_update(traces: Sequence[EpisodeTrace], params: PolicyParams,
                     baseline: BaselineState, config: TrainerConfig,
                     adam: Optional[AdamState] = None, provider=None,
                     contexts: Optional[Dict[str, EpisodeContext]] = None):
    """Apply one REINFORCE step; returns (params, baseline, stats).

    The estimate is (1/N) sum_i (sum_t grad log pi)(G_i - b) plus beta times
    the gradient of the batch-mean per-step entropy. The baseline is then
    moved towards the batch-mean return by exponential averaging; on the
    first call it is seeded with that mean.
    """
    if not traces:
        raise EmptyBatch("reinforce_update needs at least one trace")
    provider = provider or default_provider()
    adam = adam if adam is not None else AdamState()
    n = len(traces)
    returns = np.array([t.total_return for t in traces])
    b = float(returns.mean()) if baseline.value is None else baseline.value
    items = [(t, 1.0 / n, float(g - b)) for t, g in zip(traces, returns)]
    grads = score_function_gradient(params, items, config.beta, config, provider, contexts)
    sq = sum(float((g * g).sum()) for g in grads.values())
    if not math.isfinite(sq):
        raise NonFiniteGradient("policy gradient contains NaN or inf; update aborted")
    adam_step(params, grads, adam, config)
    new_b = config.baseline_decay * b + (1 - config.baseline_decay) * float(returns.mean())
    stats = {
        "mean_return": float(returns.mean()),
        "baseline": new_b,
        "grad_norm": math.sqrt(sq),
        "mean_len": float(np.mean([len(t) for t in traces])),
        "mean_entropy": float(np.mean([np.mean(t.entropies) for t in traces])),
    }
    return params, BaselineState(new_b), stats


# ------------------------------------------------------------------ training

@dataclass
class PolicyTrainingResult:
    params: PolicyParams
    log: TrainingLog
    baseline: BaselineState
    adam: AdamState
    iterations: int


def train_policy(scenes: Sequence, gate_params: GateParams, config: TrainerConfig,
                 iterations: int, params: Optional[PolicyParams] = None,
                 baseline: Optional[BaselineState] = None, adam: Optional[AdamState] = None,
                 provider=None, backend=None, store=None, start_iteration: int = 0,
                 progress: Optional[Callable[[Dict[str, float]], None]] = None
                 ) -> PolicyTrainingResult:
    """Batches of ``config.batch_size`` sampled episodes, cycling through ``scenes`` in order."""
    if not scenes:
        raise EmptyDataset("policy training needs at least one scene")
    from .policy import init_policy

    provider = provider or default_provider()
    if params is None:
        vocab = {w for s in scenes for t in s.expert_texts.values() for w in tokenize(t)}
        params = init_policy(sorted(vocab), config.model_dim, config.n_layers, config.n_heads,
                             config.ff_dim, seed=config.seed)
    else:
        params = params.copy()
    baseline = BaselineState(baseline.value) if baseline else BaselineState()
    adam = adam or AdamState()
    bundles = [scene_bundle(s, gate_params, backend, store) for s in scenes]
    refs = [tokenize(s.reference_text) for s in scenes]
    contexts: Dict[str, EpisodeContext] = {}
    for b in bundles:
        contexts[b.scene_id] = EpisodeContext(params, b)
    log = TrainingLog()
    cursor = start_iteration * config.batch_size
    for it in range(start_iteration, start_iteration + iterations):
        # one stream per iteration, so a resumed run matches an uninterrupted one
        rng = np.random.Generator(np.random.PCG64([config.seed, it]))
        picks = [(cursor + j) % len(scenes) for j in range(config.batch_size)]
        cursor += config.batch_size
        traces = run_episodes([bundles[i] for i in picks], [refs[i] for i in picks], params,
                              config, "sample", rng, provider, contexts)
        drift = float(np.mean([
            cosine(provider.embed_seq(t.final), provider.embed_seq(t.bundle.aggregated))
            for t in traces]))
        params, baseline, stats = reinforce_update(traces, params, baseline, config, adam,
                                                   provider, contexts)
        row = {
            "iteration": it + 1,
            "mean_reward": float(np.mean([t.reward.total for t in traces])),
            "mean_len": stats["mean_len"],
            "semantic_drift": drift,
        }
        log.rows.append(row)
        log.episode_rewards.extend(t.reward.total for t in traces)
        if progress:
            progress(row)
    return PolicyTrainingResult(params, log, baseline, adam, start_iteration + iterations)


# ------------------------------------------------------------------ gradient check

@dataclass
class TinyTask:
    bundle: ExpertBundle
    reference: TokenSeq
    config: TrainerConfig
    provider: object = field(default_factory=default_provider)
    max_trajectories: int = 20_000


@dataclass
class GradientCheckResult:
    analytic_vs_enumerated: float
    fd_relative_error: float
    n_trajectories: int
    n_coordinates: int
    analytic: Dict[str, torch.Tensor]
    enumerated: Dict[str, torch.Tensor]

    @property
    def max_relative_error(self) -> float:
        return self.fd_relative_error


def _enumerate(task: TinyTask, params: PolicyParams):
    """All trajectories as (states, actions, final_text)."""
    cfg = task.config
    out = []

    def walk(current, step, states, actions):
        space = _space(current, task.bundle, cfg, task.provider)
        for idx in range(len(space)):
            op = space[idx]
            st = states + [(current, step)]
            ac = actions + [idx]
            if isinstance(op, Stop):
                out.append((st, ac, current))
                continue
            nxt = apply_edit(current, op)
            if step >= cfg.t_max:
                out.append((st, ac, nxt))
            else:
                walk(nxt, step + 1, st, ac)
            if len(out) > task.max_trajectories:
                raise TaskTooLarge(f"more than {task.max_trajectories} trajectories")

    start = initial_state(task.bundle, task.reference, cfg.l_max)
    walk(start.current, 1, [], [])
    return out


def expected_return(params: PolicyParams, task: TinyTask, ctx=None) -> torch.Tensor:
    """J = sum over trajectories of p(traj) * gamma^(T-1) * R(final), by recursion over states."""
    cfg = task.config
    ctx = ctx or EpisodeContext(params, task.bundle)
    cache: Dict[TokenSeq, float] = {}

    def reward(text):
        if text not in cache:
            cache[text] = terminal_reward(text, task.bundle, task.reference, cfg, task.provider).total
        return cache[text]

    def value(current, step):
        space = _space(current, task.bundle, cfg, task.provider)
        logp = action_log_probs(params, ctx, current, step, space)
        terms = []
        for idx in range(len(space)):
            op = space[idx]
            if isinstance(op, Stop):
                # stopping at step t gives T = t
                terms.append(cfg.gamma ** (step - 1) * reward(current))
            elif step >= cfg.t_max:
                terms.append(cfg.gamma ** (step - 1) * reward(apply_edit(current, op)))
            else:
                terms.append(value(apply_edit(current, op), step + 1))
        return (logp.exp() * torch.stack([torch.as_tensor(t, dtype=torch.float64) for t in terms])).sum()

    start = initial_state(task.bundle, task.reference, cfg.l_max)
    return value(start.current, 1)


def policy_gradient_check(params: PolicyParams, task: TinyTask, n_coords: int = 40,
                          step: float = 1e-5, seed: int = 0) -> GradientCheckResult:
    """Compare the score-function gradient with exact enumeration and finite differences."""
    cfg = task.config
    if len(set(task.bundle.aggregated)) > 3 or cfg.t_max > 2:
        raise TaskTooLarge("tiny task needs vocabulary <= 3 and t_max <= 2")
    params = params.copy()
    ctx = EpisodeContext(params, task.bundle)
    trajs = _enumerate(task, params)

    # (a) probability-weighted score-function estimate over every trajectory
    items = []
    with torch.no_grad():
        for states, actions, final in trajs:
            lp = 0.0
            for (current, st), idx in zip(states, actions):
                space = _space(current, task.bundle, cfg, task.provider)
                lp += float(action_log_probs(params, ctx, current, st, space)[idx])
            R = terminal_reward(final, task.bundle, task.reference, cfg, task.provider).total
            G = cfg.gamma ** (len(actions) - 1) * R
            trace = EpisodeTrace(task.bundle.scene_id, task.bundle, task.reference, states,
                                 actions, [], [], [], final, None, [G])
            items.append((trace, math.exp(lp), G))
    analytic = score_function_gradient(params, items, 0.0, cfg, task.provider,
                                       {task.bundle.scene_id: ctx})

    # (b) autograd through the enumerated objective
    params.requires_grad_(True)
    J = expected_return(params, task, ctx)
    enum_grads = torch.autograd.grad(J, params.parameters(), allow_unused=True)
    params.requires_grad_(False)
    enumerated = {n: (g if g is not None else torch.zeros_like(params.tensors[n]))
                  for n, g in zip(params.names(), enum_grads)}
    diff = max(float((analytic[n] - enumerated[n]).abs().max()) if analytic[n].numel() else 0.0
               for n in analytic)

    # (c) central differences of J at sampled coordinates
    rng = np.random.default_rng(seed)
    names = [n for n in params.names() if params.tensors[n].numel()]
    sizes = np.array([params.tensors[n].numel() for n in names], dtype=float)
    worst = 0.0
    for _ in range(n_coords):
        name = names[rng.choice(len(names), p=np.sqrt(sizes) / np.sqrt(sizes).sum())]
        tensor = params.tensors[name]
        flat = int(rng.integers(tensor.numel()))
        view = tensor.view(-1)
        orig = float(view[flat])
        with torch.no_grad():
            view[flat] = orig + step
            jp = float(expected_return(params, task, ctx))
            view[flat] = orig - step
            jm = float(expected_return(params, task, ctx))
            view[flat] = orig
        fd = (jp - jm) / (2 * step)
        an = float(analytic[name].view(-1)[flat])
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return GradientCheckResult(diff, worst, len(trajs), n_coords, analytic, enumerated)
