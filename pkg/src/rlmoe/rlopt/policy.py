"""Transformer-decoder edit policy with factored op / position / word heads.

The decoder reads the current tokens (plus a trailing END slot so Insert can
point past the last token) with causal self-attention, and cross-attends to
a memory of four alpha-scaled expert summaries and a step encoding. The op
head reads the END slot, which sees the whole sequence. The log probability
of an action is

    log p(op) + log p(pos | op) + log p(word | op, pos)

with the terms that do not apply to Stop / Delete / Reorder omitted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from ..embeddings import HashedProjection
from ..errors import EmptyActionList
from .env import DELETE, INSERT, REORDER, STOP, SUBSTITUTE, ActionSpace, MDPState

DTYPE = torch.float64
N_OPS = 5


@lru_cache(maxsize=8)
def _sinusoid(n: int, dim: int) -> torch.Tensor:
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return torch.tensor(table, dtype=DTYPE)


def _layer_names(l: int) -> List[str]:
    return [f"l{l}.{n}" for n in (
        "ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
        "ln2_g", "ln2_b", "cq", "ck", "cv", "co",
        "ln3_g", "ln3_b", "ff1", "ff1_b", "ff2", "ff2_b",
    )]


@dataclass
class PolicyParams:
    vocab: Tuple[str, ...]
    tensors: Dict[str, torch.Tensor]
    n_heads: int = 4
    embed_seed: int = 0
    index: Dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @property
    def model_dim(self) -> int:
        return self.tensors["kind_emb"].shape[1]

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.tensors if k.endswith(".wq"))

    def names(self) -> List[str]:
        return list(self.tensors)

    def parameters(self) -> List[torch.Tensor]:
        return list(self.tensors.values())

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.vocab, {k: v.detach().clone() for k, v in self.tensors.items()},
                            self.n_heads, self.embed_seed)

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(self.vocab, {k: torch.zeros_like(v) for k, v in self.tensors.items()},
                            self.n_heads, self.embed_seed)

    def requires_grad_(self, flag: bool = True) -> "PolicyParams":
        for v in self.tensors.values():
            v.requires_grad_(flag)
        return self

    def num_parameters(self) -> int:
        return sum(v.numel() for v in self.tensors.values())


def policy_shapes(n_vocab: int, model_dim: int = 64, n_layers: int = 2,
                  ff_dim: int = 128) -> Dict[str, Tuple[int, ...]]:
    """Tensor names and shapes, in the order :func:`init_policy` creates them."""
    d = model_dim
    shapes: Dict[str, Tuple[int, ...]] = {"tok_table": (n_vocab, d), "end_vec": (d,),
                                          "kind_emb": (4, d)}
    for l in range(n_layers):
        for name in _layer_names(l):
            short = name.split(".", 1)[1]
            if short == "ff1":
                shapes[name] = (d, ff_dim)
            elif short == "ff2":
                shapes[name] = (ff_dim, d)
            elif short == "ff1_b":
                shapes[name] = (ff_dim,)
            elif short.endswith(("_g", "_b")):
                shapes[name] = (d,)
            else:
                shapes[name] = (d, d)
    shapes.update(lnf_g=(d,), lnf_b=(d,), op_w=(d, N_OPS), op_b=(N_OPS,), ptr=(4, d),
                  word_ins=(d, d), word_sub=(d, d))
    return shapes


def init_policy(vocab: Sequence[str], model_dim: int = 64, n_layers: int = 2, n_heads: int = 4,
                ff_dim: int = 128, seed: int = 0, embed_seed: int = 0,
                head_scale: float = 0.02) -> PolicyParams:
    """Random initialisation; token rows start from the hashed embedding of each word."""
    d = model_dim
    gen = torch.Generator().manual_seed(seed)

    def normal(*shape, std):
        return torch.randn(*shape, generator=gen, dtype=DTYPE) * std

    vocab = tuple(sorted(set(vocab)))
    hp = HashedProjection(embed_seed, d)
    t: Dict[str, torch.Tensor] = {}
    if vocab:
        t["tok_table"] = torch.tensor(np.stack([hp.embed_token(w) for w in vocab]) * math.sqrt(d),
                                      dtype=DTYPE)
    else:
        t["tok_table"] = torch.zeros(0, d, dtype=DTYPE)
    t["end_vec"] = normal(d, std=1.0)
    t["kind_emb"] = normal(4, d, std=1.0)
    for l in range(n_layers):
        for name in _layer_names(l):
            short = name.split(".", 1)[1]
            if short.endswith("_g"):
                t[name] = torch.ones(d, dtype=DTYPE)
            elif short.endswith("_b"):
                width = ff_dim if short == "ff1_b" else d
                t[name] = torch.zeros(width, dtype=DTYPE)
            elif short == "ff1":
                t[name] = normal(d, ff_dim, std=1 / math.sqrt(d))
            elif short == "ff2":
                t[name] = normal(ff_dim, d, std=1 / math.sqrt(ff_dim))
            else:
                t[name] = normal(d, d, std=1 / math.sqrt(d))
    t["lnf_g"] = torch.ones(d, dtype=DTYPE)
    t["lnf_b"] = torch.zeros(d, dtype=DTYPE)
    t["op_w"] = normal(d, N_OPS, std=head_scale)
    t["op_b"] = torch.zeros(N_OPS, dtype=DTYPE)
    t["ptr"] = normal(4, d, std=head_scale)
    t["word_ins"] = normal(d, d, std=head_scale)
    t["word_sub"] = normal(d, d, std=head_scale)
    return PolicyParams(vocab, t, n_heads, embed_seed)


class EpisodeContext:
    """Per-episode constants: local vocabulary, expert token mixtures and alpha."""

    def __init__(self, params: PolicyParams, bundle):
        d = params.model_dim
        self.tokens = tuple(sorted(set(bundle.aggregated) | {w for t in bundle.text_list() for w in t}))
        self.local = {w: i for i, w in enumerate(self.tokens)}
        idx = [params.index.get(w, -1) for w in self.tokens]
        self.in_vocab = torch.tensor([i >= 0 for i in idx], dtype=torch.bool)[:, None]
        self.vocab_idx = torch.tensor([max(i, 0) for i in idx], dtype=torch.long)
        hp = HashedProjection(params.embed_seed, d)
        oov = [hp.embed_token(w) * math.sqrt(d) for w in self.tokens]
        self.oov = torch.tensor(np.stack(oov) if oov else np.zeros((0, d)), dtype=DTYPE)
        mix = np.zeros((4, len(self.tokens)))
        for m, text in enumerate(bundle.text_list()):
            for w in text:
                mix[m, self.local[w]] += 1.0 / len(text)
        self.mix = torch.tensor(mix, dtype=DTYPE)
        self.alpha = torch.tensor(bundle.alpha, dtype=DTYPE)[:, None]

    def embeddings(self, params: PolicyParams) -> torch.Tensor:
        table = params.tensors["tok_table"]
        if table.shape[0] == 0:
            return self.oov
        return torch.where(self.in_vocab, table.index_select(0, self.vocab_idx), self.oov)


def _layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdim=True)
    var = ((x - mu) ** 2).mean(-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * g + b


def _attention(q_in, kv_in, wq, wk, wv, wo, n_heads, causal):
    n, d = q_in.shape
    m = kv_in.shape[0]
    dh = d // n_heads
    q = (q_in @ wq).view(n, n_heads, dh).transpose(0, 1)
    k = (kv_in @ wk).view(m, n_heads, dh).transpose(0, 1)
    v = (kv_in @ wv).view(m, n_heads, dh).transpose(0, 1)
    scores = q @ k.transpose(1, 2) / math.sqrt(dh)
    if causal:
        mask = torch.ones(n, m, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
    out = torch.softmax(scores, dim=-1) @ v
    return out.transpose(0, 1).reshape(n, d) @ wo


def encode(params: PolicyParams, ctx: EpisodeContext, current: Sequence[str], step: int):
    """Hidden states for every token position plus the END slot: shape (L+1, d)."""
    p = params.tensors
    d = params.model_dim
    emb = ctx.embeddings(params)
    ids = torch.tensor([ctx.local[w] for w in current], dtype=torch.long)
    n = len(current)
    pe = _sinusoid(max(256, n + 1, step + 1), d)
    x = torch.cat([emb.index_select(0, ids), p["end_vec"][None, :]], dim=0) + pe[: n + 1]
    memory = torch.cat([ctx.alpha * (ctx.mix @ emb) + p["kind_emb"], pe[step][None, :]], dim=0)
    for l in range(params.n_layers):
        g = lambda name: p[f"l{l}.{name}"]
        a = _layer_norm(x, g("ln1_g"), g("ln1_b"))
        x = x + _attention(a, a, g("wq"), g("wk"), g("wv"), g("wo"), params.n_heads, True)
        a = _layer_norm(x, g("ln2_g"), g("ln2_b"))
        x = x + _attention(a, memory, g("cq"), g("ck"), g("cv"), g("co"), params.n_heads, False)
        a = _layer_norm(x, g("ln3_g"), g("ln3_b"))
        x = x + torch.relu(a @ g("ff1") + g("ff1_b")) @ g("ff2") + g("ff2_b")
    return _layer_norm(x, p["lnf_g"], p["lnf_b"])


def action_log_probs(params: PolicyParams, ctx: EpisodeContext, current: Sequence[str],
                     step: int, space: ActionSpace) -> torch.Tensor:
    """Log-probabilities of every action in ``space``, in its order."""
    if len(space) == 0:
        raise EmptyActionList("no candidate actions")
    p = params.tensors
    d = params.model_dim
    h = encode(params, ctx, current, step)
    n = len(current)
    avail = list(space.available_ops)
    op_logits = h[n] @ p["op_w"] + p["op_b"]
    op_lp = torch.log_softmax(op_logits[avail], dim=0)
    lp_op = {op: op_lp[i] for i, op in enumerate(avail)}
    blocks = []
    if STOP in lp_op:
        blocks.append(lp_op[STOP][None])
    if DELETE in lp_op:
        blocks.append(lp_op[DELETE] + torch.log_softmax(h[:n] @ p["ptr"][0], 0))
    if REORDER in lp_op:
        blocks.append(lp_op[REORDER] + torch.log_softmax(h[: n - 1] @ p["ptr"][1], 0))
    if INSERT in lp_op or SUBSTITUTE in lp_op:
        emb = ctx.embeddings(params)
        cand = emb.index_select(0, torch.tensor([ctx.local[w] for w in space.words]))
        for op, rows, ptr_row, w_name in ((INSERT, n + 1, 2, "word_ins"),
                                          (SUBSTITUTE, n, 3, "word_sub")):
            if op not in lp_op:
                continue
            hs = h[:rows]
            pos_lp = torch.log_softmax(hs @ p["ptr"][ptr_row], 0)
            word_lp = torch.log_softmax((hs @ p[w_name]) @ cand.T / math.sqrt(d), dim=1)
            blocks.append((lp_op[op] + pos_lp[:, None] + word_lp).reshape(-1))
    logp = torch.cat(blocks)
    return logp - torch.logsumexp(logp, 0)


def policy_forward(state: MDPState, actions: ActionSpace, params: PolicyParams,
                   ctx: Optional[EpisodeContext] = None) -> np.ndarray:
    """Action probabilities as a float64 numpy vector."""
    ctx = ctx or EpisodeContext(params, state.bundle)
    with torch.no_grad():
        return action_log_probs(params, ctx, state.current, state.step, actions).exp().numpy()


# ---------------------------------------------------------------- batched path
#
# Same network evaluated on many states at once. States are right-padded;
# under causal self-attention real positions never attend to the padding, so
# results match ``action_log_probs`` up to floating-point summation order.

def _masked_log_softmax(scores: torch.Tensor, valid: torch.Tensor, dim: int) -> torch.Tensor:
    any_valid = valid.any(dim=dim, keepdim=True)
    scores = scores.masked_fill(~valid, float("-inf")).masked_fill(~any_valid, 0.0)
    return torch.log_softmax(scores, dim=dim).masked_fill(~valid, 0.0)


def _batch_attention(q_in, kv_in, wq, wk, wv, wo, n_heads, causal):
    bsz, n, d = q_in.shape
    m = kv_in.shape[1]
    dh = d // n_heads
    q = (q_in @ wq).view(bsz, n, n_heads, dh).transpose(1, 2)
    k = (kv_in @ wk).view(bsz, m, n_heads, dh).transpose(1, 2)
    v = (kv_in @ wv).view(bsz, m, n_heads, dh).transpose(1, 2)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if causal:
        mask = torch.ones(n, m, dtype=torch.bool).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
    out = torch.softmax(scores, dim=-1) @ v
    return out.transpose(1, 2).reshape(bsz, n, d) @ wo


class BatchOutput:
    """Factored log-probabilities for a batch of states.

    ``pos_lp[b, p, j]`` is log p(pos=p | op=j+1) and ``word_lp[j][b, p, w]``
    is log p(word=w | op, pos=p) for j = 0 (Insert) and 1 (Substitute);
    invalid entries are zero and masked by the ``*_valid`` tensors.
    """

    def __init__(self, spaces, op_lp, op_valid, pos_lp, pos_valid, word_lp, word_valid):
        self.spaces = spaces
        self.op_lp, self.op_valid = op_lp, op_valid
        self.pos_lp, self.pos_valid = pos_lp, pos_valid
        self.word_lp, self.word_valid = word_lp, word_valid

    def joint(self, b: int) -> torch.Tensor:
        """Full log-probability vector of state ``b`` in ActionSpace order."""
        sp = self.spaces[b]
        n, k = sp.length, len(sp.words)
        op = self.op_lp[b]
        blocks = [op[STOP][None]]
        if n:
            blocks.append(op[DELETE] + self.pos_lp[b, :n, 0])
        if n > 1:
            blocks.append(op[REORDER] + self.pos_lp[b, : n - 1, 1])
        if k and sp.allow_insert:
            blocks.append((op[INSERT] + self.pos_lp[b, : n + 1, 2, None]
                           + self.word_lp[0][b, : n + 1, :k]).reshape(-1))
        if k and n:
            blocks.append((op[SUBSTITUTE] + self.pos_lp[b, :n, 3, None]
                           + self.word_lp[1][b, :n, :k]).reshape(-1))
        logp = torch.cat(blocks)
        return logp - torch.logsumexp(logp, 0)

    def taken(self, actions: Sequence[int]) -> torch.Tensor:
        """log pi(a_b | s_b) for one action index per state."""
        ops, pos, word = [], [], []
        for sp, idx in zip(self.spaces, actions):
            op = sp.op_type(idx)
            off = idx - sum(sp.sizes[:op])
            k = max(len(sp.words), 1)
            if op in (INSERT, SUBSTITUTE):
                p, w = divmod(off, k)
            else:
                p, w = off, 0
            ops.append(op)
            pos.append(p if op != STOP else 0)
            word.append(w)
        bsz = len(ops)
        ar = torch.arange(bsz)
        op_t = torch.tensor(ops)
        pos_t = torch.tensor(pos)
        word_t = torch.tensor(word)
        lp = self.op_lp[ar, op_t]
        pos_term = self.pos_lp[ar, pos_t, (op_t - 1).clamp(min=0)]
        lp = lp + torch.where(op_t != STOP, pos_term, torch.zeros_like(pos_term))
        ins = self.word_lp[0][ar, pos_t, word_t]
        sub = self.word_lp[1][ar, pos_t, word_t]
        lp = lp + torch.where(op_t == INSERT, ins, torch.zeros_like(ins))
        lp = lp + torch.where(op_t == SUBSTITUTE, sub, torch.zeros_like(sub))
        return lp

    def entropy(self) -> torch.Tensor:
        """Exact entropy of each state's full action distribution, from the factors."""
        p_op = self.op_lp.exp() * self.op_valid
        h = -(p_op * self.op_lp).sum(1)
        p_pos = self.pos_lp.exp() * self.pos_valid
        h_pos = -(p_pos * self.pos_lp).sum(1)  # (B, 4)
        for j, op in ((0, INSERT), (1, SUBSTITUTE)):
            p_w = self.word_lp[j].exp() * self.word_valid
            h_w = -(p_w * self.word_lp[j]).sum(2)  # (B, P)
            h_pos = h_pos.clone()
            h_pos[:, op - 1] = h_pos[:, op - 1] + (p_pos[:, :, op - 1] * h_w).sum(1)
        return h + (p_op[:, 1:] * h_pos).sum(1)


def batch_forward(params: PolicyParams, entries) -> BatchOutput:
    """Evaluate ``entries`` = [(ctx, current, step, space), ...] in one padded pass."""
    if not entries:
        raise EmptyActionList("no states to evaluate")
    p = params.tensors
    d = params.model_dim
    bsz = len(entries)
    ctx_rows: Dict[int, int] = {}
    # row 0 is a zero pad so padded indices stay valid even with empty vocabularies
    embs, mems = [torch.zeros(1, params.model_dim, dtype=DTYPE)], []
    offset = 1
    for ctx, _, _, _ in entries:
        if id(ctx) not in ctx_rows:
            ctx_rows[id(ctx)] = offset
            e = ctx.embeddings(params)
            embs.append(e)
            mems.append(ctx.alpha * (ctx.mix @ e) + p["kind_emb"])
            offset += e.shape[0]
    emb_all = torch.cat(embs, 0)
    mem_index = {cid: i for i, cid in enumerate(ctx_rows)}
    mem_all = torch.stack(mems)

    lengths = [len(cur) for _, cur, _, _ in entries]
    P = max(lengths) + 1
    K = max(max((len(sp.words) for *_, sp in entries), default=0), 1)
    tok_idx = torch.zeros(bsz, P, dtype=torch.long)
    is_tok = torch.zeros(bsz, P, 1, dtype=torch.bool)
    is_end = torch.zeros(bsz, P, 1, dtype=torch.bool)
    cand_idx = torch.zeros(bsz, K, dtype=torch.long)
    word_valid = torch.zeros(bsz, 1, K, dtype=torch.bool)
    pos_valid = torch.zeros(bsz, P, 4, dtype=torch.bool)
    op_valid = torch.zeros(bsz, N_OPS, dtype=torch.bool)
    steps = []
    for b, (ctx, cur, step, sp) in enumerate(entries):
        base = ctx_rows[id(ctx)]
        n = len(cur)
        if n:
            tok_idx[b, :n] = torch.tensor([base + ctx.local[w] for w in cur])
            is_tok[b, :n] = True
        is_end[b, n] = True
        k = len(sp.words)
        if k:
            cand_idx[b, :k] = torch.tensor([base + ctx.local[w] for w in sp.words])
            word_valid[b, 0, :k] = True
        pos_valid[b, :n, 0] = True
        pos_valid[b, : max(n - 1, 0), 1] = True
        if k and sp.allow_insert:
            pos_valid[b, : n + 1, 2] = True
        if k:
            pos_valid[b, :n, 3] = True
        op_valid[b] = torch.tensor([s > 0 for s in sp.sizes])
        steps.append(step)
    pe = _sinusoid(max(256, P, max(steps) + 1), d)
    x = emb_all[tok_idx]
    x = torch.where(is_tok, x, torch.where(is_end, p["end_vec"], torch.zeros((), dtype=DTYPE)))
    x = x + pe[:P]
    mem_sel = torch.tensor([mem_index[id(ctx)] for ctx, *_ in entries])
    memory = torch.cat([mem_all[mem_sel], pe[torch.tensor(steps)][:, None, :]], dim=1)
    for l in range(params.n_layers):
        g = lambda name: p[f"l{l}.{name}"]
        a = _layer_norm(x, g("ln1_g"), g("ln1_b"))
        x = x + _batch_attention(a, a, g("wq"), g("wk"), g("wv"), g("wo"), params.n_heads, True)
        a = _layer_norm(x, g("ln2_g"), g("ln2_b"))
        x = x + _batch_attention(a, memory, g("cq"), g("ck"), g("cv"), g("co"), params.n_heads, False)
        a = _layer_norm(x, g("ln3_g"), g("ln3_b"))
        x = x + torch.relu(a @ g("ff1") + g("ff1_b")) @ g("ff2") + g("ff2_b")
    h = _layer_norm(x, p["lnf_g"], p["lnf_b"])

    ar = torch.arange(bsz)
    h_end = h[ar, torch.tensor(lengths)]
    op_lp = _masked_log_softmax(h_end @ p["op_w"] + p["op_b"], op_valid, 1)
    pos_lp = _masked_log_softmax(h @ p["ptr"].T, pos_valid, 1)
    cand = emb_all[cand_idx]  # (B, K, d)
    word_lp = []
    for name in ("word_ins", "word_sub"):
        scores = (h @ p[name]) @ cand.transpose(1, 2) / math.sqrt(d)
        word_lp.append(_masked_log_softmax(scores, word_valid.expand(bsz, P, K), 2))
    spaces = [sp for *_, sp in entries]
    return BatchOutput(spaces, op_lp, op_valid, pos_lp, pos_valid, word_lp,
                       word_valid.expand(bsz, P, K))
