"""The learnable vector field driving prototype refinement.

Stage 1 gates each support feature against the current prototypes and takes
the difference (a per-sample "distance gradient"). Stage 2 embeds each
(prototype row, sample, label-match flag) triple, lets the samples attend to
each other per class row, and emits per-sample weights that sum to one across
the support set. The field value is the weighted sum of distance gradients,
damped by an exponential decay in time.

Two implementations coexist: per-sample list functions that mirror the
stage-by-stage definition (readable, used as cross-checks), and a grouped
layout used by :func:`field_eval` where row ``n * |S| + i`` holds the pair
(class n, sample i). The grouped path is differentiable end to end through
the tensor tape.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .data import EmbeddingSet, rng_for
from .errors import ShapeError, UsageError

N_HEADS = 8
HEAD_WIDTH = 16
ATTN_WIDTH = N_HEADS * HEAD_WIDTH

# serialization / flattening order of the learnable tensors
TENSOR_FIELDS = ("ws", "bs", "we", "be", "wq", "bq", "wk", "bk",
                 "wv", "bv", "wo", "bo", "wm", "bm")


def _glorot(rng, fan_in, fan_out, shape):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class FieldParameters:
    """All learnable tensors of the field plus its fixed hyperparameters.

    ws/bs: gate map (2D -> D); we/be: embedding map (2D+1 -> d_e);
    wq..bo: attention projections (d_e -> 8*16 heads, output back to d_e);
    wm/bm: weight generator (d_e -> D). Entries may be tape Vars during
    differentiation; use plain arrays everywhere else.
    """

    ws: np.ndarray
    bs: np.ndarray
    we: np.ndarray
    be: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    wm: np.ndarray
    bm: np.ndarray
    dim: int
    embed_dim: int
    decay_rate: float = 0.1
    horizon: float = 30.0

    @classmethod
    def initialize(cls, dim, embed_dim=1024, seed=0, decay_rate=0.1, horizon=30.0):
        """Glorot-uniform weights, zero biases, drawn from one Philox stream."""
        rng = rng_for(seed)
        d, de = dim, embed_dim
        return cls(
            ws=_glorot(rng, 2 * d, d, (2 * d, d)), bs=np.zeros((1, d)),
            we=_glorot(rng, 2 * d + 1, de, (2 * d + 1, de)), be=np.zeros((1, de)),
            wq=_glorot(rng, de, HEAD_WIDTH, (de, ATTN_WIDTH)), bq=np.zeros((1, ATTN_WIDTH)),
            wk=_glorot(rng, de, HEAD_WIDTH, (de, ATTN_WIDTH)), bk=np.zeros((1, ATTN_WIDTH)),
            wv=_glorot(rng, de, HEAD_WIDTH, (de, ATTN_WIDTH)), bv=np.zeros((1, ATTN_WIDTH)),
            wo=_glorot(rng, ATTN_WIDTH, de, (ATTN_WIDTH, de)), bo=np.zeros((1, de)),
            wm=_glorot(rng, de, d, (de, d)), bm=np.zeros((1, d)),
            dim=d, embed_dim=de, decay_rate=decay_rate, horizon=horizon)

    def tensors(self):
        """Learnable tensors in their fixed serialization order."""
        return {name: getattr(self, name) for name in TENSOR_FIELDS}

    @property
    def n_params(self):
        return sum(T.value_of(t).size for t in self.tensors().values())

    def flatten(self) -> np.ndarray:
        return np.concatenate([np.asarray(t).ravel() for t in self.tensors().values()])

    def from_flat(self, flat) -> "FieldParameters":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"flat vector has {flat.size} entries, needs {self.n_params}")
        out = {}
        pos = 0
        for name, t in self.tensors().items():
            t = np.asarray(t)
            out[name] = flat[pos:pos + t.size].reshape(t.shape)
            pos += t.size
        return replace(self, **out)

    def lift(self, tape) -> "FieldParameters":
        """Copy with every tensor recorded as a leaf on ``tape``."""
        return replace(self, **{k: tape.var(v) for k, v in self.tensors().items()})


def parameter_count(dim, embed_dim) -> int:
    """Learnable scalar count of FieldParameters plus the fusion vector u,
    independent of the number of classes."""
    probe = FieldParameters.initialize(dim, embed_dim, seed=0)
    return probe.n_params + dim


@dataclass
class SupportContext:
    """Support features with one-hot labels plus the grouped-layout constants
    consumed by field_eval (built once per episode, reused every step)."""

    features: np.ndarray   # (|S|, D) unit rows
    one_hot: np.ndarray    # (|S|, N)

    def __post_init__(self):
        s, n = self.one_hot.shape
        if self.features.shape[0] != s:
            raise ShapeError("features and one_hot row counts differ")
        rowsums = self.one_hot.sum(axis=1)
        if not np.allclose(rowsums, 1.0):
            raise UsageError("each one_hot row must sum to 1")
        self.n_classes = n
        self.n_samples = s
        # row n*|S| + i of the grouped layout is (class n, sample i)
        self.v_rep = np.tile(self.features, (n, 1))
        self.class_index = np.repeat(np.arange(n), s)
        self.indicator = self.one_hot.T.reshape(n * s, 1).copy()

    @classmethod
    def from_embedding_set(cls, support: EmbeddingSet) -> "SupportContext":
        one_hot = np.eye(support.n_classes)[support.labels]
        return cls(support.features.copy(), one_hot)


# ---------------------------------------------------------------------------
# per-sample reference implementations (plain numpy, one matrix per sample)


def distance_gradients(P, ctx: SupportContext, params: FieldParameters):
    """Gated difference between each broadcast sample and the prototypes."""
    P = T.value_of(P)
    ws, bs = T.value_of(params.ws), T.value_of(params.bs)
    out = []
    for i in range(ctx.n_samples):
        v_i = np.tile(ctx.features[i], (ctx.n_classes, 1))
        gate = _sigmoid_np(np.concatenate([P, v_i], axis=1) @ ws + bs)
        out.append(gate * v_i - P)
    return out


def sample_embeddings(P, ctx: SupportContext, params: FieldParameters):
    """Per class row: embed [prototype, sample, label-match flag]."""
    P = T.value_of(P)
    we, be = T.value_of(params.we), T.value_of(params.be)
    out = []
    for i in range(ctx.n_samples):
        v_i = np.tile(ctx.features[i], (ctx.n_classes, 1))
        flag = ctx.one_hot[i].reshape(-1, 1)
        e = np.concatenate([P, v_i, flag], axis=1) @ we + be
        out.append(np.maximum(e, 0.0))
    return out


def attend(embeddings, params: FieldParameters):
    """Multi-head self-attention across samples, per class row, residual added.

    Token order carries no information (no positional encoding), so permuting
    the samples permutes the outputs identically.
    """
    e_list = [T.value_of(e) for e in embeddings]
    s = len(e_list)
    n, de = e_list[0].shape
    wq, bq = T.value_of(params.wq), T.value_of(params.bq)
    wk, bk = T.value_of(params.wk), T.value_of(params.bk)
    wv, bv = T.value_of(params.wv), T.value_of(params.bv)
    wo, bo = T.value_of(params.wo), T.value_of(params.bo)

    out = [np.empty_like(e) for e in e_list]
    for row in range(n):
        tokens = np.stack([e[row] for e in e_list])      # (|S|, d_e)
        q = (tokens @ wq + bq).reshape(s, N_HEADS, HEAD_WIDTH)
        k = (tokens @ wk + bk).reshape(s, N_HEADS, HEAD_WIDTH)
        v = (tokens @ wv + bv).reshape(s, N_HEADS, HEAD_WIDTH)
        mixed = np.empty_like(q)
        for h in range(N_HEADS):
            scores = q[:, h] @ k[:, h].T / np.sqrt(HEAD_WIDTH)
            scores -= scores.max(axis=1, keepdims=True)
            a = np.exp(scores)
            a /= a.sum(axis=1, keepdims=True)
            mixed[:, h] = a @ v[:, h]
        attn = mixed.reshape(s, ATTN_WIDTH) @ wo + bo
        for i in range(s):
            out[i][row] = e_list[i][row] + attn[i]
    return out


def generate_weights(attended, params: FieldParameters):
    """Linear map then softmax across the sample axis per (class, channel)."""
    a_list = [T.value_of(a) for a in attended]
    wm, bm = T.value_of(params.wm), T.value_of(params.bm)
    raw = np.stack([a @ wm + bm for a in a_list])         # (|S|, N, D)
    raw -= raw.max(axis=0, keepdims=True)
    e = np.exp(raw)
    w = e / e.sum(axis=0, keepdims=True)
    return list(w)


def field_reference(P, t, ctx: SupportContext, params: FieldParameters):
    """Stage-by-stage evaluation via the list functions (cross-check path)."""
    d = distance_gradients(P, ctx, params)
    e = sample_embeddings(P, ctx, params)
    w = generate_weights(attend(e, params), params)
    total = sum(wi * di for wi, di in zip(w, d))
    return np.exp(-params.decay_rate * t / params.horizon) * total


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# grouped fast path


def field_eval(P, t, ctx: SupportContext, params: FieldParameters):
    """dP/dt at time t. Differentiable in P and every params tensor when they
    are recorded Vars; plain arrays dispatch to a fused numpy evaluation."""
    if not isinstance(P, T.Var) and not isinstance(params.ws, T.Var):
        return _field_eval_plain(T.value_of(P), t, ctx, params)
    s = ctx.n_samples
    p_rep = T.take_rows(P, ctx.class_index)                      # (N|S|, D)
    gate = T.sigmoid(T.affine(T.concat_cols(p_rep, ctx.v_rep), params.ws, params.bs))
    dist = T.sub(T.mul(gate, ctx.v_rep), p_rep)

    emb_in = T.concat_cols(p_rep, ctx.v_rep, ctx.indicator)      # (N|S|, 2D+1)
    emb = T.relu(T.affine(emb_in, params.we, params.be))

    q = T.affine(emb, params.wq, params.bq)
    k = T.affine(emb, params.wk, params.bk)
    v = T.affine(emb, params.wv, params.bv)
    mixed = T.block_attention(q, k, v, block_len=s, n_heads=N_HEADS)
    attended = T.add(emb, T.affine(mixed, params.wo, params.bo))

    raw = T.affine(attended, params.wm, params.bm)
    weights = T.softmax_blocks(raw, block_len=s)
    total = T.sum_blocks(T.mul(weights, dist), block_len=s)      # (N, D)
    decay = float(np.exp(-params.decay_rate * t / params.horizon))
    return T.smul(total, decay)


def _field_eval_plain(P, t, ctx: SupportContext, params: FieldParameters):
    """Ungraded twin of the tape path above (same math, fewer allocations)."""
    s = ctx.n_samples
    d = P.shape[1]
    p_rep = P[ctx.class_index]
    emb_in = np.concatenate([p_rep, ctx.v_rep, ctx.indicator], axis=1)
    gate_in = np.ascontiguousarray(emb_in[:, :2 * d])
    gate = _sigmoid_np(gate_in @ params.ws + params.bs)
    dist = gate * ctx.v_rep - p_rep

    emb = np.maximum(emb_in @ params.we + params.be, 0.0)
    q = emb @ params.wq + params.bq
    k = emb @ params.wk + params.bk
    v = emb @ params.wv + params.bv
    mixed, _, _, _, _, _ = T.block_attention_values(q, k, v, s, N_HEADS)
    attended = emb + (mixed @ params.wo + params.bo)

    raw = attended @ params.wm + params.bm
    blocks = raw.reshape(-1, s, d)
    shifted = blocks - blocks.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    weights = e / e.sum(axis=1, keepdims=True)
    total = (weights * dist.reshape(-1, s, d)).sum(axis=1)
    return np.exp(-params.decay_rate * t / params.horizon) * total


class AdjointField:
    """Evaluation plus vector-Jacobian products of the field, as consumed by
    the adjoint integrator. ``vjp(p, t, a)`` returns (f, a^T df/dp, a^T df/dtheta)
    with the parameter part flattened in TENSOR_FIELDS order."""

    def __init__(self, ctx: SupportContext, params: FieldParameters):
        self.ctx = ctx
        self.params = params
        self.n_params = params.n_params

    def __call__(self, p, t):
        return field_eval(p, t, self.ctx, self.params)

    def vjp(self, p, t, a):
        tape = T.Tape()
        p_var = tape.var(p)
        lifted = self.params.lift(tape)
        out = field_eval(p_var, t, self.ctx, lifted)
        leaves = [p_var] + [getattr(lifted, name) for name in TENSOR_FIELDS]
        grads = tape.grad(out, leaves, seed=a)
        value = out.value
        tape.release()
        d_theta = np.concatenate([g.ravel() for g in grads[1:]])
        return value, grads[0], d_theta
