"""Dense float64 matrix ops with a scoped reverse-mode differentiation tape.

Everything is a 2-D ``numpy.ndarray`` of float64. Gradients are obtained by
recording operations on a :class:`Tape`: wrap leaves with ``tape.var(x)``,
compose with the functions below, then call ``grad``. The same functions
applied to plain arrays (or to values from no tape) just compute values, so
one code path serves both training and inference.

A value participates in at most one tape; mixing tapes raises ``UsageError``.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError

__all__ = [
    "Tape", "Var", "as_matrix", "value_of", "add", "sub", "mul", "smul",
    "matmul", "transpose", "concat_cols", "take_rows", "vstack", "reshape",
    "sigmoid", "relu", "floor_log", "softmax_axis", "softmax_blocks",
    "sum_blocks", "sum_all", "scale_rows", "add_rowvec", "l2_normalize_rows",
    "affine", "block_attention", "block_attention_values", "grad",
]


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 array. Scalars become 1x1, vectors one row."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {a.shape}")
    return a


class Var:
    """A matrix recorded on a tape (a DiffValue). ``parents`` holds
    (parent Var, vjp) pairs; vjp maps the output cotangent to the parent's."""

    __slots__ = ("value", "tape", "index", "parents")

    def __init__(self, value, tape=None, index=None, parents=()):
        self.value = value
        self.tape = tape
        self.index = index
        self.parents = parents

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, recorded={self.tape is not None})"


class Tape:
    """One differentiation context. Create one per forward evaluation; it is
    single-threaded and never shared between concurrent evaluations."""

    def __init__(self):
        self._nodes = []

    def var(self, x) -> Var:
        """Record a leaf. Gradients can later be requested with respect to it."""
        v = Var(as_matrix(x), tape=self, index=len(self._nodes))
        self._nodes.append(v)
        return v

    def release(self):
        """Drop the recorded graph. Breaks the Tape<->Var reference cycle so
        hot loops (one tape per field evaluation) free memory immediately
        instead of waiting for the cycle collector."""
        self._nodes.clear()

    def _record(self, value, parents) -> Var:
        v = Var(value, tape=self, index=len(self._nodes), parents=tuple(parents))
        self._nodes.append(v)
        return v

    def grad(self, output: Var, wrt, seed=None):
        """Reverse-mode gradients of ``output`` with respect to each entry of
        ``wrt``. Without ``seed`` the output must be 1x1 (a scalar loss);
        ``seed`` supplies the output cotangent for general VJPs."""
        if not isinstance(output, Var) or output.tape is not self:
            raise UsageError("output was not recorded on this tape")
        for w in wrt:
            if not isinstance(w, Var) or w.tape is not self:
                raise UsageError("wrt value was not recorded on this tape")
        if seed is None:
            if output.value.shape != (1, 1):
                raise UsageError(
                    f"loss must be 1x1 (got {output.value.shape}); "
                    "pass seed= for a general vector-Jacobian product")
            seed = np.ones((1, 1))
        seed = as_matrix(seed)
        if seed.shape != output.value.shape:
            raise ShapeError(
                f"seed shape {seed.shape} != output shape {output.value.shape}")

        wrt_indices = {w.index for w in wrt}
        adjoints = {output.index: seed}
        for i in range(output.index, -1, -1):
            if i not in adjoints:
                continue
            node = self._nodes[i]
            g = adjoints[i] if i in wrt_indices else adjoints.pop(i)
            for parent, vjp in node.parents:
                pg = vjp(g)
                j = parent.index
                if j in adjoints:
                    adjoints[j] = adjoints[j] + pg
                else:
                    adjoints[j] = pg
        return [adjoints.get(w.index, np.zeros_like(w.value)) for w in wrt]


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else as_matrix(x)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var) and x.tape is not None:
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise UsageError("operands belong to different tapes")
    return tape


def _emit(tape, value, parent_vjps):
    """Return a recorded Var when a tape is active, else the bare value.
    ``parent_vjps`` is a list of (operand, vjp) pairs; constants are skipped."""
    if tape is None:
        return value
    parents = [(p, vjp) for p, vjp in parent_vjps if isinstance(p, Var)]
    return tape._record(value, parents)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ShapeError(f"add: shapes {av.shape} and {bv.shape} differ")
    return _emit(_tape_of(a, b), av + bv, [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ShapeError(f"sub: shapes {av.shape} and {bv.shape} differ")
    return _emit(_tape_of(a, b), av - bv, [(a, lambda g: g), (b, lambda g: -g)])


def mul(a, b):
    """Elementwise (Hadamard) product."""
    av, bv = value_of(a), value_of(b)
    if av.shape != bv.shape:
        raise ShapeError(f"mul: shapes {av.shape} and {bv.shape} differ")
    return _emit(_tape_of(a, b), av * bv,
                 [(a, lambda g: g * bv), (b, lambda g: g * av)])


def smul(a, c):
    """Multiply by a python scalar constant."""
    av = value_of(a)
    c = float(c)
    return _emit(_tape_of(a), av * c, [(a, lambda g: g * c)])


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dims disagree, {av.shape} x {bv.shape}")
    return _emit(_tape_of(a, b), av @ bv,
                 [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def transpose(a):
    av = value_of(a)
    return _emit(_tape_of(a), av.T.copy(), [(a, lambda g: g.T)])


# ---------------------------------------------------------------------------
# structure


def concat_cols(*xs):
    """Concatenate along the feature axis."""
    vals = [value_of(x) for x in xs]
    rows = vals[0].shape[0]
    for v in vals:
        if v.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ, "
                             f"{[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=1)
    offsets = np.cumsum([0] + [v.shape[1] for v in vals])

    def make_vjp(k):
        return lambda g: g[:, offsets[k]:offsets[k + 1]]

    return _emit(_tape_of(*xs), out,
                 [(x, make_vjp(k)) for k, x in enumerate(xs)])


def take_rows(a, idx):
    """Gather rows by integer index (repeats allowed)."""
    av = value_of(a)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _emit(_tape_of(a), av[idx], [(a, vjp)])


def vstack(xs):
    """Stack row-wise."""
    vals = [value_of(x) for x in xs]
    cols = vals[0].shape[1]
    for v in vals:
        if v.shape[1] != cols:
            raise ShapeError("vstack: column counts differ")
    out = np.concatenate(vals, axis=0)
    offsets = np.cumsum([0] + [v.shape[0] for v in vals])

    def make_vjp(k):
        return lambda g: g[offsets[k]:offsets[k + 1], :]

    return _emit(_tape_of(*xs), out,
                 [(x, make_vjp(k)) for k, x in enumerate(xs)])


def reshape(a, rows, cols):
    av = value_of(a)
    if rows * cols != av.size:
        raise ShapeError(f"reshape: cannot view {av.shape} as ({rows}, {cols})")
    shape = av.shape
    return _emit(_tape_of(a), av.reshape(rows, cols),
                 [(a, lambda g: g.reshape(shape))])


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def sigmoid(a):
    av = value_of(a)
    out = np.empty_like(av)
    pos = av >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ex = np.exp(av[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit(_tape_of(a), out, [(a, lambda g: g * out * (1.0 - out))])


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    mask = av > 0
    return _emit(_tape_of(a), out, [(a, lambda g: g * mask)])


def floor_log(a, floor=1e-30):
    """log(max(x, floor)); gradient is zero where the floor binds."""
    av = value_of(a)
    clipped = np.maximum(av, floor)
    above = av > floor
    return _emit(_tape_of(a), np.log(clipped),
                 [(a, lambda g: g * above / clipped)])


def softmax_axis(a, axis):
    """Softmax normalizing along ``axis``: "cols" makes each row sum to one,
    "rows" each column. Max-subtraction keeps large inputs finite."""
    if axis not in ("rows", "cols"):
        raise UsageError(f"axis must be 'rows' or 'cols', got {axis!r}")
    av = value_of(a)
    ax = 1 if axis == "cols" else 0
    shifted = av - av.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        return out * (g - np.sum(g * out, axis=ax, keepdims=True))

    return _emit(_tape_of(a), out, [(a, vjp)])


def softmax_blocks(a, block_len):
    """Rows come in consecutive blocks of ``block_len``; softmax runs down the
    rows within each block, independently per column."""
    av = value_of(a)
    n, c = av.shape
    if n % block_len:
        raise ShapeError(f"softmax_blocks: {n} rows not divisible by {block_len}")
    b = n // block_len
    x = av.reshape(b, block_len, c)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out3 = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        g3 = g.reshape(b, block_len, c)
        return (out3 * (g3 - np.sum(g3 * out3, axis=1, keepdims=True))).reshape(n, c)

    return _emit(_tape_of(a), out3.reshape(n, c), [(a, vjp)])


def sum_blocks(a, block_len):
    """Sum rows within consecutive blocks of ``block_len``; output has one row
    per block."""
    av = value_of(a)
    n, c = av.shape
    if n % block_len:
        raise ShapeError(f"sum_blocks: {n} rows not divisible by {block_len}")
    b = n // block_len
    out = av.reshape(b, block_len, c).sum(axis=1)
    return _emit(_tape_of(a), out,
                 [(a, lambda g: np.repeat(g, block_len, axis=0))])


def sum_all(a):
    av = value_of(a)
    shape = av.shape
    return _emit(_tape_of(a), np.array([[av.sum()]]),
                 [(a, lambda g: np.full(shape, g[0, 0]))])


def scale_rows(a, s):
    """Multiply row r of ``a`` by scalar s[r]; ``s`` is Nx1."""
    av, sv = value_of(a), value_of(s)
    if sv.shape != (av.shape[0], 1):
        raise ShapeError(f"scale_rows: scale shape {sv.shape} != ({av.shape[0]}, 1)")
    return _emit(_tape_of(a, s), av * sv,
                 [(a, lambda g: g * sv),
                  (s, lambda g: np.sum(g * av, axis=1, keepdims=True))])


def add_rowvec(a, b):
    """Add a 1xC row vector to every row."""
    av, bv = value_of(a), value_of(b)
    if bv.shape != (1, av.shape[1]):
        raise ShapeError(f"add_rowvec: bias shape {bv.shape} != (1, {av.shape[1]})")
    return _emit(_tape_of(a, b), av + bv,
                 [(a, lambda g: g),
                  (b, lambda g: g.sum(axis=0, keepdims=True))])


def l2_normalize_rows(a):
    av = value_of(a)
    norms = np.linalg.norm(av, axis=1, keepdims=True)
    bad = np.nonzero(norms[:, 0] <= 1e-12)[0]
    if bad.size:
        raise DegenerateInputError(f"row {bad[0]} has near-zero norm, cannot normalize")
    out = av / norms

    def vjp(g):
        return (g - out * np.sum(g * out, axis=1, keepdims=True)) / norms

    return _emit(_tape_of(a), out, [(a, vjp)])


def affine(x, w, b):
    """x @ w + b with b broadcast over rows."""
    return add_rowvec(matmul(x, w), b)


def block_attention_values(qv, kv, vv, block_len, n_heads):
    """Forward pass of :func:`block_attention` on plain arrays.

    Returns (out, attn, qh, kh, vh, scale) where the extras feed the VJPs.
    """
    n, width = qv.shape
    if qv.shape != kv.shape or qv.shape != vv.shape:
        raise ShapeError("block_attention: q, k, v shapes must match")
    if n % block_len or width % n_heads:
        raise ShapeError(f"block_attention: shape {qv.shape} incompatible with "
                         f"block_len={block_len}, n_heads={n_heads}")
    b = n // block_len
    dh = width // n_heads
    scale = 1.0 / np.sqrt(dh)

    def split(x):  # (B*L, H*dh) -> (B, H, L, dh)
        return x.reshape(b, block_len, n_heads, dh).transpose(0, 2, 1, 3)

    qh, kh, vh = split(qv), split(kv), split(vv)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)          # (B, H, L, L)
    out = (attn @ vh).transpose(0, 2, 1, 3).reshape(n, width)
    return out, attn, qh, kh, vh, scale


def block_attention(q, k, v, block_len, n_heads):
    """Scaled dot-product attention run independently inside row blocks.

    q, k, v are (B*L) x (H*dh): B consecutive blocks of L token rows, heads
    laid out side by side along the columns. Within each (block, head) pair
    the L tokens attend to each other; no positions, no masking.
    """
    qv, kv, vv = value_of(q), value_of(k), value_of(v)
    n, width = qv.shape
    out, attn, qh, kh, vh, scale = block_attention_values(
        qv, kv, vv, block_len, n_heads)
    b = n // block_len
    dh = width // n_heads

    def split(x):
        return x.reshape(b, block_len, n_heads, dh).transpose(0, 2, 1, 3)

    def merge(x):
        return x.transpose(0, 2, 1, 3).reshape(n, width)

    def vjp_q(g):
        ds = _attn_dscores(split(g), attn, vh)
        return merge(ds @ kh * scale)

    def vjp_k(g):
        ds = _attn_dscores(split(g), attn, vh)
        return merge(ds.transpose(0, 1, 3, 2) @ qh * scale)

    def vjp_v(g):
        return merge(attn.transpose(0, 1, 3, 2) @ split(g))

    return _emit(_tape_of(q, k, v), out,
                 [(q, vjp_q), (k, vjp_k), (v, vjp_v)])


def _attn_dscores(gh, attn, vh):
    da = gh @ vh.transpose(0, 1, 3, 2)
    return attn * (da - np.sum(da * attn, axis=-1, keepdims=True))


def grad(loss, wrt):
    """Gradients of a recorded 1x1 loss with respect to each ``wrt`` leaf."""
    if not isinstance(loss, Var) or loss.tape is None:
        raise UsageError("loss is not recorded on any tape")
    return loss.tape.grad(loss, list(wrt))
