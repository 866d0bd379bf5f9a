"""Finite-difference verification of every gradient path in the package.

Errors are reported as max|analytic - numeric| / (max|numeric| + 1e-12),
computed with central differences. The suites cover the tensor ops, the
field evaluation, the adjoint pass through the solver, and the fusion
vector's chained gradient.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import EmbeddingSet, rng_for
from .field import AdjointField, FieldParameters, SupportContext, field_eval
from .ode import SolverConfig, adjoint_gradients, integrate
from .prototypes import fuse, fusion_coefficients
from .training import ce_loss, class_probabilities


def rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric)) /
                 (np.max(np.abs(numeric)) + 1e-12))


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def _scalar_probe(op, arrs, which, rng):
    """max rel error of d(sum(op(...) * R))/d arrs[which] vs central FD."""
    r = rng.standard_normal(T.value_of(op(*arrs)).shape)

    def loss_np(x):
        inputs = [x if j == which else arrs[j] for j in range(len(arrs))]
        return float(np.sum(T.value_of(op(*inputs)) * r))

    tape = T.Tape()
    leaves = [tape.var(a) for a in arrs]
    out = op(*leaves)
    loss = T.sum_all(T.mul(out, r))
    analytic = tape.grad(loss, [leaves[which]])[0]
    numeric = fd_grad(loss_np, arrs[which].copy())
    return rel_error(analytic, numeric)


def check_tensor_ops(seed=0):
    """FD check of every registered tape op on small random matrices."""
    rng = rng_for(seed)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 5))
    m5 = rng.standard_normal((3, 5))
    bias = rng.standard_normal((1, 5))
    pos = np.abs(rng.standard_normal((3, 4))) + 0.5
    scales = rng.standard_normal((3, 1))
    qkv = rng.standard_normal((6, 8))

    cases = {
        "add": (lambda x, y: T.add(x, y), [a, b], 0),
        "sub": (lambda x, y: T.sub(x, y), [a, b], 1),
        "mul": (lambda x, y: T.mul(x, y), [a, b], 0),
        "smul": (lambda x: T.smul(x, 1.7), [a], 0),
        "matmul_lhs": (lambda x, y: T.matmul(x, y), [a, w], 0),
        "matmul_rhs": (lambda x, y: T.matmul(x, y), [a, w], 1),
        "transpose": (lambda x: T.transpose(x), [a], 0),
        "concat_cols": (lambda x, y: T.concat_cols(x, y), [a, b], 0),
        "take_rows": (lambda x: T.take_rows(x, [0, 2, 2, 1]), [a], 0),
        "vstack": (lambda x, y: T.vstack([x, y]), [a, b], 1),
        "reshape": (lambda x: T.reshape(x, 4, 3), [a], 0),
        "sigmoid": (lambda x: T.sigmoid(x), [a], 0),
        "relu": (lambda x: T.relu(x), [a], 0),
        "floor_log": (lambda x: T.floor_log(x), [pos], 0),
        "softmax_cols": (lambda x: T.softmax_axis(x, "cols"), [a], 0),
        "softmax_rows": (lambda x: T.softmax_axis(x, "rows"), [a], 0),
        "softmax_blocks": (lambda x: T.softmax_blocks(x, 3), [a], 0),
        "sum_blocks": (lambda x: T.sum_blocks(x, 3), [a], 0),
        "sum_all": (lambda x: T.sum_all(x), [a], 0),
        "scale_rows_m": (lambda x, s: T.scale_rows(x, s), [a, scales], 0),
        "scale_rows_s": (lambda x, s: T.scale_rows(x, s), [a, scales], 1),
        "add_rowvec": (lambda x, y: T.add_rowvec(x, y), [m5, bias], 1),
        "l2_normalize_rows": (lambda x: T.l2_normalize_rows(x), [pos], 0),
        "block_attention_q": (
            lambda q, k, v: T.block_attention(q, k, v, 3, 2), [qkv, qkv + 0.1, qkv - 0.2], 0),
        "block_attention_k": (
            lambda q, k, v: T.block_attention(q, k, v, 3, 2), [qkv, qkv + 0.1, qkv - 0.2], 1),
        "block_attention_v": (
            lambda q, k, v: T.block_attention(q, k, v, 3, 2), [qkv, qkv + 0.1, qkv - 0.2], 2),
    }
    return {name: _scalar_probe(op, arrs, which, rng_for(seed + 1))
            for name, (op, arrs, which) in cases.items()}


def check_composition(seed=0):
    """Three stacked affine+sigmoid layers against FD (the chain rule path)."""
    rng = rng_for(seed)
    x = rng.standard_normal((4, 6))
    ws = [rng.standard_normal((6, 6)) * 0.5 for _ in range(3)]
    r = rng.standard_normal((4, 6))

    def forward(w0):
        h = x
        for j, w in enumerate([w0, ws[1], ws[2]]):
            h = T.value_of(T.sigmoid(T.matmul(h, w)))
        return float(np.sum(h * r))

    tape = T.Tape()
    w0 = tape.var(ws[0])
    h = x
    for w in [w0, ws[1], ws[2]]:
        h = T.sigmoid(T.matmul(h, w))
    loss = T.sum_all(T.mul(h, r))
    analytic = tape.grad(loss, [w0])[0]
    numeric = fd_grad(forward, ws[0].copy(), h=1e-5)
    return rel_error(analytic, numeric)


def _small_instance(seed, n=3, d=4, s=4, de=8):
    rng = rng_for(seed)
    feats = rng.standard_normal((s, d))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = rng.integers(0, n, size=s)
    labels[:n] = np.arange(n)  # every class occupied
    support = EmbeddingSet("visual", feats, labels, n)
    ctx = SupportContext.from_embedding_set(support)
    params = FieldParameters.initialize(d, de, seed=seed + 1, horizon=4.0)
    p = rng.standard_normal((n, d)) * 0.5
    return support, ctx, params, p


def check_field_gradients(seed=0, n=3, d=4, s=4, de=8):
    """field_eval VJPs against FD, for P and every parameter tensor."""
    _, ctx, params, p = _small_instance(seed, n, d, s, de)
    rng = rng_for(seed + 2)
    a = rng.standard_normal((n, d))
    t = 0.7
    adj = AdjointField(ctx, params)
    _, dp, dtheta = adj.vjp(p, t, a)

    def loss_p(x):
        return float(np.sum(field_eval(x, t, ctx, params) * a))

    errors = {"field/P": rel_error(dp, fd_grad(loss_p, p.copy()))}

    flat = params.flatten()
    groups = {"theta_s": ("ws", "bs"), "theta_e": ("we", "be"),
              "theta_a": ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"),
              "theta_m": ("wm", "bm")}
    offsets = {}
    pos = 0
    for name, tshape in params.tensors().items():
        size = np.asarray(tshape).size
        offsets[name] = (pos, pos + size)
        pos += size

    def loss_theta(v):
        return float(np.sum(field_eval(p, t, ctx, params.from_flat(v)) * a))

    numeric_flat = fd_grad(loss_theta, flat.copy())
    for group, names in groups.items():
        sel = np.concatenate([np.arange(*offsets[nm]) for nm in names])
        errors[f"field/{group}"] = rel_error(dtheta[sel], numeric_flat[sel])
    return errors


def check_adjoint(seed=0, n=3, d=4, s=4, de=4, steps=8, method="rk4", tm=1.0):
    """Loss gradients through the solved ODE: adjoint vs FD over everything.

    The loss is the support cross-entropy of the integrated prototypes, the
    exact composition the trainer differentiates. The continuous adjoint and
    the discrete solver gradient agree to O(h^4) for rk4, so the step size
    must be small enough for the comparison to sit below the threshold.
    """
    support, ctx, params, p0 = _small_instance(seed, n, d, s, de)
    cfg = SolverConfig(method=method, steps=steps, t0=0.0, tm=tm)
    tau = 0.1

    def run_loss(par, start):
        adj = AdjointField(ctx, par)
        p_m, _ = integrate(adj, start, cfg)
        probs = class_probabilities(support.features, p_m, tau)
        return float(T.value_of(ce_loss(probs, support.labels))[0, 0])

    adj = AdjointField(ctx, params)
    p_m, _ = integrate(adj, p0, cfg)
    tape = T.Tape()
    pm_var = tape.var(p_m)
    loss = ce_loss(class_probabilities(support.features, pm_var, tau), support.labels)
    dL_dpm = tape.grad(loss, [pm_var])[0]
    dL_dp0, dL_dtheta = adjoint_gradients(adj, p0, cfg, dL_dpm, p_m=p_m)

    num_p0 = fd_grad(lambda x: run_loss(params, x), p0.copy(), h=1e-5)
    num_theta = fd_grad(lambda v: run_loss(params.from_flat(v), p0),
                        params.flatten().copy(), h=1e-5)
    return {"adjoint/p0": rel_error(dL_dp0, num_p0),
            "adjoint/theta": rel_error(dL_dtheta, num_theta)}


def check_fusion_gradient(seed=0, n=3, d=4, s=4, de=8, steps=6):
    """dL/du through fusion, integration, and the classifier, against FD."""
    support, ctx, params, _ = _small_instance(seed, n, d, s, de)
    rng = rng_for(seed + 3)
    p_t = rng.standard_normal((n, d))
    p_v = rng.standard_normal((n, d))
    u = rng.standard_normal((1, d)) * 0.3
    cfg = SolverConfig(method="rk4", steps=steps, t0=0.0, tm=1.5)
    tau = 0.1
    adj = AdjointField(ctx, params)

    def run_loss(u_val):
        state = fuse(p_t, p_v, fusion_coefficients(p_v, u_val))
        p_m, _ = integrate(adj, state.matrix, cfg)
        probs = class_probabilities(support.features, p_m, tau)
        return float(T.value_of(ce_loss(probs, support.labels))[0, 0])

    tape = T.Tape()
    u_var = tape.var(u)
    state = fuse(p_t, p_v, fusion_coefficients(p_v, u_var))
    p0 = state.matrix
    p_m, _ = integrate(adj, p0, cfg)
    loss_tape = T.Tape()
    pm_var = loss_tape.var(p_m)
    loss = ce_loss(class_probabilities(support.features, pm_var, tau), support.labels)
    dL_dpm = loss_tape.grad(loss, [pm_var])[0]
    dL_dp0, _ = adjoint_gradients(adj, p0, cfg, dL_dpm, p_m=p_m)
    analytic = tape.grad(state.P, [u_var], seed=dL_dp0)[0]
    numeric = fd_grad(run_loss, u.copy(), h=1e-5)
    return {"fusion/u": rel_error(analytic, numeric)}


def run_all(seed=0, n=3, d=4, s=4, de=4, steps=8):
    """Every suite; returns {check name: max relative error}. The size
    arguments bound the instances the field and adjoint suites run on."""
    errors = {}
    tensor_errs = check_tensor_ops(seed)
    errors["tensor/max"] = max(tensor_errs.values())
    errors["tensor/composition"] = check_composition(seed)
    errors.update(check_field_gradients(seed, n=n, d=d, s=s, de=de))
    errors.update(check_adjoint(seed, n=n, d=d, s=s, de=de, steps=steps))
    errors.update(check_fusion_gradient(seed, n=n, d=d, s=s, de=de))
    return errors
