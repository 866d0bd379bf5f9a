import tracemalloc

import numpy as np
import pytest

from node_adapter import tensor as T
from node_adapter.data import EmbeddingSet, rng_for
from node_adapter.errors import DivergenceError, UsageError
from node_adapter.field import AdjointField, FieldParameters, SupportContext, field_eval
from node_adapter.ode import (METHODS, ConstantParameterField, SolverConfig,
                              adjoint_gradients, integrate, integrate_between,
                              solver_benchmark)


def decay(y, t):
    return -y


def exact_endpoint():
    return np.exp(-1.0)


def global_error(method, steps):
    cfg = SolverConfig(method=method, steps=steps, t0=0.0, tm=1.0)
    p_m, _ = integrate(decay, np.array([[1.0]]), cfg)
    return abs(float(p_m[0, 0]) - exact_endpoint())


# ---------------------------------------------------------------------------
# forward integration


def test_zero_field_keeps_state_for_every_method():
    p0 = np.array([[1.0, -2.0], [0.5, 3.0]])
    for method in METHODS:
        cfg = SolverConfig(method=method, steps=7, t0=0.0, tm=2.0)
        p_m, _ = integrate(lambda y, t: np.zeros_like(y), p0, cfg)
        assert np.array_equal(p_m, p0)


def test_rk4_hits_analytic_exponential():
    cfg = SolverConfig(method="rk4", steps=32, t0=0.0, tm=1.0)
    p_m, _ = integrate(decay, np.array([[1.0]]), cfg)
    assert abs(p_m[0, 0] - 0.3678794) < 1e-7


def test_euler_halving_error_ratio():
    ratio = global_error("euler", 32) / global_error("euler", 64)
    assert 1.8 <= ratio <= 2.2


def test_rk4_halving_error_ratio():
    ratio = global_error("rk4", 32) / global_error("rk4", 64)
    assert 12.0 <= ratio <= 20.0


def test_observed_convergence_orders():
    expected = {"euler": 1.0, "ab2": 2.0, "abm2": 2.0, "rk4": 4.0}
    for method, order in expected.items():
        ratio = global_error(method, 32) / global_error(method, 64)
        observed = np.log2(ratio)
        assert abs(observed - order) <= 0.3, f"{method}: observed {observed:.2f}"


def test_error_ordering_at_eight_steps():
    errs = {m: global_error(m, 8) for m in METHODS}
    assert errs["rk4"] < errs["abm2"] <= errs["ab2"] < errs["euler"]


def test_trajectory_recording():
    cfg = SolverConfig(method="euler", steps=4, t0=0.0, tm=1.0)
    p_m, traj = integrate(decay, np.array([[1.0]]), cfg, return_trajectory=True)
    assert len(traj) == 5
    assert traj[0][0] == 0.0 and abs(traj[-1][0] - 1.0) < 1e-12
    assert np.array_equal(traj[-1][1], p_m)


def test_divergence_reports_step_index():
    def to_nan_after_two_steps(y, t):
        return np.full_like(y, np.nan) if t > 0.15 else np.zeros_like(y)

    cfg = SolverConfig(method="euler", steps=10, t0=0.0, tm=1.0)
    with pytest.raises(DivergenceError, match="step 2"):
        integrate(to_nan_after_two_steps, np.array([[1.0]]), cfg)


def test_config_validation():
    with pytest.raises(UsageError):
        SolverConfig(method="rk5").validate()
    with pytest.raises(UsageError):
        SolverConfig(steps=0).validate()
    with pytest.raises(UsageError):
        SolverConfig(t0=1.0, tm=0.5).validate()


def test_time_reversal_rk4_returns_to_start():
    rng = rng_for(0)
    A = rng.standard_normal((3, 3)) * 0.4

    def field(y, t):
        return y @ A.T

    y0 = rng.standard_normal((1, 3))
    steps = 20  # h = 0.05 <= 0.1
    fwd = integrate_between(field, y0, 0.0, 1.0, steps, "rk4")
    back = integrate_between(field, fwd, 1.0, 0.0, steps, "rk4")
    assert np.abs(back - y0).max() < 1e-6


# ---------------------------------------------------------------------------
# adjoint gradients


def test_adjoint_constant_flow_passes_gradient_through():
    zero = ConstantParameterField(lambda p, t: np.zeros_like(p),
                                  lambda p, t, a: np.zeros_like(p))
    cfg = SolverConfig(method="rk4", steps=5, t0=0.0, tm=1.0)
    dL_dpm = np.array([[1.0, 2.0], [3.0, 4.0]])
    dp0, dtheta = adjoint_gradients(zero, np.zeros((2, 2)), cfg, dL_dpm)
    assert np.allclose(dp0, dL_dpm, atol=1e-14)
    assert dtheta.shape == (0,)


def test_adjoint_linear_field_matches_matrix_exponential_series():
    """dL/dp0 for dp/dt = A p should be exp(A^T (tm - t0)) dL/dpm; the
    reference is a 20-term Taylor series of the matrix exponential."""
    A = np.array([[0.3, -0.8], [0.5, 0.1]])
    lin = ConstantParameterField(lambda p, t: p @ A.T,
                                 lambda p, t, a: a @ A)
    cfg = SolverConfig(method="rk4", steps=64, t0=0.0, tm=1.5)
    p0 = np.array([[0.7, -0.2]])
    dL_dpm = np.array([[1.0, 2.0]])

    expA = np.zeros((2, 2))
    term = np.eye(2)
    for k in range(20):
        expA += term
        term = term @ (A.T * 1.5) / (k + 1)
    expect = dL_dpm @ expA.T

    dp0, _ = adjoint_gradients(lin, p0, cfg, dL_dpm)
    assert np.abs(dp0 - expect).max() < 1e-7


def scalar_loss_setup(seed=0, n=3, d=4, s=4, de=4):
    rng = rng_for(seed)
    feats = rng.standard_normal((s, d))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = rng.integers(0, n, size=s)
    labels[:n] = np.arange(n)
    support = EmbeddingSet("visual", feats, labels, n)
    ctx = SupportContext.from_embedding_set(support)
    params = FieldParameters.initialize(d, de, seed=seed + 1, horizon=4.0)
    p0 = rng.standard_normal((n, d)) * 0.5
    r = rng.standard_normal((n, d))
    return ctx, params, p0, r


def test_adjoint_full_field_matches_finite_differences():
    from node_adapter.gradcheck import check_adjoint
    errors = check_adjoint(seed=0, n=3, d=4, s=4, de=4, steps=8, method="rk4")
    assert errors["adjoint/p0"] < 1e-4
    assert errors["adjoint/theta"] < 1e-4


def test_adjoint_matches_unrolled_tape_gradient():
    """Differentiating straight through the unrolled discrete RK4 solve must
    agree with the continuous adjoint at a shared moderate step count."""
    ctx, params, p0, r = scalar_loss_setup(seed=4)
    cfg = SolverConfig(method="rk4", steps=32, t0=0.0, tm=2.0)
    adj = AdjointField(ctx, params)

    # adjoint route
    p_m, _ = integrate(adj, p0, cfg)
    dL_dpm = r.copy()
    dp0_adj, dtheta_adj = adjoint_gradients(adj, p0, cfg, dL_dpm, p_m=p_m)

    # unrolled route: record every solver stage on one tape
    tape = T.Tape()
    p_var = tape.var(p0)
    lifted = params.lift(tape)
    h = cfg.h
    y, t = p_var, cfg.t0
    for _ in range(cfg.steps):
        k1 = field_eval(y, t, ctx, lifted)
        k2 = field_eval(T.add(y, T.smul(k1, h / 2)), t + h / 2, ctx, lifted)
        k3 = field_eval(T.add(y, T.smul(k2, h / 2)), t + h / 2, ctx, lifted)
        k4 = field_eval(T.add(y, T.smul(k3, h)), t + h, ctx, lifted)
        incr = T.add(T.add(k1, T.smul(T.add(k2, k3), 2.0)), k4)
        y = T.add(y, T.smul(incr, h / 6))
        t += h
    loss = T.sum_all(T.mul(y, r))
    from node_adapter.field import TENSOR_FIELDS
    leaves = [p_var] + [getattr(lifted, name) for name in TENSOR_FIELDS]
    grads = tape.grad(loss, leaves)
    dp0_unrolled = grads[0]
    dtheta_unrolled = np.concatenate([g.ravel() for g in grads[1:]])

    def rel(a, b):
        return np.max(np.abs(a - b)) / (np.max(np.abs(b)) + 1e-12)

    assert rel(dp0_adj, dp0_unrolled) < 1e-3
    assert rel(dtheta_adj, dtheta_unrolled) < 1e-3


def test_adjoint_same_method_backward_all_methods():
    ctx, params, p0, r = scalar_loss_setup(seed=5)
    for method in METHODS:
        cfg = SolverConfig(method=method, steps=12, t0=0.0, tm=1.0)
        adj = AdjointField(ctx, params)
        dp0, dtheta = adjoint_gradients(adj, p0, cfg, r)
        assert np.isfinite(dp0).all() and np.isfinite(dtheta).all()


def test_adjoint_memory_constant_in_step_count():
    """Peak allocation of the adjoint pass must not grow with steps (the
    forward trajectory is never stored)."""
    ctx, params, p0, r = scalar_loss_setup(seed=6, n=4, d=16, s=8, de=32)
    adj = AdjointField(ctx, params)

    def peak_for(steps):
        cfg = SolverConfig(method="rk4", steps=steps, t0=0.0, tm=1.0)
        tracemalloc.start()
        adjoint_gradients(adj, p0, cfg, r)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        return peak

    peak_small = peak_for(4)
    peak_large = peak_for(128)
    assert peak_large < 1.5 * peak_small, (peak_small, peak_large)


def test_adjoint_shape_mismatch_rejected():
    zero = ConstantParameterField(lambda p, t: np.zeros_like(p),
                                  lambda p, t, a: np.zeros_like(p))
    cfg = SolverConfig(method="rk4", steps=2, t0=0.0, tm=1.0)
    with pytest.raises(UsageError):
        adjoint_gradients(zero, np.zeros((2, 2)), cfg, np.zeros((3, 2)))


# ---------------------------------------------------------------------------
# benchmark table


def test_solver_benchmark_rows_and_ratios():
    rows = solver_benchmark(steps_list=(8, 16, 32))
    assert len(rows) == 4 * 3
    by_method = {}
    for method, steps, h, err in rows:
        assert abs(h - 1.0 / steps) < 1e-15
        by_method.setdefault(method, []).append(err)
    assert 1.8 <= by_method["euler"][0] / by_method["euler"][1] <= 2.2
    assert 12.0 <= by_method["rk4"][0] / by_method["rk4"][1] <= 20.0
