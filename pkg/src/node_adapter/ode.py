"""Fixed-step ODE solvers and adjoint-sensitivity gradients.

Methods: euler, ab2 (two-step Adams-Bashforth), abm2 (AB2 predictor with one
trapezoidal corrector pass), rk4. Multistep methods bootstrap their first
step with a single RK4 step. Steps are uniform; the backward (adjoint) pass
reuses the same method and step count, recomputing the state instead of
storing the forward trajectory, so its memory footprint does not grow with
the step count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, UsageError

METHODS = ("euler", "ab2", "abm2", "rk4")


@dataclass
class SolverConfig:
    method: str = "rk4"
    steps: int = 30
    t0: float = 0.0
    tm: float = 30.0

    def validate(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.steps < 1:
            raise UsageError("steps must be >= 1")
        if not self.tm > self.t0:
            raise UsageError(f"need tm > t0, got [{self.t0}, {self.tm}]")

    @property
    def h(self):
        return (self.tm - self.t0) / self.steps


def _check_finite(y, step):
    if not np.isfinite(y).all():
        raise DivergenceError("field produced non-finite values", step=step)


def _rk4_step(f, y, t, h):
    k1 = f(y, t)
    k2 = f(y + 0.5 * h * k1, t + 0.5 * h)
    k3 = f(y + 0.5 * h * k2, t + 0.5 * h)
    k4 = f(y + h * k3, t + h)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_between(field, y0, t_start, t_end, steps, method,
                      record=None):
    """March ``steps`` uniform steps from t_start to t_end (either direction).

    ``record``, when given, is called as record(t, y) after every step
    (and once with the initial state).
    """
    h = (t_end - t_start) / steps
    y = np.asarray(y0, dtype=np.float64)
    t = t_start
    if record is not None:
        record(t, y)

    if method == "euler":
        for n in range(steps):
            y = y + h * field(y, t)
            t = t_start + (n + 1) * h
            _check_finite(y, n)
            if record is not None:
                record(t, y)
        return y

    if method == "rk4":
        for n in range(steps):
            y = _rk4_step(field, y, t, h)
            t = t_start + (n + 1) * h
            _check_finite(y, n)
            if record is not None:
                record(t, y)
        return y

    if method in ("ab2", "abm2"):
        f_prev = field(y, t)
        y = _rk4_step(field, y, t, h)
        t = t_start + h
        _check_finite(y, 0)
        if record is not None:
            record(t, y)
        for n in range(1, steps):
            f_cur = field(y, t)
            y_next = y + h * (1.5 * f_cur - 0.5 * f_prev)
            if method == "abm2":
                f_pred = field(y_next, t + h)
                y_next = y + 0.5 * h * (f_pred + f_cur)
            y = y_next
            f_prev = f_cur
            t = t_start + (n + 1) * h
            _check_finite(y, n)
            if record is not None:
                record(t, y)
        return y

    raise UsageError(f"unknown method {method!r}")


def integrate(field, p0, cfg: SolverConfig, return_trajectory=False):
    """Solve dp/dt = field(p, t) from cfg.t0 to cfg.tm.

    Returns (p(tm), trajectory) where trajectory is a list of (t, state)
    pairs including both endpoints, or None when not requested.
    """
    cfg.validate()
    trajectory = [] if return_trajectory else None
    record = (lambda t, y: trajectory.append((t, y.copy()))) if return_trajectory else None
    p_m = integrate_between(field, p0, cfg.t0, cfg.tm, cfg.steps, cfg.method,
                            record=record)
    return p_m, trajectory


def adjoint_gradients(field, p0, cfg: SolverConfig, dL_dpm, p_m=None):
    """Gradients of a loss through the solved ODE via the adjoint method.

    ``field`` must be callable as field(p, t) -> dp/dt and expose
    ``vjp(p, t, a) -> (f, a^T df/dp, a^T df/dtheta)`` plus ``n_params``
    (see field.AdjointField). The sensitivity a(t) = dL/dp(t) and the
    parameter accumulator are integrated backward from tm alongside p itself,
    using the same method and step count as the forward pass. Only the
    endpoint state is kept; pass ``p_m`` to skip the forward recomputation.

    Returns (dL/dp(t0), dL/dtheta flattened).
    """
    cfg.validate()
    p0 = np.asarray(p0, dtype=np.float64)
    if p_m is None:
        p_m, _ = integrate(field, p0, cfg)
    a_m = np.asarray(dL_dpm, dtype=np.float64)
    if a_m.shape != p0.shape:
        raise UsageError(f"dL_dpm shape {a_m.shape} != state shape {p0.shape}")

    n_state = p0.size
    n_params = field.n_params

    def pack(p, a, g):
        return np.concatenate([p.ravel(), a.ravel(), g])

    def unpack(z):
        p = z[:n_state].reshape(p0.shape)
        a = z[n_state:2 * n_state].reshape(p0.shape)
        return p, a, z[2 * n_state:]

    def augmented(z, t):
        p, a, _ = unpack(z)
        f_val, a_df_dp, a_df_dtheta = field.vjp(p, t, a)
        return pack(f_val, -a_df_dp, -a_df_dtheta)

    z_m = pack(p_m, a_m, np.zeros(n_params))
    z_0 = integrate_between(augmented, z_m, cfg.tm, cfg.t0, cfg.steps, cfg.method)
    _, a_0, g_0 = unpack(z_0)
    return a_0, g_0


class ConstantParameterField:
    """Fixed-dynamics adapter (no learnable parameters) for adjoint tests and
    benchmarks. ``vjp_p`` must return a^T df/dp."""

    n_params = 0

    def __init__(self, f, vjp_p):
        self._f = f
        self._vjp_p = vjp_p

    def __call__(self, p, t):
        return self._f(p, t)

    def vjp(self, p, t, a):
        return self._f(p, t), self._vjp_p(p, t, a), np.zeros(0)


def solver_benchmark(steps_list=(8, 16, 32, 64, 128, 256)):
    """Global error of every method on dp/dt = -p, p(0)=1 over [0, 1].

    Returns rows of (method, steps, h, global_error); the analytic endpoint
    is exp(-1).
    """
    exact = float(np.exp(-1.0))
    rows = []
    for method in METHODS:
        for steps in steps_list:
            cfg = SolverConfig(method=method, steps=steps, t0=0.0, tm=1.0)
            p_m, _ = integrate(lambda y, t: -y, np.array([[1.0]]), cfg)
            rows.append((method, steps, cfg.h, abs(float(p_m[0, 0]) - exact)))
    return rows
