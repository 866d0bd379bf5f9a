"""Loss, AdamW with cosine annealing, the training loop, and model files.

Training is full-batch over the support set: each epoch rebuilds P(t0) from
the current fusion vector, integrates to P(tm), scores the support samples
with the temperature-scaled cosine classifier, and pulls gradients back
through the solver with the adjoint method (for the field tensors) and
through the fusion (for u). Both parameter groups step jointly.

NAPM model layout (little-endian): magic "NAPM", u8 version = 1,
u32 tensor count; per tensor a (u32 length + UTF-8) name, u32 rows,
u32 cols, float64 row-major payload; then one (u32 length + UTF-8) JSON
configuration blob. Tensors are u, the field tensors in their flattening
order, and the frozen prototypes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field as dc_field

import numpy as np

from . import tensor as T
from .data import EmbeddingSet
from .errors import DataMismatchError, DivergenceError, FormatError, UsageError
from .field import TENSOR_FIELDS, AdjointField, FieldParameters, SupportContext
from .ode import SolverConfig, adjoint_gradients, integrate
from .prototypes import fuse, fusion_coefficients, textual_prototype, visual_prototype

NAPM_MAGIC = b"NAPM"
NAPM_VERSION = 1
PROB_FLOOR = 1e-30


@dataclass
class TrainConfig:
    epochs: int = 20
    lr0: float = 1e-3
    lr_min: float = 0.0
    tau: float = 0.01
    eta: float = 0.1
    horizon: float = 30.0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    embed_dim: int = 1024
    solver: SolverConfig = dc_field(default_factory=SolverConfig)

    def validate(self):
        if self.epochs < 0:
            raise UsageError("epochs must be >= 0")
        if self.tau <= 0:
            raise UsageError("tau must be positive")
        self.solver.validate()


@dataclass
class TrainedModel:
    """Everything inference needs: field tensors, fusion vector, frozen
    prototypes P(tm), the training configuration, and class names."""

    field_params: FieldParameters
    u: np.ndarray                  # (1, D)
    prototypes: np.ndarray         # (N, D)
    config: TrainConfig
    class_names: list[str] | None = None

    @property
    def n_classes(self):
        return self.prototypes.shape[0]


# ---------------------------------------------------------------------------
# classifier head


def class_probabilities(features, prototypes, tau):
    """Temperature-scaled softmax over cosine similarities; rows sum to one.

    Differentiable when either argument is a recorded Var.
    """
    if tau <= 0:
        raise UsageError("tau must be positive")
    sims = T.matmul(T.l2_normalize_rows(features), T.transpose(T.l2_normalize_rows(prototypes)))
    return T.softmax_axis(T.smul(sims, 1.0 / tau), "cols")


def ce_loss(probs, labels):
    """Mean negative log-probability of the true class, floored inside the log
    so saturated rows cannot produce -inf."""
    p = T.value_of(probs)
    labels = np.asarray(labels)
    m, n = p.shape
    if labels.shape != (m,):
        raise UsageError(f"labels shape {labels.shape} != ({m},)")
    one_hot = np.eye(n)[labels]
    picked = T.mul(floor_log_probs(probs), one_hot)
    return T.smul(T.sum_all(picked), -1.0 / m)


def floor_log_probs(probs):
    return T.floor_log(probs, floor=PROB_FLOOR)


def cosine_lr(epoch, cfg: TrainConfig):
    """Cosine annealing from lr0 (epoch 0) to lr_min (epoch == epochs)."""
    if cfg.epochs == 0:
        return cfg.lr0
    frac = epoch / cfg.epochs
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + np.cos(np.pi * frac))


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class AdamWState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def adamw_step(params, grads, state: AdamWState, lr, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update; returns (params, state)."""
    t = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads * grads
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    new_params = params - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)
                                + cfg.weight_decay * params)
    return new_params, AdamWState(m, v, t)


# ---------------------------------------------------------------------------
# training loop


def _forward(support, p_t, p_v, u, ctx, params, cfg, tape=None):
    """Build P(t0) (on ``tape`` when given) and integrate to P(tm)."""
    u_in = tape.var(u) if tape is not None else u
    lam = fusion_coefficients(p_v, u_in)
    state = fuse(p_t, p_v, lam, t0=cfg.solver.t0)
    p0 = state.matrix
    adj = AdjointField(ctx, params)
    p_m, _ = integrate(adj, p0, cfg.solver)
    return state, u_in, p0, p_m, adj


def train(support: EmbeddingSet, prompts: EmbeddingSet, cfg: TrainConfig,
          on_epoch=None) -> TrainedModel:
    """Fit the field tensors and fusion vector on one support/prompt pair.

    ``on_epoch`` receives a dict {"epoch", "lr", "loss", "support_acc"} after
    every epoch's forward pass. Deterministic for fixed inputs and seed.
    """
    cfg.validate()
    if support.n_classes != prompts.n_classes:
        raise DataMismatchError(
            f"support has {support.n_classes} classes, prompts {prompts.n_classes}")
    if support.dim != prompts.dim:
        raise DataMismatchError(
            f"support dim {support.dim} != prompts dim {prompts.dim}")

    dim = support.dim
    params = FieldParameters.initialize(
        dim, cfg.embed_dim, seed=cfg.seed, decay_rate=cfg.eta, horizon=cfg.horizon)
    u = np.zeros((1, dim))
    ctx = SupportContext.from_embedding_set(support)
    p_t = textual_prototype(prompts)
    p_v = visual_prototype(support)

    n_theta = params.n_params
    opt_state = AdamWState.zeros(n_theta + dim)
    labels = support.labels

    for epoch in range(cfg.epochs):
        tape = T.Tape()
        state, u_var, p0, p_m, adj = _forward(
            support, p_t, p_v, u, ctx, params, cfg, tape=tape)

        loss_tape = T.Tape()
        pm_var = loss_tape.var(p_m)
        probs = class_probabilities(support.features, pm_var, cfg.tau)
        loss = ce_loss(probs, labels)
        loss_val = float(loss.value[0, 0])
        if not np.isfinite(loss_val):
            raise DivergenceError("training loss became non-finite", step=epoch)
        acc = float(np.mean(np.argmax(probs.value, axis=1) == labels))
        dL_dpm = loss_tape.grad(loss, [pm_var])[0]

        dL_dp0, dL_dtheta = adjoint_gradients(adj, p0, cfg.solver, dL_dpm, p_m=p_m)
        dL_du = tape.grad(state.P, [u_var], seed=dL_dp0)[0]
        tape.release()
        loss_tape.release()

        lr = cosine_lr(epoch, cfg)
        flat = np.concatenate([params.flatten(), u.ravel()])
        grads = np.concatenate([dL_dtheta, dL_du.ravel()])
        flat, opt_state = adamw_step(flat, grads, opt_state, lr, cfg)
        params = params.from_flat(flat[:n_theta])
        u = flat[n_theta:].reshape(1, dim)

        if on_epoch is not None:
            on_epoch({"epoch": epoch, "lr": float(lr), "loss": loss_val,
                      "support_acc": acc})

    _, _, _, p_m, _ = _forward(support, p_t, p_v, u, ctx, params, cfg)
    return TrainedModel(params, u, p_m, cfg, support.class_names)


# ---------------------------------------------------------------------------
# NAPM serialization


def _config_blob(model: TrainedModel) -> bytes:
    cfg = asdict(model.config)
    blob = {
        "config": cfg,
        "dim": model.field_params.dim,
        "embed_dim": model.field_params.embed_dim,
        "n_classes": model.n_classes,
        "class_names": model.class_names,
    }
    return json.dumps(blob, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_napm(model: TrainedModel, path):
    tensors = [("u", model.u)]
    tensors += [(name, np.asarray(t)) for name, t in model.field_params.tensors().items()]
    tensors += [("prototypes", model.prototypes)]
    with open(path, "wb") as f:
        f.write(NAPM_MAGIC)
        f.write(struct.pack("<B", NAPM_VERSION))
        f.write(struct.pack("<I", len(tensors)))
        for name, t in tensors:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<II", t.shape[0], t.shape[1]))
            f.write(t.astype("<f8").tobytes())
        blob = _config_blob(model)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def load_napm(path) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated model file reading {what}", offset=pos)
        out = data[pos:pos + n]
        pos += n
        return out

    magic = take(4, "magic")
    if magic != NAPM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {NAPM_MAGIC!r}", offset=0)
    version = take(1, "version")[0]
    if version != NAPM_VERSION:
        raise FormatError(f"unsupported model version {version}", offset=4)
    count = struct.unpack("<I", take(4, "tensor count"))[0]
    tensors = {}
    for _ in range(count):
        ln = struct.unpack("<I", take(4, "name length"))[0]
        name = take(ln, "name").decode("utf-8")
        rows, cols = struct.unpack("<II", take(8, f"{name} shape"))
        payload = take(8 * rows * cols, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    ln = struct.unpack("<I", take(4, "config length"))[0]
    blob = json.loads(take(ln, "config blob").decode("utf-8"))

    cfg_dict = dict(blob["config"])
    solver = SolverConfig(**cfg_dict.pop("solver"))
    cfg = TrainConfig(solver=solver, **cfg_dict)

    missing = [n for n in ("u", "prototypes", *TENSOR_FIELDS) if n not in tensors]
    if missing:
        raise FormatError(f"model file is missing tensors {missing}")
    params = FieldParameters(
        **{name: tensors[name] for name in TENSOR_FIELDS},
        dim=blob["dim"], embed_dim=blob["embed_dim"],
        decay_rate=cfg.eta, horizon=cfg.horizon)
    return TrainedModel(params, tensors["u"], tensors["prototypes"], cfg,
                        blob["class_names"])
