"""Inference, metrics, binary episodes, and the component ablation.

Prediction is the nearest-prototype rule under cosine similarity; exact ties
resolve to the lowest class index so reports are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet
from .errors import CapacityError, DataMismatchError, DegenerateInputError
from .field import SupportContext, field_eval
from .ode import SolverConfig, integrate
from .prototypes import fuse, fusion_coefficients, textual_prototype, visual_prototype
from .training import TrainConfig, TrainedModel, train

VARIANTS = ("TP", "VP", "TP+VP", "TP+VP+NODE")
POSITIVE, NEGATIVE = 0, 1


@dataclass
class EvalReport:
    accuracy: float
    per_class_accuracy: list
    confusion: np.ndarray          # (N, N) counts, rows = true class
    n_queries: int
    seed: int | None = None
    variant: str | None = None

    def to_json(self) -> str:
        payload = {
            "variant": self.variant,
            "seed": self.seed,
            "n_queries": self.n_queries,
            "accuracy": self.accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    def confusion_csv(self) -> str:
        n = self.confusion.shape[0]
        lines = ["true\\pred," + ",".join(str(j) for j in range(n))]
        for i in range(n):
            lines.append(str(i) + "," + ",".join(str(int(x)) for x in self.confusion[i]))
        return "\n".join(lines) + "\n"


def _unit(m):
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    if (norms <= 1e-12).any():
        bad = int(np.argmin(norms[:, 0]))
        raise DegenerateInputError(f"row {bad} has near-zero norm")
    return m / norms


def predict(query, prototypes) -> np.ndarray:
    """Nearest-prototype labels by cosine similarity; ties break low.

    ``query`` is an EmbeddingSet or a feature matrix.
    """
    feats = query.features if isinstance(query, EmbeddingSet) else np.asarray(query)
    sims = _unit(feats) @ _unit(np.asarray(prototypes, dtype=np.float64)).T
    return np.argmax(sims, axis=1)


def evaluate(model, query: EmbeddingSet, seed=None, variant=None) -> EvalReport:
    """Score a query set against a model's (or raw matrix's) prototypes."""
    prototypes = model.prototypes if isinstance(model, TrainedModel) else model
    n = prototypes.shape[0]
    if query.n_rows and query.labels.max() >= n:
        raise DataMismatchError(
            f"query label {int(query.labels.max())} outside model's {n} classes")
    if isinstance(model, TrainedModel) and model.class_names and query.class_names:
        for idx, name in enumerate(query.class_names):
            if idx < n and model.class_names[idx] != name:
                raise DataMismatchError(
                    f"class {idx} is {model.class_names[idx]!r} in the model "
                    f"but {name!r} in the query set")

    labels = predict(query, prototypes)
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (query.labels, labels), 1)
    totals = confusion.sum(axis=1)
    per_class = [float(confusion[i, i] / totals[i]) if totals[i] else 0.0
                 for i in range(n)]
    accuracy = float(np.trace(confusion) / max(query.n_rows, 1))
    return EvalReport(accuracy, per_class, confusion, query.n_rows,
                      seed=seed, variant=variant)


def binary_episode(pos_support, neg_support, prompts, query,
                   field_params=None, solver: SolverConfig | None = None):
    """Two-way episode: positive vs negative support sides.

    ``pos_support``/``neg_support`` are feature matrices or EmbeddingSets;
    ``prompts`` supplies one textual prototype per side (positive first).
    Prototypes are the u = 0 fusion of the side means; pass ``field_params``
    (with ``solver``) to additionally refine them through the field before
    predicting. Returns one label per query row (POSITIVE=0, NEGATIVE=1).
    """
    def feats(x):
        return x.features if isinstance(x, EmbeddingSet) else np.asarray(x, dtype=np.float64)

    pos, neg = feats(pos_support), feats(neg_support)
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        raise CapacityError("both support sides need at least one row")
    prm = feats(prompts)
    if prm.shape[0] != 2:
        raise CapacityError("prompts must supply exactly one row per side")

    p_v = np.vstack([pos.mean(axis=0), neg.mean(axis=0)])
    p_t = prm
    u = np.zeros((1, pos.shape[1]))
    state = fuse(p_t, p_v, fusion_coefficients(p_v, u))
    prototypes = state.matrix

    if field_params is not None:
        support = EmbeddingSet(
            "visual", np.vstack([pos, neg]),
            np.concatenate([np.zeros(len(pos), dtype=int), np.ones(len(neg), dtype=int)]), 2)
        ctx = SupportContext.from_embedding_set(support)
        cfg = solver or SolverConfig()
        prototypes, _ = integrate(
            lambda p, t: field_eval(p, t, ctx, field_params), prototypes, cfg)

    return predict(feats(query), prototypes)


def ablation_run(support: EmbeddingSet, prompts: EmbeddingSet,
                 query: EmbeddingSet, cfg: TrainConfig, seed=None):
    """Evaluate the four classifier variants on identical data.

    TP: textual prototypes only. VP: visual only. TP+VP: untrained fusion at
    u = 0. TP+VP+NODE: prototypes refined by a model trained on the support.
    Returns one EvalReport per variant, in that order.
    """
    p_t = textual_prototype(prompts)
    p_v = visual_prototype(support)
    u0 = np.zeros((1, support.dim))
    fused = fuse(p_t, p_v, fusion_coefficients(p_v, u0)).matrix
    model = train(support, prompts, cfg)

    reports = [
        evaluate(p_t, query, seed=seed, variant="TP"),
        evaluate(p_v, query, seed=seed, variant="VP"),
        evaluate(fused, query, seed=seed, variant="TP+VP"),
        evaluate(model.prototypes, query, seed=seed, variant="TP+VP+NODE"),
    ]
    return reports
