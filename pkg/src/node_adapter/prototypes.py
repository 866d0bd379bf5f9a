"""Cross-modal class prototypes: per-class means and learnable convex fusion.

The fused matrix is the initial value handed to the ODE stage. Rows are not
re-normalized anywhere here: the cosine classifier is scale-invariant, and
normalizing would only distort gradients flowing into the fusion vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import EmbeddingSet
from .errors import CapacityError, DegenerateInputError

DEGENERATE_NORM = 1e-9


@dataclass
class PrototypeState:
    """Prototype matrix P (N x D, possibly a recorded Var) at time t."""

    P: object
    t: float

    @property
    def matrix(self) -> np.ndarray:
        return T.value_of(self.P)


def class_means(features, labels, n_classes) -> np.ndarray:
    """Row j = mean of the rows labeled j. Every class needs at least one row."""
    features = np.asarray(features, dtype=np.float64)
    out = np.empty((n_classes, features.shape[1]))
    for j in range(n_classes):
        mask = labels == j
        if not mask.any():
            raise CapacityError(f"class {j} has no rows to average")
        out[j] = features[mask].mean(axis=0)
    return out


def textual_prototype(prompts: EmbeddingSet) -> np.ndarray:
    """Mean prompt feature per class."""
    return class_means(prompts.features, prompts.labels, prompts.n_classes)


def visual_prototype(support: EmbeddingSet) -> np.ndarray:
    """Mean of the (already unit-norm) support features per class."""
    return class_means(support.features, support.labels, support.n_classes)


def fusion_coefficients(p_v, u):
    """Per-class mixing weight: lambda_j = sigmoid(v_j . u), returned as Nx1.

    ``u`` may be a recorded Var (1xD), making the result differentiable.
    """
    u_col = T.reshape(u, T.value_of(u).size, 1)
    return T.sigmoid(T.matmul(p_v, u_col))


def fuse(p_t, p_v, lam, t0=0.0) -> PrototypeState:
    """Rowwise convex combination lambda*visual + (1-lambda)*textual."""
    lam_v = T.value_of(lam)
    n = T.value_of(p_v).shape[0]
    if lam_v.shape != (n, 1):
        lam = T.reshape(lam, n, 1)
        lam_v = T.value_of(lam)
    ones = np.ones((n, 1))
    fused = T.add(T.scale_rows(p_v, lam), T.scale_rows(p_t, T.sub(ones, lam)))
    norms = np.linalg.norm(T.value_of(fused), axis=1)
    if (norms < DEGENERATE_NORM).any():
        bad = int(np.argmin(norms))
        raise DegenerateInputError(
            f"fused prototype row {bad} has norm {norms[bad]:.2e}; "
            "cosine similarity is undefined for it")
    return PrototypeState(fused, t0)


def initial_prototypes(support: EmbeddingSet, prompts: EmbeddingSet, u, t0=0.0):
    """Build P(t0) from a support/prompt pair and fusion vector ``u``.

    Returns (state, textual matrix, visual matrix); the latter two are plain
    arrays reused by callers for ablation variants.
    """
    p_t = textual_prototype(prompts)
    p_v = visual_prototype(support)
    lam = fusion_coefficients(p_v, u)
    return fuse(p_t, p_v, lam, t0), p_t, p_v
