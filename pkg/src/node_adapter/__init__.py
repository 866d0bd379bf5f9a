"""Prototype refinement for few-shot classification over precomputed
vision-language embeddings: cross-modal prototype fusion, a learned gradient
field integrated by fixed-step ODE solvers, adjoint-sensitivity training,
and a temperature-scaled cosine classifier."""

from .data import (Episode, EmbeddingSet, SyntheticSpec, read_naeb,
                   sample_episode, synth_generate, write_naeb)
from .errors import (CapacityError, DataMismatchError, DegenerateInputError,
                     DivergenceError, FormatError, NodeAdapterError,
                     ShapeError, UsageError)
from .evaluation import EvalReport, ablation_run, binary_episode, evaluate, predict
from .field import AdjointField, FieldParameters, SupportContext, field_eval
from .ode import SolverConfig, adjoint_gradients, integrate, solver_benchmark
from .prototypes import (PrototypeState, fuse, fusion_coefficients,
                         textual_prototype, visual_prototype)
from .tensor import Tape, Var, grad
from .training import (TrainConfig, TrainedModel, adamw_step, ce_loss,
                       class_probabilities, cosine_lr, load_napm, save_napm,
                       train)

__version__ = "0.1.0"

__all__ = [
    "AdjointField", "CapacityError", "DataMismatchError",
    "DegenerateInputError", "DivergenceError", "EmbeddingSet", "Episode",
    "EvalReport", "FieldParameters", "FormatError", "NodeAdapterError",
    "PrototypeState", "ShapeError", "SolverConfig", "SupportContext", "SyntheticSpec", "Tape",
    "TrainConfig", "TrainedModel", "UsageError", "Var", "ablation_run",
    "adamw_step", "adjoint_gradients", "binary_episode", "ce_loss",
    "class_probabilities", "cosine_lr", "evaluate", "field_eval", "fuse",
    "fusion_coefficients", "grad", "integrate", "load_napm", "predict",
    "read_naeb", "sample_episode", "save_napm", "solver_benchmark",
    "synth_generate", "textual_prototype", "train", "visual_prototype",
    "write_naeb",
]
