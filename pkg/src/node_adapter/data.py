"""Embedding sets, the NAEB interchange format, synthetic benchmarks, episodes.

NAEB layout (little-endian):
  0-3   magic "NAEB"
  4     version = 1
  5     dtype = 1 (float32)
  6     modality (0 visual, 1 textual)
  7     reserved 0
  8-19  u32 N rows, u32 D, u32 C classes
  then  N x u32 labels, N*D float32 row-major,
        u32 name_count (0 or C) and name_count (u32 length + UTF-8) strings.

Features are stored at float32 (interchange precision) and computed on at
float64. All randomness comes from numpy's Philox, a 64-bit counter-based
generator, so equal seeds give bit-identical outputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, FormatError, UsageError

MAGIC = b"NAEB"
VERSION = 1
DTYPE_F32 = 1
MODALITIES = ("visual", "textual")


def rng_for(seed) -> np.random.Generator:
    """The package-wide seeded generator (Philox, counter-based)."""
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class EmbeddingSet:
    """Labeled, row-wise unit-norm features of one modality."""

    modality: str
    features: np.ndarray          # (n, D) float64, unit rows
    labels: np.ndarray            # (n,) int
    n_classes: int
    class_names: list[str] | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise UsageError(f"modality must be one of {MODALITIES}")
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise UsageError("features must be 2-D")
        if self.labels.shape != (self.features.shape[0],):
            raise UsageError("labels length must match feature rows")
        if self.n_rows and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise UsageError(f"labels must lie in [0, {self.n_classes})")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise UsageError("class_names length must equal n_classes")

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def rows_of(self, label) -> np.ndarray:
        return self.features[self.labels == label]

    def check_unit_rows(self, tol=1e-6):
        if self.n_rows == 0:
            return
        norms = np.linalg.norm(self.features, axis=1)
        worst = np.abs(norms - 1.0).max()
        if worst > tol:
            raise UsageError(f"rows must be unit-norm within {tol} (worst {worst:.2e})")


@dataclass
class SyntheticSpec:
    """Parameters of the biased-support synthetic benchmark."""

    classes: int = 10
    dim: int = 32
    shots: int = 16
    queries_per_class: int = 20
    prompts_per_class: int = 5
    visual_noise: float = 0.25
    textual_noise: float = 0.15
    support_bias: float = 0.3
    seed: int = 0

    def validate(self):
        if self.classes < 2:
            raise UsageError("classes must be >= 2")
        if self.dim < 2:
            raise UsageError("dim must be >= 2")
        if self.shots < 1:
            raise UsageError("shots must be >= 1")
        if self.prompts_per_class < 1:
            raise UsageError("prompts must be >= 1")
        if self.queries_per_class < 0:
            raise UsageError("queries must be >= 0")
        for name in ("visual_noise", "textual_noise", "support_bias"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")


@dataclass
class Episode:
    """One N-way K-shot task: disjoint support/query plus matching prompts."""

    support: EmbeddingSet
    query: EmbeddingSet
    prompts: EmbeddingSet
    way: int
    shot: int


# ---------------------------------------------------------------------------
# NAEB read/write


def write_naeb(es: EmbeddingSet, path):
    es.check_unit_rows()
    mod_byte = MODALITIES.index(es.modality)
    names = es.class_names or []
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BBBB", VERSION, DTYPE_F32, mod_byte, 0))
        f.write(struct.pack("<III", es.n_rows, es.dim, es.n_classes))
        f.write(es.labels.astype("<u4").tobytes())
        f.write(es.features.astype("<f4").tobytes())
        f.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.blob):
            raise FormatError(
                f"truncated file: {what} needs {n} bytes, only "
                f"{len(self.blob) - self.pos} remain", offset=self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def read_naeb(path) -> EmbeddingSet:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version, dtype, mod_byte, reserved = struct.unpack("<BBBB", r.take(4, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", offset=5)
    if mod_byte not in (0, 1):
        raise FormatError(f"bad modality byte {mod_byte}", offset=6)
    n = r.u32("row count")
    d = r.u32("feature dim")
    c = r.u32("class count")

    labels_off = r.pos
    labels = np.frombuffer(r.take(4 * n, "labels"), dtype="<u4").astype(np.int64)
    if n and labels.max() >= c:
        bad = int(np.argmax(labels >= c))
        raise FormatError(f"label {labels[bad]} >= class count {c} at row {bad}",
                          offset=labels_off + 4 * bad)
    feat_off = r.pos
    feats = np.frombuffer(r.take(4 * n * d, "features"), dtype="<f4")
    feats = feats.astype(np.float64).reshape(n, d)
    name_count = r.u32("name count")
    if name_count not in (0, c):
        raise FormatError(f"name count {name_count} must be 0 or {c}",
                          offset=r.pos - 4)
    names = None
    if name_count:
        names = []
        for i in range(name_count):
            ln = r.u32(f"name {i} length")
            names.append(r.take(ln, f"name {i}").decode("utf-8"))

    if n:
        norms = np.linalg.norm(feats, axis=1)
        drift = np.abs(norms - 1.0)
        if drift.max() > 1e-3:
            bad = int(np.argmax(drift))
            raise FormatError(
                f"row {bad} has norm {norms[bad]:.6f}, outside unit tolerance 1e-3",
                offset=feat_off + 4 * d * bad)
        feats = feats / norms[:, None]
    return EmbeddingSet(MODALITIES[mod_byte], feats, labels, c, names)


def read_csv(path, modality="visual") -> EmbeddingSet:
    """Debug import: header ``label,f0,...,f{D-1}``, one row per sample."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
        if not header or header[0] != "label":
            raise FormatError("CSV header must start with 'label'", offset=0)
        d = len(header) - 1
        labels, rows = [], []
        for line in f:
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != d + 1:
                raise FormatError(f"CSV row has {len(parts)} fields, expected {d + 1}")
            labels.append(int(parts[0]))
            rows.append([float(x) for x in parts[1:]])
    feats = np.asarray(rows, dtype=np.float64)
    if feats.size:
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if labels.size else 0
    return EmbeddingSet(modality, feats, labels, c)


# ---------------------------------------------------------------------------
# synthetic benchmark


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def synth_generate(spec: SyntheticSpec):
    """Generate (support, query, prompts) around latent class directions.

    Per class: a unit direction mu_c and a unit bias b_c are drawn. Query and
    prompt rows are normalize(mu_c + sigma * eps); support rows get the extra
    systematic shift delta * b_c before normalization, which is the prototype
    estimation bias the refinement stage is asked to repair.

    Draw order (fixed for reproducibility): mu, bias, support noise, query
    noise, prompt noise, all from one Philox stream.
    """
    spec.validate()
    c, d = spec.classes, spec.dim
    rng = rng_for(spec.seed)
    mu = _unit_rows(rng.standard_normal((c, d)))
    bias = _unit_rows(rng.standard_normal((c, d)))

    sup_eps = rng.standard_normal((c, spec.shots, d))
    qry_eps = rng.standard_normal((c, spec.queries_per_class, d))
    prm_eps = rng.standard_normal((c, spec.prompts_per_class, d))

    centers_sup = mu + spec.support_bias * bias
    sup = _unit_rows((centers_sup[:, None, :] + spec.visual_noise * sup_eps)
                     .reshape(c * spec.shots, d))
    qry = _unit_rows((mu[:, None, :] + spec.visual_noise * qry_eps)
                     .reshape(c * spec.queries_per_class, d))
    prm = _unit_rows((mu[:, None, :] + spec.textual_noise * prm_eps)
                     .reshape(c * spec.prompts_per_class, d))

    names = [f"class_{i}" for i in range(c)]
    support = EmbeddingSet("visual", sup, np.repeat(np.arange(c), spec.shots), c, names)
    query = EmbeddingSet("visual", qry, np.repeat(np.arange(c), spec.queries_per_class), c, names)
    prompts = EmbeddingSet("textual", prm, np.repeat(np.arange(c), spec.prompts_per_class), c, names)
    return support, query, prompts


def latent_directions(spec: SyntheticSpec) -> np.ndarray:
    """The mu_c matrix the generator drew for ``spec`` (oracle prototypes)."""
    spec.validate()
    rng = rng_for(spec.seed)
    return _unit_rows(rng.standard_normal((spec.classes, spec.dim)))


# ---------------------------------------------------------------------------
# episode sampling


def sample_episode(visual: EmbeddingSet, textual: EmbeddingSet,
                   way, shot, queries, seed) -> Episode:
    """Draw an N-way K-shot episode with disjoint support and query rows.

    Classes are sampled without replacement, then per class ``shot`` support
    and ``queries`` query rows, all labels remapped to 0..way-1.
    """
    if way > visual.n_classes:
        raise UsageError(f"way {way} exceeds available classes {visual.n_classes}")
    if visual.n_classes != textual.n_classes:
        raise UsageError("visual and textual sets disagree on class count")
    rng = rng_for(seed)
    chosen = rng.permutation(visual.n_classes)[:way]

    sup_feats, sup_labels, qry_feats, qry_labels = [], [], [], []
    prm_feats, prm_labels = [], []
    for new_label, cls in enumerate(chosen):
        idx = np.nonzero(visual.labels == cls)[0]
        if idx.size < shot + queries:
            raise CapacityError(
                f"class {cls} has {idx.size} visual rows, needs {shot + queries}")
        perm = rng.permutation(idx.size)
        sup_idx = idx[perm[:shot]]
        qry_idx = idx[perm[shot:shot + queries]]
        sup_feats.append(visual.features[sup_idx])
        sup_labels.append(np.full(shot, new_label))
        qry_feats.append(visual.features[qry_idx])
        qry_labels.append(np.full(queries, new_label))

        tidx = np.nonzero(textual.labels == cls)[0]
        if tidx.size == 0:
            raise CapacityError(f"class {cls} has no prompt rows")
        prm_feats.append(textual.features[tidx])
        prm_labels.append(np.full(tidx.size, new_label))

    def names_for(src):
        if src.class_names is None:
            return None
        return [src.class_names[cls] for cls in chosen]

    support = EmbeddingSet("visual", np.concatenate(sup_feats),
                           np.concatenate(sup_labels), way, names_for(visual))
    query = EmbeddingSet("visual",
                         np.concatenate(qry_feats) if queries else np.zeros((0, visual.dim)),
                         np.concatenate(qry_labels) if queries else np.zeros(0, dtype=np.int64),
                         way, names_for(visual))
    prompts = EmbeddingSet("textual", np.concatenate(prm_feats),
                           np.concatenate(prm_labels), way, names_for(textual))
    return Episode(support, query, prompts, way, shot)
