"""Feature banks, semantic embedding tables, split manifests, synthetic data.

File formats
------------
Feature bank (binary, extension-agnostic, conventionally ``.fbnk``):
    magic ``FBNK`` (4 bytes) | version u32=1 | count u32 | dim u32 |
    count*dim float32 little-endian, row-major.
    A sidecar text file ``<path>.labels`` holds one class name per line;
    line i labels feature row i.

Embedding table (UTF-8 text): one ``token v1 ... v_d`` record per line,
GloVe style. All lines must share d. Duplicate tokens: last record wins
(a warning is logged).

Split manifest (JSON): ``{"seen": [names...], "unseen": [names...]}``.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    CorruptDataError,
    FormatError,
    IoError,
    ManifestMismatchError,
)
from .kernels import NORM_EPS

log = logging.getLogger(__name__)

FBNK_MAGIC = b"FBNK"
FBNK_VERSION = 1


@dataclass
class FeatureBank:
    """A matrix of feature vectors with integer class labels.

    ``labels[i]`` indexes into ``class_names``; ``features`` is
    (n_instances, m) float64 in memory, float32 on disk.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ManifestMismatchError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} rows"
            )
        if len(self.class_names) and (
            self.labels.min(initial=0) < 0
            or self.labels.max(initial=0) >= len(self.class_names)
        ):
            raise ManifestMismatchError("label index out of class_names range")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    def label_names(self) -> list[str]:
        return [self.class_names[i] for i in self.labels]


@dataclass
class EmbeddingTable:
    """Class name -> semantic vector, all sharing dimension d."""

    entries: dict[str, np.ndarray]

    def __post_init__(self):
        dims = {v.shape[0] for v in self.entries.values()}
        if len(dims) > 1:
            raise FormatError(f"inconsistent embedding dims: {sorted(dims)}")

    @property
    def d(self) -> int:
        return next(iter(self.entries.values())).shape[0]

    def matrix_for(self, names: list[str]) -> np.ndarray:
        """Stack the vectors for ``names`` into a (len(names), d) matrix."""
        missing = [n for n in names if n not in self.entries]
        if missing:
            raise ManifestMismatchError(f"no embedding for classes {missing}")
        return np.stack([self.entries[n] for n in names])


@dataclass
class SplitManifest:
    """Disjoint seen/unseen class name lists."""

    seen: list[str]
    unseen: list[str]

    def __post_init__(self):
        overlap = set(self.seen) & set(self.unseen)
        if overlap:
            raise ConfigError(f"seen/unseen classes overlap: {sorted(overlap)}")
        if len(self.seen) < 2:
            raise ConfigError("need at least 2 seen classes")


@dataclass
class SynthSpec:
    """Parameters for the synthetic cluster generator.

    The semantic vector of each class is a fixed random linear image of
    its feature centroid plus isotropic noise, so an exact alignment
    target exists and unseen classes remain predictable from their
    semantics alone. semantic_dim >= feature_dim keeps that linear map
    invertible on the centroids. See synthetic_ground_truth for the
    centroid geometry.
    """

    p_seen: int = 30
    q_unseen: int = 10
    m: int = 64
    instances_per_class: int = 50
    cluster_spread: float = 0.5
    semantic_dim: int = 128
    semantic_noise: float = 0.4
    seed: int = 0

    def __post_init__(self):
        if min(self.p_seen, self.q_unseen, self.m, self.instances_per_class,
               self.semantic_dim) < 1:
            raise ConfigError("all counts must be positive")
        if self.p_seen < 2:
            raise ConfigError("need at least 2 seen classes")
        if self.cluster_spread <= 0:
            raise ConfigError("cluster_spread must be > 0")
        if self.semantic_noise < 0:
            raise ConfigError("semantic_noise must be >= 0")


def save_feature_bank(bank: FeatureBank, path) -> None:
    """Write a bank in the FBNK binary format plus its labels sidecar."""
    if bank.n == 0:
        raise FormatError("refusing to save an empty feature bank")
    if not np.all(np.isfinite(bank.features)):
        raise CorruptDataError("feature bank contains non-finite entries")
    path = Path(path)
    payload = bank.features.astype("<f4").tobytes()
    header = FBNK_MAGIC + struct.pack("<III", FBNK_VERSION, bank.n, bank.m)
    try:
        path.write_bytes(header + payload)
        Path(str(path) + ".labels").write_text(
            "\n".join(bank.label_names()) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write feature bank {path}: {exc}") from exc


def load_feature_bank(path, labels_path=None) -> FeatureBank:
    """Read an FBNK file and its labels sidecar into a FeatureBank.

    Class names are enumerated in order of first appearance in the
    sidecar, so save -> load is the identity (at float32 precision) for
    banks whose instances are grouped by class.
    """
    path = Path(path)
    labels_path = Path(labels_path) if labels_path else Path(str(path) + ".labels")
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read feature bank {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != FBNK_MAGIC:
        raise FormatError(f"{path}: not an FBNK file")
    version, count, dim = struct.unpack("<III", raw[4:16])
    if version != FBNK_VERSION:
        raise FormatError(f"{path}: unsupported FBNK version {version}")
    if count == 0 or dim == 0:
        raise FormatError(f"{path}: degenerate shape {count}x{dim}")
    expected = 16 + 4 * count * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    features = np.frombuffer(raw[16:], dtype="<f4").reshape(count, dim)
    if not np.all(np.isfinite(features)):
        raise CorruptDataError(f"{path}: non-finite feature entries")
    try:
        names = labels_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read labels {labels_path}: {exc}") from exc
    names = [n for n in names if n.strip()]
    if len(names) != count:
        raise ManifestMismatchError(
            f"{labels_path}: {len(names)} labels for {count} feature rows"
        )
    class_names: list[str] = []
    index = {}
    labels = np.empty(count, dtype=np.int64)
    for i, name in enumerate(names):
        if name not in index:
            index[name] = len(class_names)
            class_names.append(name)
        labels[i] = index[name]
    return FeatureBank(features.astype(np.float64), labels, class_names)


def load_embedding_table(path, normalize: bool = False) -> EmbeddingTable:
    """Parse a GloVe-style text file of ``token v1 ... v_d`` lines."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read embeddings {path}: {exc}") from exc
    entries: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        token, values = parts[0], parts[1:]
        if not values:
            raise FormatError(f"{path}:{lineno}: no vector components")
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise FormatError(
                f"{path}:{lineno}: dim {len(values)} after earlier dim {dim}"
            )
        try:
            vec = np.array([float(v) for v in values], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: unparseable value ({exc})") from exc
        if not np.all(np.isfinite(vec)):
            raise CorruptDataError(f"{path}:{lineno}: non-finite embedding")
        if token in entries:
            log.warning("%s:%d: duplicate token %r, last record wins", path, lineno, token)
        if normalize:
            norm = np.linalg.norm(vec)
            if norm <= NORM_EPS:
                raise CorruptDataError(f"{path}:{lineno}: zero vector cannot be normalized")
            vec = vec / norm
        entries[token] = vec
    if not entries:
        raise FormatError(f"{path}: empty embedding table")
    return EmbeddingTable(entries)


def save_embedding_table(table: EmbeddingTable, path) -> None:
    """Write a table as GloVe-style text (repr floats, round-trip exact)."""
    lines = []
    for token, vec in table.entries.items():
        lines.append(token + " " + " ".join(repr(float(v)) for v in vec))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write embeddings {path}: {exc}") from exc


def load_split_manifest(path) -> SplitManifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict) or "seen" not in obj or "unseen" not in obj:
        raise FormatError(f"{path}: manifest must be an object with seen/unseen lists")
    return SplitManifest(list(obj["seen"]), list(obj["unseen"]))


def save_split_manifest(manifest: SplitManifest, path) -> None:
    try:
        Path(path).write_text(
            json.dumps({"seen": manifest.seen, "unseen": manifest.unseen}, indent=2)
            + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write manifest {path}: {exc}") from exc


def synthetic_ground_truth(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """The generating class centroids and semantic vectors for a spec.

    Replays the same seeded stream generate_synthetic uses, so tests can
    score against the true centroids without the generator exposing them.

    Centroid structure: a folded-normal component (all classes share a
    positive cone, like post-ReLU feature spaces) mixed with a symmetric
    component that keeps classes angularly separated. Every other unseen
    class is placed near one of the seen centroids, mirroring benchmark
    splits where unseen categories are semantically adjacent to seen
    ones; those neighbors are what make seen/unseen score calibration
    matter.
    """
    truth_ss, _ = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(truth_ss)
    total = spec.p_seen + spec.q_unseen
    centroids = np.abs(rng.standard_normal((total, spec.m))) + 0.7 * rng.standard_normal(
        (total, spec.m)
    )
    for j in range(1, spec.q_unseen, 2):
        anchor = centroids[j % spec.p_seen]
        offset = rng.standard_normal(spec.m)
        offset *= 0.33 * np.linalg.norm(anchor) / np.linalg.norm(offset)
        centroids[spec.p_seen + j] = anchor + offset
    semantic_map = rng.normal(0.0, 1.0 / np.sqrt(spec.m), (spec.m, spec.semantic_dim))
    semantics = centroids @ semantic_map
    if spec.semantic_noise > 0:
        semantics = semantics + rng.normal(0.0, spec.semantic_noise, semantics.shape)
    return centroids, semantics


def generate_synthetic(
    spec: SynthSpec,
) -> tuple[FeatureBank, FeatureBank, EmbeddingTable, SplitManifest]:
    """Draw a seeded cluster dataset with a learnable semantic alignment.

    Returns (seen bank, unseen bank, embedding table over all classes,
    split manifest). Instances are grouped by class, so banks round-trip
    through the FBNK format bit-exactly.
    """
    centroids, semantics = synthetic_ground_truth(spec)
    _, feat_ss = np.random.SeedSequence(spec.seed).spawn(2)
    rng = np.random.default_rng(feat_ss)
    total = spec.p_seen + spec.q_unseen
    names = [f"class{i:03d}" for i in range(total)]
    k = spec.instances_per_class

    def bank_for(class_ids: list[int]) -> FeatureBank:
        rows = []
        labels = []
        for local, ci in enumerate(class_ids):
            rows.append(
                centroids[ci] + rng.normal(0.0, spec.cluster_spread, (k, spec.m))
            )
            labels.extend([local] * k)
        return FeatureBank(
            np.vstack(rows), np.array(labels), [names[ci] for ci in class_ids]
        )

    seen_bank = bank_for(list(range(spec.p_seen)))
    unseen_bank = bank_for(list(range(spec.p_seen, total)))
    table = EmbeddingTable({names[i]: semantics[i] for i in range(total)})
    manifest = SplitManifest(names[: spec.p_seen], names[spec.p_seen :])
    return seen_bank, unseen_bank, table, manifest


# Paths written by the synth CLI command inside its output directory.
SYNTH_FILES = {
    "seen": "seen.fbnk",
    "unseen": "unseen.fbnk",
    "embeddings": "embeddings.txt",
    "manifest": "manifest.json",
}


def true_centroids(bank: FeatureBank) -> np.ndarray:
    """Per-class mean feature vectors, ordered like bank.class_names."""
    cents = np.zeros((len(bank.class_names), bank.m))
    for c in range(len(bank.class_names)):
        cents[c] = bank.features[bank.labels == c].mean(axis=0)
    return cents
