"""Epoch/batch orchestration, checkpointing, telemetry.

A run directory contains:
    config.json   -- TrainConfig echo plus dims and RNG lineage
    weights.bin   -- checkpoint (see projector module for the layout)
    log.csv       -- one row per epoch:
                     epoch,L_S,L_U,L_T,hist_gap,seen_top1,skew_j1

``hist_gap`` is the epoch mean of ||hard - soft||_1 / N per batch;
``skew_j1`` is the diagnostic occurrence skewness (j=1, cosine) of the
training features against the current class prototypes, ``nan`` while
the occurrence counts are uniform.

Reproducibility: the master seed feeds one stream for weight init and
one spawned stream per epoch for shuffling, so identical inputs and
config give bit-identical logs and checkpoints.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import EmbeddingTable, FeatureBank, SplitManifest
from .errors import ConfigError, FormatError, IoError, ManifestMismatchError
from .hubness import hubness_report
from .kernels import l2_normalize_rows
from .losses import TotalLossResult, TrainConfig, total_loss
from .projector import (
    AdamState,
    MlpWeights,
    adam_step,
    forward,
    init_weights,
    load_checkpoint,
    save_checkpoint,
)

RUN_FORMAT_VERSION = 1
LOG_COLUMNS = ("epoch", "L_S", "L_U", "L_T", "hist_gap", "seen_top1", "skew_j1")


@dataclass
class EpochStats:
    epoch: int
    l_s: float
    l_u: float
    l_t: float
    hist_gap: float
    seen_top1: float
    skew_j1: float  # nan when occurrence counts are uniform

    def row(self) -> list:
        return [self.epoch, self.l_s, self.l_u, self.l_t, self.hist_gap,
                self.seen_top1, self.skew_j1]


@dataclass
class TrainRun:
    config: TrainConfig
    log: list[EpochStats]
    weights: MlpWeights
    seen_classes: list[str]
    rng_lineage: dict
    # Per-epoch summed hard histograms; telemetry only, not persisted.
    hard_histograms: list[np.ndarray] | None = None


def _prepare(seen_bank: FeatureBank, table: EmbeddingTable,
             manifest: SplitManifest, cfg: TrainConfig):
    missing = [c for c in manifest.seen if c not in table.entries]
    if missing:
        raise ManifestMismatchError(f"no embedding for seen classes {missing}")
    unknown = [c for c in seen_bank.class_names if c not in manifest.seen]
    if unknown:
        raise ManifestMismatchError(f"bank classes not in seen split: {unknown}")
    if seen_bank.n < cfg.batch_size:
        raise ConfigError(
            f"{seen_bank.n} instances cannot fill one batch of {cfg.batch_size}"
        )
    features = seen_bank.features
    if cfg.normalize_features:
        features = l2_normalize_rows(features)
    # Histogram slots follow manifest.seen order.
    class_index = {c: i for i, c in enumerate(manifest.seen)}
    labels = np.array(
        [class_index[seen_bank.class_names[l]] for l in seen_bank.labels],
        dtype=np.int64,
    )
    semantics = table.matrix_for(manifest.seen)
    return features, labels, semantics


def _model_dims(cfg: TrainConfig, d: int, m: int) -> tuple[int, tuple[int, ...], int]:
    """Input dim, hidden dims, output dim for the configured direction."""
    if cfg.direction == "feat2sem":
        return m, tuple(reversed(cfg.hidden_dims)), d
    return d, cfg.hidden_dims, m


def _epoch_telemetry(
    features: np.ndarray,
    labels: np.ndarray,
    semantics: np.ndarray,
    w: MlpWeights,
    cfg: TrainConfig,
) -> tuple[float, float]:
    """Seen top-1 and occurrence skewness over the whole training set."""
    if cfg.direction == "feat2sem":
        queries, _ = forward(w, features, final_relu=cfg.final_relu)
        prototypes = semantics
    else:
        queries = features
        prototypes, _ = forward(w, semantics, final_relu=cfg.final_relu)
    report = hubness_report(queries, prototypes, j=1, metric="cosine")
    preds = np.argmax(
        (queries / np.linalg.norm(queries, axis=1)[:, None])
        @ (prototypes / np.linalg.norm(prototypes, axis=1)[:, None]).T,
        axis=1,
    )
    top1 = float(np.mean(preds == labels))
    skew = float("nan") if report.skewness is None else report.skewness
    return top1, skew


def train(
    seen_bank: FeatureBank,
    table: EmbeddingTable,
    manifest: SplitManifest,
    cfg: TrainConfig,
) -> TrainRun:
    """Train the projection network on the seen split.

    Instances are reshuffled every epoch from a per-epoch spawned stream;
    the final short batch is dropped so every batch has exactly N
    instances (the skewness statistics assume a fixed N). The returned
    weights are rounded to float32 values so that the saved checkpoint
    reproduces in-memory evaluation results exactly.
    """
    features, labels, semantics = _prepare(seen_bank, table, manifest, cfg)
    d_in, hidden, d_out = _model_dims(cfg, semantics.shape[1], features.shape[1])
    master = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss = master.spawn(2)
    lineage = {
        "master_seed": cfg.seed,
        "streams": "spawn(2) -> [weight init, per-epoch shuffles]",
    }
    w = _init_from_seedseq(d_in, hidden, d_out, init_ss)
    state = AdamState.fresh(w, lr=cfg.lr)
    n_batches = seen_bank.n // cfg.batch_size
    log: list[EpochStats] = []
    hard_hists: list[np.ndarray] = []
    epoch_streams = shuffle_ss.spawn(cfg.epochs) if cfg.epochs else []

    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(epoch_streams[epoch])
        perm = rng.permutation(seen_bank.n)
        sums = np.zeros(4)  # l_s, l_u, l_t, hist_gap
        epoch_hard = np.zeros(semantics.shape[0])
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            res: TotalLossResult = total_loss(
                features[idx], labels[idx], semantics, w, cfg
            )
            w, state = adam_step(w, res.grads, state)
            gap = float(np.abs(res.hard_counts - res.soft_counts).sum() / cfg.batch_size)
            sums += (res.distance, res.skew, res.total, gap)
            epoch_hard += res.hard_counts
        if epoch == cfg.epochs - 1:
            w = w.quantized_f32()
        top1, skew = _epoch_telemetry(features, labels, semantics, w, cfg)
        mean = sums / n_batches
        log.append(EpochStats(epoch, mean[0], mean[1], mean[2], mean[3], top1, skew))
        hard_hists.append(epoch_hard)

    return TrainRun(cfg, log, w, list(manifest.seen), lineage, hard_hists)


def _init_from_seedseq(d_in, hidden, d_out, seed_seq: np.random.SeedSequence) -> MlpWeights:
    # init_weights seeds its own SeedSequence from an int; derive one.
    derived = int(seed_seq.generate_state(1, np.uint64)[0])
    return init_weights(d_in, hidden, d_out, seed=derived)


def _format_cell(x) -> str:
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def save_run(run: TrainRun, run_dir) -> None:
    """Write config.json, weights.bin and log.csv into run_dir."""
    run_dir = Path(run_dir)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create run dir {run_dir}: {exc}") from exc
    config_obj = {
        "format_version": RUN_FORMAT_VERSION,
        "train_config": run.config.to_dict(),
        "dims": list(run.weights.dims),
        "seen_classes": run.seen_classes,
        "rng_lineage": run.rng_lineage,
        "epochs_completed": len(run.log),
    }
    try:
        (run_dir / "config.json").write_text(
            json.dumps(config_obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        with open(run_dir / "log.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for stats in run.log:
                writer.writerow([_format_cell(x) for x in stats.row()])
    except OSError as exc:
        raise IoError(f"cannot write run files in {run_dir}: {exc}") from exc
    save_checkpoint(
        run.weights,
        run_dir / "weights.bin",
        final_relu=run.config.final_relu,
        seed=run.config.seed,
        step_count=len(run.log),
        config=run.config.to_dict(),
    )


def load_run(run_dir) -> TrainRun:
    """Read a run directory back; raises FormatError on version mismatch."""
    run_dir = Path(run_dir)
    try:
        config_obj = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {run_dir}/config.json: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{run_dir}/config.json: invalid JSON ({exc})") from exc
    if config_obj.get("format_version") != RUN_FORMAT_VERSION:
        raise FormatError(
            f"{run_dir}: run format {config_obj.get('format_version')} "
            f"unsupported (want {RUN_FORMAT_VERSION})"
        )
    cfg = TrainConfig.from_dict(config_obj["train_config"])
    weights, header = load_checkpoint(run_dir / "weights.bin")
    if list(weights.dims) != config_obj["dims"]:
        raise FormatError(f"{run_dir}: checkpoint dims disagree with config.json")
    log: list[EpochStats] = []
    try:
        with open(run_dir / "log.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header_row = next(reader, None)
            if tuple(header_row or ()) != LOG_COLUMNS:
                raise FormatError(f"{run_dir}/log.csv: unexpected columns {header_row}")
            for row in reader:
                if len(row) != len(LOG_COLUMNS):
                    raise FormatError(f"{run_dir}/log.csv: malformed row {row}")
                log.append(
                    EpochStats(int(row[0]), *(float(x) for x in row[1:]))
                )
    except OSError as exc:
        raise IoError(f"cannot read {run_dir}/log.csv: {exc}") from exc
    return TrainRun(
        cfg, log, weights, list(config_obj["seen_classes"]),
        dict(config_obj["rng_lineage"]),
    )


def project_prototypes(run: TrainRun, table: EmbeddingTable, names: list[str]) -> np.ndarray:
    """Prototype vectors for ``names`` under the run's direction.

    sem2feat: semantic vectors projected by the trained network.
    feat2sem: the raw semantic vectors (queries get projected instead).
    """
    semantics = table.matrix_for(names)
    if run.config.direction == "feat2sem":
        return semantics
    out, _ = forward(run.weights, semantics, final_relu=run.config.final_relu)
    return out


def project_queries(run: TrainRun, features: np.ndarray) -> np.ndarray:
    """Query-side mapping for the run's direction (identity for sem2feat).

    Applies the run's feature normalization first so evaluation sees the
    same inputs training did; under cosine scoring this only matters for
    feat2sem, where features pass through the (nonlinear) network.
    """
    if run.config.normalize_features:
        features = l2_normalize_rows(features)
    if run.config.direction == "feat2sem":
        out, _ = forward(run.weights, features, final_relu=run.config.final_relu)
        return out
    return features
