"""ZSL / GZSL prediction and evaluation.

Prediction is cosine nearest-prototype. For the generalized task every
class competes, and a calibration constant beta is subtracted from the
scores of seen classes to counteract the seen-class bias a model picks
up from training only on seen data.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dataio import FeatureBank
from .errors import ConfigError, DimMismatchError, ManifestMismatchError
from .kernels import cosine_matrix
from .projector import MlpWeights, forward


@dataclass
class GzslScores:
    """Per-class scores for one instance under the calibrated rule."""

    raw: np.ndarray
    seen_mask: np.ndarray
    beta: float

    @property
    def adjusted(self) -> np.ndarray:
        return self.raw - self.beta * self.seen_mask

    def argmax(self) -> int:
        return int(np.argmax(self.adjusted))


@dataclass
class EvalReport:
    """Top-1 accuracies, per-class breakdown and confusion counts."""

    task: str
    class_names: list[str]
    top1_unseen: float | None = None
    top1_seen: float | None = None
    harmonic_mean: float | None = None
    macro_top1_unseen: float | None = None
    macro_top1_seen: float | None = None
    beta: float | None = None
    per_class_accuracy: dict = field(default_factory=dict)
    confusion_counts: np.ndarray | None = None

    def to_json_dict(self, config_echo: dict | None = None) -> dict:
        return {
            "task": self.task,
            "top1_seen": self.top1_seen,
            "top1_unseen": self.top1_unseen,
            "harmonic_mean": self.harmonic_mean,
            "macro_top1_seen": self.macro_top1_seen,
            "macro_top1_unseen": self.macro_top1_unseen,
            "beta": self.beta,
            "per_class": self.per_class_accuracy,
            "class_names": self.class_names,
            "confusion_counts": None
            if self.confusion_counts is None
            else self.confusion_counts.tolist(),
            "config_echo": config_echo or {},
        }

    def to_json(self, config_echo: dict | None = None) -> str:
        return json.dumps(self.to_json_dict(config_echo), indent=2)


def harmonic_mean(seen: float, unseen: float) -> float:
    """2su/(s+u), defined as 0 when both accuracies vanish."""
    if seen < 0 or unseen < 0:
        raise ConfigError("accuracies must be nonnegative")
    if seen + unseen == 0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


def _prototype_matrix(prototypes, w: MlpWeights | None, final_relu: bool) -> np.ndarray:
    p = np.asarray(prototypes, dtype=np.float64)
    if p.ndim != 2:
        raise DimMismatchError("prototypes must be a matrix")
    if w is not None:
        p, _ = forward(w, p, final_relu=final_relu)
    return p


def zsl_predict(feature, prototypes_projected) -> int:
    """Cosine argmax over the candidate prototypes; ties to lowest index."""
    f = np.asarray(feature, dtype=np.float64)
    scores = cosine_matrix(f[None, :], np.asarray(prototypes_projected, dtype=np.float64))
    return int(np.argmax(scores[0]))


def gzsl_predict(feature, all_prototypes_projected, seen_mask, beta: float) -> int:
    """Calibrated argmax over the union of seen and unseen classes.

    beta is subtracted from the cosine score (not from the cosine's
    argument) of every seen class; ties go to the lowest class index.
    """
    scores = gzsl_scores(feature, all_prototypes_projected, seen_mask, beta)
    return scores.argmax()


def gzsl_scores(feature, all_prototypes_projected, seen_mask, beta: float) -> GzslScores:
    f = np.asarray(feature, dtype=np.float64)
    p = np.asarray(all_prototypes_projected, dtype=np.float64)
    mask = np.asarray(seen_mask, dtype=np.float64)
    if not np.isfinite(beta):
        raise ConfigError("beta must be finite")
    if mask.shape != (p.shape[0],):
        raise DimMismatchError("seen_mask must have one entry per prototype")
    raw = cosine_matrix(f[None, :], p)[0]
    return GzslScores(raw, mask, float(beta))


def _accuracy_breakdown(preds: np.ndarray, truth: np.ndarray, names: list[str],
                        offset: int = 0) -> tuple[float, float, dict]:
    """Micro accuracy, macro accuracy and per-class map.

    ``offset`` shifts truth labels into the union index space.
    """
    truth = truth + offset
    correct = preds == truth
    micro = float(np.mean(correct))
    per_class = {}
    macro_terms = []
    for local, name in enumerate(names):
        sel = truth == (local + offset)
        if not np.any(sel):
            continue
        acc = float(np.mean(correct[sel]))
        per_class[name] = acc
        macro_terms.append(acc)
    macro = float(np.mean(macro_terms)) if macro_terms else 0.0
    return micro, macro, per_class


def evaluate_zsl(
    bank: FeatureBank,
    prototypes,
    w: MlpWeights | None = None,
    final_relu: bool = True,
) -> EvalReport:
    """Top-1 evaluation of a bank against its own classes' prototypes.

    ``prototypes`` holds one row per bank class, in bank.class_names
    order: semantic vectors if ``w`` is given (they get projected), or
    already-projected vectors otherwise.
    """
    proto = _prototype_matrix(prototypes, w, final_relu)
    if proto.shape[0] != len(bank.class_names):
        raise ManifestMismatchError(
            f"{proto.shape[0]} prototypes for {len(bank.class_names)} classes"
        )
    scores = cosine_matrix(bank.features, proto)
    preds = np.argmax(scores, axis=1)
    micro, macro, per_class = _accuracy_breakdown(preds, bank.labels, bank.class_names)
    q = len(bank.class_names)
    confusion = np.zeros((q, q), dtype=np.int64)
    np.add.at(confusion, (bank.labels, preds), 1)
    return EvalReport(
        task="zsl",
        class_names=list(bank.class_names),
        top1_unseen=micro,
        macro_top1_unseen=macro,
        per_class_accuracy=per_class,
        confusion_counts=confusion,
    )


def evaluate_gzsl(
    seen_bank: FeatureBank,
    unseen_bank: FeatureBank,
    prototypes,
    w: MlpWeights | None = None,
    beta: float = 0.6,
    final_relu: bool = True,
) -> EvalReport:
    """Calibrated evaluation over the union of seen and unseen classes.

    ``prototypes`` holds rows for seen_bank.class_names followed by
    unseen_bank.class_names (semantic if ``w`` given, projected
    otherwise). Returns seen top-1, unseen top-1 and their harmonic mean.
    """
    overlap = set(seen_bank.class_names) & set(unseen_bank.class_names)
    if overlap:
        raise ManifestMismatchError(f"seen/unseen class overlap: {sorted(overlap)}")
    proto = _prototype_matrix(prototypes, w, final_relu)
    names = list(seen_bank.class_names) + list(unseen_bank.class_names)
    if proto.shape[0] != len(names):
        raise ManifestMismatchError(
            f"{proto.shape[0]} prototypes for {len(names)} union classes"
        )
    n_seen = len(seen_bank.class_names)
    mask = np.zeros(len(names))
    mask[:n_seen] = 1.0
    adjust = beta * mask

    def predict(bank: FeatureBank) -> np.ndarray:
        scores = cosine_matrix(bank.features, proto) - adjust[None, :]
        return np.argmax(scores, axis=1)

    preds_seen = predict(seen_bank)
    preds_unseen = predict(unseen_bank)
    micro_s, macro_s, per_class_s = _accuracy_breakdown(
        preds_seen, seen_bank.labels, seen_bank.class_names, offset=0
    )
    micro_u, macro_u, per_class_u = _accuracy_breakdown(
        preds_unseen, unseen_bank.labels, unseen_bank.class_names, offset=n_seen
    )
    confusion = np.zeros((len(names), len(names)), dtype=np.int64)
    np.add.at(confusion, (seen_bank.labels, preds_seen), 1)
    np.add.at(confusion, (unseen_bank.labels + n_seen, preds_unseen), 1)
    return EvalReport(
        task="gzsl",
        class_names=names,
        top1_seen=micro_s,
        top1_unseen=micro_u,
        harmonic_mean=harmonic_mean(micro_s, micro_u),
        macro_top1_seen=macro_s,
        macro_top1_unseen=macro_u,
        beta=float(beta),
        per_class_accuracy={**per_class_s, **per_class_u},
        confusion_counts=confusion,
    )
