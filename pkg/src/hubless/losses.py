"""Training objective: distance alignment plus a skewness penalty.

The total loss is ``L_T = L_S + alpha * L_U``:

* ``L_S`` -- mean squared distance between each instance's feature vector
  and the projection of its class semantic vector, plus L2 weight decay
  on the weight matrices (not biases).
* ``L_U`` -- the skewness of the per-class prediction counts within the
  batch. Hard argmax counts have zero gradient almost everywhere, so the
  optimized loss uses a temperature-softmax soft histogram; hard counts
  are kept alongside for telemetry, and the hard/soft gap is a monitored
  quantity.

Two summation conventions exist for the skewness: weighting each class's
cubed deviation by its own count (one term per batch instance; the
default) or summing once per class (the diagnostic convention used by
the hubness module). Both are implemented and never silently mixed; see
``skewness_loss(mode=...)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import (
    ConfigError,
    DegenerateVectorError,
    DimMismatchError,
    EmptyBatchError,
)
from .kernels import NORM_EPS, VAR_EPS, softmax
from .projector import MlpWeights, backward, forward


@dataclass
class TrainConfig:
    """Every scalar a training run depends on.

    alpha/lambda_/batch_size/lr/beta defaults are the cross-validated
    values the method ships with; tau, epochs, hidden_dims and the flags
    are artifact-level choices echoed into run metadata.
    """

    alpha: float = 0.7
    lambda_: float = 0.0001
    batch_size: int = 64
    tau: float = 0.1
    lr: float = 0.001
    epochs: int = 100
    seed: int = 0
    beta: float = 0.6
    final_relu: bool = False
    normalize_features: bool = False
    normalize_embeddings: bool = False
    hidden_dims: tuple[int, ...] = (512, 768)
    skew_mode: Literal["instance", "class"] = "instance"
    direction: Literal["sem2feat", "feat2sem"] = "sem2feat"

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.lambda_ < 0:
            raise ConfigError("lambda must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.skew_mode not in ("instance", "class"):
            raise ConfigError(f"unknown skew_mode {self.skew_mode!r}")
        if self.direction not in ("sem2feat", "feat2sem"):
            raise ConfigError(f"unknown direction {self.direction!r}")
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "lambda": self.lambda_,
            "batch_size": self.batch_size,
            "tau": self.tau,
            "lr": self.lr,
            "epochs": self.epochs,
            "seed": self.seed,
            "beta": self.beta,
            "final_relu": self.final_relu,
            "normalize_features": self.normalize_features,
            "normalize_embeddings": self.normalize_embeddings,
            "hidden_dims": list(self.hidden_dims),
            "skew_mode": self.skew_mode,
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        kw = dict(obj)
        kw["lambda_"] = kw.pop("lambda")
        kw["hidden_dims"] = tuple(kw["hidden_dims"])
        return cls(**kw)


@dataclass
class BatchHistogram:
    """Per-class prediction counts for one batch (hard or soft)."""

    counts: np.ndarray
    total: float

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.ndim != 1 or self.counts.shape[0] == 0:
            raise ConfigError("histogram counts must be a nonempty vector")


@dataclass
class TotalLossResult:
    total: float
    distance: float
    skew: float
    grads: MlpWeights
    hard_counts: np.ndarray
    soft_counts: np.ndarray


def _unit_rows(x: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DegenerateVectorError(f"zero-norm {what} row")
    return x / norms[:, None], norms


def distance_loss(
    batch_features,
    batch_semantics,
    w: MlpWeights,
    lambda_: float,
    final_relu: bool = True,
) -> tuple[float, MlpWeights]:
    """Alignment loss: mean ||target_i - project(input_i)||^2 + lambda*||W||^2.

    The first argument holds the regression targets (feature vectors in
    the usual direction), the second the vectors pushed through the MLP
    (the per-instance class semantics). Rows are paired by index.
    Returns the loss and exact parameter gradients.
    """
    targets = np.asarray(batch_features, dtype=np.float64)
    inputs = np.asarray(batch_semantics, dtype=np.float64)
    if targets.ndim != 2 or inputs.ndim != 2:
        raise DimMismatchError("batch arrays must be 2-D")
    n = targets.shape[0]
    if n == 0:
        raise EmptyBatchError("distance_loss on empty batch")
    if inputs.shape[0] != n:
        raise DimMismatchError(f"{n} targets vs {inputs.shape[0]} inputs")
    proj, cache = forward(w, inputs, final_relu=final_relu)
    if proj.shape[1] != targets.shape[1]:
        raise DimMismatchError(
            f"projection dim {proj.shape[1]} vs target dim {targets.shape[1]}"
        )
    diff = proj - targets
    loss = float(np.sum(diff * diff) / n)
    grads = backward(w, cache, (2.0 / n) * diff)
    if lambda_ != 0.0:
        loss += lambda_ * float(sum(np.sum(wk * wk) for wk in w.weights))
        for gk, wk in zip(grads.weights, w.weights):
            gk += 2.0 * lambda_ * wk
    return loss, grads


def predict_batch_hard(batch_features, prototypes) -> np.ndarray:
    """Cosine argmax class index per instance; ties go to the lowest index."""
    q = np.asarray(batch_features, dtype=np.float64)
    p = np.asarray(prototypes, dtype=np.float64)
    if p.shape[0] < 2:
        raise ConfigError("need at least 2 prototypes")
    scores = _cosine_scores(q, p)
    return np.argmax(scores, axis=1)


def _cosine_scores(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    if q.ndim != 2 or p.ndim != 2 or q.shape[1] != p.shape[1]:
        raise DimMismatchError(f"query shape {q.shape} vs prototype shape {p.shape}")
    qh, _ = _unit_rows(q, "feature")
    ph, _ = _unit_rows(p, "prototype")
    # Unclipped on purpose: the optimization path must stay smooth.
    return qh @ ph.T


def hard_histogram(batch_features, prototypes) -> BatchHistogram:
    """Counts of hard predictions per class."""
    preds = predict_batch_hard(batch_features, prototypes)
    p = np.asarray(prototypes).shape[0]
    counts = np.bincount(preds, minlength=p).astype(np.float64)
    return BatchHistogram(counts, float(len(preds)))


def soft_histogram(batch_features, prototypes, tau: float) -> BatchHistogram:
    """Differentiable prediction counts: per-class softmax mass summed
    over the batch. Column sums of the assignment matrix, so the counts
    always total N."""
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    scores = _cosine_scores(
        np.asarray(batch_features, dtype=np.float64),
        np.asarray(prototypes, dtype=np.float64),
    )
    if scores.shape[1] < 2:
        raise ConfigError("need at least 2 prototypes")
    assign = softmax(scores, tau)
    return BatchHistogram(assign.sum(axis=0), float(scores.shape[0]))


def skewness_loss(
    hist: BatchHistogram, mode: Literal["instance", "class"] = "instance"
) -> tuple[float, np.ndarray]:
    """Skewness of the prediction-count distribution, with its gradient.

    ``mode="instance"`` weights each class's cubed deviation by the
    class's own count (the sum effectively runs over the N batch
    instances, normalized by N * Var^{3/2}). ``mode="class"`` sums each
    class once and normalizes by p * Var^{3/2}, matching the diagnostic
    skewness used by the hubness module. Mean and variance are always
    taken over the p per-class counts.

    Uniform counts (variance below the epsilon floor) are the loss's
    optimum: the loss is defined as 0 there with a zero gradient rather
    than an error, so training can sit at the fixed point.
    """
    h = hist.counts
    p = h.shape[0]
    mean = h.mean()
    dev = h - mean
    var = float(np.mean(dev * dev))
    if var <= VAR_EPS:
        return 0.0, np.zeros(p)
    v15 = var**1.5
    if mode == "instance":
        norm = hist.total * v15
        s3 = float(np.sum(h * dev**3))
        ds3 = dev**3 + 3.0 * h * dev**2 - (3.0 / p) * float(np.sum(h * dev**2))
        grad = ds3 / norm - 3.0 * s3 * dev / (p * hist.total * var**2.5)
    elif mode == "class":
        s3 = float(np.sum(dev**3))
        norm = p * v15
        ds3 = 3.0 * dev**2 - 3.0 * var
        grad = ds3 / norm - 3.0 * s3 * dev / (p * p * var**2.5)
    else:
        raise ConfigError(f"unknown skewness mode {mode!r}")
    return s3 / norm, grad


def _skew_grads_sem2feat(
    features: np.ndarray,
    prototypes: np.ndarray,
    grad_counts: np.ndarray,
    tau: float,
) -> np.ndarray:
    """d(skew loss)/d(prototype matrix), chaining softmax and cosine."""
    scores = _cosine_scores(features, prototypes)
    assign = softmax(scores, tau)
    # Row-wise softmax Jacobian applied to the per-class count gradient.
    g_scores = assign * (grad_counts[None, :] - (assign @ grad_counts)[:, None]) / tau
    qh, _ = _unit_rows(features, "feature")
    ph, pn = _unit_rows(prototypes, "prototype")
    colsum = np.sum(g_scores * scores, axis=0)
    return (g_scores.T @ qh - ph * colsum[:, None]) / pn[:, None]


def _skew_grads_queries(
    queries: np.ndarray,
    prototypes: np.ndarray,
    grad_counts: np.ndarray,
    tau: float,
) -> np.ndarray:
    """d(skew loss)/d(query matrix) when prototypes are constants."""
    scores = _cosine_scores(queries, prototypes)
    assign = softmax(scores, tau)
    g_scores = assign * (grad_counts[None, :] - (assign @ grad_counts)[:, None]) / tau
    qh, qn = _unit_rows(queries, "query")
    ph, _ = _unit_rows(prototypes, "prototype")
    rowsum = np.sum(g_scores * scores, axis=1)
    return (g_scores @ ph - qh * rowsum[:, None]) / qn[:, None]


def total_loss(
    batch_features,
    batch_labels,
    seen_semantics,
    w: MlpWeights,
    cfg: TrainConfig,
) -> TotalLossResult:
    """Composite loss over one batch of seen instances.

    ``batch_features`` is (N, m), ``batch_labels`` holds each instance's
    index into ``seen_semantics`` (p, d), the semantic vectors of every
    seen class. With ``alpha == 0`` the result is bit-identical to
    ``distance_loss`` on the per-instance semantic rows.

    For ``cfg.direction == "feat2sem"`` the roles flip: features are
    projected into semantic space, and both the alignment targets and the
    prediction prototypes are the raw semantic vectors.
    """
    features = np.asarray(batch_features, dtype=np.float64)
    labels = np.asarray(batch_labels, dtype=np.int64)
    semantics = np.asarray(seen_semantics, dtype=np.float64)
    if features.shape[0] == 0:
        raise EmptyBatchError("total_loss on empty batch")
    if labels.shape != (features.shape[0],):
        raise DimMismatchError("one label per batch row required")
    if labels.min() < 0 or labels.max() >= semantics.shape[0]:
        raise DimMismatchError("label index outside the seen class range")
    n = features.shape[0]
    reverse = cfg.direction == "feat2sem"

    if cfg.alpha == 0.0:
        # Baseline configuration: exactly the standalone distance loss.
        if reverse:
            l_s, grads = distance_loss(
                semantics[labels], features, w, cfg.lambda_, final_relu=cfg.final_relu
            )
            queries, _ = forward(w, features, final_relu=cfg.final_relu)
            prototypes = semantics
        else:
            l_s, grads = distance_loss(
                features, semantics[labels], w, cfg.lambda_, final_relu=cfg.final_relu
            )
            prototypes, _ = forward(w, semantics, final_relu=cfg.final_relu)
            queries = features
        hard = hard_histogram(queries, prototypes)
        soft = soft_histogram(queries, prototypes, cfg.tau)
        return TotalLossResult(l_s, l_s, 0.0, grads, hard.counts, soft.counts)

    # Full loss: one forward through the network serves both terms, and
    # both terms' output gradients merge into a single backward pass.
    if reverse:
        projected, cache = forward(w, features, final_relu=cfg.final_relu)
        queries, prototypes = projected, semantics
        resid = projected - semantics[labels]
        g_proj = (2.0 / n) * resid
    else:
        projected, cache = forward(w, semantics, final_relu=cfg.final_relu)
        queries, prototypes = features, projected
        resid = projected[labels] - features
        g_proj = np.zeros_like(projected)
        np.add.at(g_proj, labels, (2.0 / n) * resid)
    l_s = float(np.sum(resid * resid) / n)
    if cfg.lambda_ != 0.0:
        l_s += cfg.lambda_ * float(sum(np.sum(wk * wk) for wk in w.weights))

    hard = hard_histogram(queries, prototypes)
    soft = soft_histogram(queries, prototypes, cfg.tau)
    l_u, grad_counts = skewness_loss(soft, mode=cfg.skew_mode)
    if np.any(grad_counts):
        if reverse:
            g_proj = g_proj + cfg.alpha * _skew_grads_queries(
                queries, prototypes, grad_counts, cfg.tau
            )
        else:
            g_proj = g_proj + cfg.alpha * _skew_grads_sem2feat(
                queries, prototypes, grad_counts, cfg.tau
            )
    grads = backward(w, cache, g_proj)
    if cfg.lambda_ != 0.0:
        for gk, wk in zip(grads.weights, w.weights):
            gk += 2.0 * cfg.lambda_ * wk

    return TotalLossResult(
        total=l_s + cfg.alpha * l_u,
        distance=l_s,
        skew=l_u,
        grads=grads,
        hard_counts=hard.counts,
        soft_counts=soft.counts,
    )
