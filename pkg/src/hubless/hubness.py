"""Hubness diagnostics: top-j occurrence counts and their skewness.

A prototype's occurrence count is the number of queries whose exact
top-j nearest-neighbor set contains it. The skewness of those counts
(population third standardized moment over the n prototypes) is the
hubness score: large positive values mean a few prototypes dominate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ZeroVarianceError
from .kernels import as_matrix, cosine_matrix, skewness_of_counts

METRICS = ("cosine", "l2")


@dataclass
class OccurrenceDistribution:
    """Per-prototype top-j occurrence counts over a query set."""

    counts: np.ndarray
    j: int
    n_queries: int

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)


@dataclass
class HubnessReport:
    distribution: OccurrenceDistribution
    skewness: float | None
    skewness_reason: str | None
    top_hubs: list[tuple[int, int]]
    metric: str

    def to_json_dict(self) -> dict:
        return {
            "j": self.distribution.j,
            "metric": self.metric,
            "n_queries": self.distribution.n_queries,
            "counts": self.distribution.counts.tolist(),
            "skewness": self.skewness,
            "skewness_reason": self.skewness_reason,
            "top_hubs": [[int(i), int(c)] for i, c in self.top_hubs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def occurrence_distribution(queries, prototypes, j: int, metric: str) -> OccurrenceDistribution:
    """Exact top-j occurrence counts; ties go to the lowest prototype index."""
    q = as_matrix(queries)
    p = as_matrix(prototypes)
    if metric not in METRICS:
        raise ConfigError(f"metric must be one of {METRICS}, got {metric!r}")
    if j < 1 or j > p.shape[0]:
        raise ConfigError(f"j={j} outside [1, {p.shape[0]}]")
    if metric == "cosine":
        # Negate so that "smaller is closer" holds for both metrics.
        dist = -cosine_matrix(q, p)
    else:
        # Squared euclidean; monotone in the true distance.
        qq = np.sum(q * q, axis=1)[:, None]
        pp = np.sum(p * p, axis=1)[None, :]
        dist = np.maximum(qq + pp - 2.0 * (q @ p.T), 0.0)
    # Stable sort keeps the lowest index first among exact ties.
    order = np.argsort(dist, axis=1, kind="stable")[:, :j]
    counts = np.bincount(order.ravel(), minlength=p.shape[0])
    return OccurrenceDistribution(counts, j, q.shape[0])


def hubness_report(queries, prototypes, j: int, metric: str) -> HubnessReport:
    """Occurrence distribution plus its skewness and a hub ranking.

    Uniform counts have undefined skewness; that is recorded in the
    report (skewness None with a reason) rather than raised.
    """
    dist = occurrence_distribution(queries, prototypes, j, metric)
    try:
        skew = skewness_of_counts(dist.counts.astype(np.float64))
        reason = None
    except ZeroVarianceError:
        skew = None
        reason = "zero variance: every prototype occurs equally often"
    order = np.lexsort((np.arange(len(dist.counts)), -dist.counts))
    top_hubs = [(int(i), int(dist.counts[i])) for i in order]
    return HubnessReport(dist, skew, reason, top_hubs, metric)
