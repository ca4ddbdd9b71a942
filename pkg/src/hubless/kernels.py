"""Dense vector/matrix primitives shared by every other module.

Vectors are 1-D and matrices 2-D ``float64`` numpy arrays throughout;
file formats downcast to ``float32`` but all in-process arithmetic stays
in 64-bit so gradient checks are stable.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DegenerateVectorError, DimMismatchError, ZeroVarianceError

# Variance below this is treated as "no spread at all" (uniform counts).
VAR_EPS = 1e-12

# Norms below this cannot define a direction.
NORM_EPS = 1e-12


def as_vector(x) -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimMismatchError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimMismatchError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    Raises DegenerateVectorError if either vector has (near-)zero norm,
    DimMismatchError on length disagreement.
    """
    a = as_vector(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise DimMismatchError(f"cosine: dims {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVectorError("cosine undefined for zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(queries, prototypes) -> np.ndarray:
    """Pairwise cosine similarities, shape (n_queries, n_prototypes).

    Every row and every prototype must have a usable norm.
    """
    q = as_matrix(queries)
    p = as_matrix(prototypes)
    if q.shape[1] != p.shape[1]:
        raise DimMismatchError(f"cosine_matrix: dims {q.shape[1]} vs {p.shape[1]}")
    qn = np.linalg.norm(q, axis=1)
    pn = np.linalg.norm(p, axis=1)
    if np.any(qn <= NORM_EPS):
        raise DegenerateVectorError("zero-norm query row")
    if np.any(pn <= NORM_EPS):
        raise DegenerateVectorError("zero-norm prototype row")
    return np.clip((q / qn[:, None]) @ (p / pn[:, None]).T, -1.0, 1.0)


def l2_distance_sq(a, b) -> float:
    """Squared Euclidean distance between two vectors."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape[0] != b.shape[0]:
        raise DimMismatchError(f"l2_distance_sq: dims {a.shape[0]} vs {b.shape[0]}")
    d = a - b
    return float(d @ d)


def softmax(scores, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for stability.

    Accepts a vector or a matrix; matrices are normalized row-wise.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    s = np.asarray(scores, dtype=np.float64)
    z = s / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def skewness_of_counts(counts) -> float:
    """Third standardized moment of an occurrence-count distribution.

    Uses population statistics over the n entries:
        sum_i (c_i - mean)^3 / (n * var^{3/2})
    which is how hubness is scored from a top-j occurrence histogram.

    Raises ZeroVarianceError when the counts are (numerically) uniform;
    callers decide whether that means "no hubness" or an error.
    """
    c = as_vector(counts)
    if c.shape[0] == 0:
        raise DimMismatchError("skewness_of_counts: empty counts")
    mean = c.mean()
    dev = c - mean
    var = float(np.mean(dev * dev))
    if var <= VAR_EPS:
        raise ZeroVarianceError(f"variance {var} below {VAR_EPS}")
    return float(np.sum(dev**3) / (c.shape[0] * var**1.5))


def l2_normalize_rows(x) -> np.ndarray:
    """Scale every row of a matrix to unit L2 norm."""
    m = as_matrix(x)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= NORM_EPS):
        raise DegenerateVectorError("cannot normalize a zero-norm row")
    return m / norms[:, None]
