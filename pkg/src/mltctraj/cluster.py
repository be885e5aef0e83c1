"""Spectral clustering of a trajectory similarity matrix.

The similarity matrix is read as a weighted adjacency matrix.  For each
candidate ``k`` the points are embedded with the ``k`` bottom eigenvectors
of the symmetric normalised Laplacian (rows scaled to unit length),
clustered with k-means, and scored with the Calinski-Harabasz index on the
embedding.  The ``k`` with the highest score wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .trajnet import SimilarityMatrix

logger = logging.getLogger(__name__)

EIGEN_TOL = 1e-9
# within-cluster dispersion below this fraction of the total counts as zero
ZERO_DISPERSION = 1e-12


@dataclass
class ClusterResult:
    k_selected: int
    labels: np.ndarray
    ch_scores: dict[int, float]
    embedding: np.ndarray
    isolated: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n(self) -> int:
        return len(self.labels)


def _as_array(matrix) -> np.ndarray:
    values = matrix.values if isinstance(matrix, SimilarityMatrix) else matrix
    return np.asarray(values, dtype=float)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude component of each eigenvector made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def spectral_embed(matrix, k: int) -> np.ndarray:
    """Embed an affinity matrix into ``k`` dimensions.

    Uses the eigenvectors of the ``k`` smallest eigenvalues of
    ``L = I - D^-1/2 A D^-1/2``, then scales every row to unit length.
    Rows of zero-degree points stay at the origin.

    When the ``k``-th eigenvalue is repeated (within ``EIGEN_TOL``) the
    bottom-``k`` eigenvectors are not unique, so every eigenvector tied with
    it is kept and the result has more than ``k`` columns.  Without this a
    graph with more than ``k`` connected components could be embedded with
    some components collapsed onto one point.
    """
    a = _as_array(matrix)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ValueError("affinity must be a square matrix")
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
        raise ValueError("affinity matrix is not symmetric")
    if np.any(a < 0):
        raise ValueError("affinity matrix has negative entries")
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    degree = a.sum(axis=1)
    isolated = degree <= 0
    inv_sqrt = np.zeros(n)
    inv_sqrt[~isolated] = 1.0 / np.sqrt(degree[~isolated])
    lap = np.eye(n) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    lap[isolated, :] = 0.0
    lap[:, isolated] = 0.0
    lap = (lap + lap.T) / 2.0
    vals, vecs = np.linalg.eigh(lap)
    m = k
    while m < n and vals[m] - vals[k - 1] <= EIGEN_TOL:
        m += 1
    emb = _fix_signs(vecs[:, :m])
    emb[isolated] = 0.0
    norms = np.linalg.norm(emb, axis=1)
    nonzero = norms > 0
    emb[nonzero] /= norms[nonzero, None]
    return emb


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValueError("fewer distinct points than clusters")
        pick = rng.choice(n, p=d2 / total)
        centers.append(points[pick])
        d2 = np.minimum(d2, np.sum((points - points[pick]) ** 2, axis=1))
    return np.array(centers)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int, tol: float,
           ) -> tuple[np.ndarray, float]:
    k = len(centers)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        new = centers.copy()
        for j in range(k):
            members = points[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point worst served by its centre
                far = int(np.argmax(d2[np.arange(len(points)), labels]))
                new[j] = points[far]
                labels[far] = j
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    return labels, float(d2[np.arange(len(points)), labels].sum())


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters in order of first appearance."""
    mapping: dict[int, int] = {}
    for lab in labels.tolist():
        mapping.setdefault(lab, len(mapping))
    return np.array([mapping[lab] for lab in labels.tolist()], dtype=int)


def kmeans(points, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300,
           tol: float = 1e-9) -> np.ndarray:
    """Lloyd's k-means with k-means++ seeding; best of ``restarts`` by WCSS.

    Deterministic for a fixed ``seed``.  Labels are numbered by first
    appearance.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n_distinct = len(np.unique(x, axis=0))
    if k < 1 or k > n_distinct:
        raise ValueError(f"k={k} exceeds the {n_distinct} distinct points")
    rng = np.random.default_rng(seed)
    best_labels, best_wcss = None, math.inf
    for _ in range(restarts):
        labels, wcss = _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)
        if len(np.unique(labels)) == k and wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    if best_labels is None:
        raise RuntimeError(f"k-means could not fill {k} clusters")
    return _canonical(best_labels)


def within_cluster_ss(points, labels) -> float:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    return float(sum(((x[labels == j] - x[labels == j].mean(axis=0)) ** 2).sum()
                     for j in np.unique(labels)))


def calinski_harabasz(points, labels) -> float:
    """Calinski-Harabasz index ``(B / (k - 1)) / (W / (n - k))``.

    ``B`` is the size-weighted squared spread of the cluster centroids
    around the global centroid and ``W`` the within-cluster sum of squares.
    Returns ``0`` when all centroids coincide and ``inf`` when ``W`` is zero
    (up to rounding) while ``B`` is not.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    labels = np.asarray(labels)
    n = len(x)
    if len(labels) != n:
        raise ValueError("labels and points differ in length")
    clusters = np.unique(labels)
    k = len(clusters)
    if k < 2:
        raise ValueError("need at least 2 non-empty clusters")
    if n <= k:
        raise ValueError(f"need more points than clusters (n={n}, k={k})")
    centre = x.mean(axis=0)
    between = within = 0.0
    for j in clusters:
        members = x[labels == j]
        mu = members.mean(axis=0)
        between += len(members) * float(((mu - centre) ** 2).sum())
        within += float(((members - mu) ** 2).sum())
    if between == 0.0:
        return 0.0
    if within <= ZERO_DISPERSION * (between + within):
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def select_k_and_cluster(matrix, k_min: int = 2, k_max: int = 10, seed: int = 0,
                         ) -> ClusterResult:
    """Sweep ``k`` over ``[k_min, min(k_max, n - 1)]`` and keep the best CH score.

    Ties on the score go to the smaller ``k``.  A ``k`` for which the
    embedding has fewer distinct points than clusters is scored ``nan`` and
    skipped.
    """
    a = _as_array(matrix)
    n = a.shape[0]
    if n < k_min + 1:
        raise ValueError(f"need at least k_min + 1 = {k_min + 1} trajectories to "
                         f"cluster, got {n}")
    scores: dict[int, float] = {}
    best = None
    for k in range(k_min, min(k_max, n - 1) + 1):
        emb = spectral_embed(a, k)
        try:
            labels = kmeans(emb, k, seed=seed)
        except (ValueError, RuntimeError) as exc:
            logger.warning("k=%d skipped: %s", k, exc)
            scores[k] = math.nan
            continue
        score = calinski_harabasz(emb, labels)
        scores[k] = score
        if best is None or score > best[0]:
            best = (score, k, labels, emb)
    if best is None:
        raise ValueError("no candidate k could be clustered")
    _, k, labels, emb = best
    isolated = a.sum(axis=1) <= 0
    if isolated.any():
        logger.warning("%d trajectories have zero similarity to all others",
                       int(isolated.sum()))
    return ClusterResult(k, labels, scores, emb, isolated)
