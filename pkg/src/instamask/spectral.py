"""Clustering core: cosine affinities over patch features, normalized graph
Laplacian, symmetric eigensolver, and seeded k-means on the spectral
embedding (the NJW recipe: row-normalized k smallest eigenvectors of
I - D^{-1/2} W D^{-1/2}).
"""

from __future__ import annotations

import numpy as np

from .errors import NoConvergence, NotSymmetric
from .npyio import FeatureMap

SYMMETRY_TOL = 1e-6
KMEANS_MAX_ITER = 100


def cosine_affinity(fm: FeatureMap) -> np.ndarray:
    """Pairwise cosine similarity of patch vectors, clamped to [0, 1].

    Zero-norm vectors get affinity 0 to everything, their own diagonal
    included; non-zero vectors have an exact 1.0 diagonal.
    """
    vecs = fm.vectors().astype(np.float64)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    nonzero = norms[:, 0] > 0.0
    unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0.0)
    w = unit @ unit.T
    np.clip(w, 0.0, 1.0, out=w)
    w = (w + w.T) / 2.0
    w[np.diag_indices_from(w)] = nonzero.astype(float)
    return w


def normalized_laplacian(w: np.ndarray) -> np.ndarray:
    """I - D^{-1/2} W D^{-1/2} with D^{-1/2} = 0 for isolated vertices."""
    w = np.asarray(w, dtype=float)
    deg = w.sum(axis=1)
    positive = deg > 0.0
    inv_sqrt = np.where(positive, 1.0 / np.sqrt(np.where(positive, deg, 1.0)), 0.0)
    lap = np.eye(w.shape[0]) - inv_sqrt[:, None] * w * inv_sqrt[None, :]
    return (lap + lap.T) / 2.0


def sym_eigens(m: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The k algebraically smallest eigenpairs of a symmetric matrix.

    Eigenvalues come back ascending, eigenvectors as orthonormal columns
    with a canonical sign (largest-magnitude component positive).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"need a square matrix, got shape {m.shape}")
    n = m.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_TOL:
        raise NotSymmetric(f"asymmetry above {SYMMETRY_TOL}")
    try:
        vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    vals = vals[:k].copy()
    vecs = vecs[:, :k].copy()
    for j in range(k):
        lead = np.argmax(np.abs(vecs[:, j]))
        if vecs[lead, j] < 0.0:
            vecs[:, j] = -vecs[:, j]
    return vals, vecs


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers[j] = points[idx]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(points: np.ndarray, k: int, seed: int = 0, trace: list | None = None) -> np.ndarray:
    """Seeded k-means++ plus Lloyd iterations.

    Stops when assignments settle or after KMEANS_MAX_ITER rounds. Ties in
    nearest-centroid break toward the lowest centroid index; a cluster left
    empty after assignment is re-seeded with the point farthest from its own
    centroid, so all k labels always appear. `trace`, when given, collects
    the within-cluster sum of squares after each assignment round.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(points, k, rng)
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        assigned_d2 = d2[np.arange(n), new_labels]
        for cid in range(k):
            if not (new_labels == cid).any():
                far = int(assigned_d2.argmax())
                centers[cid] = points[far]
                new_labels[far] = cid
                assigned_d2[far] = 0.0
        if trace is not None:
            trace.append(float(assigned_d2.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for cid in range(k):
            centers[cid] = points[labels == cid].mean(axis=0)
    return labels


def spectral_cluster(w: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """k-way NJW spectral clustering of an affinity matrix.

    Returns one label in [0, k) per vertex; deterministic for a fixed seed,
    and every label occurs at least once.
    """
    w = np.asarray(w, dtype=float)
    n = w.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"k={k} outside [2, {n}]")
    lap = normalized_laplacian(w)
    _, vecs = sym_eigens(lap, k)
    row_norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    embedding = np.divide(
        vecs, row_norms, out=np.zeros_like(vecs), where=row_norms > 0.0
    )
    return kmeans(embedding, k, seed=seed)
