"""k-means, k-medoids and elbow selection over shape vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .shapes import as_ensemble


@dataclass(frozen=True)
class ClusterResult:
    k: int
    labels: np.ndarray
    centers: np.ndarray
    wcss: float
    variance_explained: float
    medoids: np.ndarray | None = None
    wcss_history: tuple = ()


def _as_matrix(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=float)
    if x.ndim == 3:
        x = x.reshape(len(x), -1)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("expected a nonempty (N, D) array of vectors")
    return x


def _sqdist(x, c):
    d = np.sum(x * x, axis=1)[:, None] - 2 * x @ c.T + np.sum(c * c, axis=1)[None, :]
    return np.maximum(d, 0.0)


def _tss(x):
    return float(np.sum((x - x.mean(axis=0)) ** 2))


def _explained(wcss, tss):
    if tss <= 0:
        return 0.0 if wcss > 0 else 1.0
    return float(min(max(1.0 - wcss / tss, 0.0), 1.0))


def _check_k(k, n):
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of vectors ({n})")


def _plusplus(x, k, rng):
    n = len(x)
    idx = [int(rng.integers(n))]
    d2 = _sqdist(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        nxt = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, _sqdist(x, x[[nxt]])[:, 0])
    return x[idx].copy()


def _lloyd(x, centers, max_iter, tol):
    k = len(centers)
    history = []
    labels = None
    for _ in range(max_iter):
        d2 = _sqdist(x, centers)
        labels = np.argmin(d2, axis=1)  # ties go to the lowest index
        wcss = float(d2[np.arange(len(x)), labels].sum())
        history.append(wcss)
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = x[members].mean(axis=0)
            else:
                # reseed with the point farthest from its centre
                far = int(np.argmax(d2[np.arange(len(x)), labels]))
                new[c] = x[far]
                labels[far] = c
        shift = np.max(np.sum((new - centers) ** 2, axis=1))
        centers = new
        if shift <= tol:
            break
    d2 = _sqdist(x, centers)
    labels = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(len(x)), labels].sum())
    history.append(wcss)
    return labels, centers, wcss, history


def kmeans(vectors, k: int, rng: np.random.Generator, restarts: int = 10,
           max_iter: int = 300, tol: float = 0.0) -> ClusterResult:
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` runs by WCSS."""
    x = _as_matrix(vectors)
    _check_k(k, len(x))
    best = None
    for _ in range(max(restarts, 1)):
        labels, centers, wcss, hist = _lloyd(x, _plusplus(x, k, rng), max_iter, tol)
        if best is None or wcss < best[2]:
            best = (labels, centers, wcss, hist)
    labels, centers, wcss, hist = best
    return ClusterResult(k, labels, centers, wcss, _explained(wcss, _tss(x)), wcss_history=tuple(hist))


def kmedoids(vectors, k: int, rng: np.random.Generator, restarts: int = 10, max_iter: int = 100) -> ClusterResult:
    """Alternating k-medoids on Euclidean distances.

    Each cluster's medoid is the member minimising the summed distance to
    the other members. ``wcss`` is the squared-distance sum to the medoids.
    """
    x = _as_matrix(vectors)
    n = len(x)
    _check_k(k, n)
    dist = np.sqrt(_sqdist(x, x))
    best = None
    for _ in range(max(restarts, 1)):
        med = np.sort(rng.choice(n, size=k, replace=False))
        for _ in range(max_iter):
            labels = np.argmin(dist[:, med], axis=1)
            new = med.copy()
            for c in range(k):
                members = np.flatnonzero(labels == c)
                if members.size:
                    new[c] = members[np.argmin(dist[np.ix_(members, members)].sum(axis=1))]
            if np.array_equal(new, med):
                break
            med = new
        labels = np.argmin(dist[:, med], axis=1)
        cost = float(dist[np.arange(n), med[labels]].sum())
        if best is None or cost < best[0]:
            best = (cost, med.copy(), labels)
    _, med, labels = best
    wcss = float(np.sum(dist[np.arange(n), med[labels]] ** 2))
    return ClusterResult(k, labels, x[med].copy(), wcss, _explained(wcss, _tss(x)), medoids=med)


def elbow(vectors, k_max: int, rng: np.random.Generator, restarts: int = 10, flat_tol: float = 0.05,
          min_explained: float = 0.5):
    """Cluster count at the elbow of the variance-explained curve.

    k-means runs for ``k = 1 .. k_max``; with both axes scaled to [0, 1]
    the elbow is the point farthest above the chord joining the curve's
    endpoints (lowest k on ties). If no point rises more than ``flat_tol``
    above the chord, or the elbow explains less than ``min_explained`` of
    the variance (a single diffuse blob), 1 is returned.
    Returns ``(k_star, curve)`` with ``curve[k - 1]`` the explained fraction.
    """
    x = _as_matrix(vectors)
    if k_max < 2:
        raise ValueError("k_max must be at least 2")
    _check_k(k_max, len(x))
    curve = np.array([kmeans(x, k, rng, restarts).variance_explained for k in range(1, k_max + 1)])
    return elbow_from_curve(curve, flat_tol, min_explained), curve


def elbow_from_curve(curve, flat_tol: float = 0.05, min_explained: float = 0.0) -> int:
    curve = np.asarray(curve, dtype=float)
    k = np.arange(1, curve.size + 1)
    span = curve[-1] - curve[0]
    if span <= 0:
        return 1
    u = (k - 1) / (curve.size - 1)
    v = (curve - curve[0]) / span
    # distance above the chord v = u, up to the constant 1/sqrt(2)
    gap = (v - u) / np.sqrt(2.0)
    j = int(np.argmax(gap))
    if gap[j] <= flat_tol or curve[j] < min_explained:
        return 1
    return int(k[j])


def cluster_mean_shapes(shapes, labels) -> list:
    """Per-cluster arithmetic mean of the correspondences, ordered by label value."""
    ens = as_ensemble(shapes)
    labels = np.asarray(labels)
    if labels.shape != (len(ens),):
        raise ValueError(f"{labels.size} labels for {len(ens)} shapes")
    out = []
    for c in range(int(labels.max()) + 1):
        members = labels == c
        if not members.any():
            raise ValueError(f"cluster {c} is empty")
        out.append(ens[members].mean(axis=0))
    return out


def adjusted_rand_index(a, b) -> float:
    """Chance-corrected agreement between two labelings (1 means identical up to relabeling)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("labelings differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    index = comb(table, 2).sum()
    ra, rb = comb(table.sum(axis=1), 2).sum(), comb(table.sum(axis=0), 2).sum()
    expected = ra * rb / comb(a.size, 2)
    top = 0.5 * (ra + rb)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))
