"""KMeans++ seeding and Lloyd refinement for per-class representatives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class KMeansResult:
    centers: np.ndarray
    assign: np.ndarray
    n_iter: int
    costs: list[float] = field(default_factory=list)


@dataclass
class RepSet:
    class_id: int
    side: str
    reps: np.ndarray  # r x d, values of the cluster means at selection time
    members: list[np.ndarray]  # row indices (into the side's feature matrix) per rep

    def averaging_matrix(self, n_rows: int) -> np.ndarray:
        A = np.zeros((len(self.members), n_rows))
        for r, idx in enumerate(self.members):
            A[r, idx] = 1.0 / len(idx)
        return A


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # loop over the (small) feature dimension: cheaper than an n x k x d temporary
    d = np.zeros((points.shape[0], centers.shape[0]))
    for j in range(points.shape[1]):
        diff = points[:, j, None] - centers[None, :, j]
        d += diff * diff
    return d


def _cluster_sums(X: np.ndarray, assign: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(assign, minlength=k).astype(float)
    sums = np.stack([np.bincount(assign, weights=X[:, j], minlength=k) for j in range(X.shape[1])], axis=1)
    return sums, counts


def kmeanspp_seed(points, R: int, rng: np.random.Generator) -> np.ndarray:
    """D^2 seeding. Returns row indices of the chosen centers.

    Sampling stops early once every point coincides with a chosen center,
    so with fewer than ``R`` distinct points each distinct point is returned once.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.shape[0] == 0:
        raise DataError("cannot seed clusters on an empty point set")
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    chosen = [int(rng.integers(X.shape[0]))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < R:
        total = d2.sum()
        if total <= 0.0:
            break
        nxt = int(rng.choice(X.shape[0], p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return np.asarray(chosen)


def clustering_cost(points, centers) -> float:
    """Sum of squared distances from each point to its nearest center."""
    return float(_sq_dists(np.asarray(points, dtype=np.float64), np.asarray(centers, dtype=np.float64)).min(axis=1).sum())


def lloyd(points, centers, max_iter: int = 50, tol: float = 1e-6) -> KMeansResult:
    """Alternate assignment and mean update until the centers move less than ``tol``.

    An emptied cluster is re-seeded at the point farthest from its center.
    The returned centers are exact means of their final members.
    """
    X = np.asarray(points, dtype=np.float64)
    C = np.array(centers, dtype=np.float64, copy=True)
    k = C.shape[0]
    rows = np.arange(X.shape[0])
    d = _sq_dists(X, C)
    assign = np.argmin(d, axis=1)
    costs = [float(d[rows, assign].sum())]
    it = 0
    for it in range(1, max_iter + 1):
        sums, counts = _cluster_sums(X, assign, k)
        empty = counts == 0
        new = C.copy()
        new[~empty] = sums[~empty] / counts[~empty, None]
        if empty.any():
            dist = d[rows, assign].copy()
            for j in np.flatnonzero(empty):
                far = int(np.argmax(dist))
                new[j] = X[far]
                dist[far] = -np.inf
        shift = float(np.abs(new - C).max())
        C = new
        d = _sq_dists(X, C)
        assign = np.argmin(d, axis=1)
        costs.append(float(d[rows, assign].sum()))
        if shift < tol:
            break
    sums, counts = _cluster_sums(X, assign, k)
    live = counts > 0
    C[live] = sums[live] / counts[live, None]
    return KMeansResult(C, assign, it, costs)


def kmeans(points, R: int, rng: np.random.Generator, max_iter: int = 50, tol: float = 1e-6) -> KMeansResult:
    X = np.asarray(points, dtype=np.float64)
    seeds = kmeanspp_seed(X, R, rng)
    return lloyd(X, X[seeds], max_iter=max_iter, tol=tol)


def select_representatives(features, labels, n_classes: int, R: int, rng: np.random.Generator,
                           side: str = "source", max_iter: int = 50, tol: float = 1e-6) -> dict[int, RepSet]:
    """Cluster each class's rows into up to ``R`` groups; one RepSet per non-empty class.

    Classes are processed in increasing order, each drawing its seeds from ``rng``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    out: dict[int, RepSet] = {}
    for k in range(n_classes):
        idx = np.flatnonzero(y == k)
        if idx.size == 0:
            continue
        res = kmeans(X[idx], R, rng, max_iter=max_iter, tol=tol)
        members = [idx[res.assign == j] for j in range(res.centers.shape[0])]
        keep = [j for j, m in enumerate(members) if m.size]
        out[k] = RepSet(k, side, res.centers[keep], [members[j] for j in keep])
    return out
