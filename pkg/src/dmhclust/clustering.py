"""Baseline clusterers: PAM K-Medoids, K-Means (k-means++ seeding) and
average-linkage agglomerative clustering, plus an exhaustive K-Medoids
oracle for small instances.

All distances are Euclidean. Randomised restarts derive their generator
from ``seed + restart_index`` so running restarts concurrently gives the
same answer as running them in order.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .datastore import as_feature_matrix
from .errors import ConfigError, DataError

BRUTE_FORCE_LIMIT = 10 ** 6


@dataclass(frozen=True)
class ClusteringConfig:
    K: int = 2
    max_iter: int = 100
    seed: int = 0
    restarts: int = 10
    distance: str = "euclidean"

    def __post_init__(self):
        # K = 1 is accepted so kmeans can return the trivial partition
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.max_iter < 1 or self.restarts < 1:
            raise ConfigError("max_iter and restarts must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be unsigned")
        if self.distance != "euclidean":
            raise ConfigError(f"only euclidean distance is supported, got {self.distance!r}")


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    K: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or (labels < 0).any() or (labels >= self.K).any():
            raise DataError(f"cluster indices must lie in [0, {self.K})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class MedoidSet:
    indices: tuple
    cost: float


def pairwise_distances(X: np.ndarray) -> np.ndarray:
    return cdist(X, X)


def assign_to_medoids(D: np.ndarray, medoids) -> tuple:
    """Nearest-medoid labels and total cost; ties go to the lower medoid position."""
    sub = D[list(medoids)]
    labels = np.argmin(sub, axis=0)
    return labels, float(sub.min(axis=0).sum())


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _build(D: np.ndarray, candidates: np.ndarray, K: int) -> list:
    # first medoid minimises total distance; then greedily add the largest gain
    totals = D[candidates].sum(axis=1)
    medoids = [int(candidates[np.argmin(totals)])]
    nearest = D[medoids[0]].copy()
    for _ in range(1, K):
        pool = candidates[~np.isin(candidates, medoids)]
        gains = np.maximum(nearest[None, :] - D[pool], 0.0).sum(axis=1)
        best = int(pool[np.argmax(gains)])
        medoids.append(best)
        nearest = np.minimum(nearest, D[best])
    return medoids


def _swap(D: np.ndarray, candidates: np.ndarray, medoids: list, max_iter: int) -> tuple:
    medoids = list(medoids)
    cost = D[medoids].min(axis=0).sum()
    tol = 1e-12 * max(cost, 1.0)
    for _ in range(max_iter):
        pool = candidates[~np.isin(candidates, medoids)]
        if len(pool) == 0:
            break
        best = (cost, None, None)
        for slot in range(len(medoids)):
            others = [m for s, m in enumerate(medoids) if s != slot]
            base = D[others].min(axis=0) if others else np.full(D.shape[0], np.inf)
            costs = np.minimum(base[None, :], D[pool]).sum(axis=1)
            h = int(np.argmin(costs))
            if costs[h] < best[0] - tol:
                best = (costs[h], slot, int(pool[h]))
        if best[1] is None:
            break
        cost, slot, h = best
        medoids[slot] = h
    return medoids, float(D[medoids].min(axis=0).sum())


def _unique_candidates(X: np.ndarray) -> np.ndarray:
    _, first = np.unique(X, axis=0, return_index=True)
    return np.sort(first)


def kmedoids(X, cfg: ClusteringConfig = ClusteringConfig(), threads: int = 1):
    """PAM: BUILD initialisation followed by greedy best-improvement SWAP.

    Restart 0 starts from BUILD; restart ``r > 0`` starts from K distinct
    rows drawn with ``default_rng(seed + r)``. The lowest-cost restart wins
    (earliest restart on ties). Medoids are restricted to the first
    occurrence of each distinct row, so they are always distinct points.
    Returned medoid indices are sorted; cluster ``j`` belongs to the
    ``j``-th medoid.
    """
    X = as_feature_matrix(X, "X")
    n, K = X.shape[0], cfg.K
    if K < 2:
        raise ConfigError("kmedoids requires K >= 2")
    if n < K:
        raise DataError(f"N={n} < K={K}")
    candidates = _unique_candidates(X)
    if len(candidates) < K:
        raise DataError(f"only {len(candidates)} distinct rows, cannot place K={K} distinct medoids")
    D = pairwise_distances(X)

    def run(r):
        if r == 0:
            start = _build(D, candidates, K)
        else:
            rng = np.random.default_rng(cfg.seed + r)
            start = [int(i) for i in rng.choice(candidates, size=K, replace=False)]
        return _swap(D, candidates, start, cfg.max_iter)

    results = _map(run, range(cfg.restarts), threads)
    best = min(range(len(results)), key=lambda r: (results[r][1], r))
    medoids = sorted(results[best][0])
    labels, cost = assign_to_medoids(D, medoids)
    return ClusterAssignment(labels, K), MedoidSet(tuple(medoids), cost)


def brute_force_kmedoids(X, K: int = 2) -> MedoidSet:
    """Globally optimal medoids by enumerating every K-subset of rows."""
    X = as_feature_matrix(X, "X")
    n = X.shape[0]
    if n < K:
        raise DataError(f"N={n} < K={K}")
    if math.comb(n, K) > BRUTE_FORCE_LIMIT:
        raise DataError(f"C({n},{K}) exceeds {BRUTE_FORCE_LIMIT} subsets")
    D = pairwise_distances(X)
    best_cost, best = np.inf, None
    for combo in itertools.combinations(range(n), K):
        cost = D[list(combo)].min(axis=0).sum()
        if cost < best_cost:
            best_cost, best = cost, combo
    return MedoidSet(tuple(best), float(best_cost))


def _kmeanspp(X: np.ndarray, K: int, rng) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.integers(n) if total == 0 else rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _sqdist(X, C):
    return cdist(X, C, "sqeuclidean")


def inertia(X, labels, centers) -> float:
    return float(((X - centers[labels]) ** 2).sum())


def _lloyd(X, centers, max_iter):
    K = len(centers)
    labels = np.argmin(_sqdist(X, centers), axis=1)
    for _ in range(max_iter):
        centers = np.array([X[labels == k].mean(axis=0) if (labels == k).any() else centers[k]
                            for k in range(K)])
        for k in range(K):
            if not (labels == k).any():
                # empty cluster: take the point farthest from its own centre
                far = int(np.argmax(((X - centers[labels]) ** 2).sum(axis=1)))
                labels[far] = k
                centers[k] = X[far]
        new = np.argmin(_sqdist(X, centers), axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
    centers = np.array([X[labels == k].mean(axis=0) if (labels == k).any() else centers[k]
                        for k in range(K)])
    return labels, centers


def kmeans(X, cfg: ClusteringConfig = ClusteringConfig(), threads: int = 1,
           return_details: bool = False):
    """Lloyd's algorithm from k-means++ seeds, best inertia over restarts.

    With ``return_details`` also returns ``(final_inertia, seed_inertia)``
    of the winning restart.
    """
    X = as_feature_matrix(X, "X")
    n, K = X.shape[0], cfg.K
    if n < K:
        raise DataError(f"N={n} < K={K}")

    def run(r):
        rng = np.random.default_rng(cfg.seed + r)
        seeds = _kmeanspp(X, K, rng)
        seed_labels = np.argmin(_sqdist(X, seeds), axis=1)
        labels, centers = _lloyd(X, seeds, cfg.max_iter)
        return labels, inertia(X, labels, centers), inertia(X, seed_labels, seeds)

    results = _map(run, range(cfg.restarts), threads)
    best = min(range(len(results)), key=lambda r: (results[r][1], r))
    labels, final, initial = results[best]
    out = ClusterAssignment(_relabel_by_first_occurrence(labels), K)
    return (out, (final, initial)) if return_details else out


def _relabel_by_first_occurrence(labels: np.ndarray) -> np.ndarray:
    mapping = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels], dtype=np.int64)


def agglomerative(X, K: int = 2, linkage: str = "average") -> ClusterAssignment:
    """Average-linkage agglomerative clustering down to ``K`` clusters.

    At each step the closest pair of active clusters is merged, ties broken
    by the smallest (i, j) index pair. Output clusters are numbered in order
    of their smallest member row.
    """
    if linkage != "average":
        raise ConfigError(f"only average linkage is supported, got {linkage!r}")
    X = as_feature_matrix(X, "X")
    n = X.shape[0]
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    if n < K:
        raise DataError(f"N={n} < K={K}")
    D = pairwise_distances(X)
    D[np.tril_indices(n)] = np.inf  # only i < j is searched
    size = np.ones(n)
    owner = np.arange(n)
    for _ in range(n - K):
        flat = int(np.argmin(D))
        i, j = divmod(flat, n)
        # Lance-Williams update for average linkage, merging j into i
        row_i = np.minimum(D[i, :], D[:, i])
        row_j = np.minimum(D[j, :], D[:, j])
        merged = (size[i] * row_i + size[j] * row_j) / (size[i] + size[j])
        D[i, i + 1:] = merged[i + 1:]
        D[:i, i] = merged[:i]
        D[j, :] = np.inf
        D[:, j] = np.inf
        size[i] += size[j]
        owner[owner == j] = i
    return ClusterAssignment(_relabel_by_first_occurrence(owner), K)
