"""k-means clustering (standard, spherical, balanced) and centroid routing.

Standard mode assigns by squared Euclidean distance; spherical mode keeps
centroids unit-norm and assigns by largest inner product. Balanced mode caps
cluster sizes so the final spread max(sizes) - min(sizes) stays within delta.
All ties break toward the lower index and every run is deterministic for a
fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .linalg import as_matrix

F32 = np.float32

EUCLIDEAN = "euclidean"
SPHERICAL = "spherical"

DEFAULT_MAX_ITERS = 25


@dataclass(frozen=True)
class Clustering:
    centroids: np.ndarray  # L x d float32
    assignments: np.ndarray  # int64 per point
    sizes: np.ndarray  # int64 per cluster

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def members(self, l: int) -> np.ndarray:
        return np.nonzero(self.assignments == l)[0]


def _check_metric(metric: str) -> None:
    if metric not in (EUCLIDEAN, SPHERICAL):
        raise ParameterError(f"unknown clustering metric: {metric!r}")


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """All-pairs squared Euclidean distances, clipped at zero."""
    p = points.astype(np.float64)
    c = centroids.astype(np.float64)
    d2 = (p * p).sum(axis=1)[:, None] - 2.0 * (p @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _dissimilarities(points: np.ndarray, centroids: np.ndarray, metric: str) -> np.ndarray:
    """points x centroids matrix where smaller means closer."""
    if metric == EUCLIDEAN:
        return _sq_distances(points, centroids)
    return -(points.astype(np.float64) @ centroids.astype(np.float64).T)


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return m / norms


def _kmeans_pp_init(points: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centroid uniform, the rest D^2-weighted."""
    m = points.shape[0]
    chosen = np.empty(L, dtype=np.int64)
    chosen[0] = rng.integers(m)
    d2 = _sq_distances(points, points[chosen[0]][None, :])[:, 0]
    for i in range(1, L):
        total = d2.sum()
        if total <= 0:
            # all remaining mass at distance zero (duplicate-heavy data):
            # fall back to the first not-yet-chosen index
            remaining = np.setdiff1d(np.arange(m), chosen[:i], assume_unique=False)
            chosen[i] = remaining[0]
        else:
            r = rng.random() * total
            chosen[i] = int(np.searchsorted(np.cumsum(d2), r, side="right").clip(0, m - 1))
        d2 = np.minimum(d2, _sq_distances(points, points[chosen[i]][None, :])[:, 0])
    return points[chosen].copy()


def _update_centroids(
    points: np.ndarray, assign: np.ndarray, old: np.ndarray, metric: str
) -> np.ndarray:
    L, d = old.shape
    sums = np.zeros((L, d), dtype=np.float64)
    np.add.at(sums, assign, points.astype(np.float64))
    counts = np.bincount(assign, minlength=L).astype(np.float64)
    new = old.astype(np.float64).copy()
    nonempty = counts > 0
    new[nonempty] = sums[nonempty] / counts[nonempty, None]
    if metric == SPHERICAL:
        norms = np.linalg.norm(new, axis=1, keepdims=True)
        # a zero mean keeps its previous direction
        zero = norms[:, 0] == 0
        new[zero] = old[zero].astype(np.float64)
        norms[zero] = np.linalg.norm(new[zero], axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        new = new / norms
    return new.astype(F32)


def _repair_empty(assign: np.ndarray, diss: np.ndarray, L: int) -> np.ndarray:
    """Give each empty cluster the farthest point of the currently largest one."""
    sizes = np.bincount(assign, minlength=L)
    for l in np.nonzero(sizes == 0)[0]:
        donor = int(np.argmax(sizes))
        members = np.nonzero(assign == donor)[0]
        victim = members[int(np.argmax(diss[members, donor]))]
        assign[victim] = l
        sizes[donor] -= 1
        sizes[l] += 1
    return assign


def kmeans(
    points,
    L: int,
    metric: str = EUCLIDEAN,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> Clustering:
    """Lloyd iterations from a k-means++ start; stops when assignments settle."""
    points = as_matrix(points, "points")
    _check_metric(metric)
    m = points.shape[0]
    if L < 1 or L > m:
        raise ParameterError(f"kmeans: L={L} out of range [1, {m}]")
    rng = np.random.default_rng(seed)
    if metric == SPHERICAL:
        centroids = _normalize_rows(_kmeans_pp_init(points, L, rng).astype(np.float64)).astype(F32)
    else:
        centroids = _kmeans_pp_init(points, L, rng)
    assign = np.full(m, -1, dtype=np.int64)  # sentinel: no previous assignment
    for _ in range(max_iters):
        diss = _dissimilarities(points, centroids, metric)
        new_assign = np.argmin(diss, axis=1).astype(np.int64)
        new_assign = _repair_empty(new_assign, diss, L)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centroids = _update_centroids(points, assign, centroids, metric)
    sizes = np.bincount(assign, minlength=L).astype(np.int64)
    return Clustering(centroids=centroids, assignments=assign, sizes=sizes)


def _capacity_assign(diss: np.ndarray, cap: int, L: int) -> np.ndarray:
    """Capped assignment: free argmin, then spill overflow to nearest open cluster."""
    assign = np.argmin(diss, axis=1).astype(np.int64)
    counts = np.bincount(assign, minlength=L)
    if counts.max() <= cap:
        return assign
    spilled: list[int] = []
    for l in np.nonzero(counts > cap)[0]:
        members = np.nonzero(assign == l)[0]
        order = members[np.argsort(diss[members, l], kind="stable")]
        spilled.extend(order[cap:].tolist())
        counts[l] = cap
    spilled_arr = np.array(sorted(spilled), dtype=np.int64)
    pref = np.argsort(diss[spilled_arr], axis=1, kind="stable")
    confident = np.argsort(diss[spilled_arr].min(axis=1), kind="stable")
    for idx in confident:
        i = spilled_arr[idx]
        for l in pref[idx]:
            if counts[l] < cap:
                assign[i] = l
                counts[l] += 1
                break
    return assign


def _fill_to_floor(
    assign: np.ndarray, diss: np.ndarray, lo: int, L: int
) -> np.ndarray:
    """Move points into under-full clusters until every size reaches lo."""
    sizes = np.bincount(assign, minlength=L)
    while True:
        needy = np.nonzero(sizes < lo)[0]
        if needy.size == 0:
            return assign
        l = int(needy[0])
        donors = np.nonzero(sizes > lo)[0]
        mask = np.isin(assign, donors)
        cand = np.nonzero(mask)[0]
        victim = cand[int(np.argmin(diss[cand, l]))]
        sizes[assign[victim]] -= 1
        assign[victim] = l
        sizes[l] += 1


def balanced_kmeans(
    points,
    L: int,
    metric: str = EUCLIDEAN,
    delta: int = 16,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> Clustering:
    """k-means with a hard bound on the cluster-size spread.

    Assignment caps sizes at max(ceil(m/L), floor((m+delta)/L)); when the cap
    alone cannot certify the spread (L*cap - m > delta) a final pass lifts
    every cluster to cap - delta. Both leave max - min <= delta.
    """
    points = as_matrix(points, "points")
    _check_metric(metric)
    m = points.shape[0]
    if L < 1 or L > m:
        raise ParameterError(f"balanced_kmeans: L={L} out of range [1, {m}]")
    if delta < 1:
        raise ParameterError(f"balanced_kmeans: delta must be >= 1, got {delta}")
    cap = max(-(-m // L), (m + delta) // L)
    if cap >= m:
        return kmeans(points, L, metric=metric, max_iters=max_iters, seed=seed)
    rng = np.random.default_rng(seed)
    if metric == SPHERICAL:
        centroids = _normalize_rows(_kmeans_pp_init(points, L, rng).astype(np.float64)).astype(F32)
    else:
        centroids = _kmeans_pp_init(points, L, rng)
    assign = np.full(m, -1, dtype=np.int64)
    diss = _dissimilarities(points, centroids, metric)
    for _ in range(max_iters):
        diss = _dissimilarities(points, centroids, metric)
        new_assign = _capacity_assign(diss, cap, L)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centroids = _update_centroids(points, assign, centroids, metric)
    # floor pass: certify the spread when the cap alone cannot, and never
    # leave an empty cluster
    lo = cap - delta if L * cap - m > delta else 0
    lo = max(lo, 1)
    if np.bincount(assign, minlength=L).min() < lo:
        assign = _fill_to_floor(assign, diss, lo, L)
        centroids = _update_centroids(points, assign, centroids, metric)
    sizes = np.bincount(assign, minlength=L).astype(np.int64)
    return Clustering(centroids=centroids, assignments=assign, sizes=sizes)


def distortion(points, clustering: Clustering) -> float:
    """Sum of squared distances to assigned centroids (diagnostic)."""
    points = as_matrix(points, "points")
    deltas = points.astype(np.float64) - clustering.centroids[clustering.assignments].astype(
        np.float64
    )
    return float((deltas * deltas).sum())


def route(query, centroids, w: int, metric: str = EUCLIDEAN) -> np.ndarray:
    """Ids of the w nearest centroids, best first; ties go to the lower id."""
    centroids = as_matrix(centroids, "centroids")
    _check_metric(metric)
    L = centroids.shape[0]
    if w < 1 or w > L:
        raise ParameterError(f"route: w={w} out of range [1, {L}]")
    q = np.ascontiguousarray(query, dtype=F32).reshape(1, -1)
    diss = _dissimilarities(q, centroids, metric)[0]
    order = np.argsort(diss, kind="stable")
    return order[:w].astype(np.int64)
