"""Local Outlier Factor used as a plausibility gate for candidate tunings."""

from __future__ import annotations

import numpy as np


def _knn(dist_row: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors; distance ties broken by index order."""
    order = np.argsort(dist_row, kind="stable")
    return order[:k]


class LofReference:
    """Dataset-side LOF quantities, precomputed once and queried cheaply.

    Standard construction: k-distances and local reachability densities
    of the dataset points, then the mean density ratio over a query's
    k nearest neighbors. Scores near 1 mean the query sits at a locally
    typical density; large scores mean it is isolated.
    """

    def __init__(self, points: np.ndarray, k: int = 10):
        points = np.atleast_2d(np.asarray(points, float))
        n = len(points)
        if k < 1:
            raise ValueError("k must be at least 1")
        if n < 2:
            raise ValueError("need at least k + 1 reference points")
        self.points = points
        self.k = min(k, n - 1)
        k = self.k

        diffs = points[:, None, :] - points[None, :, :]
        D = np.sqrt(np.sum(diffs * diffs, axis=-1))
        np.fill_diagonal(D, np.inf)
        self.degenerate = not np.any(D[np.isfinite(D)] > 0)

        order = np.argsort(D, axis=1, kind="stable")
        nn = order[:, :k]
        self.kdist = D[np.arange(n), order[:, k - 1]]
        reach = np.maximum(D[np.arange(n)[:, None], nn], self.kdist[nn])
        with np.errstate(divide="ignore"):
            lrd = 1.0 / np.mean(reach, axis=1)
        lrd[~np.isfinite(lrd)] = np.inf
        self.lrd = lrd

    def score(self, query: np.ndarray) -> float:
        if self.degenerate:
            return 1.0
        query = np.asarray(query, float).ravel()
        dq = np.sqrt(np.sum((self.points - query) ** 2, axis=1))
        nn_q = _knn(dq, self.k)
        reach_q = np.maximum(dq[nn_q], self.kdist[nn_q])
        mean_reach_q = float(np.mean(reach_q))
        if mean_reach_q == 0.0:
            # query duplicates a dense cluster point: locally uniform density
            return 1.0
        lrd_q = 1.0 / mean_reach_q
        ratio = self.lrd[nn_q] / lrd_q
        ratio[~np.isfinite(ratio)] = 1.0
        return float(np.mean(ratio))


def lof_score(points: np.ndarray, query: np.ndarray, k: int = 10) -> float:
    """Convenience wrapper: build the reference and score one query."""
    return LofReference(points, k).score(query)


def lof_score_brute(points: np.ndarray, query: np.ndarray, k: int = 10) -> float:
    """Loop-based O(n^2) reference implementation of the same construction."""
    points = np.atleast_2d(np.asarray(points, float))
    query = np.asarray(query, float).ravel()
    n = len(points)
    k = min(k, n - 1)

    def dist(a, b):
        return float(np.linalg.norm(a - b))

    def neighbors(x, exclude=None):
        ds = []
        for j in range(n):
            if exclude is not None and j == exclude:
                continue
            ds.append((dist(x, points[j]), j))
        ds.sort(key=lambda t: (t[0], t[1]))
        return ds[:k]

    any_spread = any(
        dist(points[i], points[j]) > 0 for i in range(n) for j in range(i + 1, n)
    )
    if not any_spread:
        return 1.0

    kdist = []
    knn = []
    for i in range(n):
        ns = neighbors(points[i], exclude=i)
        knn.append([j for _, j in ns])
        kdist.append(ns[-1][0])

    def lrd_of(x_neighbors, x):
        total = 0.0
        for j in x_neighbors:
            total += max(kdist[j], dist(x, points[j]))
        mean_reach = total / len(x_neighbors)
        return np.inf if mean_reach == 0.0 else 1.0 / mean_reach

    lrd = [lrd_of(knn[i], points[i]) for i in range(n)]

    ns_q = neighbors(query)
    q_neighbors = [j for _, j in ns_q]
    lrd_q = lrd_of(q_neighbors, query)
    if lrd_q == np.inf:
        return 1.0
    total = 0.0
    for j in q_neighbors:
        r = lrd[j] / lrd_q
        total += 1.0 if not np.isfinite(r) else r
    return total / len(q_neighbors)
