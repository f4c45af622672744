"""k-means over standardized residual features, and selection of K under a model budget."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BudgetError, PreconditionError

logger = logging.getLogger(__name__)


@dataclass
class Clustering:
    K: int
    ids: list
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    seed: int = 0
    restarts: int = 1
    trace: list = field(default_factory=list)  # inertia per Lloyd iteration of the kept run

    @property
    def assignments(self):
        return {i: int(c) for i, c in zip(self.ids, self.labels)}

    def sizes(self):
        return np.bincount(self.labels, minlength=self.K)

    def members(self, k):
        return [i for i, c in zip(self.ids, self.labels) if c == k]


def _as_points(matrix):
    if hasattr(matrix, "standardized"):
        return np.asarray(matrix.standardized, dtype=float), list(matrix.ids)
    X = np.atleast_2d(np.asarray(matrix, dtype=float))
    return X, [str(i) for i in range(len(X))]


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _plusplus(X, K, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        j = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[j])
        d2 = np.minimum(d2, ((X - X[j]) ** 2).sum(axis=1))
    return np.array(centers)


def _canonical(labels, K):
    """Relabel clusters in order of first appearance."""
    order = []
    for c in labels:
        if c not in order:
            order.append(c)
    order += [c for c in range(K) if c not in order]
    remap = np.empty(K, dtype=int)
    remap[order] = np.arange(K)
    return remap[labels], order


def _lloyd(X, C, max_iter):
    K = len(C)
    trace = []
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(X, C), axis=1)
        # repair empty clusters with the point farthest from its centroid
        for k in range(K):
            if not np.any(new == k):
                d = ((X - C[new]) ** 2).sum(axis=1)
                counts = np.bincount(new, minlength=K)
                d[counts[new] <= 1] = -1.0
                j = int(np.argmax(d))
                new[j] = k
        C = np.array([X[new == k].mean(axis=0) for k in range(K)])
        trace.append(float(((X - C[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return new, C, trace


def kmeans(matrix, K, restarts=10, seed=0, max_iter=300) -> Clustering:
    """Lloyd's algorithm from k-means++ seeds; keeps the lowest-inertia restart."""
    X, ids = _as_points(matrix)
    n = len(X)
    if not 1 <= K <= n:
        raise PreconditionError(f"K must lie in [1, {n}], got {K}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        labels, C, trace = _lloyd(X, _plusplus(X, K, rng), max_iter)
        if best is None or trace[-1] < best[2][-1] - 1e-12:
            best = (labels, C, trace)
    labels, C, trace = best
    labels, order = _canonical(labels, K)
    return Clustering(K, ids, labels, C[order], trace[-1], seed, max(1, restarts), trace)


# --- selection under a budget ---------------------------------------------------------

_COSTS = {
    "constant": lambda size: 1.0,
    "linear": lambda size: float(size),
    "sqrt": lambda size: math.sqrt(size),
}


@dataclass(frozen=True)
class ClusterBudget:
    U_m: float = 10.0
    f_m: str = "constant"

    def cost(self, sizes):
        if self.f_m not in _COSTS:
            raise PreconditionError(f"unknown cost function {self.f_m!r}")
        f = _COSTS[self.f_m]
        return sum(f(int(s)) for s in sizes)

    def feasible(self, sizes):
        return self.cost(sizes) <= self.U_m + 1e-12

    def max_k(self, n):
        """Largest K that can possibly be feasible (every cluster costs at least f_m(1))."""
        unit = _COSTS[self.f_m](1)
        return max(0, min(n, int(math.floor(self.U_m / unit + 1e-12))))


@dataclass
class ClusterSelection:
    candidates: list
    sse: dict  # K -> validation SSE (feasible candidates only)
    chosen_k: int
    clustering: Clustering
    clusterings: dict = field(default_factory=dict)
    payloads: dict = field(default_factory=dict)
    infeasible: list = field(default_factory=list)


def select_clustering(matrix, evaluate: Callable, budget: ClusterBudget = ClusterBudget(),
                      candidates=None, restarts=10, seed=0) -> ClusterSelection:
    """Pick K minimising the validation SSE returned by ``evaluate(clustering)``.

    ``evaluate`` may return the SSE or ``(sse, payload)``; payloads (for
    instance the fitted sub-models) are kept per K.  Each K gets an
    independent k-means run.  Equal SSE goes to the smaller K.
    """
    X, _ = _as_points(matrix)
    n = len(X)
    if n == 0:
        raise PreconditionError("no heterogeneous series to cluster")
    cap = budget.max_k(n)
    if candidates is None:
        candidates = list(range(1, cap + 1))
    candidates = sorted({int(k) for k in candidates if 1 <= int(k) <= n})
    sse, clusterings, payloads, infeasible = {}, {}, {}, []
    for K in candidates:
        if K > cap:
            infeasible.append(K)
            continue
        cl = kmeans(matrix, K, restarts=restarts, seed=seed)
        if not budget.feasible(cl.sizes()):
            infeasible.append(K)
            continue
        out = evaluate(cl)
        val, payload = out if isinstance(out, tuple) else (out, None)
        sse[K], clusterings[K], payloads[K] = float(val), cl, payload
        logger.info("K=%d validation SSE=%.6g", K, val)
    if not sse:
        raise BudgetError(f"no candidate K is feasible under U_m={budget.U_m} with f_m={budget.f_m}")
    chosen = min(sse, key=lambda k: (sse[k], k))
    return ClusterSelection(candidates, sse, chosen, clusterings[chosen], clusterings, payloads, infeasible)


def adjusted_rand_index(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    n = a.size
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    comb = lambda v: v * (v - 1) / 2.0
    index = comb(table).sum()
    sa = comb(table.sum(axis=1)).sum()
    sb = comb(table.sum(axis=0)).sum()
    total = comb(n)
    expected = sa * sb / total if total > 0 else 0.0
    maximum = 0.5 * (sa + sb)
    if maximum == expected:
        return 1.0 if np.array_equal(ai, bi) or (sa == sb == index) else 0.0
    return float((index - expected) / (maximum - expected))


def cluster_recovery_score(clustering: Clustering, truth: dict) -> float:
    """Adjusted Rand index between a clustering and ground-truth labels keyed by series id."""
    ids = list(clustering.ids)
    if set(ids) != set(truth):
        raise PreconditionError("clustering and truth cover different series ids")
    return adjusted_rand_index(clustering.labels, [truth[i] for i in ids])
