"""Background dataset selection: full data, random sample, k-means summary, or
a single reference point.

Centroids from the k-means summary are weighted by cluster size so the
background keeps the marginal mass of the data it replaces.  Features are
never standardized here: masked samples must remain valid model inputs in raw
units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coalition import BackgroundData
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class BackgroundSpec:
    """Parsed form of the CLI strings ``full``, ``sample:k:seed``,
    ``kmeans:k:seed``, ``single:mean`` and ``single:median``."""

    mode: str
    k: int | None = None
    seed: int | None = None
    statistic: str | None = None

    @classmethod
    def parse(cls, text: str) -> "BackgroundSpec":
        parts = str(text).strip().split(":")
        mode = parts[0]
        if mode == "full":
            if len(parts) != 1:
                raise ConfigError(f"background spec 'full' takes no arguments: {text!r}")
            return cls(mode="full")
        if mode in ("sample", "kmeans"):
            if len(parts) not in (2, 3):
                raise ConfigError(f"expected {mode}:k[:seed], got {text!r}")
            try:
                k = int(parts[1])
                seed = int(parts[2]) if len(parts) == 3 else 0
            except ValueError:
                raise ConfigError(f"non-integer k/seed in background spec {text!r}") from None
            if k < 1:
                raise ConfigError(f"background size k must be >= 1, got {k}")
            return cls(mode=mode, k=k, seed=seed)
        if mode == "single":
            stat = parts[1] if len(parts) == 2 else "mean"
            if stat not in ("mean", "median"):
                raise ConfigError(f"single background statistic must be mean or median: {text!r}")
            return cls(mode="single", statistic=stat)
        raise ConfigError(f"unknown background mode {mode!r} in {text!r}")

    def __str__(self) -> str:
        if self.mode == "full":
            return "full"
        if self.mode == "single":
            return f"single:{self.statistic}"
        return f"{self.mode}:{self.k}:{self.seed}"


def kmeans(X, k, seed, max_iter=100, tol=1e-6, return_history=False):
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic for a given seed.  Empty clusters are reseeded from the
    point currently farthest from its assigned centroid, which keeps the
    within-cluster SSE non-increasing across iterations.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("kmeans requires a non-empty 2-D matrix")
    n = X.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"k must be in [1, n={n}], got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    closest_sq = np.sum((X - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = closest_sq.sum()
        if total > 0:
            idx = rng.choice(n, p=closest_sq / total)
        else:
            idx = rng.integers(n)
        centroids[i] = X[idx]
        closest_sq = np.minimum(closest_sq, np.sum((X - centroids[i]) ** 2, axis=1))

    history = []
    assignment = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assignment = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), assignment]
        for c in range(k):
            if not np.any(assignment == c):
                far = int(np.argmax(point_d2))
                centroids[c] = X[far]
                assignment[far] = c
                point_d2[far] = 0.0
        history.append(float(point_d2.sum()))
        new_centroids = np.vstack([X[assignment == c].mean(axis=0) for c in range(k)])
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    d2 = np.sum((X[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    assignment = np.argmin(d2, axis=1)
    if return_history:
        return centroids, assignment, history
    return centroids, assignment


def _lower_median(X):
    n = X.shape[0]
    return np.sort(X, axis=0)[(n - 1) // 2]


def select_background(X, spec: BackgroundSpec) -> BackgroundData:
    """Materialize a BackgroundData per the chosen strategy; weights sum to 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("background source must be a non-empty 2-D matrix")
    n = X.shape[0]
    if spec.mode == "full":
        return BackgroundData(rows=X.copy(), row_weights=np.full(n, 1.0 / n))
    if spec.mode == "sample":
        if spec.k > n:
            raise DataError(f"cannot sample k={spec.k} rows from n={n}")
        rng = np.random.default_rng(spec.seed)
        keep = np.sort(rng.choice(n, size=spec.k, replace=False))
        return BackgroundData(rows=X[keep].copy(), row_weights=np.full(spec.k, 1.0 / spec.k))
    if spec.mode == "kmeans":
        if spec.k > n:
            raise DataError(f"cannot build k={spec.k} clusters from n={n} rows")
        centroids, assignment = kmeans(X, spec.k, spec.seed)
        counts = np.bincount(assignment, minlength=spec.k).astype(np.float64)
        return BackgroundData(rows=centroids, row_weights=counts / n)
    if spec.mode == "single":
        row = X.mean(axis=0) if spec.statistic == "mean" else _lower_median(X)
        return BackgroundData(rows=row[None, :], row_weights=np.array([1.0]))
    raise ConfigError(f"unknown background mode {spec.mode!r}")
