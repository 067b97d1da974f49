"""Deterministic k-means with k-means++ seeding and multi-restart selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, ShapeError


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    restart: int


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[int(rng.integers(n))]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = min(int(np.searchsorted(np.cumsum(d2), r, side="right")), n - 1)
        centers[i] = x[idx]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 100
           ) -> tuple[np.ndarray, np.ndarray, float]:
    n, k = len(x), len(centers)
    for _ in range(max_iter):
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        labels = np.argmin(dists, axis=1)
        new_centers = np.empty_like(centers)
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                # Deterministic repair: seize the point worst served so far.
                farthest = int(np.argmax(dists[np.arange(n), labels]))
                new_centers[j] = x[farthest]
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers
    dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
    labels = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(n), labels].sum())
    return labels, centers, inertia


def kmeans(x, k: int, seed: int, n_restarts: int = 50) -> KMeansResult:
    """Best-of-``n_restarts`` k-means; exact inertia ties keep the lowest
    restart index, so results are reproducible for a given seed."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"kmeans expects a 2-d point array, got shape {x.shape}")
    if k < 1:
        raise InvalidConfig(f"k must be >= 1, got {k}")
    if k > len(x):
        raise InvalidConfig(f"k={k} exceeds the number of points {len(x)}")
    best: KMeansResult | None = None
    for restart in range(n_restarts):
        rng = np.random.default_rng([seed, restart])
        labels, centers, inertia = _lloyd(x, _plus_plus_init(x, k, rng))
        if best is None or inertia < best.inertia:
            best = KMeansResult(labels=labels, centers=centers, inertia=inertia,
                                restart=restart)
    return best
