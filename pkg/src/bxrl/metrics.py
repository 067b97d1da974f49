"""Quantitative evaluation: fidelity, cluster structure, and baselines."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .attribution import LOG_EPS, sample_timesteps
from .bc import BcModel
from .data import Dataset
from .errors import (
    CoincidentCentroids,
    LengthMismatch,
    SingleCluster,
    SpecMismatch,
)
from .kmeans import kmeans
from .vqvae import TokenSequence, _code_matrix


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = (points**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def silhouette(points, labels) -> float:
    """Mean silhouette over points: (b - a) / max(a, b).

    ``a`` is the mean distance to the point's own cluster (excluding itself),
    ``b`` the smallest mean distance to any other cluster. Singleton-cluster
    points score 0, as does any point with a = b = 0.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if len(points) != len(labels):
        raise LengthMismatch(f"{len(points)} points vs {len(labels)} labels")
    unique = np.unique(labels)
    if len(unique) < 2:
        raise SingleCluster(f"silhouette needs >= 2 clusters, got {len(unique)}")
    dist = _pairwise_distances(points)
    masks = {c: labels == c for c in unique}
    sizes = {c: int(masks[c].sum()) for c in unique}
    scores = np.zeros(len(points))
    for i in range(len(points)):
        own = labels[i]
        if sizes[own] == 1:
            scores[i] = 0.0
            continue
        a = dist[i][masks[own]].sum() / (sizes[own] - 1)
        b = min(dist[i][masks[c]].mean() for c in unique if c != own)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def davies_bouldin(points, labels) -> float:
    """Mean over clusters of the worst (s_i + s_j) / d_ij ratio."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if len(points) != len(labels):
        raise LengthMismatch(f"{len(points)} points vs {len(labels)} labels")
    unique = np.unique(labels)
    k = len(unique)
    if k < 2:
        raise SingleCluster(f"davies_bouldin needs >= 2 clusters, got {k}")
    centroids = np.stack([points[labels == c].mean(axis=0) for c in unique])
    spreads = np.array(
        [
            np.sqrt(((points[labels == c] - centroids[i]) ** 2).sum(axis=1)).mean()
            for i, c in enumerate(unique)
        ]
    )
    ratios = np.zeros(k)
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i == j:
                continue
            d = float(np.sqrt(((centroids[i] - centroids[j]) ** 2).sum()))
            if d == 0.0:
                raise CoincidentCentroids(
                    f"clusters {unique[i]} and {unique[j]} share a centroid"
                )
            worst = max(worst, (spreads[i] + spreads[j]) / d)
        ratios[i] = worst
    return float(ratios.mean())


def adjusted_rand(labels_a, labels_b) -> float:
    """Adjusted Rand index from the contingency table; 1.0 for identical
    partitions (up to label permutation), ~0 for independent ones."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"label shapes differ: {a.shape} vs {b.shape}")
    n = len(a)
    _, a_idx = np.unique(a, return_inverse=True)
    _, b_idx = np.unique(b, return_inverse=True)
    table = np.zeros((a_idx.max() + 1, b_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (a_idx, b_idx), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


@dataclass
class AfsResult:
    attributed: float
    randomized: float
    n_episodes: int
    n_actions: int


def _prediction_error(policy: BcModel, model: BcModel, states: np.ndarray,
                      rows: np.ndarray) -> np.ndarray:
    """Per-sample error between the policy's action and one model's output."""
    if policy.act_spec.kind == "continuous":
        pa = policy.predict(states[rows])
        pm = model.predict(states[rows])
        return ((pa - pm) ** 2).mean(axis=1)
    classes = policy.predict_class(states[rows])
    proba = model.predict_proba(states[rows])
    return -np.log(proba[np.arange(len(rows)), classes] + LOG_EPS)


def average_fidelity_score(policy: BcModel, cluster_models: dict[int, BcModel],
                           labels: list[np.ndarray], ds: Dataset,
                           n_episodes: int = 20, n_actions: int = 200,
                           seed: int = 0) -> AfsResult:
    """Mean prediction error between the policy and the cluster model owning
    each sampled timestep, plus a size-preserving random-label baseline.

    Both numbers use the exact same sampled states; only the state-to-cluster
    pairing changes, via a seeded permutation of the attributed labels.
    """
    if len(labels) != len(ds.trajectories):
        raise SpecMismatch(
            f"got labels for {len(labels)} trajectories, dataset has {len(ds.trajectories)}"
        )
    samples = sample_timesteps(ds, n_episodes, n_actions, seed)
    if len(samples) < n_actions:
        warnings.warn(
            f"requested {n_actions} samples, dataset provides {len(samples)}; using all",
            stacklevel=2,
        )
    states = np.stack([ds.trajectories[e].observations[t] for e, t in samples])
    sample_labels = np.array([labels[e][t] for e, t in samples], dtype=np.int64)
    rng = np.random.default_rng([seed, 131])
    permuted = sample_labels[rng.permutation(len(sample_labels))]

    errors_att = np.zeros(len(samples))
    errors_rand = np.zeros(len(samples))
    for cid, model in cluster_models.items():
        rows = np.flatnonzero(sample_labels == cid)
        if rows.size:
            errors_att[rows] = _prediction_error(policy, model, states, rows)
        rows = np.flatnonzero(permuted == cid)
        if rows.size:
            errors_rand[rows] = _prediction_error(policy, model, states, rows)
    episodes_used = len({e for e, _ in samples})
    return AfsResult(
        attributed=float(errors_att.mean()),
        randomized=float(errors_rand.mean()),
        n_episodes=episodes_used,
        n_actions=len(samples),
    )


def _encode_action_matrix(ds: Dataset) -> np.ndarray:
    acts = np.concatenate([t.actions for t in ds.trajectories])
    if ds.act_spec.kind == "continuous":
        return np.asarray(acts, dtype=np.float64)
    onehot = np.zeros((len(acts), ds.act_spec.num_classes))
    onehot[np.arange(len(acts)), acts.astype(np.int64)] = 1.0
    return onehot


def cluster_structure_scores(codebook, token_seqs: list[TokenSequence],
                             token_to_cluster: dict[int, int],
                             per_timestep: bool = False,
                             timestep_labels: list[np.ndarray] | None = None
                             ) -> tuple[float, float]:
    """Silhouette and Davies-Bouldin for a token clustering.

    Default scoring treats each appearing code vector as one point. With
    ``per_timestep=True`` every timestep contributes its token's code vector
    instead, labeled by ``timestep_labels`` when given (e.g. smoothed labels)
    or by its token's cluster otherwise.
    """
    codes = _code_matrix(codebook)
    if per_timestep:
        points, labels = [], []
        for i, seq in enumerate(token_seqs):
            points.append(codes[seq.tokens])
            if timestep_labels is not None:
                labels.append(np.asarray(timestep_labels[i], dtype=np.int64))
            else:
                labels.append(
                    np.asarray([token_to_cluster[int(t)] for t in seq.tokens])
                )
        x = np.concatenate(points)
        y = np.concatenate(labels)
    else:
        appearing = sorted(token_to_cluster)
        x = codes[np.asarray(appearing, dtype=np.int64)]
        y = np.asarray([token_to_cluster[t] for t in appearing], dtype=np.int64)
    return silhouette(x, y), davies_bouldin(x, y)


def raw_pair_baseline(ds: Dataset, k: int, seed: int) -> tuple[float, float]:
    """Cluster raw (flattened observation, action) vectors directly with
    k-means and score the result; no learned representation involved."""
    obs = np.concatenate(
        [t.observations.reshape(len(t), -1) for t in ds.trajectories]
    )
    x = np.concatenate([obs, _encode_action_matrix(ds)], axis=1)
    labels = kmeans(x, k, seed=seed).labels
    return silhouette(x, labels), davies_bouldin(x, labels)


def kmeans_latent_baseline(codebook: np.ndarray, token_seqs: list[TokenSequence],
                           k: int, seed: int) -> tuple[float, float]:
    """k-means directly on the appearing code vectors, scored identically to
    the spectral path for an apples-to-apples comparison."""
    appearing = np.unique(np.concatenate([s.tokens for s in token_seqs]))
    vectors = _code_matrix(codebook)[appearing]
    if k == len(vectors):
        warnings.warn(
            f"k={k} equals the number of appearing tokens; clustering is "
            "degenerate singletons",
            stacklevel=2,
        )
    labels = kmeans(vectors, k, seed=seed).labels
    return silhouette(vectors, labels), davies_bouldin(vectors, labels)


@dataclass
class MetricsReport:
    afs_attributed: float
    afs_random: float
    silhouette: float
    davies_bouldin: float
    occupancy: float
    normalized_recon: float
    ari_vs_planted: float | None = None
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "afs_attributed": self.afs_attributed,
            "afs_random": self.afs_random,
            "silhouette": self.silhouette,
            "davies_bouldin": self.davies_bouldin,
            "occupancy": self.occupancy,
            "normalized_recon": self.normalized_recon,
            "ari_vs_planted": self.ari_vs_planted,
            "config": self.config,
        }

    @staticmethod
    def from_json(obj: dict) -> "MetricsReport":
        return MetricsReport(**obj)
