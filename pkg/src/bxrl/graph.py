"""Token transition graph, spectral segmentation, and label smoothing.

Nodes are the codebook tokens that actually appear in the data. Edge weights
blend how often token i transitions to token j with how close the two code
vectors are in latent space; spectral clustering of the resulting similarity
structure yields behavior clusters, and every timestep inherits the cluster
of its token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import BaseEstimator, check_is_fitted
from .errors import (
    DegenerateEmbedding,
    EmptyTokens,
    InvalidConfig,
    InvalidLambda,
    InvalidWindow,
    TooFewNodes,
    UnknownToken,
)
from .kmeans import kmeans
from .linalg import jacobi_eigh
from .vqvae import TokenSequence, _code_matrix


@dataclass
class BehaviorGraph:
    tokens: np.ndarray           # appearing token ids, ascending
    weights: np.ndarray          # (n, n) blended edge weights
    counts: np.ndarray           # (n, n) raw transition counts
    code_vectors: np.ndarray     # (n, d) codebook rows for appearing tokens
    similarity_weight: float     # blend factor between transitions and latent similarity

    @property
    def num_nodes(self) -> int:
        return len(self.tokens)


@dataclass
class SpectralDecomposition:
    similarity: np.ndarray       # symmetrized weights S = W + W^T
    degrees: np.ndarray          # row sums of S
    laplacian: np.ndarray        # diag(degrees) - S
    eigenvalues: np.ndarray      # ascending
    eigenvectors: np.ndarray     # column-orthonormal, aligned with eigenvalues


@dataclass
class ClusterAssignment:
    num_clusters: int
    token_to_cluster: dict[int, int]
    labels: list[np.ndarray] = field(default_factory=list)  # smoothed, per trajectory
    eigenvalues: np.ndarray | None = None
    similarity_weight: float = 0.5


def build_graph(token_seqs: list[TokenSequence], codebook: np.ndarray,
                similarity_weight: float, gaussian_similarity: bool = True,
                bandwidth: str = "nn_median") -> BehaviorGraph:
    """Blend row-normalized transition frequencies with latent similarity.

    The latent term is a Gaussian kernel exp(-d^2 / 2 sigma^2). ``bandwidth``
    picks sigma^2: "nn_median" uses the median squared distance to each
    code's nearest neighbor (local scale; keeps distinct latent blobs
    separable), "pair_median" the median over all code pairs (tends to
    over-connect once there are more than a few blobs). ``gaussian_similarity
    =False`` switches to the raw squared distance for comparison runs.
    """
    if not 0.0 <= similarity_weight <= 1.0:
        raise InvalidLambda(f"blend weight must be in [0, 1], got {similarity_weight}")
    if bandwidth not in ("nn_median", "pair_median"):
        raise InvalidConfig(f"unknown bandwidth rule {bandwidth!r}")
    streams = [np.asarray(s.tokens, dtype=np.int64) for s in token_seqs]
    if not streams or all(len(s) == 0 for s in streams):
        raise EmptyTokens("no tokens to build a graph from")
    codebook = _code_matrix(codebook)
    appearing = np.unique(np.concatenate(streams))
    index = {int(tok): i for i, tok in enumerate(appearing)}
    n = len(appearing)

    counts = np.zeros((n, n), dtype=np.int64)
    for stream in streams:
        for a, b in zip(stream[:-1], stream[1:]):
            counts[index[int(a)], index[int(b)]] += 1

    # Self-transitions are recorded but excluded from normalization: they are
    # invisible to the Laplacian (L_ii cancels the diagonal) and would only
    # dilute the edges of tokens that repeat in long runs.
    off_counts = counts.astype(np.float64)
    np.fill_diagonal(off_counts, 0.0)
    row_sums = off_counts.sum(axis=1, keepdims=True)
    freq = np.divide(off_counts, row_sums, out=np.zeros((n, n)), where=row_sums > 0)

    vectors = codebook[appearing]
    diffs = vectors[:, None, :] - vectors[None, :, :]
    d2 = (diffs**2).sum(axis=-1)
    if gaussian_similarity:
        if n < 2:
            sigma2 = 1.0
        elif bandwidth == "nn_median":
            nearest = (d2 + np.diag(np.full(n, np.inf))).min(axis=1)
            sigma2 = float(np.median(nearest))
        else:
            sigma2 = float(np.median(d2[~np.eye(n, dtype=bool)]))
        if sigma2 <= 0.0:
            sigma2 = 1.0
        latent = np.exp(-d2 / (2.0 * sigma2))
    else:
        latent = d2
    weights = (1.0 - similarity_weight) * freq + similarity_weight * latent
    return BehaviorGraph(
        tokens=appearing,
        weights=weights,
        counts=counts,
        code_vectors=vectors,
        similarity_weight=similarity_weight,
    )


def spectral_decompose(graph: BehaviorGraph) -> SpectralDecomposition:
    """Unnormalized graph Laplacian and its full eigendecomposition."""
    if graph.num_nodes < 2:
        raise TooFewNodes(f"need >= 2 graph nodes, got {graph.num_nodes}")
    similarity = graph.weights + graph.weights.T
    degrees = similarity.sum(axis=1)
    laplacian = np.diag(degrees) - similarity
    eigenvalues, eigenvectors = jacobi_eigh(laplacian)
    return SpectralDecomposition(
        similarity=similarity,
        degrees=degrees,
        laplacian=laplacian,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
    )


def select_num_clusters(eigenvalues, k_min: int = 2, k_max: int | None = None) -> int:
    """Largest-eigengap choice of k over ascending Laplacian eigenvalues.

    With eigenvalues indexed from 1, returns the k in [k_min, k_max]
    maximizing eigenvalue[k+1] - eigenvalue[k]; ties take the smallest k.
    """
    ev = np.asarray(eigenvalues, dtype=np.float64)
    if k_max is None:
        k_max = min(len(ev) - 1, 16)
    k_max = min(k_max, len(ev) - 1)
    if len(ev) < k_min + 1 or k_max < k_min:
        raise TooFewNodes(
            f"need at least {k_min + 1} eigenvalues to select k >= {k_min}, got {len(ev)}"
        )
    best_k, best_gap = k_min, -np.inf
    for k in range(k_min, k_max + 1):
        gap = ev[k] - ev[k - 1]
        if gap > best_gap:
            best_k, best_gap = k, gap
    return best_k


def spectral_cluster(decomp: SpectralDecomposition, k: int, seed: int,
                     n_restarts: int = 50) -> np.ndarray:
    """Cluster graph nodes by k-means on the k lowest-eigenvalue eigenvectors."""
    n = decomp.eigenvectors.shape[0]
    if k < 2:
        raise InvalidConfig(f"k must be >= 2, got {k}")
    if k > n:
        raise InvalidConfig(f"k={k} exceeds the number of graph nodes {n}")
    embedding = decomp.eigenvectors[:, :k]
    if np.abs(embedding - embedding[0]).max() < 1e-12:
        raise DegenerateEmbedding("all spectral embedding rows are identical")
    return kmeans(embedding, k, seed=seed, n_restarts=n_restarts).labels


def label_timesteps(token_seqs: list[TokenSequence],
                    token_to_cluster: dict[int, int]) -> list[np.ndarray]:
    """Map every timestep's token to its cluster id."""
    out = []
    for seq in token_seqs:
        labels = np.empty(len(seq.tokens), dtype=np.int64)
        for i, tok in enumerate(seq.tokens):
            try:
                labels[i] = token_to_cluster[int(tok)]
            except KeyError:
                raise UnknownToken(f"token {int(tok)} has no cluster assignment") from None
        out.append(labels)
    return out


def smooth_labels(labels: list[np.ndarray], window: int = 5) -> list[np.ndarray]:
    """Reassign isolated single-step outliers to their local majority label.

    A timestep whose label differs from both neighbors takes the most frequent
    label inside its centered window; ties keep the original label. A single
    left-to-right pass reading only pre-pass labels, so fixes do not cascade.
    """
    if window < 3 or window % 2 == 0:
        raise InvalidWindow(f"window must be an odd integer >= 3, got {window}")
    half = window // 2
    smoothed = []
    for arr in labels:
        arr = np.asarray(arr, dtype=np.int64)
        out = arr.copy()
        for t in range(1, len(arr) - 1):
            if arr[t] != arr[t - 1] and arr[t] != arr[t + 1]:
                lo, hi = max(0, t - half), min(len(arr), t + half + 1)
                segment = arr[lo:hi]
                values, counts = np.unique(segment, return_counts=True)
                top = counts.max()
                winners = values[counts == top]
                if len(winners) == 1:
                    out[t] = winners[0]
        smoothed.append(out)
    return smoothed


def segment_tokens(token_seqs: list[TokenSequence], codebook: np.ndarray,
                   similarity_weight: float = 0.5, num_clusters: int | None = None,
                   smoothing_window: int = 5, seed: int = 0, k_min: int = 2,
                   k_max: int = 16, gaussian_similarity: bool = True,
                   bandwidth: str = "nn_median", n_restarts: int = 50
                   ) -> tuple[ClusterAssignment, BehaviorGraph, SpectralDecomposition]:
    """Full segmentation: graph, eigendecomposition, k selection, clustering,
    per-timestep labeling, smoothing."""
    graph = build_graph(token_seqs, codebook, similarity_weight, gaussian_similarity,
                        bandwidth=bandwidth)
    decomp = spectral_decompose(graph)
    if num_clusters is None:
        k = select_num_clusters(decomp.eigenvalues, k_min=k_min,
                                k_max=min(k_max, graph.num_nodes - 1))
    else:
        k = num_clusters
    node_labels = spectral_cluster(decomp, k, seed=seed, n_restarts=n_restarts)
    token_to_cluster = {int(tok): int(c) for tok, c in zip(graph.tokens, node_labels)}
    raw = label_timesteps(token_seqs, token_to_cluster)
    labels = smooth_labels(raw, window=smoothing_window)
    assignment = ClusterAssignment(
        num_clusters=k,
        token_to_cluster=token_to_cluster,
        labels=labels,
        eigenvalues=decomp.eigenvalues,
        similarity_weight=similarity_weight,
    )
    return assignment, graph, decomp


class BehaviorSegmenter(BaseEstimator):
    """Estimator facade over graph construction and spectral segmentation.

    ``fit`` consumes the token sequences plus the codebook they index into;
    fitted attributes expose the graph, the decomposition, the chosen k, and
    smoothed per-timestep labels.
    """

    def __init__(self, similarity_weight: float = 0.5, num_clusters: int | None = None,
                 k_min: int = 2, k_max: int = 16, smoothing_window: int = 5,
                 gaussian_similarity: bool = True, bandwidth: str = "nn_median",
                 n_restarts: int = 50, seed: int = 0):
        self.similarity_weight = similarity_weight
        self.num_clusters = num_clusters
        self.k_min = k_min
        self.k_max = k_max
        self.smoothing_window = smoothing_window
        self.gaussian_similarity = gaussian_similarity
        self.bandwidth = bandwidth
        self.n_restarts = n_restarts
        self.seed = seed

    def fit(self, token_seqs: list[TokenSequence], codebook: np.ndarray):
        assignment, graph, decomp = segment_tokens(
            token_seqs,
            codebook,
            similarity_weight=self.similarity_weight,
            num_clusters=self.num_clusters,
            smoothing_window=self.smoothing_window,
            seed=self.seed,
            k_min=self.k_min,
            k_max=self.k_max,
            gaussian_similarity=self.gaussian_similarity,
            bandwidth=self.bandwidth,
            n_restarts=self.n_restarts,
        )
        self.assignment_ = assignment
        self.graph_ = graph
        self.decomposition_ = decomp
        self.k_ = assignment.num_clusters
        self.token_to_cluster_ = assignment.token_to_cluster
        self.labels_ = assignment.labels
        return self

    def fit_predict(self, token_seqs, codebook) -> list[np.ndarray]:
        return self.fit(token_seqs, codebook).labels_

    def predict(self, token_seqs: list[TokenSequence]) -> list[np.ndarray]:
        check_is_fitted(self, "token_to_cluster_")
        raw = label_timesteps(token_seqs, self.token_to_cluster_)
        return smooth_labels(raw, window=self.smoothing_window)
