"""Behavior discovery, segmentation, and action attribution for offline RL.

Pipeline: a causal transformer autoencoder with a vector-quantized bottleneck
turns trajectories into per-timestep tokens; a hybrid transition/similarity
graph over tokens is segmented by spectral clustering with eigengap model
selection; per-cluster behavior-cloning models then attribute individual
policy actions to the behavior that best explains them.
"""

from .attribution import (
    AttributionRecord,
    AttributionResult,
    attribute_continuous,
    attribute_dataset,
    attribute_discrete,
)
from .bc import BcConfig, BcModel, BehaviorCloner, train_bc, train_cluster_models
from .data import (
    ActionSpec,
    Dataset,
    ObservationSpec,
    Trajectory,
    load_dataset,
    save_dataset,
)
from .graph import (
    BehaviorGraph,
    BehaviorSegmenter,
    ClusterAssignment,
    SpectralDecomposition,
    build_graph,
    label_timesteps,
    segment_tokens,
    select_num_clusters,
    smooth_labels,
    spectral_cluster,
    spectral_decompose,
)
from .kmeans import KMeansResult, kmeans
from .linalg import connected_components, jacobi_eigh
from .metrics import (
    AfsResult,
    MetricsReport,
    adjusted_rand,
    average_fidelity_score,
    cluster_structure_scores,
    davies_bouldin,
    kmeans_latent_baseline,
    raw_pair_baseline,
    silhouette,
)
from .synthetic import generate_gridlava, generate_pointmass
from .vqvae import (
    Codebook,
    TokenSequence,
    TrainConfig,
    TrainingCurve,
    VQVAE,
    VQVAETokenizer,
    codebook_occupancy,
    nearest_code,
    normalized_recon_loss,
    tokenize,
    train_vqvae,
    vq_loss,
)

__version__ = "0.1.0"
