"""Shared fixtures; the expensive end-to-end run is built once per session."""

from __future__ import annotations

import numpy as np
import pytest

from bxrl import (
    BcConfig,
    TrainConfig,
    generate_pointmass,
    segment_tokens,
    tokenize,
    train_cluster_models,
    train_vqvae,
)


@pytest.fixture(scope="session")
def pointmass_small():
    return generate_pointmass(seed=11, num_episodes=8, episode_len=30)


@pytest.fixture(scope="session")
def gridlava_small():
    from bxrl import generate_gridlava

    return generate_gridlava(seed=5, num_episodes=10, grid_size=8)


@pytest.fixture(scope="session")
def pipeline_run():
    """Full 50-episode point-mass run shared by acceptance and metric tests."""
    import time

    started = time.monotonic()
    ds = generate_pointmass(seed=1, num_episodes=50, episode_len=60)
    cfg = TrainConfig(seed=0)
    model, curve = train_vqvae(ds, cfg)
    tokens = tokenize(model, ds)
    assignment, graph, decomp = segment_tokens(
        tokens, model.codebook.data, similarity_weight=0.5, seed=0
    )
    bc_cfg = BcConfig(seed=3)
    policy, cluster_models = train_cluster_models(ds, assignment.labels, bc_cfg)
    modes = np.concatenate([t.mode_labels for t in ds.trajectories])
    elapsed = time.monotonic() - started
    return {
        "elapsed_seconds": elapsed,
        "dataset": ds,
        "config": cfg,
        "model": model,
        "curve": curve,
        "tokens": tokens,
        "assignment": assignment,
        "graph": graph,
        "decomposition": decomp,
        "bc_config": bc_cfg,
        "policy": policy,
        "cluster_models": cluster_models,
        "modes": modes,
    }
