"""Attribute policy actions to the behavior cluster that best predicts them."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .bc import BcModel
from .data import Dataset
from .errors import DimMismatch, InvalidDistribution, IoError, SpecMismatch

LOG_EPS = 1e-12


def attribute_continuous(action, predictions) -> tuple[int, np.ndarray]:
    """Per-cluster MSE scores; the attributed cluster is the argmin.

    Exact score ties resolve to the lowest cluster id.
    """
    action = np.asarray(action, dtype=np.float64)
    preds = np.asarray(predictions, dtype=np.float64)
    if action.ndim != 1:
        raise DimMismatch(f"action must be a vector, got shape {action.shape}")
    if preds.ndim != 2 or preds.shape[1] != action.shape[0]:
        raise DimMismatch(
            f"predictions must have shape (K, {action.shape[0]}), got {preds.shape}"
        )
    scores = ((preds - action) ** 2).mean(axis=1)
    return int(np.argmin(scores)), scores


def attribute_discrete(action: int, distributions, eps: float = LOG_EPS
                       ) -> tuple[int, np.ndarray]:
    """Negative log-likelihood of the taken action under each cluster model.

    Each row of ``distributions`` must be a probability vector; the epsilon
    floor keeps confidently wrong models at a finite score.
    """
    dists = np.asarray(distributions, dtype=np.float64)
    if dists.ndim != 2:
        raise DimMismatch(f"distributions must be 2-d, got shape {dists.shape}")
    if not (0 <= action < dists.shape[1]):
        raise DimMismatch(f"action {action} out of range [0, {dists.shape[1]})")
    row_sums = dists.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(dists < 0.0):
        raise InvalidDistribution(
            f"rows must be probability vectors summing to 1 (sums {row_sums})"
        )
    scores = -np.log(dists[:, action] + eps)
    return int(np.argmin(scores)), scores


@dataclass
class AttributionRecord:
    traj_index: int
    timestep: int
    action: np.ndarray | int
    scores: np.ndarray
    k_star: int


@dataclass
class AttributionResult:
    num_clusters: int
    cluster_ids: list[int]
    records: list[AttributionRecord] = field(default_factory=list)

    def to_csv(self, path, config_hash: str | None = None) -> None:
        try:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                if config_hash is not None:
                    fh.write(f"# config_hash={config_hash}\n")
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(
                    ["episode", "t", "action"]
                    + [f"score_{c}" for c in self.cluster_ids]
                    + ["k_star"]
                )
                for rec in self.records:
                    if isinstance(rec.action, np.ndarray):
                        action_repr = json.dumps(
                            [float(a) for a in rec.action], separators=(",", ":")
                        )
                    else:
                        action_repr = json.dumps(int(rec.action))
                    writer.writerow(
                        [rec.traj_index, rec.timestep, action_repr]
                        + [repr(float(s)) for s in rec.scores]
                        + [rec.k_star]
                    )
        except OSError as exc:
            raise IoError(f"cannot write attributions to {path!r}: {exc}") from exc


def sample_timesteps(ds: Dataset, n_episodes: int, n_actions: int, seed: int
                     ) -> list[tuple[int, int]]:
    """Deterministically sample (episode, timestep) pairs across the dataset.

    Picks up to ``n_episodes`` episodes without replacement, then up to
    ``n_actions`` timesteps pooled across them; returns fewer when the
    dataset is smaller than requested.
    """
    rng = np.random.default_rng([seed, 77])
    n_eps = min(n_episodes, len(ds.trajectories))
    episodes = rng.choice(len(ds.trajectories), size=n_eps, replace=False)
    pool = [(int(e), t) for e in sorted(episodes) for t in range(len(ds.trajectories[e]))]
    n_take = min(n_actions, len(pool))
    chosen = rng.choice(len(pool), size=n_take, replace=False)
    return [pool[i] for i in sorted(chosen)]


def attribute_dataset(policy: BcModel, cluster_models: dict[int, BcModel],
                      ds: Dataset, n_episodes: int = 20, n_actions: int = 200,
                      seed: int = 0) -> AttributionResult:
    """Attribute the policy's actions at sampled states to behavior clusters.

    Continuous: the policy's output vector is compared to every cluster
    model's output by MSE. Discrete: the policy's argmax class is scored by
    negative log-likelihood under each cluster model's action distribution.
    """
    if policy.obs_spec != ds.obs_spec or policy.act_spec != ds.act_spec:
        raise SpecMismatch("policy specs do not match the dataset")
    for cid, model in cluster_models.items():
        if model.obs_spec != ds.obs_spec or model.act_spec != ds.act_spec:
            raise SpecMismatch(f"cluster model {cid} specs do not match the dataset")
    cluster_ids = sorted(cluster_models)
    samples = sample_timesteps(ds, n_episodes, n_actions, seed)
    states = np.stack(
        [ds.trajectories[e].observations[t] for e, t in samples]
    )
    records = []
    if ds.act_spec.kind == "continuous":
        policy_actions = policy.predict(states)
        preds = np.stack([cluster_models[c].predict(states) for c in cluster_ids], axis=1)
        for i, (e, t) in enumerate(samples):
            k_star, scores = attribute_continuous(policy_actions[i], preds[i])
            records.append(
                AttributionRecord(traj_index=e, timestep=t, action=policy_actions[i],
                                  scores=scores, k_star=cluster_ids[k_star])
            )
    else:
        policy_classes = policy.predict_class(states)
        probas = np.stack(
            [cluster_models[c].predict_proba(states) for c in cluster_ids], axis=1
        )
        for i, (e, t) in enumerate(samples):
            k_star, scores = attribute_discrete(int(policy_classes[i]), probas[i])
            records.append(
                AttributionRecord(traj_index=e, timestep=t, action=int(policy_classes[i]),
                                  scores=scores, k_star=cluster_ids[k_star])
            )
    return AttributionResult(
        num_clusters=len(cluster_ids), cluster_ids=cluster_ids, records=records
    )
