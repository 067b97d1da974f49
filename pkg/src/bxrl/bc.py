"""Behavior-cloning models: one for the full dataset, one per cluster.

Vector observations get a 3-layer MLP; image observations get a 3-layer CNN
with global average pooling. Continuous actions are regressed with MSE,
discrete actions classified with cross-entropy.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Tensor
from .base import BaseEstimator, check_is_fitted
from .data import ActionSpec, ObservationSpec
from .errors import DivergenceError, EmptySegments, InvalidConfig, SpecMismatch
from .nn import CNN3, MLP3, Module


@dataclass
class BcConfig:
    hidden_dim: int = 64
    conv_channels: tuple[int, int, int] = (8, 16, 16)
    learning_rate: float = 1e-3
    batch_size: int = 64
    num_epochs: int = 60
    seed: int = 0
    min_samples_warn: int = 50

    def __post_init__(self):
        if self.hidden_dim < 1 or self.batch_size < 1 or self.num_epochs < 1:
            raise InvalidConfig("hidden_dim, batch_size, num_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be > 0")

    def to_json(self) -> dict:
        out = {f: getattr(self, f) for f in self.__dataclass_fields__}
        out["conv_channels"] = list(self.conv_channels)
        return out

    @staticmethod
    def from_json(obj: dict) -> "BcConfig":
        obj = dict(obj)
        if "conv_channels" in obj:
            obj["conv_channels"] = tuple(obj["conv_channels"])
        return BcConfig(**obj)


class BcModel(Module):
    """State -> action map; emits vectors (continuous) or logits (discrete)."""

    def __init__(self, obs_spec: ObservationSpec, act_spec: ActionSpec,
                 cfg: BcConfig, scope: str = "policy"):
        rng = np.random.default_rng([cfg.seed, 0])
        out_dim = act_spec.flat_dim
        if obs_spec.kind == "vector":
            self.net = MLP3(obs_spec.dim, cfg.hidden_dim, out_dim, rng)
            self.architecture = "mlp3"
        else:
            self.net = CNN3(obs_spec.channels, cfg.conv_channels, out_dim, rng)
            self.architecture = "cnn3"
        self.obs_spec = obs_spec
        self.act_spec = act_spec
        self.cfg = cfg
        self.scope = scope

    def forward(self, obs: np.ndarray) -> Tensor:
        return self.net(Tensor(obs))

    def predict(self, obs) -> np.ndarray:
        """Action vectors for continuous specs, class logits for discrete."""
        obs = self._check_obs(obs)
        return self.forward(obs).data

    def predict_proba(self, obs) -> np.ndarray:
        """Softmax action distribution; discrete specs only."""
        if self.act_spec.kind != "discrete":
            raise SpecMismatch("predict_proba requires a discrete action spec")
        logits = self.predict(obs)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict_class(self, obs) -> np.ndarray:
        if self.act_spec.kind != "discrete":
            raise SpecMismatch("predict_class requires a discrete action spec")
        return np.argmax(self.predict(obs), axis=1)

    def _check_obs(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=np.float64)
        expected = self.obs_spec.shape
        if obs.shape[1:] != expected:
            raise SpecMismatch(
                f"observation batch shape {obs.shape[1:]} != spec {expected}"
            )
        return obs


def train_bc(observations, actions, obs_spec: ObservationSpec, act_spec: ActionSpec,
             cfg: BcConfig | None = None, scope: str = "policy") -> BcModel:
    """Supervised fit of a cloning model; deterministic given ``cfg.seed``."""
    cfg = cfg or BcConfig()
    obs = np.asarray(observations, dtype=np.float64)
    n = len(obs)
    if n == 0:
        raise EmptySegments(f"no samples to train {scope!r} on")
    if n < cfg.min_samples_warn:
        warnings.warn(
            f"training {scope!r} on only {n} samples; results may be unreliable",
            stacklevel=2,
        )
    if act_spec.kind == "continuous":
        targets = np.asarray(actions, dtype=np.float64)
    else:
        targets = np.asarray(actions, dtype=np.int64)
    model = BcModel(obs_spec, act_spec, cfg, scope=scope)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, 1])
    for epoch in range(cfg.num_epochs):
        optimizer.lr = cfg.learning_rate * (1.0 - epoch / cfg.num_epochs)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            pred = model.forward(obs[idx])
            if act_spec.kind == "continuous":
                loss = ad.mse_loss(pred, Tensor(targets[idx]))
            else:
                loss = ad.cross_entropy_loss(pred, targets[idx])
            if not np.isfinite(loss.data):
                raise DivergenceError(f"loss became non-finite training {scope!r}")
            optimizer.zero_grad()
            ad.backward(loss)
            optimizer.step()
    return model


def cluster_segments(ds, labels: list[np.ndarray]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Group (observation, action) pairs by per-timestep cluster label."""
    if len(labels) != len(ds.trajectories):
        raise SpecMismatch(
            f"got labels for {len(labels)} trajectories, dataset has {len(ds.trajectories)}"
        )
    flat_obs, flat_act, flat_lab = [], [], []
    for traj, lab in zip(ds.trajectories, labels):
        if len(lab) != len(traj):
            raise SpecMismatch("label sequence length != trajectory length")
        flat_obs.append(traj.observations)
        flat_act.append(traj.actions)
        flat_lab.append(np.asarray(lab, dtype=np.int64))
    obs = np.concatenate(flat_obs)
    act = np.concatenate(flat_act)
    lab = np.concatenate(flat_lab)
    return {
        int(c): (obs[lab == c], act[lab == c])
        for c in np.unique(lab)
    }


def train_cluster_models(ds, labels: list[np.ndarray], cfg: BcConfig | None = None
                         ) -> tuple[BcModel, dict[int, BcModel]]:
    """Train the full-dataset policy plus one model per cluster label.

    Each model gets its own seed stream so the trainings are independent.
    """
    cfg = cfg or BcConfig()
    segments = cluster_segments(ds, labels)
    all_obs = np.concatenate([traj.observations for traj in ds.trajectories])
    all_act = np.concatenate([traj.actions for traj in ds.trajectories])
    policy = train_bc(all_obs, all_act, ds.obs_spec, ds.act_spec, cfg, scope="policy")
    models = {}
    for cluster_id in sorted(segments):
        obs, act = segments[cluster_id]
        cluster_cfg = replace(cfg, seed=cfg.seed + 1 + cluster_id)
        models[cluster_id] = train_bc(
            obs, act, ds.obs_spec, ds.act_spec, cluster_cfg,
            scope=f"cluster_{cluster_id}",
        )
    return policy, models


class BehaviorCloner(BaseEstimator):
    """Estimator facade over ``train_bc`` with sklearn fit/predict semantics."""

    def __init__(self, action_spec: ActionSpec | None = None, hidden_dim: int = 64,
                 conv_channels: tuple[int, int, int] = (8, 16, 16),
                 learning_rate: float = 1e-3, batch_size: int = 64,
                 num_epochs: int = 60, seed: int = 0):
        self.action_spec = action_spec
        self.hidden_dim = hidden_dim
        self.conv_channels = conv_channels
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.num_epochs = num_epochs
        self.seed = seed

    def _config(self) -> BcConfig:
        return BcConfig(
            hidden_dim=self.hidden_dim,
            conv_channels=tuple(self.conv_channels),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            num_epochs=self.num_epochs,
            seed=self.seed,
        )

    def fit(self, X, y):
        if self.action_spec is None:
            raise InvalidConfig("BehaviorCloner needs action_spec before fit")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            obs_spec = ObservationSpec(kind="vector", dim=X.shape[1])
        elif X.ndim == 4:
            obs_spec = ObservationSpec(
                kind="image", channels=X.shape[1], height=X.shape[2], width=X.shape[3]
            )
        else:
            raise SpecMismatch(f"observations must be 2-d or 4-d, got shape {X.shape}")
        self.model_ = train_bc(X, y, obs_spec, self.action_spec, self._config())
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        if self.action_spec.kind == "discrete":
            return self.model_.predict_class(X)
        return self.model_.predict(X)

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(X)
