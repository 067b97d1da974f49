"""Causal transformer sequence autoencoder with a vector-quantized bottleneck.

The encoder reads (observation, action) windows and emits one latent per
timestep, snapped to the nearest entry of a learned codebook; the decoder
predicts the next observation from past inputs and codes. Trained on offline
trajectories, the per-timestep code indices become discrete behavior tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Adam, Parameter, Tensor
from .base import BaseEstimator, check_is_fitted
from .data import ActionSpec, Dataset, ObservationSpec
from .errors import DimMismatch, DivergenceError, InvalidConfig, SpecMismatch
from .nn import LayerNorm, Linear, Module, TransformerBlock, causal_mask, sinusoidal_positions


@dataclass
class TrainConfig:
    """Hyperparameters for one training run; validated on construction."""

    num_codes: int = 16
    embed_dim: int = 32
    code_dim: int = 8
    num_layers: int = 2
    num_heads: int = 2
    seq_len: int = 20
    learning_rate: float = 5e-4
    batch_size: int = 16
    num_epochs: int = 60
    vq_loss_weight: float = 0.25
    teacher_forcing_start: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_codes < 2:
            raise InvalidConfig(f"num_codes must be >= 2, got {self.num_codes}")
        if self.code_dim < 1:
            raise InvalidConfig(f"code_dim must be >= 1, got {self.code_dim}")
        if self.seq_len < 2:
            raise InvalidConfig(f"seq_len must be >= 2, got {self.seq_len}")
        if self.vq_loss_weight <= 0:
            raise InvalidConfig(f"vq_loss_weight must be > 0, got {self.vq_loss_weight}")
        if not 0.0 <= self.teacher_forcing_start <= 1.0:
            raise InvalidConfig("teacher_forcing_start must be in [0, 1]")
        for name in ("embed_dim", "num_layers", "num_heads", "batch_size", "num_epochs"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.embed_dim % self.num_heads != 0:
            raise InvalidConfig(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}"
            )

    def to_json(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        return TrainConfig(**obj)

    def lr_at(self, epoch: int) -> float:
        """Linear learning-rate decay over epochs."""
        return self.learning_rate * (1.0 - epoch / self.num_epochs)

    def teacher_forcing_at(self, epoch: int) -> float:
        """Probability of feeding ground truth to the decoder; decays to 0."""
        if self.num_epochs == 1:
            return 0.0
        return self.teacher_forcing_start * max(0.0, 1.0 - epoch / (self.num_epochs - 1))


@dataclass(frozen=True)
class Codebook:
    """Learned code vectors; row i is the latent vector behind token i."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] < 2:
            raise InvalidConfig(f"codebook must be (N >= 2, dim), got {codes.shape}")
        if not np.all(np.isfinite(codes)):
            raise InvalidConfig("codebook contains non-finite values")
        object.__setattr__(self, "codes", codes)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]


def _code_matrix(codes) -> np.ndarray:
    if isinstance(codes, Codebook):
        return codes.codes
    return np.asarray(codes, dtype=np.float64)


@dataclass
class TokenSequence:
    """Per-timestep codebook indices for one trajectory."""

    traj_index: int
    tokens: np.ndarray

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)

    def __len__(self):
        return len(self.tokens)


@dataclass
class TrainingCurve:
    recon: list[float] = field(default_factory=list)
    vq: list[float] = field(default_factory=list)
    occupancy: list[float] = field(default_factory=list)
    final_occupancy: float = 0.0


def nearest_code(z, codes) -> tuple[int, np.ndarray]:
    """Index and vector of the code nearest to ``z`` in squared Euclidean
    distance; ties go to the lowest index."""
    z = np.asarray(z, dtype=np.float64)
    codes = _code_matrix(codes)
    if z.shape != (codes.shape[1],):
        raise DimMismatch(
            f"latent has shape {z.shape}, codebook entries have dim {codes.shape[1]}"
        )
    dist = ((codes - z) ** 2).sum(axis=1)
    idx = int(np.argmin(dist))
    return idx, codes[idx].copy()


def assign_codes(z: np.ndarray, codes) -> np.ndarray:
    """Vectorized nearest-code assignment for a (..., D) latent array."""
    codes = _code_matrix(codes)
    if z.shape[-1] != codes.shape[1]:
        raise DimMismatch(
            f"latents have dim {z.shape[-1]}, codebook entries have dim {codes.shape[1]}"
        )
    dist = ((z[..., None, :] - codes) ** 2).sum(axis=-1)
    return np.argmin(dist, axis=-1)


def vq_loss(z: Tensor, code: Tensor) -> Tensor:
    """Two-sided quantization objective with stop-gradients.

    ``|z - sg(code)|^2`` trains the encoder toward its selected code;
    ``|sg(z) - code|^2`` trains the code toward the encoder output. The
    decoder path bypasses this entirely via the straight-through estimator.
    """
    if z.data.shape != code.data.shape:
        raise DimMismatch(f"shape mismatch {z.data.shape} vs {code.data.shape}")
    commit = ad.sub(z, ad.stop_gradient(code))
    codeb = ad.sub(ad.stop_gradient(z), code)
    return ad.add(
        ad.tsum(ad.mul(commit, commit)),
        ad.tsum(ad.mul(codeb, codeb)),
    )


def codebook_occupancy(assignment_history, num_codes: int) -> float:
    """Fraction of codes used at least once across an assignment history."""
    history = list(assignment_history)
    if not history:
        raise InvalidConfig("assignment history is empty")
    used = np.zeros(num_codes, dtype=bool)
    for assignment in history:
        used[np.asarray(assignment, dtype=np.int64).reshape(-1)] = True
    return float(used.sum()) / num_codes


@dataclass
class _Windows:
    """Non-overlapping fixed-length slices of every trajectory, zero-padded."""

    obs: np.ndarray          # (W, T, d_obs) observations, flattened per step
    act: np.ndarray          # (W, T, d_act) actions, one-hot if discrete
    target: np.ndarray       # (W, T, d_obs) next observation, where defined
    loss_mask: np.ndarray    # (W, T) 1.0 where a next-observation target exists
    token_mask: np.ndarray   # (W, T) True where the timestep is real
    traj_index: np.ndarray   # (W,)
    start: np.ndarray        # (W,)


def _encode_actions(actions: np.ndarray, act_spec: ActionSpec) -> np.ndarray:
    if act_spec.kind == "continuous":
        return np.asarray(actions, dtype=np.float64)
    onehot = np.zeros((len(actions), act_spec.num_classes))
    onehot[np.arange(len(actions)), np.asarray(actions, dtype=np.int64)] = 1.0
    return onehot


def slice_windows(ds: Dataset, seq_len: int) -> _Windows:
    obs_dim = ds.obs_spec.flat_dim
    act_dim = ds.act_spec.flat_dim
    obs_w, act_w, tgt_w, lmask, tmask, tids, starts = [], [], [], [], [], [], []
    for ti, traj in enumerate(ds.trajectories):
        flat_obs = traj.observations.reshape(len(traj), obs_dim)
        flat_act = _encode_actions(traj.actions, ds.act_spec)
        n = len(traj)
        for start in range(0, n, seq_len):
            length = min(seq_len, n - start)
            o = np.zeros((seq_len, obs_dim))
            a = np.zeros((seq_len, act_dim))
            t = np.zeros((seq_len, obs_dim))
            lm = np.zeros(seq_len)
            tm = np.zeros(seq_len, dtype=bool)
            o[:length] = flat_obs[start : start + length]
            a[:length] = flat_act[start : start + length]
            tm[:length] = True
            n_targets = min(length, n - start - 1)
            if n_targets > 0:
                t[:n_targets] = flat_obs[start + 1 : start + 1 + n_targets]
                lm[:n_targets] = 1.0
            obs_w.append(o)
            act_w.append(a)
            tgt_w.append(t)
            lmask.append(lm)
            tmask.append(tm)
            tids.append(ti)
            starts.append(start)
    return _Windows(
        obs=np.asarray(obs_w),
        act=np.asarray(act_w),
        target=np.asarray(tgt_w),
        loss_mask=np.asarray(lmask),
        token_mask=np.asarray(tmask),
        traj_index=np.asarray(tids, dtype=np.int64),
        start=np.asarray(starts, dtype=np.int64),
    )


class VQVAE(Module):
    """Encoder, codebook, and decoder stacks sharing one embedding width."""

    def __init__(self, obs_spec: ObservationSpec, act_spec: ActionSpec, cfg: TrainConfig):
        rng = np.random.default_rng([cfg.seed, 0])
        d = cfg.embed_dim
        self.obs_embed = Linear(obs_spec.flat_dim, d, rng)
        self.act_embed = Linear(act_spec.flat_dim, d, rng)
        self.encoder = [TransformerBlock(d, cfg.num_heads, rng) for _ in range(cfg.num_layers)]
        self.enc_norm = LayerNorm(d)
        # Quantization happens in a narrow projected subspace: the projection
        # has to spend its few dimensions on what reconstruction actually
        # needs, which keeps nuisance directions out of the codebook.
        self.to_code = Linear(d, cfg.code_dim, rng)
        self.codebook = Parameter(
            rng.normal(0.0, 1.0, size=(cfg.num_codes, cfg.code_dim)), name="codebook"
        )
        self.from_code = Linear(cfg.code_dim, d, rng)
        self.dec_embed = Linear(obs_spec.flat_dim, d, rng)
        self.decoder = [TransformerBlock(d, cfg.num_heads, rng) for _ in range(cfg.num_layers)]
        self.dec_norm = LayerNorm(d)
        self.head = Linear(d, obs_spec.flat_dim, rng)
        self.obs_spec = obs_spec
        self.act_spec = act_spec
        self.cfg = cfg
        self._positions = sinusoidal_positions(cfg.seq_len, d)
        self._mask = causal_mask(cfg.seq_len)

    def get_codebook(self) -> Codebook:
        return Codebook(codes=self.codebook.data.copy())

    def encode(self, obs: np.ndarray, act: np.ndarray) -> Tensor:
        """(B, T, d_obs), (B, T, d_act) -> latent (B, T, D); causal.

        The encoder carries no positional encodings: a behavior should map to
        the same token wherever it sits inside a window, and causal masking
        already fixes the temporal direction. The decoder, which must lay out
        its predictions along the sequence, does use them.
        """
        t = obs.shape[1]
        x = ad.add(self.obs_embed(Tensor(obs)), self.act_embed(Tensor(act)))
        mask = self._mask[:t, :t]
        for block in self.encoder:
            x = block(x, mask)
        return self.to_code(self.enc_norm(x))

    def quantize(self, z: Tensor) -> tuple[np.ndarray, Tensor, Tensor]:
        """Snap latents to nearest codes.

        Returns (indices, selected code tensor, straight-through tensor whose
        forward value is the code but whose gradient flows to the encoder).
        """
        indices = assign_codes(z.data, self.codebook.data)
        codes = ad.embedding_lookup(self.codebook, indices)
        straight_through = ad.add(z, ad.stop_gradient(ad.sub(codes, z)))
        return indices, codes, straight_through

    def decode(self, prev_obs: np.ndarray, quantized: Tensor) -> Tensor:
        """Predict the next observation at every position from the past."""
        t = prev_obs.shape[1]
        h = ad.add(
            ad.add(self.dec_embed(Tensor(prev_obs)), self.from_code(quantized)),
            Tensor(self._positions[:t]),
        )
        mask = self._mask[:t, :t]
        for block in self.decoder:
            h = block(h, mask)
        return self.head(self.dec_norm(h))

    def sequence_losses(self, windows: _Windows, batch_idx: np.ndarray,
                        teacher_forcing: float, rng: np.random.Generator | None
                        ) -> tuple[Tensor, Tensor, Tensor, np.ndarray]:
        """Build (total, recon, vq) loss tensors for one batch of windows.

        ``teacher_forcing`` is the probability of feeding the true previous
        observation to the decoder; otherwise the decoder sees its own
        (detached) first-pass prediction. ``rng=None`` forces pure teacher
        forcing, used for evaluation.
        """
        obs = windows.obs[batch_idx]
        act = windows.act[batch_idx]
        target = windows.target[batch_idx]
        loss_mask = windows.loss_mask[batch_idx]
        token_mask = windows.token_mask[batch_idx]

        z = self.encode(obs, act)
        indices, codes, straight_through = self.quantize(z)

        # Per-element normalization keeps the quantization and reconstruction
        # terms on the same scale, so vq_loss_weight=1 is a balanced default.
        n_latents = max(1, int(token_mask.sum())) * self.cfg.code_dim
        tok = token_mask.astype(np.float64)[:, :, None]
        commit = ad.sub(z, ad.stop_gradient(codes))
        codeb = ad.sub(ad.stop_gradient(z), codes)
        vq = ad.scale(
            ad.add(
                ad.tsum(ad.mul(ad.mul(commit, commit), Tensor(tok))),
                ad.tsum(ad.mul(ad.mul(codeb, codeb), Tensor(tok))),
            ),
            1.0 / n_latents,
        )

        prev = obs
        if rng is not None and teacher_forcing < 1.0:
            # Scheduled sampling: the "predicted" branch must not leak ground
            # truth, so the first pass decodes from the quantized codes alone.
            # As teacher forcing decays to zero the decoder is driven entirely
            # through the bottleneck, which is what keeps the codes in use.
            first_pass = self.decode(np.zeros_like(obs), straight_through)
            rolled = np.concatenate([obs[:, :1], first_pass.data[:, :-1]], axis=1)
            use_truth = rng.random(loss_mask.shape) < teacher_forcing
            use_truth[:, 0] = True
            prev = np.where(use_truth[:, :, None], obs, rolled)
        pred = self.decode(prev, straight_through)

        n_targets = max(1, int(loss_mask.sum())) * self.obs_spec.flat_dim
        diff = ad.sub(pred, Tensor(target))
        recon = ad.scale(
            ad.tsum(ad.mul(ad.mul(diff, diff), Tensor(loss_mask[:, :, None]))),
            1.0 / n_targets,
        )
        total = ad.add(recon, ad.scale(vq, self.cfg.vq_loss_weight))
        return total, recon, vq, indices


def _init_codebook_from_latents(model: VQVAE, windows: _Windows,
                                rng: np.random.Generator) -> None:
    """Seed codes from untrained-encoder latents so every code starts inside
    the populated region of latent space (prevents early index collapse)."""
    cap = min(len(windows.obs), 8 * model.cfg.batch_size)
    z = model.encode(windows.obs[:cap], windows.act[:cap])
    latents = z.data[windows.token_mask[:cap]]
    n = model.cfg.num_codes
    if len(latents) >= n:
        sel = rng.choice(len(latents), size=n, replace=False)
        model.codebook.data = latents[sel].copy()


def train_vqvae(ds: Dataset, cfg: TrainConfig) -> tuple[VQVAE, TrainingCurve]:
    """Train a tokenizer on a dataset; deterministic given ``cfg.seed``."""
    model = VQVAE(ds.obs_spec, ds.act_spec, cfg)
    windows = slice_windows(ds, cfg.seq_len)
    n_windows = len(windows.obs)
    if n_windows == 0:
        raise InvalidConfig("dataset produced no training windows")
    rng = np.random.default_rng([cfg.seed, 1])
    _init_codebook_from_latents(model, windows, rng)
    optimizer = Adam(model.parameters(), lr=cfg.learning_rate)
    curve = TrainingCurve()
    step_usage: list[np.ndarray] = []

    for epoch in range(cfg.num_epochs):
        optimizer.lr = cfg.lr_at(epoch)
        tf_prob = cfg.teacher_forcing_at(epoch)
        order = rng.permutation(n_windows)
        epoch_recon, epoch_vq, batches = 0.0, 0.0, 0
        for lo in range(0, n_windows, cfg.batch_size):
            batch_idx = order[lo : lo + cfg.batch_size]
            total, recon, vq, indices = model.sequence_losses(
                windows, batch_idx, tf_prob, rng
            )
            if not np.isfinite(total.data):
                raise DivergenceError(
                    f"loss became non-finite at epoch {epoch}, step {batches}"
                )
            optimizer.zero_grad()
            ad.backward(total)
            optimizer.step()
            used = indices[windows.token_mask[batch_idx]]
            step_usage.append(np.unique(used))
            epoch_recon += float(recon.data)
            epoch_vq += float(vq.data)
            batches += 1
        curve.recon.append(epoch_recon / batches)
        curve.vq.append(epoch_vq / batches)
        tail = step_usage[-max(1, len(step_usage) // 10):]
        curve.occupancy.append(codebook_occupancy(tail, cfg.num_codes))

    tail = step_usage[-max(1, (len(step_usage) + 9) // 10):]
    curve.final_occupancy = codebook_occupancy(tail, cfg.num_codes)
    return model, curve


def tokenize(model: VQVAE, ds: Dataset) -> list[TokenSequence]:
    """Assign one codebook token to every timestep of every trajectory."""
    if ds.obs_spec != model.obs_spec or ds.act_spec != model.act_spec:
        raise SpecMismatch(
            "dataset specs do not match the specs the model was trained with"
        )
    windows = slice_windows(ds, model.cfg.seq_len)
    all_tokens = [np.empty(len(t), dtype=np.int64) for t in ds.trajectories]
    bsz = model.cfg.batch_size
    for lo in range(0, len(windows.obs), bsz):
        sl = slice(lo, lo + bsz)
        z = model.encode(windows.obs[sl], windows.act[sl])
        indices = assign_codes(z.data, model.codebook.data)
        for w in range(indices.shape[0]):
            ti = windows.traj_index[lo + w]
            start = windows.start[lo + w]
            real = windows.token_mask[lo + w]
            length = int(real.sum())
            all_tokens[ti][start : start + length] = indices[w, :length]
    return [TokenSequence(traj_index=i, tokens=t) for i, t in enumerate(all_tokens)]


def normalized_recon_loss(model: VQVAE, ds: Dataset) -> float:
    """Reconstruction MSE over target variance, decoding through the codes.

    Evaluation runs in the zero-teacher-forcing regime the schedule ends at:
    the decoder state inputs are its own code-only predictions (the true
    initial observation only anchors position 0), so the score reflects what
    the discrete latents encode rather than what the state feedback leaks.
    1.0 means no better than predicting the dataset mean; 0 means perfect.
    """
    if ds.obs_spec != model.obs_spec or ds.act_spec != model.act_spec:
        raise SpecMismatch(
            "dataset specs do not match the specs the model was trained with"
        )
    windows = slice_windows(ds, model.cfg.seq_len)
    bsz = model.cfg.batch_size
    sq_sum = np.zeros(model.obs_spec.flat_dim)
    n_valid = 0
    for lo in range(0, len(windows.obs), bsz):
        sl = slice(lo, lo + bsz)
        obs = windows.obs[sl]
        z = model.encode(obs, windows.act[sl])
        _, _, straight_through = model.quantize(z)
        first_pass = model.decode(np.zeros_like(obs), straight_through)
        prev = np.concatenate([obs[:, :1], first_pass.data[:, :-1]], axis=1)
        pred = model.decode(prev, straight_through)
        mask = windows.loss_mask[sl].astype(bool)
        err = pred.data[mask] - windows.target[sl][mask]
        sq_sum += (err**2).sum(axis=0)
        n_valid += int(mask.sum())
    mse_per_dim = sq_sum / max(1, n_valid)
    mask_all = windows.loss_mask.astype(bool)
    targets = windows.target[mask_all]
    var_per_dim = targets.var(axis=0)
    num = float(mse_per_dim.mean())
    den = float(var_per_dim.mean())
    if den == 0.0:
        return 0.0 if num < 1e-12 else float("inf")
    return num / den


class VQVAETokenizer(BaseEstimator):
    """Estimator facade: ``fit`` trains the autoencoder, ``transform`` emits
    per-timestep behavior tokens."""

    def __init__(self, num_codes: int = 16, embed_dim: int = 32, code_dim: int = 8,
                 num_layers: int = 2, num_heads: int = 2, seq_len: int = 20,
                 learning_rate: float = 5e-4, batch_size: int = 16,
                 num_epochs: int = 60, vq_loss_weight: float = 0.25,
                 teacher_forcing_start: float = 1.0, seed: int = 0):
        self.num_codes = num_codes
        self.embed_dim = embed_dim
        self.code_dim = code_dim
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.seq_len = seq_len
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.num_epochs = num_epochs
        self.vq_loss_weight = vq_loss_weight
        self.teacher_forcing_start = teacher_forcing_start
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params(deep=False))

    def fit(self, dataset: Dataset, y=None):
        self.model_, self.curve_ = train_vqvae(dataset, self._config())
        return self

    def transform(self, dataset: Dataset) -> list[TokenSequence]:
        check_is_fitted(self, "model_")
        return tokenize(self.model_, dataset)

    def fit_transform(self, dataset: Dataset, y=None) -> list[TokenSequence]:
        return self.fit(dataset).transform(dataset)

    @property
    def codebook_(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.codebook.data.copy()
