"""Trajectory dataset types and the on-disk JSON Lines format.

A dataset file is UTF-8 JSON Lines. The first line is a header object
``{"version": 1, "obs_spec": ..., "act_spec": ..., "name": ...}`` (plus an
optional ``config_hash`` written by the CLI); every following line is one
episode ``{"observations": [[...], ...], "actions": [...],
"mode_labels": [...]?}``. Floats are serialized with full round-trip
precision, keys sorted, so re-serialization of a loaded dataset is
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataset, InvalidConfig, IoError, ParseError, SpecMismatch

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ObservationSpec:
    """Shape contract for per-timestep observations."""

    kind: str  # "vector" or "image"
    dim: int | None = None
    height: int | None = None
    width: int | None = None
    channels: int | None = None

    def __post_init__(self):
        if self.kind == "vector":
            if self.dim is None or self.dim < 1:
                raise InvalidConfig(f"vector observation needs dim >= 1, got {self.dim}")
        elif self.kind == "image":
            if not all(
                isinstance(v, int) and v >= 1
                for v in (self.height, self.width, self.channels)
            ):
                raise InvalidConfig(
                    "image observation needs positive height/width/channels"
                )
            if self.channels not in (1, 3):
                raise InvalidConfig(f"image channels must be 1 or 3, got {self.channels}")
        else:
            raise InvalidConfig(f"unknown observation kind {self.kind!r}")

    @property
    def shape(self) -> tuple[int, ...]:
        if self.kind == "vector":
            return (self.dim,)
        return (self.channels, self.height, self.width)

    @property
    def flat_dim(self) -> int:
        return int(np.prod(self.shape))

    def to_json(self) -> dict:
        if self.kind == "vector":
            return {"kind": "vector", "dim": self.dim}
        return {
            "kind": "image",
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
        }

    @staticmethod
    def from_json(obj: dict) -> "ObservationSpec":
        kind = obj.get("kind")
        if kind == "vector":
            return ObservationSpec(kind="vector", dim=obj.get("dim"))
        if kind == "image":
            return ObservationSpec(
                kind="image",
                height=obj.get("height"),
                width=obj.get("width"),
                channels=obj.get("channels"),
            )
        raise ParseError(f"unknown observation kind {kind!r}")


@dataclass(frozen=True)
class ActionSpec:
    """Shape contract for per-timestep actions."""

    kind: str  # "continuous" or "discrete"
    dim: int | None = None  # continuous action dimension
    num_classes: int | None = None  # discrete class count

    def __post_init__(self):
        if self.kind == "continuous":
            if self.dim is None or self.dim < 1:
                raise InvalidConfig(f"continuous action needs dim >= 1, got {self.dim}")
        elif self.kind == "discrete":
            if self.num_classes is None or self.num_classes < 2:
                raise InvalidConfig(
                    f"discrete action needs num_classes >= 2, got {self.num_classes}"
                )
        else:
            raise InvalidConfig(f"unknown action kind {self.kind!r}")

    @property
    def flat_dim(self) -> int:
        """Width of the action once encoded for a model (one-hot if discrete)."""
        return self.dim if self.kind == "continuous" else self.num_classes

    def to_json(self) -> dict:
        if self.kind == "continuous":
            return {"kind": "continuous", "dim": self.dim}
        return {"kind": "discrete", "num_classes": self.num_classes}

    @staticmethod
    def from_json(obj: dict) -> "ActionSpec":
        kind = obj.get("kind")
        if kind == "continuous":
            return ActionSpec(kind="continuous", dim=obj.get("dim"))
        if kind == "discrete":
            return ActionSpec(kind="discrete", num_classes=obj.get("num_classes"))
        raise ParseError(f"unknown action kind {kind!r}")


@dataclass
class Trajectory:
    """One episode of aligned (observation, action) pairs.

    ``mode_labels`` carries planted ground-truth behavior ids on synthetic
    data; it is only ever read by evaluation code, never by the pipeline.
    """

    observations: np.ndarray
    actions: np.ndarray
    mode_labels: np.ndarray | None = None

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float64)
        if self.mode_labels is not None:
            self.mode_labels = np.asarray(self.mode_labels, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.observations)

    def validate(self, obs_spec: ObservationSpec, act_spec: ActionSpec) -> None:
        n = len(self.observations)
        if n < 2:
            raise SpecMismatch(f"trajectory must have length >= 2, got {n}")
        if len(self.actions) != n:
            raise SpecMismatch(
                f"observations/actions length mismatch: {n} vs {len(self.actions)}"
            )
        if self.observations.shape[1:] != obs_spec.shape:
            raise SpecMismatch(
                f"observation shape {self.observations.shape[1:]} does not match "
                f"spec {obs_spec.shape}"
            )
        if not np.all(np.isfinite(self.observations)):
            raise SpecMismatch("observations contain non-finite values")
        if act_spec.kind == "continuous":
            if self.actions.ndim != 2 or self.actions.shape[1] != act_spec.dim:
                raise SpecMismatch(
                    f"continuous actions must have shape (T, {act_spec.dim}), "
                    f"got {self.actions.shape}"
                )
            if not np.all(np.isfinite(self.actions)):
                raise SpecMismatch("actions contain non-finite values")
        else:
            if self.actions.ndim != 1:
                raise SpecMismatch(
                    f"discrete actions must be 1-d class indices, got shape "
                    f"{self.actions.shape}"
                )
            if self.actions.min() < 0 or self.actions.max() >= act_spec.num_classes:
                raise SpecMismatch(
                    f"discrete actions out of range [0, {act_spec.num_classes})"
                )
        if self.mode_labels is not None and len(self.mode_labels) != n:
            raise SpecMismatch(
                f"mode_labels length {len(self.mode_labels)} != episode length {n}"
            )

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if not np.array_equal(self.observations, other.observations):
            return False
        if not np.array_equal(self.actions, other.actions):
            return False
        if (self.mode_labels is None) != (other.mode_labels is None):
            return False
        if self.mode_labels is not None and not np.array_equal(
            self.mode_labels, other.mode_labels
        ):
            return False
        return True


@dataclass
class Dataset:
    """A named collection of trajectories sharing one (obs, act) spec pair."""

    obs_spec: ObservationSpec
    act_spec: ActionSpec
    trajectories: list[Trajectory] = field(default_factory=list)
    name: str = "dataset"
    config_hash: str | None = None

    def __post_init__(self):
        if not self.trajectories:
            raise EmptyDataset(f"dataset {self.name!r} has no trajectories")
        for traj in self.trajectories:
            traj.validate(self.obs_spec, self.act_spec)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def num_timesteps(self) -> int:
        return sum(len(t) for t in self.trajectories)

    @property
    def has_mode_labels(self) -> bool:
        return all(t.mode_labels is not None for t in self.trajectories)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.obs_spec == other.obs_spec
            and self.act_spec == other.act_spec
            and self.name == other.name
            and self.config_hash == other.config_hash
            and self.trajectories == other.trajectories
        )


def _dumps(obj) -> str:
    # Canonical form: sorted keys, no whitespace, round-trip float repr.
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _episode_to_json(traj: Trajectory, act_spec: ActionSpec) -> dict:
    obj = {"observations": traj.observations.tolist()}
    if act_spec.kind == "continuous":
        obj["actions"] = traj.actions.tolist()
    else:
        obj["actions"] = [int(a) for a in traj.actions]
    if traj.mode_labels is not None:
        obj["mode_labels"] = [int(m) for m in traj.mode_labels]
    return obj


def _episode_from_json(obj: dict, act_spec: ActionSpec, line_no: int) -> Trajectory:
    try:
        observations = np.asarray(obj["observations"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"line {line_no}: bad observations: {exc}") from exc
    try:
        if act_spec.kind == "continuous":
            actions = np.asarray(obj["actions"], dtype=np.float64)
        else:
            actions = np.asarray(obj["actions"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"line {line_no}: bad actions: {exc}") from exc
    mode_labels = obj.get("mode_labels")
    if mode_labels is not None:
        mode_labels = np.asarray(mode_labels, dtype=np.int64)
    return Trajectory(observations=observations, actions=actions, mode_labels=mode_labels)


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` to ``path`` in the canonical JSON Lines format."""
    header = {
        "version": FORMAT_VERSION,
        "obs_spec": ds.obs_spec.to_json(),
        "act_spec": ds.act_spec.to_json(),
        "name": ds.name,
    }
    if ds.config_hash is not None:
        header["config_hash"] = ds.config_hash
    lines = [_dumps(header)]
    lines.extend(_dumps(_episode_to_json(t, ds.act_spec)) for t in ds.trajectories)
    text = "\n".join(lines) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write dataset to {path!r}: {exc}") from exc


def load_dataset(path) -> Dataset:
    """Load a JSON Lines dataset, validating every invariant."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read dataset from {path!r}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}: empty file, expected a header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"line 1: malformed header: {exc}") from exc
    if not isinstance(header, dict):
        raise ParseError("line 1: header must be a JSON object")
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(
            f"line 1: unsupported dataset version {header.get('version')!r}"
        )
    try:
        obs_spec = ObservationSpec.from_json(header["obs_spec"])
        act_spec = ActionSpec.from_json(header["act_spec"])
    except (KeyError, TypeError, InvalidConfig) as exc:
        raise ParseError(f"line 1: bad header specs: {exc}") from exc

    trajectories = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {i}: malformed episode: {exc}") from exc
        traj = _episode_from_json(obj, act_spec, i)
        traj.validate(obs_spec, act_spec)
        trajectories.append(traj)
    if not trajectories:
        raise EmptyDataset(f"{path}: no episodes after header")
    return Dataset(
        obs_spec=obs_spec,
        act_spec=act_spec,
        trajectories=trajectories,
        name=header.get("name", "dataset"),
        config_hash=header.get("config_hash"),
    )
