"""Run configuration files and content hashing for artifact provenance."""

from __future__ import annotations

import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .bc import BcConfig
from .errors import InvalidConfig, IoError, ParseError
from .vqvae import TrainConfig


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable hex digest of any JSON-serializable configuration object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def file_sha256(path) -> str:
    try:
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()
    except OSError as exc:
        raise IoError(f"cannot hash {path!r}: {exc}") from exc


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config from {path!r}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: bad TOML: {exc}") from exc


def train_config_from(section: dict) -> TrainConfig:
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise InvalidConfig(f"unknown vqvae config keys: {sorted(unknown)}")
    try:
        return TrainConfig(**section)
    except TypeError as exc:
        raise InvalidConfig(f"bad vqvae config: {exc}") from exc


def bc_config_from(section: dict) -> BcConfig:
    section = dict(section)
    if "conv_channels" in section:
        section["conv_channels"] = tuple(section["conv_channels"])
    known = set(BcConfig.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise InvalidConfig(f"unknown bc config keys: {sorted(unknown)}")
    try:
        return BcConfig(**section)
    except TypeError as exc:
        raise InvalidConfig(f"bad bc config: {exc}") from exc
