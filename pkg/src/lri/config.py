"""Experiment configuration and persisted run records.

Config files are flat ``key = value`` text; every key mirrors an
:class:`ExperimentConfig` field and CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, RecordParseError

METHODS = ("erm", "lri-bernoulli", "lri-gaussian", "gradgeo", "gradgam")
TRAINABLE_METHODS = ("erm", "lri-bernoulli", "lri-gaussian")


@dataclass
class ExperimentConfig:
    """Every knob of a run. Defaults are the desk-scale training protocol."""

    method: str = "erm"
    k: int = 5
    layers: int = 4
    hidden_size: int = 64
    dropout: float = 0.2
    epochs: int = 60
    pretrain_epochs: int = 40
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 128
    beta: float = 0.1
    alpha: float = 0.5
    temperature: float = 1.0
    rescale_c: float | None = None        # None: choose from rescale_percentile
    rescale_percentile: float = 10.0
    expansion: float = 1.5
    seed: int = 0
    aggregation: str = "mean"             # message aggregation; pooling is always sum
    soft_graph: bool = True               # LRI-Gaussian graph reconstruction (ablation flag)
    shared_encoder: bool = True
    mask_pooling: bool = True             # full point-removal semantics vs message-only
    covariance_2d: bool = False           # in-plane 2x2 covariance head (fine-grained runs)
    geometric_moments: bool = False       # interpreter head also sees local scatter moments
    phi: str = "learned"                  # edge-weight map: learned | analytic
    phi_length_scale: float | None = None  # analytic variant; None: median knn distance
    smooth: str = "none"                  # none | neighborhood
    point_features: str = "raw"           # raw | unit-position (r/|r| replaces X)
    dtype: str = "float32"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.layers < 1:
            raise ConfigError("layer count must be >= 1")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if not 0.5 <= self.alpha < 1:
            raise ConfigError("alpha must lie in [0.5, 1)")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.expansion < 1:
            raise ConfigError("neighbor expansion factor must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 1 or not 0 <= self.pretrain_epochs <= self.epochs:
            raise ConfigError("need epochs >= 1 and 0 <= pretrain_epochs <= epochs")
        if self.aggregation not in ("sum", "mean"):
            raise ConfigError("aggregation must be 'sum' or 'mean'")
        if self.phi not in ("learned", "analytic"):
            raise ConfigError("phi must be 'learned' or 'analytic'")
        if self.smooth not in ("none", "neighborhood"):
            raise ConfigError("smooth must be 'none' or 'neighborhood'")
        if self.point_features not in ("raw", "unit-position"):
            raise ConfigError("point_features must be 'raw' or 'unit-position'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'")
        if self.rescale_c is not None and self.rescale_c <= 0:
            raise ConfigError("rescale_c must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


def _parse_value(field_type, raw, key):
    raw = raw.strip()
    if raw.lower() in ("none", "null"):
        return None
    if field_type is bool or raw.lower() in ("true", "false"):
        if raw.lower() not in ("true", "false", "1", "0"):
            raise ConfigError(f"cannot parse boolean for {key!r}: {raw!r}")
        return raw.lower() in ("true", "1")
    try:
        if field_type is int:
            return int(raw)
        if field_type is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value for {key!r}: {raw!r}") from exc
    return raw


_FIELD_TYPES = {
    "method": str, "k": int, "layers": int, "hidden_size": int, "dropout": float,
    "epochs": int, "pretrain_epochs": int, "learning_rate": float,
    "weight_decay": float, "batch_size": int, "beta": float, "alpha": float,
    "temperature": float, "rescale_c": float, "rescale_percentile": float,
    "expansion": float, "seed": int, "aggregation": str, "soft_graph": bool,
    "shared_encoder": bool, "mask_pooling": bool, "covariance_2d": bool,
    "geometric_moments": bool, "phi": str, "phi_length_scale": float,
    "smooth": str, "point_features": str, "dtype": str,
}


def read_config_file(path):
    """Parse a flat ``key = value`` config file into a dict of typed values."""
    values = {}
    with open(path) as fh:
        for i, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{i}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{i}: unknown config key {key!r}")
            values[key] = _parse_value(_FIELD_TYPES[key], raw, key)
    return values


def load_config(path=None, overrides=None):
    values = read_config_file(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return ExperimentConfig.from_dict(values)


def derive_seed(base_seed, stream):
    """Deterministic per-stream seed so RNG components can be pinned independently."""
    tag = f"{int(base_seed)}::{stream}".encode()
    return zlib.crc32(tag) & 0x7FFFFFFF


@dataclass
class RunRecord:
    """Persisted outcome of one command: config snapshot plus all metrics."""

    config: dict
    command: str
    seed: int
    timestamp: str = ""
    wall_clock_s: float = 0.0
    history: dict = field(default_factory=dict)
    test_auc: float | None = None
    interpretation: dict | None = None
    fine_grained: dict | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.timestamp:
            self.timestamp = time.strftime("%Y%m%d-%H%M%S")

    def validate_finite(self):
        def walk(obj, where):
            if isinstance(obj, dict):
                for k, v in obj.items():
                    walk(v, f"{where}.{k}")
            elif isinstance(obj, (list, tuple)):
                for i, v in enumerate(obj):
                    walk(v, f"{where}[{i}]")
            elif isinstance(obj, float) and not np.isfinite(obj):
                raise RecordParseError(f"non-finite metric at {where}")
        walk({"history": self.history, "test_auc": self.test_auc,
              "interpretation": self.interpretation,
              "fine_grained": self.fine_grained, "extra": self.extra}, "record")

    def to_json(self):
        self.validate_finite()
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(**d)

    def write(self, directory):
        path = Path(directory) / f"{self.timestamp}-{self.seed}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        # avoid clobbering records created within the same second
        i = 1
        while path.exists():
            path = Path(directory) / f"{self.timestamp}-{self.seed}.{i}.json"
            i += 1
        path.write_text(self.to_json() + "\n")
        return path
