"""Core point-cloud sample types and coordinate preprocessing.

A :class:`PointCloud` holds per-point features ``X`` (n x d) and coordinates
``r`` (n x D, D in {2, 3}) that are centered at the origin. A :class:`Sample`
wraps a cloud with its binary label and optional ground-truth interpretation
metadata. Both types are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ValidationError

CENTERING_RTOL = 1e-6


def _as_float_matrix(a, name):
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite entries")
    return out


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def center_and_rescale(coords, c=1.0):
    """Center coordinates at the origin and multiply by the constant ``c``.

    Returns ``c * (coords - columnwise_mean)``; column means of the result
    are zero up to floating error.
    """
    coords = _as_float_matrix(coords, "coords")
    if coords.shape[0] < 1:
        raise ValidationError("need at least one point")
    if not np.isfinite(c) or c <= 0:
        raise ValidationError(f"rescale constant must be positive, got {c}")
    return c * (coords - coords.mean(axis=0, keepdims=True))


def choose_rescale_constant(coords, percentile=10.0):
    """Pick ``c`` so the given percentile of ``abs(c * coords)`` entries is 1.

    Uses the lower order statistic, i.e. ``c = 1 / percentile_value(abs(r))``.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise ValidationError("coords contain non-finite entries")
    if not 0 < percentile < 100:
        raise ValidationError(f"percentile must be in (0, 100), got {percentile}")
    value = float(np.percentile(np.abs(coords).ravel(), percentile, method="lower"))
    if value <= 0:
        raise ValidationError(
            f"percentile {percentile} of abs(coords) is 0; no finite rescale constant"
        )
    return 1.0 / value


@dataclass(frozen=True)
class PointCloud:
    """A centered point cloud: features ``X`` (n x d) and coordinates ``r`` (n x D).

    ``scale_c`` records the rescale constant already applied to ``r``
    (1.0 for raw coordinates).
    """

    X: np.ndarray
    r: np.ndarray
    scale_c: float = 1.0

    def __post_init__(self):
        X = _as_float_matrix(self.X, "X")
        r = _as_float_matrix(self.r, "r")
        if r.shape[0] < 1:
            raise ValidationError("point cloud must contain at least one point")
        if r.shape[1] not in (2, 3):
            raise ValidationError(f"coordinate dimension must be 2 or 3, got {r.shape[1]}")
        if X.shape[0] != r.shape[0]:
            raise ValidationError(
                f"X has {X.shape[0]} rows but r has {r.shape[0]}"
            )
        if not np.isfinite(self.scale_c) or self.scale_c <= 0:
            raise ValidationError(f"scale_c must be positive, got {self.scale_c}")
        rms = float(np.sqrt(np.mean(r**2)))
        if np.max(np.abs(r.mean(axis=0))) > CENTERING_RTOL * max(rms, 1e-300):
            raise ValidationError(
                "coordinates are not centered; build clouds via PointCloud.from_raw"
            )
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "r", _frozen(r))

    @classmethod
    def from_raw(cls, X, r, scale_c=1.0):
        """Center (and optionally rescale) raw coordinates, then construct."""
        return cls(X=np.asarray(X, dtype=np.float64),
                   r=center_and_rescale(r, scale_c),
                   scale_c=float(scale_c))

    @property
    def n(self):
        return self.r.shape[0]

    @property
    def dim(self):
        return self.r.shape[1]

    def rescaled(self, c):
        """Return a copy with coordinates multiplied by ``c`` (stacked onto scale_c)."""
        return PointCloud(X=self.X, r=center_and_rescale(self.r, c),
                          scale_c=self.scale_c * float(c))


@dataclass(frozen=True)
class Sample:
    """A labelled point cloud with optional ground-truth interpretation data.

    ``interp`` marks the points whose presence/location determines the label
    (1 = important). ``velocity`` holds unit-norm true directions per point and
    ``B`` the field strength of the generating process, when known.
    """

    cloud: PointCloud
    y: int
    id: str
    interp: np.ndarray | None = None
    velocity: np.ndarray | None = None
    B: float | None = None

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.y}")
        n = self.cloud.n
        if self.interp is not None:
            interp = np.asarray(self.interp)
            if interp.shape != (n,):
                raise ValidationError(
                    f"interp has length {interp.shape} but cloud has {n} points"
                )
            if not np.all(np.isin(interp, (0, 1))):
                raise ValidationError("interp entries must be 0 or 1")
            if self.y == 1 and int(interp.sum()) == 0:
                raise ValidationError("positive sample must mark at least one point")
            object.__setattr__(self, "interp", _frozen(interp.astype(np.int8)))
        if self.velocity is not None:
            vel = _as_float_matrix(self.velocity, "velocity")
            if vel.shape != (n, self.cloud.dim):
                raise ValidationError(
                    f"velocity shape {vel.shape} does not match cloud ({n}, {self.cloud.dim})"
                )
            norms = np.linalg.norm(vel, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-5:
                raise ValidationError("velocity rows must be unit-norm")
            object.__setattr__(self, "velocity", _frozen(vel))
        if self.B is not None:
            if not np.isfinite(self.B) or self.B <= 0:
                raise ValidationError(f"field strength must be positive, got {self.B}")
            object.__setattr__(self, "B", float(self.B))
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("sample id must be a non-empty string")

    @property
    def n(self):
        return self.cloud.n

    def rescaled(self, c):
        return Sample(cloud=self.cloud.rescaled(c), y=self.y, id=self.id,
                      interp=self.interp, velocity=self.velocity, B=self.B)


def check_samples(samples, require_both_classes=False):
    """Validate a sequence of samples and return it as a list.

    Raises :class:`ValidationError` for empty input or mixed coordinate
    dimensions; estimators call this at the top of ``fit``. Training entry
    points additionally require both classes; evaluation subsets (e.g.
    positives only) do not.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("empty sample collection")
    for s in samples:
        if not isinstance(s, Sample):
            raise ValidationError(f"expected Sample, got {type(s).__name__}")
    dims = {s.cloud.dim for s in samples}
    if len(dims) > 1:
        raise ValidationError(f"mixed coordinate dimensions: {sorted(dims)}")
    feats = {s.cloud.X.shape[1] for s in samples}
    if len(feats) > 1:
        raise ValidationError(f"mixed feature dimensions: {sorted(feats)}")
    if require_both_classes and len({s.y for s in samples}) < 2:
        raise ValidationError("need both classes present")
    return samples


def positive_samples(samples):
    """Samples used for interpretation evaluation: positives with interp labels."""
    return [s for s in samples if s.y == 1 and s.interp is not None]
