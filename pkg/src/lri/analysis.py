"""Fine-grained geometry read off converged covariances.

On track data the learned noise ellipse stretches along directions the
classifier tolerates. Its in-plane principal axis estimates the local track
direction, and the axis-length ratio tracks the curvature, hence the field
strength, up to a constant factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ValidationError
from .gaussian import symmetrize

DEGENERATE_REL_GAP = 1e-6


def in_plane(sigma):
    """The x-y block of a covariance (identity for 2-D input)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.shape not in ((2, 2), (3, 3)):
        raise ValidationError(f"expected a 2x2 or 3x3 covariance, got {sigma.shape}")
    return sigma[:2, :2].copy()


def _eig2(sigma2):
    sigma2 = symmetrize(np.asarray(sigma2, dtype=np.float64))
    if sigma2.shape != (2, 2):
        raise ValidationError("expected a 2x2 covariance")
    lam, vec = np.linalg.eigh(sigma2)
    if lam[0] <= 0:
        raise ValidationError("covariance must be positive definite")
    # eigh sorts ascending; flip so lam[0] is the largest
    return lam[::-1], vec[:, ::-1]


def principal_direction(sigma2, rel_gap=DEGENERATE_REL_GAP):
    """Unit eigenvector of the larger eigenvalue, sign-normalized.

    Returns (e1, degenerate); a near-isotropic matrix (relative eigen-gap
    below ``rel_gap``) is flagged and must be excluded from angle statistics.
    """
    lam, vec = _eig2(sigma2)
    degenerate = (lam[0] - lam[1]) <= rel_gap * lam[0]
    e1 = vec[:, 0].copy()
    nz = np.nonzero(np.abs(e1) > 1e-12)[0]
    if len(nz) and e1[nz[0]] < 0:
        e1 = -e1
    return e1, bool(degenerate)


def angle_to_velocity(e1, v_true):
    """Angle in degrees, folded to [0, 90] since the axis sign is arbitrary."""
    e1 = np.asarray(e1, dtype=np.float64)
    v = np.asarray(v_true, dtype=np.float64)
    for name, vec in (("axis", e1), ("velocity", v)):
        norm = np.linalg.norm(vec)
        if abs(norm - 1.0) > 1e-5:
            raise ValidationError(f"{name} must be unit-norm, got |.| = {norm}")
    cos = np.clip(abs(float(e1 @ v)), 0.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def eigen_ratio(sigma2):
    """sqrt(lambda_1 / lambda_2) >= 1: the noise ellipse's axis-length ratio."""
    lam, _ = _eig2(sigma2)
    return float(np.sqrt(lam[0] / lam[1]))


@dataclass(frozen=True)
class EllipseSummary:
    lam1: float
    lam2: float
    e1: np.ndarray
    ratio: float
    degenerate: bool


def ellipse_summary(sigma2):
    lam, _ = _eig2(sigma2)
    e1, degenerate = principal_direction(sigma2)
    return EllipseSummary(lam1=float(lam[0]), lam2=float(lam[1]), e1=e1,
                          ratio=float(np.sqrt(lam[0] / lam[1])), degenerate=degenerate)


def field_strength_fit(b_values, mean_ratios):
    """Least-squares line ratio = slope * B + intercept plus Pearson r."""
    b = np.asarray(b_values, dtype=np.float64)
    rho = np.asarray(mean_ratios, dtype=np.float64)
    if len(b) < 3 or len(b) != len(rho):
        raise ValidationError("need at least 3 (B, ratio) pairs")
    if len(np.unique(b)) < 3:
        raise ValidationError("need at least 3 distinct B values")
    if np.std(rho) == 0 or np.std(b) == 0:
        raise ValidationError("zero variance makes the correlation undefined")
    slope, intercept = np.polyfit(b, rho, 1)
    r = float(np.corrcoef(b, rho)[0, 1])
    return float(slope), float(intercept), r


def in_plane_unit(v):
    """Project a direction to the x-y plane and renormalize; None if the
    in-plane component (or the vector itself) vanishes."""
    v = np.asarray(v, dtype=np.float64)[:2]
    norm = np.linalg.norm(v)
    if norm < 1e-9:
        return None
    return v / norm


@dataclass
class AngleStats:
    mean_deg: float
    std_deg: float
    n_used: int
    n_excluded: int


def _collect_angles(samples, direction_fn):
    angles = []
    excluded = 0
    for s in samples:
        if s.y != 1 or s.interp is None:
            continue
        if s.velocity is None:
            raise ValidationError(f"sample {s.id} lacks velocity ground truth")
        dirs = direction_fn(s)
        for idx in np.nonzero(s.interp)[0]:
            v2 = in_plane_unit(s.velocity[idx])
            d = dirs[idx]
            if v2 is None or d is None:
                excluded += 1
                continue
            angles.append(angle_to_velocity(d, v2))
    if not angles:
        raise ValidationError("no usable ground-truth points for angle statistics")
    return AngleStats(mean_deg=float(np.mean(angles)), std_deg=float(np.std(angles)),
                      n_used=len(angles), n_excluded=excluded)


def sigma_angle_stats(samples, sigmas_by_id):
    """Angles between each ground-truth point's in-plane principal axis and
    its true velocity, over positive samples; degenerate points excluded."""

    def dirs(sample):
        out = []
        for sig in sigmas_by_id[sample.id]:
            e1, degenerate = principal_direction(in_plane(sig))
            out.append(None if degenerate else e1)
        return out

    return _collect_angles(samples, dirs)


def direction_angle_stats(samples, dirs_by_id):
    """Same statistics for explicit per-point in-plane directions (gradient
    baselines, random-direction controls); zero directions are excluded."""

    def dirs(sample):
        return [in_plane_unit(np.asarray(d)) if d is not None else None
                for d in dirs_by_id[sample.id]]

    return _collect_angles(samples, dirs)


def mean_eigen_ratio_stats(samples, sigmas_by_id):
    """Mean eigen-ratio over ground-truth points of positive samples."""
    ratios = []
    for s in samples:
        if s.y != 1 or s.interp is None:
            continue
        sigs = sigmas_by_id[s.id]
        for idx in np.nonzero(s.interp)[0]:
            ratios.append(eigen_ratio(in_plane(sigs[idx])))
    if not ratios:
        raise ValidationError("no ground-truth points for eigen-ratio statistics")
    return float(np.mean(ratios)), len(ratios)
