"""Covariance geometry: eigen-axis extraction, angle folding, ratio/field
fits, and the ground-truth-point statistics plumbing."""

import numpy as np
import pytest

from lri.analysis import (
    AngleStats,
    angle_to_velocity,
    direction_angle_stats,
    eigen_ratio,
    ellipse_summary,
    field_strength_fit,
    in_plane,
    in_plane_unit,
    mean_eigen_ratio_stats,
    principal_direction,
    sigma_angle_stats,
)
from lri.data import PointCloud, Sample
from lri.exceptions import ValidationError


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


# -- axis extraction -----------------------------------------------------------


def test_in_plane_block():
    sigma = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(in_plane(sigma), [[0.0, 1.0], [3.0, 4.0]])
    two = np.array([[1.0, 0.2], [0.2, 1.0]])
    out = in_plane(two)
    assert np.array_equal(out, two)
    out[0, 0] = 9.0  # returned copy must not alias the input
    assert two[0, 0] == 1.0
    with pytest.raises(ValidationError):
        in_plane(np.eye(4))


def test_principal_direction_hand_example():
    # [[2,1],[1,2]] has eigenpairs (3, (1,1)/sqrt2) and (1, (1,-1)/sqrt2)
    e1, degenerate = principal_direction(np.array([[2.0, 1.0], [1.0, 2.0]]))
    assert not degenerate
    assert np.allclose(e1, np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-12)
    e1, _ = principal_direction(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    # sign convention: first nonzero component is positive
    assert np.allclose(e1, np.array([1.0, -1.0]) / np.sqrt(2), atol=1e-12)


def test_principal_direction_degenerate_flag():
    _, degenerate = principal_direction(np.eye(2))
    assert degenerate
    _, degenerate = principal_direction(np.diag([1.0 + 1e-9, 1.0]))
    assert degenerate
    _, degenerate = principal_direction(np.diag([2.0, 1.0]))
    assert not degenerate


def test_principal_direction_rotation_equivariant():
    rng = np.random.default_rng(0)
    base = np.diag([3.0, 0.5])
    for theta in rng.uniform(0, np.pi, size=8):
        q = rot(theta)
        e1, degenerate = principal_direction(q @ base @ q.T)
        assert not degenerate
        expected = q @ np.array([1.0, 0.0])
        assert abs(abs(e1 @ expected) - 1.0) < 1e-10


def test_principal_direction_rejects_non_spd():
    with pytest.raises(ValidationError):
        principal_direction(np.diag([1.0, -0.1]))
    with pytest.raises(ValidationError):
        principal_direction(np.eye(3))


# -- angles ----------------------------------------------------------------------


def test_angle_to_velocity_reference_angles():
    e = np.array([1.0, 0.0])
    assert angle_to_velocity(e, np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
    assert angle_to_velocity(e, np.array([0.0, 1.0])) == pytest.approx(90.0, abs=1e-9)
    diag = np.array([1.0, 1.0]) / np.sqrt(2)
    assert angle_to_velocity(e, diag) == pytest.approx(45.0, abs=1e-9)
    # axis sign is arbitrary: antiparallel folds to zero
    assert angle_to_velocity(e, np.array([-1.0, 0.0])) == pytest.approx(0.0, abs=1e-9)
    assert angle_to_velocity(-diag, e) == pytest.approx(45.0, abs=1e-9)


def test_angle_to_velocity_requires_unit_vectors():
    with pytest.raises(ValidationError):
        angle_to_velocity(np.array([2.0, 0.0]), np.array([1.0, 0.0]))
    with pytest.raises(ValidationError):
        angle_to_velocity(np.array([1.0, 0.0]), np.array([0.0, 0.0]))


def test_random_axis_pairs_average_to_45_degrees():
    rng = np.random.default_rng(1)
    angles = []
    for _ in range(4000):
        a = rng.normal(size=2)
        b = rng.normal(size=2)
        angles.append(angle_to_velocity(a / np.linalg.norm(a), b / np.linalg.norm(b)))
    assert np.mean(angles) == pytest.approx(45.0, abs=2.0)


# -- ratios and fits ---------------------------------------------------------------


def test_eigen_ratio_hand_examples():
    assert eigen_ratio(np.diag([4.0, 1.0])) == pytest.approx(2.0, abs=1e-12)
    assert eigen_ratio(np.eye(2)) == pytest.approx(1.0, abs=1e-12)
    assert eigen_ratio(np.diag([1.0, 9.0])) == pytest.approx(3.0, abs=1e-12)
    q = rot(0.7)
    assert eigen_ratio(q @ np.diag([4.0, 1.0]) @ q.T) == pytest.approx(2.0, abs=1e-10)


def test_ellipse_summary_consistency():
    sigma = np.array([[2.0, 1.0], [1.0, 2.0]])
    summary = ellipse_summary(sigma)
    assert summary.lam1 == pytest.approx(3.0, abs=1e-12)
    assert summary.lam2 == pytest.approx(1.0, abs=1e-12)
    assert summary.ratio == pytest.approx(np.sqrt(3.0), abs=1e-12)
    assert not summary.degenerate
    assert np.allclose(summary.e1, np.array([1.0, 1.0]) / np.sqrt(2), atol=1e-12)


def test_field_strength_fit_recovers_exact_line():
    b = np.array([0.5, 1.0, 2.0, 4.0])
    slope, intercept, r = field_strength_fit(b, 2.0 * b + 1.0)
    assert slope == pytest.approx(2.0, abs=1e-10)
    assert intercept == pytest.approx(1.0, abs=1e-10)
    assert r == pytest.approx(1.0, abs=1e-12)
    slope, _, r = field_strength_fit(b, -0.5 * b + 3.0)
    assert slope == pytest.approx(-0.5, abs=1e-10)
    assert r == pytest.approx(-1.0, abs=1e-12)


def test_field_strength_fit_matches_numpy_on_noise():
    rng = np.random.default_rng(2)
    b = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    rho = 0.8 * b + rng.normal(0, 0.3, size=5)
    slope, intercept, r = field_strength_fit(b, rho)
    np_slope, np_intercept = np.polyfit(b, rho, 1)
    assert slope == pytest.approx(np_slope, abs=1e-12)
    assert intercept == pytest.approx(np_intercept, abs=1e-12)
    assert r == pytest.approx(np.corrcoef(b, rho)[0, 1], abs=1e-12)


@pytest.mark.parametrize("b,rho", [
    ([1.0, 2.0], [1.0, 2.0]),
    ([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]),
    ([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]),
    ([1.0, 2.0, 3.0], [1.0, 2.0]),
])
def test_field_strength_fit_validation(b, rho):
    with pytest.raises(ValidationError):
        field_strength_fit(b, rho)


def test_in_plane_unit_projection():
    assert np.allclose(in_plane_unit(np.array([3.0, 4.0, 12.0])), [0.6, 0.8],
                       atol=1e-12)
    assert in_plane_unit(np.array([0.0, 0.0, 1.0])) is None
    assert in_plane_unit(np.zeros(3)) is None


# -- per-point statistics over samples -----------------------------------------------


def _sample(velocities, interp, sample_id="s-0", y=1):
    n = len(velocities)
    coords = np.arange(n * 3, dtype=np.float64).reshape(n, 3)
    cloud = PointCloud.from_raw(np.ones((n, 1)), coords)
    return Sample(cloud=cloud, y=y, id=sample_id,
                  interp=np.asarray(interp, dtype=np.int64),
                  velocity=np.asarray(velocities, dtype=np.float64))


def _stretched(direction_2d, ratio=4.0):
    d = np.asarray(direction_2d, dtype=np.float64)
    d = d / np.linalg.norm(d)
    sigma2 = ratio * np.outer(d, d) + 0.5 * np.eye(2)
    out = np.eye(3) * 0.5
    out[:2, :2] = sigma2
    return out


def test_sigma_angle_stats_hand_built():
    sample = _sample([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
                     [1, 1, 0])
    sigmas = {"s-0": np.stack([
        _stretched([1.0, 0.0]),   # aligned with velocity 0: angle 0
        _stretched([1.0, 0.0]),   # orthogonal to velocity 1: angle 90
        _stretched([0.0, 1.0]),   # unmarked point, ignored
    ])}
    stats = sigma_angle_stats([sample], sigmas)
    assert isinstance(stats, AngleStats)
    assert stats.mean_deg == pytest.approx(45.0, abs=1e-6)
    assert stats.std_deg == pytest.approx(45.0, abs=1e-6)
    assert stats.n_used == 2
    assert stats.n_excluded == 0


def test_sigma_angle_stats_excludes_degenerate():
    sample = _sample([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]], [1, 1])
    sigmas = {"s-0": np.stack([_stretched([1.0, 0.0]), 0.5 * np.eye(3)])}
    stats = sigma_angle_stats([sample], sigmas)
    assert stats.n_used == 1
    assert stats.n_excluded == 1
    assert stats.mean_deg == pytest.approx(0.0, abs=1e-6)


def test_sigma_angle_stats_excludes_out_of_plane_velocity():
    sample = _sample([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], [1, 1])
    sigmas = {"s-0": np.stack([_stretched([1.0, 0.0])] * 2)}
    stats = sigma_angle_stats([sample], sigmas)
    assert stats.n_used == 1
    assert stats.n_excluded == 1


def test_sigma_angle_stats_skips_negatives_and_requires_velocity():
    neg = _sample([[1.0, 0.0, 0.0]], [0], sample_id="s-neg", y=0)
    pos = _sample([[1.0, 0.0, 0.0]], [1])
    sigmas = {"s-0": np.stack([_stretched([1.0, 0.0])]),
              "s-neg": np.stack([_stretched([0.0, 1.0])])}
    stats = sigma_angle_stats([neg, pos], sigmas)
    assert stats.n_used == 1
    bare = Sample(cloud=pos.cloud, y=1, id="s-1",
                  interp=np.array([1], dtype=np.int64))
    with pytest.raises(ValidationError):
        sigma_angle_stats([bare], {"s-1": sigmas["s-0"]})
    with pytest.raises(ValidationError):
        sigma_angle_stats([neg], {"s-neg": sigmas["s-neg"]})


def test_direction_angle_stats_projects_and_excludes():
    sample = _sample([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
                     [1, 1, 1])
    dirs = {"s-0": [np.array([2.0, 0.0, 5.0]),   # projects to +x: angle 0
                    np.array([0.0, 0.0, 1.0]),   # no in-plane part: excluded
                    np.array([1.0, 1.0, 0.0])]}  # 45 degrees to +y
    stats = direction_angle_stats([sample], dirs)
    assert stats.n_used == 2
    assert stats.n_excluded == 1
    assert stats.mean_deg == pytest.approx(22.5, abs=1e-6)


def test_mean_eigen_ratio_stats_hand_built():
    sample = _sample([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [1, 1])
    sigmas = {"s-0": np.stack([
        np.diag([4.0, 1.0, 1.0]),
        np.diag([1.0, 1.0, 1.0]),
    ])}
    ratio, n = mean_eigen_ratio_stats([sample], sigmas)
    assert n == 2
    assert ratio == pytest.approx((2.0 + 1.0) / 2, abs=1e-12)
    with pytest.raises(ValidationError):
        mean_eigen_ratio_stats([], {})
