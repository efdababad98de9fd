"""Synthetic datasets with exact ground-truth interpretation labels.

Two generators:

* Helical tracks: each sample is a set of detector hits left by charged
  particles spiraling in a magnetic field B along z. Positives contain two
  high-transverse-momentum (hence barely curved) tracks sharing a vertex on
  top of the usual low-momentum background; the signal hits are the ground
  truth. Helix radius R = p_T / (|q| B), so curvature scales with B at
  fixed momentum.

* Motif molecules: typed points in a box. Positives contain both a rigid
  4-point zigzag chain (type 1) and a bent 3-point group (type 2 center,
  type 0 neighbors); negatives contain at most one motif. The label is the
  conjunction, the motif points are the ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import derive_seed
from .data import PointCloud, Sample
from .exceptions import ConfigError, GenerationError

# -- helical tracks ---------------------------------------------------------


@dataclass(frozen=True)
class HelixParams:
    B: float = 2.0
    n_tracks: int = 10
    n_signal: int = 2
    hits_per_track: int = 12
    hit_spacing: float = 0.3
    spacing_jitter: float = 0.0    # fractional spread of per-step arc length
    decoy_tracks: int = 0          # high-pT tracks with separate vertices in negatives
    background_tracks: tuple | None = None  # per-sample range, drawn independent of class
    noise_std: float = 0.02
    signal_pt: tuple = (3.0, 6.0)
    background_pt: tuple = (0.5, 1.5)
    pz_range: tuple = (0.3, 1.0)
    vertex_spread: float = 1.0
    positive_fraction: float = 0.5

    def __post_init__(self):
        if self.B <= 0:
            raise ConfigError("field strength must be positive")
        if self.hits_per_track < 3:
            raise ConfigError("need at least 3 hits per track")
        if not 0 <= self.spacing_jitter < 1:
            raise ConfigError("spacing jitter must lie in [0, 1)")
        if not 0 <= self.decoy_tracks <= self.n_tracks:
            raise ConfigError("decoy tracks must fit into the track budget")
        if self.background_tracks is not None:
            lo, hi = self.background_tracks
            if lo < 0 or lo > hi:
                raise ConfigError("bad background track range")
        if not 0 < self.n_signal <= self.n_tracks:
            raise ConfigError("signal tracks must fit into the track budget")
        if not 0 <= self.positive_fraction <= 1:
            raise ConfigError("positive fraction must lie in [0, 1]")

    def with_field(self, b):
        return replace(self, B=b)

    def with_tracks(self, n):
        # the randomized-count override must scale along, or shifting the
        # track budget would silently leave the generated clouds unchanged
        bg = self.background_tracks
        if bg is not None:
            scale = n / self.n_tracks
            bg = (max(0, round(bg[0] * scale)), max(1, round(bg[1] * scale)))
        return replace(self, n_tracks=n, background_tracks=bg)


def helix_points(vertex, q, pt, pz, phi0, b_field, ts):
    """Exact helix x(t) and unit tangents at parameter values ts (omega = 1)."""
    r = pt / (abs(q) * b_field)
    th = ts + phi0
    pos = np.stack([
        vertex[0] + r * (np.sin(th) - math.sin(phi0)),
        vertex[1] + q * r * (math.cos(phi0) - np.cos(th)),
        vertex[2] + pz * ts,
    ], axis=1)
    vel = np.stack([r * np.cos(th), q * r * np.sin(th), np.full_like(ts, pz)], axis=1)
    vel /= np.linalg.norm(vel, axis=1, keepdims=True)
    return pos, vel


def _track(rng, params, pt_range, vertex):
    q = rng.choice([-1.0, 1.0])
    pt = rng.uniform(*pt_range)
    pz = rng.uniform(*params.pz_range) * rng.choice([-1.0, 1.0])
    phi0 = rng.uniform(0.0, 2.0 * math.pi)
    # detector inefficiency: a few hits may be lost
    n_hits = int(rng.integers(params.hits_per_track - 3, params.hits_per_track + 2))
    r = pt / params.B
    dt = params.hit_spacing / math.hypot(r, pz)
    # sensor crossings are not equally spaced along the trajectory
    steps = dt * (1.0 + rng.uniform(-params.spacing_jitter, params.spacing_jitter,
                                    size=n_hits))
    ts = np.cumsum(steps)
    pos, vel = helix_points(vertex, q, pt, pz, phi0, params.B, ts)
    pos = pos + rng.normal(0.0, params.noise_std, size=pos.shape)
    return pos, vel


def _helix_sample(rng, params, positive, sample_id):
    coords, vels, interp = [], [], []
    # decoys keep the high-pT track count equal across classes so the label
    # can only be read off the shared vertex, not off track-type statistics
    n_decoy = 0 if positive else params.decoy_tracks
    if params.background_tracks is not None:
        # class-independent count, so track-number statistics carry no label
        # information and only the signal tracks themselves separate the classes
        n_background = int(rng.integers(params.background_tracks[0],
                                        params.background_tracks[1] + 1))
    else:
        n_background = params.n_tracks - (params.n_signal if positive else n_decoy)
    for _ in range(n_background):
        vertex = np.append(rng.normal(0.0, params.vertex_spread, size=2),
                           rng.normal(0.0, params.vertex_spread))
        pos, vel = _track(rng, params, params.background_pt, vertex)
        coords.append(pos)
        vels.append(vel)
        interp.append(np.zeros(len(pos), dtype=np.int64))
    for _ in range(n_decoy):
        vertex = np.append(rng.normal(0.0, params.vertex_spread, size=2),
                           rng.normal(0.0, params.vertex_spread))
        pos, vel = _track(rng, params, params.signal_pt, vertex)
        coords.append(pos)
        vels.append(vel)
        interp.append(np.zeros(len(pos), dtype=np.int64))
    if positive:
        shared = np.append(rng.normal(0.0, params.vertex_spread, size=2),
                           rng.normal(0.0, params.vertex_spread))
        for _ in range(params.n_signal):
            pos, vel = _track(rng, params, params.signal_pt, shared)
            coords.append(pos)
            vels.append(vel)
            interp.append(np.ones(len(pos), dtype=np.int64))
    coords = np.concatenate(coords)
    cloud = PointCloud.from_raw(np.ones((len(coords), 1)), coords)
    return Sample(cloud=cloud, y=int(positive), id=sample_id,
                  interp=np.concatenate(interp), velocity=np.concatenate(vels),
                  B=params.B)


def generate_helix_dataset(params: HelixParams, n_samples, seed):
    if n_samples < 1:
        raise ConfigError("need at least one sample")
    n_pos = round(params.positive_fraction * n_samples)
    samples = []
    for i in range(n_samples):
        rng = np.random.default_rng(derive_seed(seed, f"helix-{i}"))
        samples.append(_helix_sample(rng, params, i < n_pos, f"helix-{i}"))
    return samples


# -- motif molecules --------------------------------------------------------

# rigid zigzag: unit steps at 120 degrees, pair distances {1,1,1,v3,v3,v7}
CHAIN_TEMPLATE = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.5, math.sqrt(3) / 2, 0.0],
    [2.5, math.sqrt(3) / 2, 0.0],
])
CHAIN_TYPE = 1
BENT_ANGLE = math.radians(104.0)
BENT_TEMPLATE = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [math.cos(BENT_ANGLE), math.sin(BENT_ANGLE), 0.0],
])
BENT_TYPES = (2, 0, 0)
N_TYPES = 3


@dataclass(frozen=True)
class MotifParams:
    box: float = 6.0
    background_range: tuple = (8, 16)
    jitter: float = 0.02
    min_separation: float = 0.45
    positive_fraction: float = 0.5
    max_retries: int = 200

    def __post_init__(self):
        if self.box < 4.0:
            raise ConfigError("box too small to place motifs")
        if self.background_range[0] < 0 or self.background_range[0] > self.background_range[1]:
            raise ConfigError("bad background point range")


def _random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def _place(rng, template, box, existing, min_sep, max_retries, jitter):
    for _ in range(max_retries):
        rot = _random_rotation(rng)
        shift = rng.uniform(-box / 2 + 1.5, box / 2 - 1.5, size=3)
        pts = template @ rot.T + shift
        pts = pts + rng.normal(0.0, jitter, size=pts.shape)
        if not existing:
            return pts
        d = np.linalg.norm(np.concatenate(existing)[:, None] - pts[None], axis=2)
        if d.min() >= min_sep:
            return pts
    raise GenerationError("could not place motif without overlap")


def _motif_sample(rng, params, subtype, sample_id):
    coords, types, interp = [], [], []
    has_chain = subtype in ("both", "chain")
    has_bent = subtype in ("both", "bent")
    if has_chain:
        pts = _place(rng, CHAIN_TEMPLATE, params.box, coords,
                     params.min_separation, params.max_retries, params.jitter)
        coords.append(pts)
        types.extend([CHAIN_TYPE] * 4)
        interp.extend([1 if subtype == "both" else 0] * 4)
    if has_bent:
        pts = _place(rng, BENT_TEMPLATE, params.box, coords,
                     params.min_separation, params.max_retries, params.jitter)
        coords.append(pts)
        types.extend(BENT_TYPES)
        interp.extend([1 if subtype == "both" else 0] * 3)
    n_bg = int(rng.integers(params.background_range[0], params.background_range[1] + 1))
    placed = 0
    tries = 0
    while placed < n_bg:
        if tries > params.max_retries * max(n_bg, 1):
            raise GenerationError("could not place background points without overlap")
        tries += 1
        pt = rng.uniform(-params.box / 2, params.box / 2, size=(1, 3))
        if coords:
            d = np.linalg.norm(np.concatenate(coords)[:, None] - pt[None], axis=2)
            if d.min() < params.min_separation:
                continue
        coords.append(pt)
        types.append(int(rng.integers(N_TYPES)))
        interp.append(0)
        placed += 1
    coords = np.concatenate(coords)
    x = np.zeros((len(coords), N_TYPES))
    x[np.arange(len(coords)), types] = 1.0
    cloud = PointCloud.from_raw(x, coords)
    return Sample(cloud=cloud, y=int(subtype == "both"), id=sample_id,
                  interp=np.asarray(interp, dtype=np.int64))


NEGATIVE_SUBTYPES = ("none", "chain", "bent")


def generate_motif_dataset(params: MotifParams, n_samples, seed):
    """Positives contain both motifs; negatives cycle through the three
    negative subtypes (sample ids carry the subtype tag for split balancing)."""
    if n_samples < 1:
        raise ConfigError("need at least one sample")
    n_pos = round(params.positive_fraction * n_samples)
    samples = []
    for i in range(n_samples):
        rng = np.random.default_rng(derive_seed(seed, f"motif-{i}"))
        subtype = "both" if i < n_pos else NEGATIVE_SUBTYPES[(i - n_pos) % 3]
        samples.append(_motif_sample(rng, params, subtype, f"motif-{i}-{subtype}"))
    return samples


def motif_subtype(sample):
    return sample.id.rsplit("-", 1)[-1]


# -- splits -----------------------------------------------------------------


def _allocate(n, ratios):
    # largest-remainder rounding so sizes sum to n
    raw = [r * n for r in ratios]
    sizes = [int(math.floor(v)) for v in raw]
    order = np.argsort([s - v for s, v in zip(sizes, raw)], kind="stable")
    for j in range(n - sum(sizes)):
        sizes[order[j]] += 1
    return sizes


def make_splits(samples, ratios=(0.7, 0.15, 0.15), scheme="random", seed=0):
    """Disjoint, exhaustive train/val/test index lists.

    ``balanced-motif`` stratifies by the generator's subtype tag so each
    negative flavor lands in every split proportionally (within 1).
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError("need three nonnegative split ratios")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    if scheme not in ("random", "balanced-motif"):
        raise ConfigError(f"unknown split scheme {scheme!r}")
    rng = np.random.default_rng(derive_seed(seed, "splits"))
    n = len(samples)
    if scheme == "random":
        perm = rng.permutation(n)
        sizes = _allocate(n, ratios)
        bounds = np.cumsum(sizes)
        return (sorted(perm[:bounds[0]].tolist()),
                sorted(perm[bounds[0]:bounds[1]].tolist()),
                sorted(perm[bounds[1]:].tolist()))
    groups = {}
    for idx, s in enumerate(samples):
        groups.setdefault((s.y, motif_subtype(s)), []).append(idx)
    parts = ([], [], [])
    for key in sorted(groups):
        members = np.asarray(groups[key])
        members = members[rng.permutation(len(members))]
        sizes = _allocate(len(members), ratios)
        start = 0
        for part, size in zip(parts, sizes):
            part.extend(members[start:start + size].tolist())
            start += size
    return tuple(sorted(p) for p in parts)
