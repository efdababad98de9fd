"""Spatial graph construction: exact k-nn / radius graphs and the soft graph.

Hard graphs are built once per sample with deterministic tie-breaking. The
soft graph used during location-perturbation training keeps a slightly
widened neighbor budget and attaches distance-decreasing edge weights, so
gradients flow from edge weights back to the perturbed coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .exceptions import ValidationError

_DIST_RTOL = 1e-9


@dataclass(frozen=True)
class SpatialGraph:
    """Directed edge list: message u -> v for every u in N(v).

    ``src``/``dst`` are edge endpoint indices, ``dist`` the Euclidean edge
    lengths, ``unit_disp`` the unit displacements (r_v - r_u)/dist (zero
    vector for coincident endpoints), ``weight`` in (0, 1] (1 on hard
    graphs) and ``k_used`` the neighbor budget (0 for radius graphs).
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    dist: np.ndarray
    unit_disp: np.ndarray
    weight: np.ndarray
    k_used: int

    @property
    def n_edges(self):
        return self.src.shape[0]

    def neighbor_lists(self):
        """Per-point neighbor index arrays N(v), in edge order."""
        lists = [[] for _ in range(self.n)]
        for u, v in zip(self.src, self.dst):
            lists[v].append(u)
        return [np.asarray(l, dtype=np.int64) for l in lists]

    def validate(self, coords):
        coords = np.asarray(coords, dtype=np.float64)
        if np.any(self.src == self.dst):
            raise ValidationError("graph contains self-edges")
        true_dist = np.linalg.norm(coords[self.dst] - coords[self.src], axis=1)
        scale = np.maximum(true_dist, 1e-300)
        if self.n_edges and np.max(np.abs(true_dist - self.dist) / scale) > _DIST_RTOL:
            raise ValidationError("edge distances disagree with coordinates")
        if np.any(self.weight <= 0) or np.any(self.weight > 1):
            raise ValidationError("edge weights must lie in (0, 1]")
        return self


def _pairwise_sq(coords):
    diff = coords[:, None, :] - coords[None, :, :]
    return (diff**2).sum(axis=-1)


def _check_coords(coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[0] == 0:
        raise ValidationError(f"coords must be a non-empty n x D matrix, got {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise ValidationError("coords contain non-finite entries")
    return coords


def _edges_from_neighbors(coords, nbr):
    n, kk = nbr.shape
    dst = np.repeat(np.arange(n), kk)
    src = nbr.reshape(-1)
    diff = coords[dst] - coords[src]
    dist = np.linalg.norm(diff, axis=1)
    unit = np.zeros_like(diff)
    nz = dist > 0
    unit[nz] = diff[nz] / dist[nz, None]
    return src.astype(np.int64), dst.astype(np.int64), dist, unit


def _knn_neighbors(coords, kk):
    # stable argsort on squared distances: ties resolved by smaller index
    d2 = _pairwise_sq(coords)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :kk]


def build_knn(coords, k):
    """Exact k-nn graph by Euclidean distance, ties broken by smaller index."""
    coords = _check_coords(coords)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    n = coords.shape[0]
    kk = min(k, n - 1)
    if kk == 0:
        return SpatialGraph(n=n, src=np.empty(0, np.int64), dst=np.empty(0, np.int64),
                            dist=np.empty(0), unit_disp=np.empty((0, coords.shape[1])),
                            weight=np.empty(0), k_used=k)
    nbr = _knn_neighbors(coords, kk)
    src, dst, dist, unit = _edges_from_neighbors(coords, nbr)
    return SpatialGraph(n=n, src=src, dst=dst, dist=dist, unit_disp=unit,
                        weight=np.ones_like(dist), k_used=k)


def build_radius_graph(coords, radius):
    """Symmetric graph with an edge for every pair at distance in (0, radius)."""
    coords = _check_coords(coords)
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    d2 = _pairwise_sq(coords)
    np.fill_diagonal(d2, np.inf)
    dst, src = np.nonzero((d2 > 0) & (d2 < radius**2))
    diff = coords[dst] - coords[src]
    dist = np.linalg.norm(diff, axis=1)
    unit = diff / dist[:, None] if len(dist) else diff
    return SpatialGraph(n=coords.shape[0], src=src.astype(np.int64),
                        dst=dst.astype(np.int64), dist=dist, unit_disp=unit,
                        weight=np.ones_like(dist), k_used=0)


def expanded_k(k, expansion, n):
    """Widened neighbor budget for the soft graph (rounded up)."""
    return min(int(math.ceil(expansion * k)), n - 1)


def build_soft_graph(coords, k, expansion=1.5, phi=None):
    """Soft graph over (possibly perturbed) coordinates.

    Keeps ``ceil(expansion * k)`` nearest neighbors per point and weights
    each edge by ``phi(distance)``; with ``phi=None`` all weights are 1 and
    ``expansion=1`` recovers the hard k-nn edge set exactly.
    """
    coords = _check_coords(coords)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if expansion < 1:
        raise ValidationError(f"expansion must be >= 1, got {expansion}")
    n = coords.shape[0]
    kk = expanded_k(k, expansion, n)
    if kk == 0:
        return build_knn(coords, k)
    nbr = _knn_neighbors(coords, kk)
    src, dst, dist, unit = _edges_from_neighbors(coords, nbr)
    if phi is None:
        weight = np.ones_like(dist)
    else:
        weight = np.asarray(edge_weights(phi, dist), dtype=np.float64)
        if np.any(weight <= 0) or np.any(weight >= 1):
            raise ValidationError("phi must map distances into (0, 1)")
    return SpatialGraph(n=n, src=src, dst=dst, dist=dist, unit_disp=unit,
                        weight=weight, k_used=kk)


class AnalyticEdgeWeight:
    """Gaussian falloff w(d) = exp(-d^2 / (2 l^2)): strictly decreasing in d."""

    def __init__(self, length_scale=1.0):
        if length_scale <= 0:
            raise ValidationError("length scale must be positive")
        self.length_scale = float(length_scale)

    def __call__(self, d):
        q = d * d / (2.0 * self.length_scale**2)
        return torch.exp(-q) if torch.is_tensor(d) else np.exp(-q)


class LearnedEdgeWeight(nn.Module):
    """Small trainable map distance -> (0, 1) with a sigmoid output."""

    def __init__(self, hidden=16, dtype=torch.float32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(1, hidden, dtype=dtype),
            nn.Tanh(),
            nn.Linear(hidden, 1, dtype=dtype),
        )
        # start near a gentle decreasing profile instead of a flat 0.5
        with torch.no_grad():
            self.net[-1].bias.fill_(1.0)

    def forward(self, d):
        return torch.sigmoid(self.net(d.unsqueeze(-1))).squeeze(-1)


def edge_weights(phi, dist):
    """Evaluate an edge-weight map on distances, numpy or torch transparently."""
    if isinstance(phi, LearnedEdgeWeight) and not torch.is_tensor(dist):
        with torch.no_grad():
            p = next(phi.parameters())
            t = torch.as_tensor(dist, dtype=p.dtype)
            return phi(t).numpy()
    return phi(dist)


def knn_edges_torch(coords, ptr, k):
    """Batched k-nn edge selection over flat node coordinates (no gradients).

    ``coords`` is [N, D] for a batch of clouds delimited by ``ptr`` (length
    B + 1). Returns (src, dst) index tensors; each point keeps its
    min(k, n_i - 1) nearest neighbors within its own cloud.
    """
    with torch.no_grad():
        lengths = ptr[1:] - ptr[:-1]
        n_max = int(lengths.max())
        b = len(lengths)
        device = coords.device
        pos = torch.arange(n_max, device=device).unsqueeze(0).expand(b, n_max)
        valid = pos < lengths.unsqueeze(1)
        flat = (ptr[:-1].unsqueeze(1) + pos).clamp(max=coords.shape[0] - 1)
        padded = coords[flat]                                    # [B, n_max, D]
        d = torch.cdist(padded, padded)
        inf = torch.tensor(float("inf"), dtype=d.dtype, device=device)
        d = d.masked_fill(~valid.unsqueeze(1), inf)
        d = d.masked_fill(~valid.unsqueeze(2), inf)
        eye = torch.eye(n_max, dtype=torch.bool, device=device)
        d = d.masked_fill(eye.unsqueeze(0), inf)
        kk = min(k, n_max - 1) if n_max > 1 else 0
        if kk == 0:
            empty = torch.empty(0, dtype=torch.long, device=device)
            return empty, empty
        vals, nbr = torch.topk(d, kk, dim=2, largest=False)
        keep = torch.isfinite(vals) & valid.unsqueeze(2)
        dst = flat.unsqueeze(2).expand(-1, -1, kk)[keep]
        src = torch.gather(flat, 1, nbr.reshape(b, -1)).reshape(b, n_max, kk)[keep]
        return src, dst


def edge_geometry(coords, src, dst):
    """Differentiable per-edge distance and unit displacement (r_v - r_u)."""
    diff = coords[dst] - coords[src]
    dist = torch.linalg.vector_norm(diff, dim=1)
    unit = diff / dist.clamp_min(1e-30).unsqueeze(1)
    return dist, unit


def edge_feature_gradcheck(coords, k=3, expansion=1.5, phi=None, step=1e-5):
    """Max relative error between autograd and central-difference gradients
    of all soft-graph edge weights w.r.t. the coordinates.

    Topology is frozen from the unperturbed coordinates; coincident pairs
    (non-differentiable) are skipped.
    """
    coords = _check_coords(coords)
    n, d_dim = coords.shape
    if n > 10:
        raise ValidationError("gradcheck is meant for small clouds (n <= 10)")
    if phi is None:
        phi = AnalyticEdgeWeight(length_scale=float(np.median(
            np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)[np.triu_indices(n, 1)])))
    graph = build_soft_graph(coords, k=k, expansion=expansion)
    keep = graph.dist > 1e-12
    src = torch.as_tensor(graph.src[keep])
    dst = torch.as_tensor(graph.dst[keep])

    if isinstance(phi, nn.Module):
        phi = phi.double()

    def weights_at(r_np):
        t = torch.as_tensor(r_np, dtype=torch.float64)
        dist, _ = edge_geometry(t, src, dst)
        return phi(dist)

    r = torch.as_tensor(coords, dtype=torch.float64).requires_grad_(True)
    dist, _ = edge_geometry(r, src, dst)
    w = phi(dist)
    n_edges = w.shape[0]
    analytic = np.zeros((n_edges, n, d_dim))
    for e in range(n_edges):
        g = torch.autograd.grad(w[e], r, retain_graph=True)[0]
        analytic[e] = g.detach().numpy()

    fd = np.zeros_like(analytic)
    for i in range(n):
        for j in range(d_dim):
            plus = coords.copy()
            minus = coords.copy()
            plus[i, j] += step
            minus[i, j] -= step
            with torch.no_grad():
                fd[:, i, j] = (weights_at(plus) - weights_at(minus)).numpy() / (2 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-4)
    return float(np.max(np.abs(analytic - fd) / denom)) if n_edges else 0.0
