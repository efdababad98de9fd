"""Location importance via learnable coordinate noise.

An interpreter head maps per-point embeddings to an SPD covariance
Sigma_v = a1 U U^T + a2 I. Training perturbs every coordinate by
eps ~ N(0, Sigma_v) using the direct reparameterization
eps = sqrt(a1) U s1 + sqrt(a2) s2 (no Cholesky), rebuilds the neighbor graph
from the perturbed coordinates with distance-decreasing edge weights so no
information leaks through a frozen topology, and penalizes KL to an
isotropic prior. Points that end up with small det Sigma_v are the ones
whose location the classifier needs most precisely.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .backbone import MessagePassingEncoder, PointCloudNet, TensorBatch, classification_loss
from .exceptions import ValidationError
from .graph import (AnalyticEdgeWeight, LearnedEdgeWeight, edge_geometry,
                    expanded_k, knn_edges_torch)

A_CLIP = (1e-6, 1e6)


class CovarianceHead(nn.Module):
    """Linear map to a dense U plus softplus scalars a1, a2 (clipped)."""

    def __init__(self, hidden=64, pdim=3):
        super().__init__()
        self.pdim = pdim
        self.u_map = nn.Linear(hidden, pdim * pdim)
        self.a_map = nn.Linear(hidden, 2)

    def forward(self, z):
        u = self.u_map(z).reshape(-1, self.pdim, self.pdim)
        a = nn.functional.softplus(self.a_map(z)).clamp(*A_CLIP)
        return u, a[:, 0], a[:, 1]


def assemble_covariance(U, a1, a2):
    """Sigma = a1 U U^T + a2 I, batched; SPD by construction (a2 > 0)."""
    if torch.is_tensor(U):
        eye = torch.eye(U.shape[-1], dtype=U.dtype, device=U.device)
        return a1[..., None, None] * (U @ U.transpose(-1, -2)) + a2[..., None, None] * eye
    U = np.asarray(U, dtype=np.float64)
    eye = np.eye(U.shape[-1])
    a1 = np.asarray(a1, dtype=np.float64)
    a2 = np.asarray(a2, dtype=np.float64)
    return a1[..., None, None] * (U @ np.swapaxes(U, -1, -2)) + a2[..., None, None] * eye


def sample_perturbation(U, a1, a2, s1, s2):
    """eps = sqrt(a1) U s1 + sqrt(a2) s2, with E[eps eps^T] = Sigma.

    Differentiable in (U, a1, a2); s1, s2 are standard normal draws.
    """
    if torch.is_tensor(U):
        first = torch.sqrt(a1)[..., None] * (U @ s1[..., None]).squeeze(-1)
        return first + torch.sqrt(a2)[..., None] * s2
    U = np.asarray(U, dtype=np.float64)
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    first = np.sqrt(a1)[..., None] * np.einsum("...ij,...j->...i", U, s1)
    return first + np.sqrt(a2)[..., None] * s2


def symmetrize(sigma):
    return 0.5 * (sigma + np.swapaxes(np.asarray(sigma, dtype=np.float64), -1, -2))


def gauss_kl(sigma, prior_scale=1.0):
    """KL(N(0, Sigma) || N(0, prior_scale * I)) in closed form.

    0.5 [trace(Sigma)/s - D - ln det Sigma + D ln s]. Rejects non-SPD input.
    """
    if prior_scale <= 0:
        raise ValidationError("prior scale must be positive")
    sigma = symmetrize(sigma)
    d = sigma.shape[-1]
    eig = np.linalg.eigvalsh(sigma)
    if np.min(eig) <= 0:
        raise ValidationError("covariance must be positive definite")
    trace = eig.sum(axis=-1)
    logdet = np.log(eig).sum(axis=-1)
    return 0.5 * (trace / prior_scale - d - logdet + d * np.log(prior_scale))


def gauss_kl_torch(sigma, prior_scale=1.0):
    """Differentiable closed-form KL for batched SPD matrices."""
    d = sigma.shape[-1]
    trace = torch.diagonal(sigma, dim1=-2, dim2=-1).sum(-1)
    logdet = torch.linalg.slogdet(sigma)[1]
    s = float(prior_scale)
    return 0.5 * (trace / s - d - logdet + d * np.log(s))


def rank_location(sigmas):
    """Importance scores -ln det Sigma: less surviving randomness means the
    point's location matters more."""
    sigmas = symmetrize(sigmas)
    eig = np.linalg.eigvalsh(sigmas)
    if np.min(eig) <= 0:
        raise ValidationError("covariance must be positive definite")
    return -np.log(eig).sum(axis=-1)


def neighborhood_smooth_gaussian(sigmas, graph):
    """Replace Sigma_v by the largest-determinant Sigma in the closed
    neighborhood (optional smoothing; off by default)."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    logdet = np.log(np.linalg.eigvalsh(symmetrize(sigmas))).sum(axis=-1)
    best = np.arange(sigmas.shape[0])
    best_val = logdet.copy()
    for u, v in zip(graph.src, graph.dst):
        if logdet[u] > best_val[v]:
            best_val[v] = logdet[u]
            best[v] = u
    return sigmas[best].copy()


class GaussianLRINet(nn.Module):
    """Classifier plus location interpreter with in-forward graph rebuild."""

    def __init__(self, in_features, dim, hidden=64, layers=4, dropout=0.2,
                 aggregation="mean", k=5, expansion=1.5, soft_graph=True,
                 covariance_2d=False, phi="learned", phi_length_scale=1.0,
                 shared_encoder=True, geometric_moments=False):
        super().__init__()
        if covariance_2d and dim < 2:
            raise ValidationError("in-plane covariance needs at least 2 coordinates")
        self.clf = PointCloudNet(in_features, dim, hidden=hidden, layers=layers,
                                 dropout=dropout, aggregation=aggregation)
        self.interp_encoder = None if shared_encoder else MessagePassingEncoder(
            in_features, dim, hidden=hidden, layers=layers, dropout=dropout,
            aggregation=aggregation)
        self.pdim = 2 if covariance_2d else dim
        self.dim = dim
        self.geometric_moments = geometric_moments
        n_extra = dim * (dim + 1) // 2 + 1 if geometric_moments else 0
        self.head = CovarianceHead(hidden + n_extra, pdim=self.pdim)
        self.k = k
        self.expansion = expansion
        self.soft_graph = soft_graph
        if phi == "learned":
            self.phi = LearnedEdgeWeight()
        elif phi == "analytic":
            self.phi = AnalyticEdgeWeight(phi_length_scale)
        else:
            raise ValidationError(f"unknown edge-weight variant {phi!r}")

    def _moment_features(self, batch: TensorBatch):
        """Shape and scale of the local displacement scatter, per point.

        Plain message passing averages odd functions of the neighbor
        displacements toward zero, so the local axis never reaches the
        embeddings with enough fidelity for the head to orient U. The
        second-moment matrix of incoming displacements carries exactly that
        axis; the interpreter reads the clean input graph, so exposing it to
        the head leaks nothing the classifier could shortcut on.
        """
        d = batch.r[batch.src] - batch.r[batch.dst]
        outer = d[:, :, None] * d[:, None, :]
        n = batch.r.shape[0]
        scatter = torch.zeros(n, self.dim, self.dim, dtype=batch.r.dtype)
        scatter.index_add_(0, batch.dst, outer)
        deg = torch.zeros(n, dtype=batch.r.dtype)
        deg.index_add_(0, batch.dst,
                       torch.ones(batch.dst.shape[0], dtype=batch.r.dtype))
        scatter = scatter / deg.clamp(min=1.0)[:, None, None]
        tr = torch.diagonal(scatter, dim1=-2, dim2=-1).sum(-1)
        shape = scatter / (tr + 1e-12)[:, None, None]
        iu = torch.triu_indices(self.dim, self.dim)
        return torch.cat([shape[:, iu[0], iu[1]], torch.log1p(tr)[:, None]],
                         dim=1)

    def covariance_params(self, batch: TensorBatch):
        enc = self.interp_encoder or self.clf.encoder
        z = enc(batch.x, batch.r, batch.src, batch.dst)
        if self.geometric_moments:
            z = torch.cat([z, self._moment_features(batch)], dim=1)
        return self.head(z)

    def _lift(self, eps):
        # in-plane mode perturbs x, y only
        if eps.shape[1] == self.dim:
            return eps
        pad = torch.zeros(eps.shape[0], self.dim - eps.shape[1],
                          dtype=eps.dtype, device=eps.device)
        return torch.cat([eps, pad], dim=1)

    def perturbed_logits(self, batch: TensorBatch, eps):
        r_tilde = batch.r + self._lift(eps)
        if not self.soft_graph:
            return self.clf(batch, coords=r_tilde)
        k_soft = expanded_k(self.k, self.expansion, int(batch.lengths.max()))
        src, dst = knn_edges_torch(r_tilde.detach(), batch.ptr, k_soft)
        dist, _ = edge_geometry(r_tilde, src, dst)
        return self.clf(batch, coords=r_tilde, edges=(src, dst),
                        edge_weight=self.phi(dist))

    def objective(self, batch: TensorBatch, beta, prior_scale=1.0, draws=None):
        u, a1, a2 = self.covariance_params(batch)
        if draws is None:
            s1 = torch.randn(u.shape[0], self.pdim, dtype=u.dtype)
            s2 = torch.randn(u.shape[0], self.pdim, dtype=u.dtype)
        else:
            s1, s2 = draws
        eps = sample_perturbation(u, a1, a2, s1, s2)
        logits = self.perturbed_logits(batch, eps)
        ce = classification_loss(logits, batch.y)
        kl_points = gauss_kl_torch(assemble_covariance(u, a1, a2), prior_scale)
        kl = _segment_mean(kl_points, batch).mean()
        return ce + beta * kl, {"ce": ce.detach().item(), "kl": kl.detach().item()}

    def eval_logits(self, batch: TensorBatch):
        """Deterministic prediction: zero perturbation on the soft graph."""
        zero = torch.zeros(batch.r.shape[0], self.pdim, dtype=batch.r.dtype)
        return self.perturbed_logits(batch, zero)

    @torch.no_grad()
    def interpret(self, batch: TensorBatch):
        """Per-point scores -ln det Sigma plus the covariances themselves."""
        self.eval()
        u, a1, a2 = self.covariance_params(batch)
        sigmas = assemble_covariance(u, a1, a2).numpy().astype(np.float64)
        return rank_location(sigmas), sigmas


def _segment_mean(values, batch: TensorBatch):
    total = torch.zeros(batch.n_clouds, dtype=values.dtype, device=values.device)
    total.index_add_(0, batch.segment_ids(), values)
    return total / batch.lengths.to(values.dtype)


def objective_gaussian(sample_batch: TensorBatch, net: GaussianLRINet, config, draws=None):
    return net.objective(sample_batch, beta=config.beta, prior_scale=1.0, draws=draws)
