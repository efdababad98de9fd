"""Existence importance via learnable point dropping.

An interpreter head maps per-point embeddings to keep probabilities p_v. At
training time points are dropped through a relaxed Bernoulli (binary
concrete) mask so the gradient d m_v / d p_v exists, and a KL penalty keeps
p_v close to a prior alpha. Points whose p_v converges high are the ones the
classifier cannot afford to lose.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .backbone import MessagePassingEncoder, PointCloudNet, TensorBatch, classification_loss
from .exceptions import ValidationError

PROB_CLAMP = 1e-6


class ExistenceHead(nn.Module):
    """MLP + sigmoid producing keep probabilities, clamped into (0, 1)."""

    def __init__(self, hidden=64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, 1))

    def forward(self, z):
        p = torch.sigmoid(self.net(z)).squeeze(-1)
        return p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)


def sample_mask(p, tau, u):
    """Binary concrete relaxation m = sigmoid((logit p + logit u) / tau).

    Exact in distribution: P(m > 1/2) = p at any tau. Accepts numpy arrays,
    floats, or tensors; `u` must be strictly inside (0, 1).
    """
    if tau <= 0:
        raise ValidationError(f"temperature must be positive, got {tau}")
    if torch.is_tensor(p) or torch.is_tensor(u):
        p = torch.as_tensor(p)
        u = torch.as_tensor(u, dtype=p.dtype)
        if bool((u <= 0).any()) or bool((u >= 1).any()):
            raise ValidationError("uniform draws must lie strictly in (0, 1)")
        logit = (torch.log(p) - torch.log1p(-p)) + (torch.log(u) - torch.log1p(-u))
        return torch.sigmoid(logit / tau)
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ValidationError("uniform draws must lie strictly in (0, 1)")
    logit = np.log(p) - np.log1p(-p) + np.log(u) - np.log1p(-u)
    return 1.0 / (1.0 + np.exp(-logit / tau))


def bern_kl(p, alpha):
    """KL(Bern(p) || Bern(alpha)) = p ln(p/a) + (1-p) ln((1-p)/(1-a)).

    Both arguments must be strictly inside (0, 1); clamp upstream.
    """
    if torch.is_tensor(p):
        a = torch.as_tensor(alpha, dtype=p.dtype)
        if bool((p <= 0).any()) or bool((p >= 1).any()) or not (0 < float(a) < 1):
            raise ValidationError("bern_kl arguments must lie strictly in (0, 1)")
        return p * (torch.log(p) - torch.log(a)) + (1 - p) * (torch.log1p(-p) - torch.log1p(-a))
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1) or not (0 < alpha < 1):
        raise ValidationError("bern_kl arguments must lie strictly in (0, 1)")
    return p * (np.log(p) - np.log(alpha)) + (1 - p) * (np.log1p(-p) - np.log1p(-alpha))


def rank_existence(p):
    """Importance scores for existence interpretation: the probabilities themselves."""
    return np.asarray(p, dtype=np.float64).copy()


def neighborhood_smooth_bernoulli(p, graph):
    """Replace each p_v by the minimum over its closed neighborhood (optional
    post-hoc smoothing; off by default everywhere)."""
    p = np.asarray(p, dtype=np.float64)
    out = p.copy()
    np.minimum.at(out, graph.dst, p[graph.src])
    return out


class BernoulliLRINet(nn.Module):
    """Classifier plus existence interpreter.

    The interpreter reads per-point embeddings from the clean, unmasked
    pass; the classifier then sees the same cloud with sampled masks scaling
    both messages and (by default) the pooled readout.
    """

    def __init__(self, in_features, dim, hidden=64, layers=4, dropout=0.2,
                 aggregation="mean", mask_pooling=True, shared_encoder=True):
        super().__init__()
        self.clf = PointCloudNet(in_features, dim, hidden=hidden, layers=layers,
                                 dropout=dropout, aggregation=aggregation,
                                 mask_pooling=mask_pooling)
        self.interp_encoder = None if shared_encoder else MessagePassingEncoder(
            in_features, dim, hidden=hidden, layers=layers, dropout=dropout,
            aggregation=aggregation)
        self.head = ExistenceHead(hidden)

    def keep_probabilities(self, batch: TensorBatch):
        enc = self.interp_encoder or self.clf.encoder
        z = enc(batch.x, batch.r, batch.src, batch.dst)
        return self.head(z)

    def objective(self, batch: TensorBatch, beta, alpha, tau, u=None):
        """Masked cross-entropy plus beta times the per-point-mean KL.

        `u` fixes the uniform draws (for gradient checks); fresh draws are
        taken from the global generator otherwise.
        """
        p = self.keep_probabilities(batch)
        if u is None:
            u = torch.rand_like(p).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
        m = sample_mask(p, tau, u)
        logits = self.clf(batch, node_mask=m)
        ce = classification_loss(logits, batch.y)
        kl = _segment_mean(bern_kl(p, alpha), batch).mean()
        return ce + beta * kl, {"ce": ce.detach().item(), "kl": kl.detach().item()}

    def eval_logits(self, batch: TensorBatch):
        """Deterministic prediction: the expected keep probability stands in
        for the sampled mask."""
        p = self.keep_probabilities(batch)
        return self.clf(batch, node_mask=p)

    @torch.no_grad()
    def interpret(self, batch: TensorBatch):
        self.eval()
        return self.keep_probabilities(batch).numpy().astype(np.float64)


def _segment_mean(values, batch: TensorBatch):
    total = torch.zeros(batch.n_clouds, dtype=values.dtype, device=values.device)
    total.index_add_(0, batch.segment_ids(), values)
    return total / batch.lengths.to(values.dtype)


def objective_bernoulli(sample_batch: TensorBatch, net: BernoulliLRINet, config, u=None):
    """Single-entry objective used by gradient checks and the trainer."""
    return net.objective(sample_batch, beta=config.beta, alpha=config.alpha,
                         tau=config.temperature, u=u)
