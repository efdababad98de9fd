"""Finite-difference verification of every gradient path the method relies on.

Four families: soft-graph edge weights w.r.t. coordinates, the plain
classifier loss w.r.t. parameters and coordinates, and both interpreter
objectives w.r.t. all parameters with frozen noise draws. Everything runs in
float64 with normalization in inference mode and dropout off.
"""

from __future__ import annotations

import numpy as np
import torch

from .backbone import PointCloudNet, TensorBatch, classification_loss
from .bernoulli import BernoulliLRINet
from .config import derive_seed
from .gaussian import GaussianLRINet
from .graph import build_knn, edge_feature_gradcheck

STEP = 1e-5
_FLOOR = 1e-4
GRAD_TOL = 1e-4  # pass threshold on the max relative error


def relative_gradient_error(loss_fn, tensors, step=STEP):
    """Max relative difference between reverse-mode and central-difference
    gradients of a scalar loss w.r.t. the given leaf tensors."""
    for t in tensors:
        t.requires_grad_(True)
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    worst = 0.0
    with torch.no_grad():
        for t, g in zip(tensors, analytic):
            grad = torch.zeros_like(t) if g is None else g
            flat = t.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + step
                up = float(loss_fn())
                flat[i] = orig - step
                down = float(loss_fn())
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                a = float(gflat[i])
                err = abs(a - fd) / max(abs(a), abs(fd), _FLOOR)
                worst = max(worst, err)
    return worst


def _random_cloud_batch(seed, n=6, dim=3, n_features=1, dtype=torch.float64):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(n, dim))
    coords -= coords.mean(axis=0)
    g = build_knn(coords, k=3)
    return TensorBatch(
        x=torch.as_tensor(rng.normal(size=(n, n_features)), dtype=dtype),
        r=torch.as_tensor(coords, dtype=dtype),
        ptr=torch.tensor([0, n]),
        y=torch.tensor([1.0], dtype=dtype),
        src=torch.as_tensor(g.src), dst=torch.as_tensor(g.dst))


def _small(seed, cls, **kw):
    torch.manual_seed(derive_seed(seed, "gradcheck-init"))
    net = cls(1, 3, hidden=8, layers=2, dropout=0.0, **kw).double()
    net.eval()
    return net


def check_edge_weights(seed=0):
    rng = np.random.default_rng(derive_seed(seed, "gradcheck-edges"))
    coords = rng.normal(size=(6, 3))
    return edge_feature_gradcheck(coords, k=3, step=STEP)


def check_backbone(seed=0):
    batch = _random_cloud_batch(derive_seed(seed, "gradcheck-backbone"))
    net = _small(seed, PointCloudNet)
    tensors = list(net.parameters()) + [batch.r]
    return relative_gradient_error(
        lambda: classification_loss(net(batch), batch.y), tensors)


def check_bernoulli(seed=0, beta=0.1, alpha=0.5, tau=1.0):
    batch = _random_cloud_batch(derive_seed(seed, "gradcheck-bern"))
    net = _small(seed, BernoulliLRINet)
    gen = torch.Generator().manual_seed(derive_seed(seed, "gradcheck-u"))
    u = torch.rand(batch.r.shape[0], generator=gen, dtype=torch.float64) * 0.9 + 0.05
    return relative_gradient_error(
        lambda: net.objective(batch, beta=beta, alpha=alpha, tau=tau, u=u)[0],
        list(net.parameters()))


def check_gaussian(seed=0, beta=0.1):
    batch = _random_cloud_batch(derive_seed(seed, "gradcheck-gauss"))
    net = _small(seed, GaussianLRINet, k=2, expansion=1.5, soft_graph=True,
                 phi="learned")
    # keep injected noise small so the finite-difference step cannot flip
    # the frozen neighbor selection
    with torch.no_grad():
        net.head.a_map.bias.fill_(-3.0)
    gen = torch.Generator().manual_seed(derive_seed(seed, "gradcheck-s"))
    s1 = torch.randn(batch.r.shape[0], 3, generator=gen, dtype=torch.float64)
    s2 = torch.randn(batch.r.shape[0], 3, generator=gen, dtype=torch.float64)
    return relative_gradient_error(
        lambda: net.objective(batch, beta=beta, draws=(s1, s2))[0],
        list(net.parameters()))


def run_suite(seed=0):
    """All four families; every entry must come in at or under 1e-4."""
    return {
        "edge_weights": check_edge_weights(seed),
        "backbone": check_backbone(seed),
        "bernoulli_objective": check_bernoulli(seed),
        "gaussian_objective": check_gaussian(seed),
    }
