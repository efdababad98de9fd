"""Post-hoc gradient attributions on a trained classifier.

Both baselines differentiate the predicted-class logit (sign-flipped for
predicted negatives) and never mutate the model.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .backbone import PointCloudNet, TensorBatch, pool_sum
from .exceptions import ValidationError


@dataclass(frozen=True)
class AttributionResult:
    scores: np.ndarray
    method: str
    direction: Optional[np.ndarray] = None   # in-plane unit gradient, GradGeo only

    def __post_init__(self):
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("attribution scores must be finite")


def _classifier(net):
    return net if isinstance(net, PointCloudNet) else net.clf


def _signed_logit_grads(net, batch: TensorBatch, wrt_coords, target="logit"):
    clf = _classifier(net)
    clf.eval()
    r = batch.r.detach().clone().requires_grad_(wrt_coords)
    z = clf.encoder(batch.x, r, batch.src, batch.dst)
    logits = clf.head(pool_sum(z, batch))
    sign = torch.where(logits.detach() >= 0, 1.0, -1.0).to(logits.dtype)
    if target == "logit":
        scalar = (sign * logits).sum()
    elif target == "loss":
        scalar = torch.nn.functional.binary_cross_entropy_with_logits(logits, batch.y)
    else:
        raise ValidationError(f"unknown gradient target {target!r}")
    inputs = [z] + ([r] if wrt_coords else [])
    grads = torch.autograd.grad(scalar, inputs)
    emb_grad = grads[0]
    coord_grad = grads[1] if wrt_coords else None
    return coord_grad, emb_grad, z.detach(), logits.detach()


def _split(values, ptr):
    ptr = ptr.numpy()
    return [values[ptr[i]:ptr[i + 1]] for i in range(len(ptr) - 1)]


def grad_geo(net, batch: TensorBatch, target="logit"):
    """Coordinate-gradient saliency: score is the gradient norm, direction
    its in-plane component (None where the in-plane gradient vanishes)."""
    coord_grad, _, _, _ = _signed_logit_grads(net, batch, wrt_coords=True, target=target)
    g = coord_grad.numpy().astype(np.float64)
    results = []
    for sample_g in _split(g, batch.ptr):
        scores = np.linalg.norm(sample_g, axis=1)
        dirs = np.empty((len(sample_g), 2))
        dirs.fill(np.nan)
        plane = sample_g[:, :2]
        norms = np.linalg.norm(plane, axis=1)
        ok = norms > 1e-12
        dirs[ok] = plane[ok] / norms[ok, None]
        results.append(AttributionResult(scores=scores, method="gradgeo",
                                         direction=dirs))
    return results


def grad_gam(net, batch: TensorBatch, target="logit"):
    """Class-activation scores: channel weights are the per-sample mean
    embedding gradients; per-point score is the rectified weighted sum."""
    _, emb_grad, z, _ = _signed_logit_grads(net, batch, wrt_coords=False, target=target)
    results = []
    for gz, zz in zip(_split(emb_grad.numpy(), batch.ptr),
                      _split(z.numpy(), batch.ptr)):
        weights = gz.mean(axis=0)
        scores = np.maximum(zz @ weights, 0.0).astype(np.float64)
        results.append(AttributionResult(scores=scores, method="gradgam"))
    return results


def random_attribution(n, rng):
    return AttributionResult(scores=rng.uniform(size=n), method="random")


def random_direction(rng):
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return np.array([np.cos(theta), np.sin(theta)])


def parameter_digest(net):
    """Stable hash of all parameters and buffers (mutation detector)."""
    h = hashlib.sha256()
    for name, t in sorted(net.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.detach().numpy()).tobytes())
    return h.hexdigest()


def attribution_scores(net, ds, method, seed=0, batch_size=256):
    """Scores (and directions where defined) for a whole dataset, keyed by
    sample id."""
    scores, dirs = {}, {}
    rng = np.random.default_rng(seed)
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        batch = ds.batch(idx)
        if method == "gradgeo":
            results = grad_geo(net, batch)
        elif method == "gradgam":
            results = grad_gam(net, batch)
        elif method == "random":
            results = [random_attribution(int(n), rng) for n in batch.lengths]
        else:
            raise ValidationError(f"unknown attribution method {method!r}")
        for i, res in zip(idx, results):
            sid = ds.samples[i].id
            scores[sid] = res.scores
            if res.direction is not None:
                d = [None if np.any(np.isnan(row)) else row for row in res.direction]
                dirs[sid] = d
    return scores, dirs
