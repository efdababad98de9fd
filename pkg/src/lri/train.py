"""Training loop shared by the plain classifier and both interpreters.

All randomness flows from the config seed through named sub-streams, so two
runs with the same (config, data) produce identical models. Interpreter
methods pretrain the classifier on clean inputs first, then optimize the
joint objective; model selection keeps the epoch with the best validation
classification AUC (joint-phase epochs only, when an interpreter exists).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .backbone import PointCloudNet, TensorBatch, classification_loss
from .bernoulli import BernoulliLRINet
from .config import ExperimentConfig, derive_seed
from .data import check_samples, choose_rescale_constant
from .exceptions import ConfigError, ValidationError
from .gaussian import GaussianLRINet
from .graph import build_knn
from .metrics import classification_auc

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


def choose_scale(samples, percentile=10.0):
    """Dataset-level rescale constant: the requested percentile of all
    absolute coordinate entries maps to 1."""
    pooled = np.concatenate([np.abs(s.cloud.r).ravel() for s in samples])
    return choose_rescale_constant(pooled.reshape(-1, 1), percentile)


class PreparedDataset:
    """Rescaled tensors plus per-sample hard k-nn graphs, built once."""

    def __init__(self, samples, k, scale_c, dtype="float32", point_features="raw"):
        check_samples(samples)
        if scale_c <= 0:
            raise ValidationError("scale constant must be positive")
        if dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")
        if point_features not in ("raw", "unit-position"):
            raise ConfigError("point_features must be 'raw' or 'unit-position'")
        self.samples = list(samples)
        self.k = k
        self.scale_c = float(scale_c)
        self.dtype = _DTYPES[dtype]
        self.point_features = point_features
        dims = {s.cloud.dim for s in samples}
        feats = {s.cloud.X.shape[1] for s in samples}
        if len(dims) != 1 or len(feats) != 1:
            raise ValidationError("samples must share coordinate and feature dims")
        self.dim = dims.pop()
        self.n_features = self.dim if point_features == "unit-position" else feats.pop()
        self._x, self._r, self._y = [], [], []
        self._src, self._dst = [], []
        for s in samples:
            coords = s.cloud.r * self.scale_c
            g = build_knn(coords, k)
            if point_features == "unit-position":
                # unit position vectors stand in for the stored features; a
                # point at the exact origin keeps a zero vector
                norms = np.linalg.norm(coords, axis=1, keepdims=True)
                x = coords / np.where(norms > 0, norms, 1.0)
            else:
                x = np.array(s.cloud.X)
            self._x.append(torch.tensor(x, dtype=self.dtype))
            self._r.append(torch.tensor(coords, dtype=self.dtype))
            self._y.append(float(s.y))
            self._src.append(torch.as_tensor(g.src))
            self._dst.append(torch.as_tensor(g.dst))

    def __len__(self):
        return len(self.samples)

    def batch(self, indices):
        xs, rs, srcs, dsts, ys, ptr = [], [], [], [], [], [0]
        offset = 0
        for i in indices:
            xs.append(self._x[i])
            rs.append(self._r[i])
            srcs.append(self._src[i] + offset)
            dsts.append(self._dst[i] + offset)
            ys.append(self._y[i])
            offset += self._x[i].shape[0]
            ptr.append(offset)
        return TensorBatch(x=torch.cat(xs), r=torch.cat(rs),
                           ptr=torch.as_tensor(ptr, dtype=torch.long),
                           y=torch.as_tensor(ys, dtype=self.dtype),
                           src=torch.cat(srcs), dst=torch.cat(dsts))

    def batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])

    def median_knn_distance(self):
        dists = [float(torch.linalg.vector_norm(self._r[i][self._dst[i]]
                                                - self._r[i][self._src[i]], dim=1).median())
                 for i in range(len(self)) if len(self._src[i])]
        return float(np.median(dists))


def build_net(config: ExperimentConfig, in_features, dim, phi_length_scale=1.0):
    common = dict(hidden=config.hidden_size, layers=config.layers,
                  dropout=config.dropout, aggregation=config.aggregation)
    if config.method == "lri-bernoulli":
        return BernoulliLRINet(in_features, dim, mask_pooling=config.mask_pooling,
                               shared_encoder=config.shared_encoder, **common)
    if config.method == "lri-gaussian":
        return GaussianLRINet(in_features, dim, k=config.k, expansion=config.expansion,
                              soft_graph=config.soft_graph,
                              covariance_2d=config.covariance_2d, phi=config.phi,
                              phi_length_scale=phi_length_scale,
                              shared_encoder=config.shared_encoder,
                              geometric_moments=config.geometric_moments, **common)
    return PointCloudNet(in_features, dim, mask_pooling=config.mask_pooling, **common)


@dataclass
class TrainOutput:
    net: torch.nn.Module
    config: ExperimentConfig
    scale_c: float
    in_features: int
    dim: int
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_auc: float = 0.0
    wall_clock_s: float = 0.0
    phi_length_scale: float = 1.0


@torch.no_grad()
def eval_logits(net, ds: PreparedDataset, batch_size=256):
    net.eval()
    out = []
    for batch in ds.batches(batch_size):
        if isinstance(net, (BernoulliLRINet, GaussianLRINet)):
            logits = net.eval_logits(batch)
        else:
            logits = net(batch)
        out.append(logits.double())
    return torch.cat(out).numpy()


def eval_probabilities(net, ds: PreparedDataset, batch_size=256):
    from scipy.special import expit
    return expit(eval_logits(net, ds, batch_size))


def eval_auc(net, ds: PreparedDataset, batch_size=256):
    logits = eval_logits(net, ds, batch_size)
    labels = np.array([s.y for s in ds.samples])
    return classification_auc(labels, logits)


def train_model(config: ExperimentConfig, train_samples, val_samples,
                log=None) -> TrainOutput:
    start = time.time()
    check_samples(train_samples, require_both_classes=True)
    scale_c = config.rescale_c
    if scale_c is None:
        scale_c = choose_scale(train_samples, config.rescale_percentile)
    train_ds = PreparedDataset(train_samples, config.k, scale_c, config.dtype,
                               config.point_features)
    val_ds = PreparedDataset(val_samples, config.k, scale_c, config.dtype,
                             config.point_features)

    torch.manual_seed(derive_seed(config.seed, "init"))
    phi_scale = config.phi_length_scale
    if phi_scale is None:
        phi_scale = train_ds.median_knn_distance()
    net = build_net(config, train_ds.n_features, train_ds.dim, phi_scale)
    net = net.to(_DTYPES[config.dtype])
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate,
                           weight_decay=config.weight_decay)

    is_lri = isinstance(net, (BernoulliLRINet, GaussianLRINet))
    pretrain = config.pretrain_epochs if is_lri else 0
    order_rng = np.random.default_rng(derive_seed(config.seed, "batches"))
    torch.manual_seed(derive_seed(config.seed, "noise"))

    out = TrainOutput(net=net, config=config, scale_c=scale_c,
                      in_features=train_ds.n_features, dim=train_ds.dim,
                      phi_length_scale=phi_scale)
    best_state = None
    for epoch in range(config.epochs):
        net.train()
        phase = "pretrain" if epoch < pretrain else "joint"
        losses, ces, kls = [], [], []
        for batch in train_ds.batches(config.batch_size,
                                      order_rng.permutation(len(train_ds))):
            opt.zero_grad()
            if phase == "pretrain":
                loss = classification_loss(net.clf(batch), batch.y)
                comps = {"ce": loss.detach().item(), "kl": 0.0}
            elif isinstance(net, BernoulliLRINet):
                loss, comps = net.objective(batch, beta=config.beta,
                                            alpha=config.alpha,
                                            tau=config.temperature)
            elif isinstance(net, GaussianLRINet):
                loss, comps = net.objective(batch, beta=config.beta)
            else:
                loss = classification_loss(net(batch), batch.y)
                comps = {"ce": loss.detach().item(), "kl": 0.0}
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
            ces.append(comps["ce"])
            kls.append(comps["kl"])
        val_auc = float(eval_auc(net, val_ds, config.batch_size))
        row = {"epoch": epoch, "phase": phase, "loss": float(np.mean(losses)),
               "ce": float(np.mean(ces)), "kl": float(np.mean(kls)),
               "val_auc": val_auc}
        out.history.append(row)
        if log:
            log(row)
        selectable = phase == "joint" or not is_lri
        if selectable and val_auc > out.best_val_auc:
            out.best_val_auc = val_auc
            out.best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
    if best_state is not None:
        net.load_state_dict(best_state)
    out.wall_clock_s = time.time() - start
    return out


def interpret_dataset(net, ds: PreparedDataset, batch_size=256):
    """Per-sample interpretation scores keyed by sample id; Gaussian models
    also return the per-point covariances."""
    net.eval()
    scores, sigmas = {}, {}
    for start in range(0, len(ds), batch_size):
        idx = np.arange(start, min(start + batch_size, len(ds)))
        batch = ds.batch(idx)
        if isinstance(net, GaussianLRINet):
            s, sig = net.interpret(batch)
        elif isinstance(net, BernoulliLRINet):
            s, sig = net.interpret(batch), None
        else:
            raise ValidationError("model has no interpreter head")
        ptr = batch.ptr.numpy()
        for j, i in enumerate(idx):
            lo, hi = ptr[j], ptr[j + 1]
            scores[ds.samples[i].id] = s[lo:hi]
            if sig is not None:
                sigmas[ds.samples[i].id] = sig[lo:hi]
    return (scores, sigmas) if sigmas else (scores, None)
