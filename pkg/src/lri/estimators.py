"""Scikit-learn style estimators around the training loop.

`fit` consumes a list of `Sample`s (labels ride along on the samples), holds
out a validation slice for model selection, and freezes the best-epoch
weights. `interpret` returns per-point importance scores for the two
interpreter methods.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .bernoulli import BernoulliLRINet
from .config import ExperimentConfig
from .data import check_samples
from .exceptions import ValidationError
from .gaussian import GaussianLRINet
from .io import load_checkpoint, save_checkpoint
from .synth import make_splits
from .train import (PreparedDataset, TrainOutput, build_net, eval_probabilities,
                    interpret_dataset, train_model)

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def save_model(path, out: TrainOutput, extra_meta=None):
    """Checkpoint a trained model; arrays round-trip bit-exactly."""
    state = out.net.state_dict()
    arrays = {k: v.detach().numpy() for k, v in state.items()}
    meta = {
        "config": out.config.to_dict(),
        "tensor_dtypes": {k: str(v.dtype).replace("torch.", "") for k, v in state.items()},
        "scale_c": out.scale_c,
        "in_features": out.in_features,
        "dim": out.dim,
        "phi_length_scale": out.phi_length_scale,
        "best_epoch": out.best_epoch,
        "best_val_auc": out.best_val_auc,
    }
    if extra_meta:
        meta.update(extra_meta)
    return save_checkpoint(path, arrays, meta)


def load_model(path):
    """Rebuild a checkpointed model; returns (TrainOutput, meta)."""
    arrays, meta = load_checkpoint(path)
    config = ExperimentConfig.from_dict(meta["config"])
    net = build_net(config, meta["in_features"], meta["dim"],
                    meta["phi_length_scale"]).to(
                        torch.float64 if config.dtype == "float64" else torch.float32)
    state = {k: torch.as_tensor(v).to(getattr(torch, meta["tensor_dtypes"][k]))
             for k, v in arrays.items()}
    net.load_state_dict(state)
    net.eval()
    out = TrainOutput(net=net, config=config, scale_c=meta["scale_c"],
                      in_features=meta["in_features"], dim=meta["dim"],
                      best_epoch=meta["best_epoch"], best_val_auc=meta["best_val_auc"],
                      phi_length_scale=meta["phi_length_scale"])
    return out, meta


class PointCloudClassifier(BaseEstimator):
    """Point-cloud classifier with optional built-in interpretation.

    Parameters mirror `ExperimentConfig`; `method` selects between the plain
    classifier ("erm") and the two interpreter variants ("lri-bernoulli",
    "lri-gaussian").
    """

    def __init__(self, method="erm", k=5, layers=4, hidden_size=64, dropout=0.2,
                 epochs=60, pretrain_epochs=40, learning_rate=1e-3,
                 weight_decay=1e-5, batch_size=128, beta=0.1, alpha=0.5,
                 temperature=1.0, rescale_c=None, rescale_percentile=10.0,
                 expansion=1.5, seed=0, aggregation="mean", soft_graph=True,
                 shared_encoder=True, mask_pooling=True, covariance_2d=False,
                 geometric_moments=False, phi="learned", phi_length_scale=None,
                 smooth="none", point_features="raw", dtype="float32",
                 validation_fraction=0.15):
        self.method = method
        self.k = k
        self.layers = layers
        self.hidden_size = hidden_size
        self.dropout = dropout
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.beta = beta
        self.alpha = alpha
        self.temperature = temperature
        self.rescale_c = rescale_c
        self.rescale_percentile = rescale_percentile
        self.expansion = expansion
        self.seed = seed
        self.aggregation = aggregation
        self.soft_graph = soft_graph
        self.shared_encoder = shared_encoder
        self.mask_pooling = mask_pooling
        self.covariance_2d = covariance_2d
        self.geometric_moments = geometric_moments
        self.phi = phi
        self.phi_length_scale = phi_length_scale
        self.smooth = smooth
        self.point_features = point_features
        self.dtype = dtype
        self.validation_fraction = validation_fraction

    def config(self):
        return ExperimentConfig(**{f: getattr(self, f) for f in _CONFIG_FIELDS})

    def fit(self, samples, y=None, validation=None):
        """Train on samples (labels are read off the samples; `y` is accepted
        for API compatibility and must match when given)."""
        config = self.config()
        check_samples(samples, require_both_classes=True)
        if y is not None and list(y) != [s.y for s in samples]:
            raise ValidationError("y disagrees with the labels on the samples")
        if validation is None:
            frac = self.validation_fraction
            if not 0 < frac < 1:
                raise ValidationError("validation_fraction must lie in (0, 1)")
            tr, va, _ = make_splits(samples, ratios=(1 - frac, frac, 0.0),
                                    seed=config.seed)
            train = [samples[i] for i in tr]
            validation = [samples[i] for i in va]
        else:
            train = list(samples)
        self.output_ = train_model(config, train, validation)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.output_.in_features
        self.history_ = self.output_.history
        return self

    def _fitted(self):
        if not hasattr(self, "output_"):
            raise ValidationError("estimator is not fitted; call fit first")
        return self.output_

    def _prepared(self, samples):
        out = self._fitted()
        return PreparedDataset(samples, out.config.k, out.scale_c, out.config.dtype,
                               out.config.point_features)

    def predict_proba(self, samples):
        p = eval_probabilities(self._fitted().net, self._prepared(samples))
        return np.column_stack([1.0 - p, p])

    def predict(self, samples):
        return (self.predict_proba(samples)[:, 1] >= 0.5).astype(np.int64)

    def score(self, samples, y=None):
        """Classification ROC AUC as a fraction in [0, 1]."""
        from .metrics import classification_auc
        labels = np.array([s.y for s in samples]) if y is None else np.asarray(y)
        return classification_auc(labels, self.predict_proba(samples)[:, 1]) / 100.0

    def interpret(self, samples):
        """Per-sample importance score arrays, in input order."""
        out = self._fitted()
        if not isinstance(out.net, (BernoulliLRINet, GaussianLRINet)):
            raise ValidationError(f"method {self.method!r} has no interpreter; "
                                  "use the gradient baselines instead")
        scores, _ = interpret_dataset(out.net, self._prepared(samples))
        return [scores[s.id] for s in samples]

    def covariances(self, samples):
        """Per-sample arrays of per-point covariance matrices (location
        interpreter only)."""
        out = self._fitted()
        if not isinstance(out.net, GaussianLRINet):
            raise ValidationError("covariances require method='lri-gaussian'")
        _, sigmas = interpret_dataset(out.net, self._prepared(samples))
        return [sigmas[s.id] for s in samples]

    def save(self, path):
        return save_model(path, self._fitted(),
                          extra_meta={"validation_fraction": self.validation_fraction})

    @classmethod
    def load(cls, path):
        out, meta = load_model(path)
        est = cls(**out.config.to_dict())
        est.validation_fraction = meta.get("validation_fraction", 0.15)
        est.output_ = out
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = out.in_features
        est.history_ = []
        return est


class LRIBernoulli(PointCloudClassifier):
    """Existence-importance interpreter (keep-probability ranking)."""

    def __init__(self, k=5, layers=4, hidden_size=64, dropout=0.2, epochs=60,
                 pretrain_epochs=40, learning_rate=1e-3, weight_decay=1e-5,
                 batch_size=128, beta=0.1, alpha=0.5, temperature=1.0,
                 rescale_c=None, rescale_percentile=10.0, expansion=1.5, seed=0,
                 aggregation="mean", shared_encoder=True, mask_pooling=True,
                 smooth="none", point_features="raw", dtype="float32",
                 validation_fraction=0.15):
        super().__init__(method="lri-bernoulli", k=k, layers=layers,
                         hidden_size=hidden_size, dropout=dropout, epochs=epochs,
                         pretrain_epochs=pretrain_epochs, learning_rate=learning_rate,
                         weight_decay=weight_decay, batch_size=batch_size, beta=beta,
                         alpha=alpha, temperature=temperature, rescale_c=rescale_c,
                         rescale_percentile=rescale_percentile, expansion=expansion,
                         seed=seed, aggregation=aggregation,
                         shared_encoder=shared_encoder, mask_pooling=mask_pooling,
                         smooth=smooth, point_features=point_features, dtype=dtype,
                         validation_fraction=validation_fraction)


class LRIGaussian(PointCloudClassifier):
    """Location-importance interpreter (covariance-determinant ranking)."""

    def __init__(self, k=5, layers=4, hidden_size=64, dropout=0.2, epochs=60,
                 pretrain_epochs=40, learning_rate=1e-3, weight_decay=1e-5,
                 batch_size=128, beta=0.1, alpha=0.5, temperature=1.0,
                 rescale_c=None, rescale_percentile=10.0, expansion=1.5, seed=0,
                 aggregation="mean", soft_graph=True, shared_encoder=True,
                 covariance_2d=False, geometric_moments=False, phi="learned",
                 phi_length_scale=None, smooth="none", point_features="raw",
                 dtype="float32", validation_fraction=0.15):
        super().__init__(method="lri-gaussian", k=k, layers=layers,
                         hidden_size=hidden_size, dropout=dropout, epochs=epochs,
                         pretrain_epochs=pretrain_epochs, learning_rate=learning_rate,
                         weight_decay=weight_decay, batch_size=batch_size, beta=beta,
                         alpha=alpha, temperature=temperature, rescale_c=rescale_c,
                         rescale_percentile=rescale_percentile, expansion=expansion,
                         seed=seed, aggregation=aggregation, soft_graph=soft_graph,
                         shared_encoder=shared_encoder, covariance_2d=covariance_2d,
                         geometric_moments=geometric_moments, phi=phi,
                         phi_length_scale=phi_length_scale, smooth=smooth,
                         point_features=point_features, dtype=dtype,
                         validation_fraction=validation_fraction)
