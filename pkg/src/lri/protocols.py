"""End-to-end experiment protocols: multi-seed interpretation runs, the
track-count shift sweep, the soft-graph ablation, and the field-strength
sweep with fine-grained angle statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import (direction_angle_stats, field_strength_fit,
                       mean_eigen_ratio_stats, sigma_angle_stats)
from .baselines import attribution_scores
from .config import ExperimentConfig, derive_seed
from .exceptions import ValidationError
from .metrics import MetricReport, interpretation_report, mean_std
from .synth import HelixParams, generate_helix_dataset, make_splits
from .train import PreparedDataset, TrainOutput, eval_auc, interpret_dataset, train_model


@dataclass
class Split:
    train: list
    val: list
    test: list


def split_samples(samples, ratios=(0.7, 0.15, 0.15), scheme="random", seed=0):
    tr, va, te = make_splits(samples, ratios=ratios, scheme=scheme, seed=seed)
    return Split([samples[i] for i in tr], [samples[i] for i in va],
                 [samples[i] for i in te])


def prepared_for(out: TrainOutput, samples):
    return PreparedDataset(samples, out.config.k, out.scale_c, out.config.dtype,
                           out.config.point_features)


def test_classification(out: TrainOutput, samples):
    return eval_auc(out.net, prepared_for(out, samples))


def test_interpretation(out: TrainOutput, samples, m_list=(8,)):
    ds = prepared_for(out, samples)
    scores, sigmas = interpret_dataset(out.net, ds)
    auc, prec, n = interpretation_report(samples, scores, m_list)
    return {"auc": auc, "precision": prec, "n_samples": n,
            "scores": scores, "sigmas": sigmas}


def multi_seed_runs(config: ExperimentConfig, split: Split, seeds, m_list=(8,),
                    log=None):
    """Train once per seed; returns the outputs and a filled MetricReport."""
    outputs, report = [], MetricReport()
    for seed in seeds:
        out = train_model(config.replace(seed=seed), split.train, split.val, log=log)
        outputs.append(out)
        cls_auc = test_classification(out, split.test)
        if config.method in ("lri-bernoulli", "lri-gaussian"):
            interp = test_interpretation(out, split.test, m_list)
            report.add_seed(interpretation_auc=interp["auc"],
                            precision_at=interp["precision"],
                            classification_auc=cls_auc)
        else:
            report.add_seed(classification_auc=cls_auc)
    return outputs, report


def shift_table(method_outputs, params: HelixParams, test_tracks,
                n_test=300, data_seed=7777):
    """Classification AUC per (method, track count) on freshly generated
    test sets; models come in pre-trained (one per seed)."""
    rows = []
    for tracks in test_tracks:
        sets = generate_helix_dataset(params.with_tracks(int(tracks)), n_test,
                                      derive_seed(data_seed, f"shift-{tracks}"))
        row = {"tracks": int(tracks)}
        for method, outs in method_outputs.items():
            aucs = [test_classification(out, sets) for out in outs]
            row[method] = mean_std(aucs)
        rows.append(row)
    return rows


def soft_graph_ablation(config: ExperimentConfig, split: Split, seeds,
                        m_list=(8,), log=None):
    """Paired runs (same seeds, same data) with the perturbed-graph rebuild
    on and off."""
    if config.method != "lri-gaussian":
        raise ValidationError("the soft-graph ablation applies to lri-gaussian")
    _, with_report = multi_seed_runs(config.replace(soft_graph=True), split,
                                     seeds, m_list, log=log)
    _, without_report = multi_seed_runs(config.replace(soft_graph=False), split,
                                        seeds, m_list, log=log)
    return {"with": with_report, "without": without_report}


def field_sweep(params: HelixParams, b_values, lri_config: ExperimentConfig,
                erm_config: ExperimentConfig, n_samples=800, data_seed=4242,
                seed=0, m_list=(8,), log=None, train_fn=None):
    """Per field strength: train the location interpreter (in-plane mode)
    plus a plain classifier for the gradient baseline, then compare angle
    statistics and collect the eigen-ratio trend.

    ``train_fn(tag, config, split)`` replaces the training call when given
    (checkpoint caches, spies); the default trains from scratch.
    """
    if len(b_values) < 3:
        raise ValidationError("need at least 3 field strengths")
    if train_fn is None:
        def train_fn(tag, config, split):
            return train_model(config, split.train, split.val, log=log)
    rows = []
    for b in b_values:
        samples = generate_helix_dataset(params.with_field(float(b)), n_samples,
                                         derive_seed(data_seed, f"B-{b}"))
        split = split_samples(samples, seed=data_seed)
        out = train_fn(f"B-{b:g}-interp", lri_config.replace(seed=seed), split)
        interp = test_interpretation(out, split.test, m_list)
        positives = [s for s in split.test if s.y == 1]
        lri_angles = sigma_angle_stats(positives, interp["sigmas"])
        ratio, n_ratio = mean_eigen_ratio_stats(positives, interp["sigmas"])

        erm_out = train_fn(f"B-{b:g}-plain", erm_config.replace(seed=seed),
                           split)
        ds = prepared_for(erm_out, positives)
        _, dirs = attribution_scores(erm_out.net, ds, "gradgeo")
        geo_angles = direction_angle_stats(positives, dirs)
        rows.append({
            "B": float(b),
            "lri_mean_angle": lri_angles.mean_deg,
            "lri_std_angle": lri_angles.std_deg,
            "lri_eigen_ratio": ratio,
            "lri_interp_auc": interp["auc"],
            "n_points_used": lri_angles.n_used,
            "n_degenerate": lri_angles.n_excluded,
            "gradgeo_mean_angle": geo_angles.mean_deg,
            "gradgeo_std_angle": geo_angles.std_deg,
        })
    slope, intercept, corr = field_strength_fit(
        [r["B"] for r in rows], [r["lri_eigen_ratio"] for r in rows])
    return rows, {"slope": slope, "intercept": intercept, "pearson_r": corr}
