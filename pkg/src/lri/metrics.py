"""Ranking metrics on the paper-style 0-100 percent scale.

Interpretation metrics are computed per positive sample and macro-averaged
(each sample counts once regardless of size); a pooled variant is exposed
for comparison but the per-sample form is canonical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .exceptions import ValidationError


def roc_auc(scores, labels):
    """Probability (percent) that a random positive outscores a random
    negative, ties counted half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    if not np.all(np.isfinite(scores)):
        raise ValidationError("scores must be finite")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("both classes must be present")
    ranks = rankdata(scores)
    wins = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return 100.0 * wins / (n_pos * n_neg)


def precision_at_m(scores, labels, m):
    """Fraction (percent) of positives among the m best-scored points;
    score ties broken by smaller index for determinism."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(scores)
    if not 1 <= m <= n:
        raise ValidationError(f"m must lie in [1, {n}], got {m}")
    top = np.lexsort((np.arange(n), -scores))[:m]
    return 100.0 * labels[top].sum() / m


def _check_percent(name, value):
    if not np.isfinite(value) or not 0 <= value <= 100:
        raise ValidationError(f"{name} must lie in [0, 100], got {value}")


@dataclass
class MetricReport:
    """Per-seed metric values with mean/std summaries, all in percent."""

    interpretation_auc: list = field(default_factory=list)
    precision_at: dict = field(default_factory=dict)
    classification_auc: list = field(default_factory=list)

    def add_seed(self, interpretation_auc=None, precision_at=None,
                 classification_auc=None):
        if interpretation_auc is not None:
            _check_percent("interpretation_auc", interpretation_auc)
            self.interpretation_auc.append(float(interpretation_auc))
        for m, v in (precision_at or {}).items():
            _check_percent(f"precision@{m}", v)
            self.precision_at.setdefault(int(m), []).append(float(v))
        if classification_auc is not None:
            _check_percent("classification_auc", classification_auc)
            self.classification_auc.append(float(classification_auc))

    def summary(self):
        out = {}
        for name, values in [("interpretation_auc", self.interpretation_auc),
                             ("classification_auc", self.classification_auc)]:
            if values:
                out[name] = mean_std(values)
        for m, values in sorted(self.precision_at.items()):
            out[f"precision@{m}"] = mean_std(values)
        return out


def mean_std(values):
    values = np.asarray(values, dtype=np.float64)
    std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values.mean()), std


def sample_interpretation_metrics(scores, interp, m_list=()):
    auc = roc_auc(scores, interp)
    prec = {m: precision_at_m(scores, interp, m) for m in m_list}
    return auc, prec


def interpretation_report(samples, scores_by_id, m_list=(8,), pooled=False):
    """Interpretation AUC and precision@m over the positive samples.

    ``scores_by_id`` maps sample id to a per-point score vector. Macro
    averaging per sample is the default; ``pooled`` concatenates all points
    first (reported for comparison only).
    """
    aucs, precs = [], {m: [] for m in m_list}
    all_scores, all_labels = [], []
    for s in samples:
        if s.y != 1:
            continue
        if s.interp is None:
            raise ValidationError(f"sample {s.id} lacks interpretation labels")
        scores = np.asarray(scores_by_id[s.id], dtype=np.float64)
        if len(scores) != s.cloud.n:
            raise ValidationError(f"sample {s.id}: score length mismatch")
        auc, prec = sample_interpretation_metrics(scores, s.interp, m_list)
        aucs.append(auc)
        for m in m_list:
            precs[m].append(prec[m])
        all_scores.append(scores)
        all_labels.append(s.interp)
    if not aucs:
        raise ValidationError("no positive samples to evaluate")
    if pooled:
        return float(roc_auc(np.concatenate(all_scores), np.concatenate(all_labels)))
    return (float(np.mean(aucs)),
            {m: float(np.mean(v)) for m, v in precs.items()},
            len(aucs))


def classification_auc(labels, probabilities):
    return roc_auc(probabilities, labels)
