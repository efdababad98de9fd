import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lri.data import PointCloud, Sample
from lri.exceptions import ValidationError
from lri.metrics import (MetricReport, classification_auc,
                         interpretation_report, mean_std, precision_at_m,
                         roc_auc, sample_interpretation_metrics)


def exhaustive_auc(scores, labels):
    """Oracle: enumerate every (positive, negative) pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > q else (0.5 if p == q else 0.0)
               for p in pos for q in neg)
    return 100.0 * wins / (len(pos) * len(neg))


def brute_precision(scores, labels, m):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return 100.0 * sum(labels[i] for i in order[:m]) / m


class TestRocAuc:
    def test_200_random_cases_against_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for case in range(200):
            n = int(rng.integers(2, 13))
            labels = np.zeros(n, dtype=int)
            labels[rng.choice(n, size=int(rng.integers(1, n)), replace=False)] = 1
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            # quantized scores force frequent ties
            scores = rng.integers(0, 4, size=n).astype(float)
            assert roc_auc(scores, labels) == pytest.approx(
                exhaustive_auc(scores, labels), abs=1e-10), f"case {case}"

    def test_perfect_and_inverted(self):
        labels = np.array([0, 0, 1, 1])
        assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 100.0
        assert roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), labels) == 0.0

    def test_all_tied_is_50(self):
        assert roc_auc(np.ones(6), np.array([0, 1, 0, 1, 0, 1])) == 50.0

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            roc_auc(np.arange(4.0), np.ones(4, dtype=int))

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            roc_auc(np.array([1.0, np.nan]), np.array([0, 1]))

    def test_random_scores_near_50(self):
        rng = np.random.default_rng(42)
        vals = []
        for _ in range(100):
            labels = np.zeros(30, dtype=int)
            labels[rng.choice(30, size=8, replace=False)] = 1
            vals.append(roc_auc(rng.normal(size=30), labels))
        assert abs(np.mean(vals) - 50.0) < 2.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 5), min_size=2, max_size=12),
           st.integers(0, 10_000))
    def test_property_matches_oracle(self, score_ints, seed):
        n = len(score_ints)
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        scores = np.array(score_ints, dtype=float)
        assert roc_auc(scores, labels) == pytest.approx(
            exhaustive_auc(scores, labels), abs=1e-10)

    def test_monotone_transform_invariant(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=20)
        labels = rng.integers(0, 2, size=20)
        labels[0], labels[1] = 0, 1
        assert roc_auc(scores, labels) == pytest.approx(
            roc_auc(np.exp(scores), labels), abs=1e-10)


class TestPrecisionAtM:
    def test_100_random_cases_against_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 15))
            labels = rng.integers(0, 2, size=n)
            scores = rng.integers(0, 3, size=n).astype(float)
            m = int(rng.integers(1, n + 1))
            assert precision_at_m(scores, labels, m) == pytest.approx(
                brute_precision(scores, labels, m), abs=1e-10)

    def test_hand_example(self):
        scores = np.array([0.9, 0.8, 0.7, 0.1])
        labels = np.array([1, 0, 1, 1])
        assert precision_at_m(scores, labels, 2) == 50.0
        assert precision_at_m(scores, labels, 3) == pytest.approx(200.0 / 3)

    def test_tie_break_by_index(self):
        scores = np.array([1.0, 1.0, 1.0])
        labels = np.array([1, 0, 0])
        assert precision_at_m(scores, labels, 1) == 100.0  # index 0 first

    def test_m_bounds(self):
        with pytest.raises(ValidationError):
            precision_at_m(np.ones(3), np.ones(3, dtype=int), 0)
        with pytest.raises(ValidationError):
            precision_at_m(np.ones(3), np.ones(3, dtype=int), 4)


class TestMeanStd:
    def test_known_values(self):
        m, s = mean_std([1.0, 2.0, 3.0])
        assert m == 2.0 and s == pytest.approx(1.0)  # sample std, ddof=1

    def test_single_value(self):
        m, s = mean_std([4.2])
        assert m == 4.2 and s == 0.0


def _make_positive(seed, n=20, n_marked=5):
    rng = np.random.default_rng(seed)
    cloud = PointCloud.from_raw(rng.normal(size=(n, 2)), rng.normal(size=(n, 3)))
    interp = np.zeros(n, dtype=int)
    interp[rng.choice(n, size=n_marked, replace=False)] = 1
    return Sample(cloud=cloud, y=1, id=f"p{seed}", interp=interp)


def _make_negative(seed, n=20):
    rng = np.random.default_rng(seed)
    cloud = PointCloud.from_raw(rng.normal(size=(n, 2)), rng.normal(size=(n, 3)))
    return Sample(cloud=cloud, y=0, id=f"n{seed}")


class TestInterpretationReport:
    def test_macro_average_over_positives_only(self):
        pos = [_make_positive(i) for i in range(3)]
        neg = [_make_negative(10 + i) for i in range(2)]
        scores = {}
        per_sample = []
        rng = np.random.default_rng(5)
        for s in pos:
            sc = rng.normal(size=s.n)
            scores[s.id] = sc
            per_sample.append(exhaustive_auc(sc, s.interp))
        for s in neg:
            scores[s.id] = rng.normal(size=s.n)
        auc, prec, n_pos = interpretation_report(pos + neg, scores, m_list=(4,))
        assert n_pos == 3
        assert auc == pytest.approx(np.mean(per_sample), abs=1e-10)
        expect_prec = np.mean([brute_precision(scores[s.id], s.interp, 4)
                               for s in pos])
        assert prec[4] == pytest.approx(expect_prec, abs=1e-10)

    def test_perfect_scores_give_100(self):
        pos = [_make_positive(i) for i in range(2)]
        scores = {s.id: s.interp.astype(float) for s in pos}
        auc, prec, _ = interpretation_report(pos, scores, m_list=(5,))
        assert auc == 100.0 and prec[5] == 100.0

    def test_pooled_differs_from_macro_when_sizes_vary(self):
        a = _make_positive(0, n=30, n_marked=3)
        b = _make_positive(1, n=6, n_marked=3)
        rng = np.random.default_rng(2)
        scores = {a.id: rng.normal(size=30), b.id: rng.normal(size=6)}
        macro, _, _ = interpretation_report([a, b], scores)
        pooled, _, _ = interpretation_report([a, b], scores, pooled=True)
        all_scores = np.concatenate([scores[a.id], scores[b.id]])
        all_labels = np.concatenate([a.interp, b.interp])
        assert pooled == pytest.approx(exhaustive_auc(all_scores, all_labels),
                                       abs=1e-10)
        assert macro != pytest.approx(pooled)

    def test_missing_scores_rejected(self):
        pos = [_make_positive(0)]
        with pytest.raises(ValidationError):
            interpretation_report(pos, {})

    def test_length_mismatch_rejected(self):
        pos = [_make_positive(0)]
        with pytest.raises(ValidationError):
            interpretation_report(pos, {pos[0].id: np.ones(3)})

    def test_no_positives_rejected(self):
        neg = [_make_negative(0)]
        with pytest.raises(ValidationError):
            interpretation_report(neg, {neg[0].id: np.ones(20)})


class TestSampleInterpretationMetrics:
    def test_matches_components(self):
        s = _make_positive(7)
        sc = np.random.default_rng(1).normal(size=s.n)
        auc, prec = sample_interpretation_metrics(sc, s.interp, m_list=(3,))
        assert auc == pytest.approx(exhaustive_auc(sc, s.interp))
        assert prec[3] == pytest.approx(brute_precision(sc, s.interp, 3))


class TestMetricReport:
    def test_summary_mean_std(self):
        rep = MetricReport()
        rep.add_seed(interpretation_auc=80.0, precision_at={8: 70.0},
                     classification_auc=90.0)
        rep.add_seed(interpretation_auc=90.0, precision_at={8: 80.0},
                     classification_auc=92.0)
        out = rep.summary()
        assert out["interpretation_auc"][0] == pytest.approx(85.0)
        assert out["precision@8"][0] == pytest.approx(75.0)
        assert out["classification_auc"] == (pytest.approx(91.0),
                                             pytest.approx(np.sqrt(2.0)))

    def test_out_of_range_rejected(self):
        rep = MetricReport()
        with pytest.raises(ValidationError):
            rep.add_seed(interpretation_auc=101.0)


class TestClassificationAuc:
    def test_same_as_roc_auc(self):
        rng = np.random.default_rng(9)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        scores = rng.normal(size=40)
        assert classification_auc(labels, scores) == pytest.approx(
            roc_auc(scores, labels))
