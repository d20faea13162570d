import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snapstack.metrics import (
    ConfusionMatrix,
    auc_ci,
    confusion,
    error_ci,
    evaluate,
    hanley_mcneil_se,
    mean_headlines,
    metrics,
    rates,
    roc_auc,
    roc_curve,
)


def pairwise_auc(is_positive, scores):
    """O(n^2) rank-sum oracle: P(score_pos > score_neg) + 0.5 * P(tie)."""
    pos = [s for s, p in zip(scores, is_positive) if p]
    neg = [s for s, p in zip(scores, is_positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


class TestConfusion:
    def test_perfect(self):
        cm = confusion([0, 1, 2, 2], [0, 1, 2, 2])
        assert cm.counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]

    def test_all_predicted_zero(self):
        cm = confusion([0, 1, 2], [0, 0, 0])
        assert cm.counts.sum(axis=1).tolist() == [1, 1, 1]
        assert cm.counts.sum(axis=0).tolist() == [3, 0, 0]
        assert cm.one_vs_rest(0) == (1, 2, 0, 0)

    @pytest.mark.parametrize("t,p", [([0, 1], [0]), ([0, 3], [0, 1]), ([-1], [0])])
    def test_invalid(self, t, p):
        with pytest.raises(ValueError):
            confusion(t, p)

    @settings(max_examples=50)
    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
    def test_one_vs_rest_partitions_samples(self, pairs):
        t, p = zip(*pairs)
        cm = confusion(t, p)
        for c in range(3):
            tp, fp, fn, tn = cm.one_vs_rest(c)
            assert min(tp, fp, fn, tn) >= 0 and tp + fp + fn + tn == len(pairs)


class TestRates:
    def test_golden(self):
        r = rates(tp=8, fp=2, fn=2, tn=88)
        assert (r["accuracy"], r["ppv"], r["sensitivity"], r["specificity"], r["f1"]) == (0.96, 0.8, 0.8, 88 / 90, 0.8)

    def test_diagonal(self):
        rep = metrics(ConfusionMatrix(np.diag([3, 4, 5])))
        for per in rep.per_class:
            assert all(v == 1.0 for v in per.values())
        assert rep.accuracy_overall == 1.0 and rep.error == 0.0 and rep.error_ci == 0.0

    def test_macro_mean(self):
        cm = ConfusionMatrix(np.array([[10, 0, 0], [1, 9, 0], [2, 0, 8]]))
        assert metrics(cm).macro["sensitivity"] == pytest.approx(0.9, abs=1e-15)

    def test_undefined_ppv(self):
        cm = ConfusionMatrix(np.array([[2, 0, 0], [1, 0, 0], [0, 0, 3]]))
        with pytest.warns(UserWarning, match="ppv"):
            rep = metrics(cm)
        assert rep.per_class[1]["ppv"] is None
        assert rep.macro["ppv"] == pytest.approx((2 / 3 + 1) / 2)

    def test_empty(self):
        with pytest.raises(ValueError):
            metrics(ConfusionMatrix(np.zeros((3, 3), int)))


class TestErrorInterval:
    @pytest.mark.parametrize("e,n,printed", [(0.0306, 555, 0.0142), (0.0866, 554, 0.0235)])
    def test_reference_folds(self, e, n, printed):
        assert abs(error_ci(e, n) - printed) <= 0.0005

    def test_zero_error(self):
        assert error_ci(0.0, 17) == 0.0

    @pytest.mark.parametrize("e,n", [(-0.1, 10), (1.1, 10), (0.5, 0)])
    def test_invalid(self, e, n):
        with pytest.raises(ValueError):
            error_ci(e, n)


class TestAUC:
    def test_perfect(self):
        assert roc_curve([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1])[3] == 1.0

    def test_all_tied(self):
        fpr, tpr, _, auc = roc_curve([1, 0, 1, 0], [0.5] * 4)
        assert auc == 0.5 and fpr.tolist() == [0, 1] and tpr.tolist() == [0, 1]

    def test_six_sample_toy(self):
        pos = [True, False, True, True, False, False]
        s = [0.9, 0.7, 0.7, 0.4, 0.3, 0.5]
        assert roc_curve(pos, s)[3] == pairwise_auc(pos, s) == 6.5 / 9

    def test_curve_is_monotone(self):
        gen = np.random.default_rng(0)
        fpr, tpr, thr, _ = roc_curve(gen.integers(0, 2, 50).astype(bool), gen.uniform(size=50))
        assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0) and np.all(np.diff(thr) < 0)

    def test_one_class_only(self):
        with pytest.raises(ValueError):
            roc_curve([1, 1], [0.1, 0.2])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.booleans(), st.integers(0, 5)), min_size=2, max_size=40))
    def test_matches_pairwise_oracle_with_ties(self, pairs):
        pos, s = zip(*pairs)
        if all(pos) or not any(pos):
            return
        assert roc_curve(pos, s)[3] == pairwise_auc(pos, s)

    def test_macro(self):
        y = np.array([0, 1, 2, 0, 1, 2])
        S = np.eye(3)[y]
        out = roc_auc(y, S)
        assert out["auc"] == [1.0, 1.0, 1.0] and out["macro_auc"] == 1.0

    def test_absent_class(self):
        with pytest.raises(ValueError, match="class 2"):
            roc_auc([0, 1, 0], np.zeros((3, 3)))


class TestAUCInterval:
    def test_separable(self):
        y = np.repeat([0, 1, 2], 10)
        assert auc_ci(y, np.eye(3)[y], resamples=200) == 0.0

    def test_reproducible(self):
        gen = np.random.default_rng(0)
        y = gen.integers(0, 3, 60)
        S = gen.dirichlet(np.ones(3), 60)
        assert auc_ci(y, S, 300, seed=4) == auc_ci(y, S, 300, seed=4)

    def test_close_to_hanley_mcneil(self):
        gen = np.random.default_rng(1)
        y = np.repeat([0, 1], 100)
        s = gen.normal(size=200) + 1.2 * y
        S = np.column_stack([-s, s])  # both one-vs-rest AUCs equal the AUC of s
        auc = roc_curve(y == 1, s)[3]
        analytic = 1.959964 * hanley_mcneil_se(auc, 100, 100)
        boot = auc_ci(y, S, resamples=1000, seed=0)
        assert abs(boot - analytic) <= 0.3 * analytic

    def test_too_few_resamples(self):
        with pytest.raises(ValueError):
            auc_ci([0, 1, 2], np.eye(3), resamples=10)


class TestReport:
    def test_perfect_classifier(self):
        y = np.repeat([0, 1, 2], 5)
        rep = evaluate(y, np.eye(3)[y], resamples=100)
        assert rep.accuracy_overall == 1.0 and rep.macro_auc == 1.0 and rep.macro_auc_ci == 0.0

    def test_serialization(self):
        gen = np.random.default_rng(2)
        y = np.repeat([0, 1, 2], 10)
        rep = evaluate(y, gen.dirichlet(np.ones(3), 30), resamples=100, meta={"fold": 1})
        d = json.loads(rep.dumps())
        assert d["samples"] == 30 and d["meta"] == {"fold": 1}
        assert set(d["per_class"]) == {"COVID-19", "Normal", "Pneumonia"}
        assert {"tp", "fp", "fn", "tn", "auc", "f1"} <= set(d["per_class"]["Normal"])
        tables = rep.roc_tables()
        assert tables["COVID-19"].splitlines()[0] == "fpr,tpr"
        assert tables["COVID-19"].splitlines()[1] == "0.0,0.0"

    def test_explicit_predictions(self):
        y = np.array([0, 1, 2, 0])
        S = np.full((4, 3), 1 / 3)
        rep = evaluate(y, S, predicted=[0, 1, 2, 0], resamples=100)
        assert rep.accuracy_overall == 1.0 and rep.macro_auc == 0.5

    def test_mean_row(self):
        rows = [{"a": 0.1, "b": None}, {"a": 0.4, "b": 2.0}, {"a": 0.7, "b": 4.0}]
        mean = mean_headlines(rows)
        assert abs(mean["a"] - 0.4) < 1e-12 and mean["b"] == 3.0
