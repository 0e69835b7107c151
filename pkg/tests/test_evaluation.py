import math

import numpy as np
import pytest

from oracles import auc_pairwise
from proboost.errors import DegenerateDifferences, InvalidParameter
from proboost.evaluation import (
    auc_ova,
    auc_per_class,
    confusion_ova,
    evaluate_predictions,
    macro_metrics,
    paired_t_statistic,
    paired_t_test_one_tailed,
    roi,
    student_t_sf,
    summarize_runs,
)
from proboost.numerics import PrngStream


def test_perfect_predictions():
    y = [0, 1, 2, 0, 1, 2]
    r = macro_metrics(y, y, 3)
    assert (r.acc, r.sen, r.spe, r.ppv, r.npv) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_six_sample_confusion():
    y, p = [0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]
    c = confusion_ova(y, p, 3)
    assert (c.tp[0], c.fn[0], c.fp[0], c.tn[0]) == (1, 1, 1, 3)
    r = macro_metrics(y, p, 3)
    pc = r.per_class
    assert (pc["sen"][0], pc["spe"][0], pc["ppv"][0], pc["npv"][0]) == (0.5, 0.75, 0.5, 0.75)
    # hand counts: class 1 TP2 FP1 TN3 FN0, class 2 TP1 FP0 TN4 FN1
    assert r.sen == pytest.approx((0.5 + 1.0 + 0.5) / 3)
    assert r.ppv == pytest.approx((0.5 + 2 / 3 + 1.0) / 3)
    assert r.acc == pytest.approx((4 / 6 + 5 / 6 + 5 / 6) / 3)


def test_constant_predictor_sensitivity_and_undefined_flags():
    y = np.repeat(np.arange(4), 5)
    r = macro_metrics(y, np.zeros(20, int), 4)
    assert r.sen == pytest.approx(0.25)
    assert ("ppv", 1) in r.undefined and ("ppv", 0) not in r.undefined


def test_metric_input_validation():
    with pytest.raises(InvalidParameter):
        macro_metrics([0, 0], [0, 0], 1)
    with pytest.raises(InvalidParameter):
        macro_metrics([0, 1], [0], 2)


def test_auc_examples():
    y = np.array([0, 0, 1, 1])
    s = np.array([0.8, 0.4, 0.6, 0.2])
    two_col = np.stack([s, 1 - s], axis=1)
    assert auc_per_class(two_col, y)[0] == pytest.approx(0.75)
    perfect = np.stack([1 - y, y], axis=1).astype(float)
    assert auc_ova(perfect, y) == 1.0
    assert auc_ova(np.full((4, 2), 0.5), y) == 0.5


def test_auc_matches_pairwise_brute_force():
    for seed in range(100):
        s = PrngStream(seed, 9)
        n = 4 + int(s.integers(20, 1)[0])
        y = np.arange(n) % 2
        scores = np.round(s.uniform(n), 1)  # rounding creates ties
        ref = auc_pairwise(scores[y == 1], scores[y == 0])
        got = auc_per_class(np.stack([1 - scores, scores], axis=1), y)[1]
        assert abs(got - ref) < 1e-12


def test_auc_absent_class_warned_and_skipped():
    y = np.array([0, 1, 0, 1])
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.7, 0.3, 0.0], [0.1, 0.9, 0.0]])
    with pytest.warns(RuntimeWarning):
        assert auc_ova(scores, y) == 1.0


def test_evaluate_predictions_fills_auc():
    y = np.array([0, 1, 1, 0])
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.7, 0.3]])
    r = evaluate_predictions(y, scores.argmax(1), scores, 2)
    assert r.auc == 1.0 and set(r.as_dict()) == {"acc", "sen", "spe", "ppv", "npv", "auc"}


def test_roi_values():
    assert roi(0.60, 0.61) == pytest.approx(0.025, abs=1e-12)
    assert roi(0.98, 0.99) == pytest.approx(0.50, abs=1e-12)
    assert roi(0.7, 0.7) == 0
    with pytest.raises(InvalidParameter):
        roi(1.0, 1.0)


def test_summary_examples():
    s = summarize_runs([1, 3])
    assert s.mu == 2 and s.sigma == pytest.approx(math.sqrt(2))
    c = summarize_runs([5.0] * 4)
    assert c.sigma == 0 and c.ci_low == c.ci_high == 5.0
    with pytest.raises(InvalidParameter):
        summarize_runs([1.0])


def _t_cdf_df2(t):
    return 0.5 + t / (2 * math.sqrt(2 + t * t))


def test_paired_t_documented_case():
    t, df = paired_t_statistic([1, 2, 3], [1.5, 3.0, 4.5])
    assert (round(t, 3), df) == (3.464, 2)
    p = paired_t_test_one_tailed([1, 2, 3], [1.5, 3.0, 4.5])
    assert p == pytest.approx(1 - _t_cdf_df2(t), abs=1e-12)
    assert abs(p - 0.037) < 0.001


def test_paired_t_swap_symmetry_and_degenerate():
    a, b = [0.91, 0.92, 0.90, 0.93], [0.92, 0.95, 0.91, 0.93]
    assert paired_t_test_one_tailed(b, a) == pytest.approx(1 - paired_t_test_one_tailed(a, b), abs=1e-12)
    with pytest.raises(DegenerateDifferences):
        paired_t_test_one_tailed(a, a)


def test_t_tail_against_df1_closed_form():
    # Cauchy: P(T > t) = 1/2 - atan(t)/pi
    for t in (-2.0, 0.0, 0.3, 4.0):
        assert student_t_sf(t, 1) == pytest.approx(0.5 - math.atan(t) / math.pi, abs=1e-12)
