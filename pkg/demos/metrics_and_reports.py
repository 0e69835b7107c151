"""Metrics, run summaries and the paired comparison used in reports.

Everything here is closed-form, so the printed numbers can be checked by hand.

Run with ``python demos/metrics_and_reports.py``.
"""

import numpy as np

from proboost.evaluation import auc_ova, macro_metrics, paired_t_test_one_tailed, roi, summarize_runs

# %% one-vs-all metrics on six predictions
y_true = [0, 0, 1, 1, 2, 2]
y_pred = [0, 1, 1, 1, 2, 0]
r = macro_metrics(y_true, y_pred, 3)
print("per-class sensitivity:", r.per_class["sen"].round(3).tolist())
print(f"macro acc={r.acc:.4f} sen={r.sen:.4f} spe={r.spe:.4f} ppv={r.ppv:.4f} npv={r.npv:.4f}")

# %% AUC counts score pairs; ties are worth one half
scores = np.array([[0.2, 0.8], [0.6, 0.4], [0.4, 0.6], [0.8, 0.2]])
print("AUC:", auc_ova(scores, [1, 0, 1, 0]))

# %% relative obtainable improvement: the same one-point gain means more near the ceiling
print(f"ROI 0.60 -> 0.61: {roi(0.60, 0.61):.3f}")
print(f"ROI 0.98 -> 0.99: {roi(0.98, 0.99):.3f}")

# %% ten repetitions summarised, then a paired one-tailed test
rng = np.random.default_rng(0)
base = 0.90 + 0.004 * rng.standard_normal(10)
treat = base + 0.002 + 0.001 * rng.standard_normal(10)
s = summarize_runs(base)
print(f"baseline mu={s.mu:.4f} sigma={s.sigma:.4f} CI=[{s.ci_low:.4f}, {s.ci_high:.4f}]")
print(f"one-tailed p (treatment > baseline): {paired_t_test_one_tailed(base, treat):.2e}")
