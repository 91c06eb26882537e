"""
Assessing a single patient against a template
=============================================

A small healthy cohort is "measured", a template null distribution of the
naive slope is built for a short clinical test, and a few new subjects are
classified.  Run with ``python demos/clinic_workflow.py``.
"""
import numpy as np

from template_null import (Dataset, RunConfig, assess, build_template, fit_training, format_chart,
                           parse_design, physician_chart)
from template_null.simlab import REFERENCE_TRUTH, TRAIN_DESIGN, simulate_outcomes, simulate_subject

rng = np.random.default_rng(11)

# %%
# Training cohort
# ---------------
# Ten healthy subjects, ten weights from 250 g to 700 g, six trials each.

y = simulate_outcomes(REFERENCE_TRUTH, TRAIN_DESIGN, 10, rng)
train = Dataset.from_array(y, TRAIN_DESIGN)
print(f"training: {len(train.subject_ids)} subjects, {train.n_records} trials")

# %%
# Posterior and template
# ----------------------
# Three chains of 2000 iterations, the first 1000 discarded.

run = RunConfig(seed=3)
post = fit_training(train, run=run)
print("R-hat:", {k: round(v, 4) for k, v in post.rhat.items()})

test_design = parse_design("250,500g x 5")
template = build_template(post, test_design)
print(f"benchmark slope {template.benchmark_slope:.3f}, template of {template.M} slopes")

# %%
# New subjects
# ------------
# One healthy subject and one whose slope is 1.0 below the population value.

healthy = simulate_subject(REFERENCE_TRUTH, test_design, rng=rng, subject_id="healthy")
impaired = simulate_subject(REFERENCE_TRUTH, test_design, beta_override=0.4, rng=rng, subject_id="impaired")

for subject in (healthy, impaired):
    r = assess(template, subject, level=0.05)
    print(f"{r.subject_id:>9}: {r.decision.value:<8} slope={r.scaling_factor:.3f} "
          f"p={r.p_value:.4f} power={r.post_hoc_power:.3f} 95% CI=({r.ci[0]:.2f}, {r.ci[1]:.2f})")

# %%
# Chart
# -----
# The chart lists every subject for every condition.

both = Dataset(healthy.records + impaired.records, test_design)
print(format_chart(physician_chart({"short test": template}, both, level=0.05)))
