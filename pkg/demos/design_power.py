"""
Choosing a test design by power
===============================

Power curves of the naive-slope test for a handful of short designs, each
averaged over independently simulated training cohorts.
"""
import numpy as np

from template_null import RunConfig, parse_design, power_study

designs = [parse_design(s) for s in ("250,500g x 5", "200,600g x 5", "200,800g x 5", "200,600g x 10")]
deltas = np.round(np.arange(0.1, 1.35, 0.2), 1)

curves = power_study(designs, delta_grid=deltas, level=0.10, n_runs=10, seed=1,
                     run=RunConfig(seed=1, draws_per_chain=1000, burn_in=500, template_draws=1000))

print("delta  " + "  ".join(f"{str(d):>22}" for d in designs))
for k, d in enumerate(deltas):
    print(f"{d:>5.1f}  " + "  ".join(f"{curves.curve(g)[k]:>22.3f}" for g in designs))

# %%
# Wider weight spacing buys more power than extra trials: the slope
# estimate's variance falls with the squared spread of the weights.
