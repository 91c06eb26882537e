"""
Error rates of the three tests
==============================

A reduced version of the full error-rate table.  Test A uses the true
parameters, test B a template from a fitted training cohort (B* samples a
fresh cohort for each replicate), test C a joint fit of training and test
data.  Use ``--replicates 500`` for a full-scale run.
"""
import argparse

from template_null import RunConfig, run_table, scenario

parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
parser.add_argument("--replicates", type=int, default=100)
parser.add_argument("--templates", type=int, default=10)
parser.add_argument("--scenario", default="one", choices=["one", "two"])
args = parser.parse_args()

# %%
# Short chains keep the demo quick; the posterior still mixes well.

scn = scenario(args.scenario, replicates=args.replicates, seed=5,
               delta_grid=(0.0, 0.3, 0.7, 1.0, 1.3),
               run=RunConfig(seed=5, draws_per_chain=1000, burn_in=500, template_draws=1500))
table = run_table(scn, n_templates=args.templates, tests=("A", "B"))

print(f"scenario {scn.name}: {scn.test_design}")
print(f"{'level':>6} {'delta':>6} {'A':>7} {'B':>7} {'B*':>7}")
for row in table.rows():
    print(f"{row['level']:>6.2f} {row['delta_alt']:>6.1f} {row['test_A']:>7.3f} "
          f"{row['test_B']:>7.3f} {row['test_Bstar']:>7.3f}")

# %%
# The delta = 0 rows are false-positive rates; every other row is a
# false-negative rate.  The template tests track the oracle test A closely.
