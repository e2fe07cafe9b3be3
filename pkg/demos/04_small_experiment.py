"""
A miniature version of the full trial protocol
==============================================

Hide half the labels, fit on the labeled giant component, then compare
every crawler at a few budgets. Results land in CSV files; the same seed
gives byte-identical files.
"""

import csv
import sys
import tempfile

from crawlrlr.harness import ExperimentConfig, report, run_experiment

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="crawlrlr-")
cfg = ExperimentConfig(graph={"synthetic": {"n": 600, "mean_degree": 8.0}},
                       budgets=(0.05, 0.15, 0.3), trials=3, seed=1, output_dir=out)
run_experiment(cfg)
report([out], out + "/report")

with open(out + "/summary.csv") as fh:
    rows = list(csv.DictReader(fh))
print(f"{'crawler':8s}{'budget':>8s}{'MAE':>9s}{'RMSE':>8s}{'acc':>7s}")
for r in rows:
    print(f"{r['crawler']:8s}{float(r['budget_fraction']):8.2f}{float(r['mae_mean']):9.3f}"
          f"{float(r['rmse_mean']):8.3f}{float(r['accuracy_mean']):7.3f}")
print(f"\nfiles in {out}")
