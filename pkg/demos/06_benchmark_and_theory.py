"""
Benchmarks and the mixture theory
=================================

``run_experiment`` repeats the train/test draw with derived seeds and
reports mean PSE and improvement over the lasso with standard errors.
``theory_check`` fits a two-cluster linear mixture and compares the
attention lasso against the plain lasso on cluster-1 test points.
"""

import warnings

import numpy as np

from attnsl.bench import ExperimentConfig, run_experiment
from attnsl.simgen import MixtureSpec, pooled_beta_star, theory_check

cfg = ExperimentConfig(setting=3, n=200, replications=5, seed=0,
                       models=("lasso", "attention", "rf", "gbt", "knn"),
                       pipeline={"num_trees": 100, "cv_folds": 5})
report = run_experiment(cfg, progress=lambda r: print(f"replication {r} done"))
print(report.to_text())

spec = MixtureSpec.symmetric(p=20, pi=(0.8, 0.2), delta=4.0, shift=2.0)
print("closed-form pooled coefficients:", np.round(pooled_beta_star(spec)[:5], 3), "...")
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    reps = [theory_check(spec, 2000, seed) for seed in range(5)]
for r in reps:
    print(f"W1 {r.W1:.3f}  mse ratio {r.ratio:.3f}  predicted {r.predicted_ratio:.3f}  "
          f"lasso vs closed form {r.lasso_distance:.3f}")
