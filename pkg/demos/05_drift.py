"""
Correcting a stale model after drift
====================================

A boosted model trained at time 1 is applied at time 3 after the data
moved. A small labelled sample from time 2 gives residuals; each time-3
prediction adds an attention-weighted average of those residuals, with
attention from the stale model's own leaf co-occurrence.
"""

import numpy as np

from attnsl.bench import drift_model, pse, run_drift_experiment
from attnsl.pipeline import drift_correct
from attnsl.simgen import DriftScenario, gen_drift_full

scenario = DriftScenario(sigma=6.0)
d = gen_drift_full(scenario, seed=0)
print(f"time 1: {d.d1.n} rows, time 2: {d.d2.n}, time 3: {d.d3.n}")

model = drift_model(d.d1)
stale = model.predict(d.d3.features)
corrected, corr = drift_correct(model, d.d2.features, d.d2.response, d.d3.features, temperature=0.1,
                                return_correction=True)
refit = drift_model(d.d2).predict(d.d3.features)
print(f"PSE stale {pse(d.d3.response, stale):.1f}, corrected {pse(d.d3.response, corrected):.1f}, "
      f"refit on time 2 {pse(d.d3.response, refit):.1f}")
print(f"corrections: mean {corr.mean():+.2f}, sd {corr.std():.2f}")

# the same comparison over replications; medians per arm
rep = run_drift_experiment(scenario, replications=10, seed=0)
print(rep.to_text())
print("per replication:", np.round(rep.pse[:3], 1).tolist(), "...")
