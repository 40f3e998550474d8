"""
Clustering per-point models
===========================

The blended coefficients of the attention lasso form one vector per test
point. Minimax-linkage clustering groups them, and each cluster is
represented by a prototype: an actual test point whose coefficient vector
lies within the merge height of every member.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from attnsl.interpret import (cluster_summary, cut_clusters, protoclust, write_dendrogram_json,
                              write_heatmap_csv)
from attnsl.pipeline import PipelineConfig, run_pipeline
from attnsl.simgen import SimSetting, gen_setting

train, test, truth = gen_setting(SimSetting(1, n=300, seed=3))
result = run_pipeline(train, test.features, PipelineConfig(num_trees=200, seed=3, mixing=1.0))
B = result.blended_coefficients

dend = protoclust(B)
print(f"{len(dend.merges)} merges, final height {dend.merges[-1].height:.3f}")
assign = cut_clusters(dend, 4)
for s in cluster_summary(assign, result, test.response):
    z = truth.latent_test[assign.members(s.cluster)]
    print(f"cluster {s.cluster}: size {s.size:3d}, prototype row {s.prototype_row_id:>3}, "
          f"mean latent z {z.mean():+.2f}, PSE lasso {s.pse_base:.2f} vs blended {s.pse_blend:.2f}")

# prototypes cover their cluster: every member is within the cut height of it
for k in range(assign.k):
    members = assign.members(k)
    r = np.linalg.norm(B[members] - B[assign.prototypes[k]], axis=1).max()
    print(f"cluster {k}: covering radius {r:.3f}")

out = Path(tempfile.mkdtemp())
names = ["intercept", *train.feature_names]
write_heatmap_csv(out / "heatmap.csv", B, assign, dend, names)
write_dendrogram_json(out / "dendrogram.json", dend)
print("wrote", sorted(p.name for p in out.iterdir()), "to", out)
print("dendrogram keys:", sorted(json.loads((out / "dendrogram.json").read_text())))
