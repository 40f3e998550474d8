"""
Context for similarity: lags and neighbouring pixels
====================================================

Similarity can use more than a row's own values. Ordered data adds lagged
values; pixel data adds the mean and spread of the adjacent pixels. The
extra columns feed the similarity forest only, the per-point models still
see the original features.
"""

import warnings

import numpy as np

from attnsl.bench import pse
from attnsl.context import LagSpec, NeighborSpec, lag_context, neighbor_features
from attnsl.data import Dataset
from attnsl.pipeline import PipelineConfig, run_pipeline

# a series whose response regime depends on the previous response
rng = np.random.default_rng(0)
T = 400
x = rng.normal(size=(T, 2))
y = np.zeros(T)
for t in range(1, T):
    slope = 2.0 if y[t - 1] > 0 else -2.0
    y[t] = slope * x[t, 0] + 0.5 * rng.normal()
series = Dataset.from_arrays(x, y, ("x1", "x2"))
model_data, sim = lag_context(series, LagSpec(max_lag=2, similarity_lag=1))
print(f"model columns {model_data.feature_names}, similarity columns {sim.shape[1]}")

cut = 300
train, Xt, yt = model_data.subset(np.arange(cut)), model_data.features[cut:], model_data.response[cut:]
# a low temperature lets the lagged response separate the two regimes
cfg = PipelineConfig(num_trees=200, fold_kind="expanding-window", mixing=1.0, temperature=0.02)
# very peaked weights can leave a few per-point fits at the sweep cap
warnings.simplefilter("ignore")
plain = run_pipeline(train, Xt, cfg)
lagged = run_pipeline(train, Xt, cfg, similarity_train=sim[:cut], similarity_test=sim[cut:])
print(f"PSE lasso {pse(yt, plain.y_base):.2f}, attention without lags {pse(yt, plain.y_attn):.2f}, "
      f"with lags {pse(yt, lagged.y_attn):.2f}")

# a 5x5 image with one bright pixel
rows = [(0, r, c, 10.0 if (r, c) == (2, 2) else 1.0) for r in range(5) for c in range(5)]
pix = Dataset.from_arrays(np.array(rows), np.zeros(25), ("image_id", "row", "col", "band"))
ctx = neighbor_features(pix, NeighborSpec(neighborhood=8))
print(ctx.feature_names)
print("neighbour mean around the bright pixel:")
print(ctx.features[:, 1].reshape(5, 5))
