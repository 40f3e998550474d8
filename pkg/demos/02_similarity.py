"""
Supervised similarity and attention weights
===========================================

Two sources of similarity: random-forest proximity (share of trees in which
two rows fall into the same leaf) and a ridge-weighted inner product. A
softmax with temperature turns either into attention rows.
"""

import numpy as np

from attnsl.attention import (attention_from_forest, attention_from_ridge, fit_diagonal_attention,
                              gaussian_kernel_weights, softmax_rows)
from attnsl.trees import forest_fit, proximity

rng = np.random.default_rng(0)
n, p = 200, 6
X = rng.normal(size=(n, p))
# only x1 and x2 matter, and the sign of x1 flips the slope on x2
y = np.where(X[:, 0] > 0, 2.0, -2.0) * X[:, 1] + 0.3 * rng.normal(size=n)
x_star = np.array([[1.0, 0.5, 0, 0, 0, 0]])

forest = forest_fit(X, y, num_trees=300, seed=0)
S = proximity(forest, x_star, X)[0]
print(f"proximity range [{S.min():.2f}, {S.max():.2f}]")
same_side = X[:, 0] > 0
print(f"mean proximity, same side of x1 = 0: {S[same_side].mean():.3f}, other side: {S[~same_side].mean():.3f}")

# temperature controls how peaked the weights are
for tau in (1.0, 0.1, 0.02):
    w = attention_from_forest(forest, x_star, X, tau).weights[0]
    print(f"tau {tau:>5}: attention mass on the same side {w[same_side].sum():.3f}, "
          f"effective sample size {1 / (w ** 2).sum():.1f}")

# ridge-diagonal similarity weights the inner product by |ridge coefficient|
att = fit_diagonal_attention(X, y)
print("ridge diagonal:", np.round(att.diag, 3))
w = attention_from_ridge(att, x_star, X).weights[0]
print(f"ridge attention: largest weight {w.max():.3f}, effective sample size {1 / (w ** 2).sum():.1f}")

# on unit-norm rows, inner-product softmax at tau = sigma^2 is a Gaussian kernel
U = X / np.linalg.norm(X, axis=1, keepdims=True)
u = U[:3]
sigma = 0.8
gap = np.abs(gaussian_kernel_weights(u, U, sigma) - softmax_rows(u @ U.T, sigma ** 2).weights).max()
print(f"kernel vs softmax max difference: {gap:.1e}")
