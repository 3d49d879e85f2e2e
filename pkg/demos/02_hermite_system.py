"""The orthonormal Hermite system used for the control-variate expansion.

Shows the enumeration of multivariate functions by total-degree blocks,
verifies orthonormality and zero mean under the normal law by quadrature,
and prints a few values of the normalised polynomials.
"""
import numpy as np

from dualcv.basis import (
    HermiteSystem,
    block_function_indices,
    hermite_block,
    hermite_eval,
    hermite_features,
)

uni = HermiteSystem(m=1)
print("normalised univariate values:")
for k, x in [(1, 0.7), (2, 1.0), (3, 2.0)]:
    print(f"  phi_{k}({x}) = {hermite_eval(uni, k, x):+.6f}")

system = HermiteSystem(m=2)
print("\ntwo-dimensional enumeration by total-degree blocks:")
for block in (1, 2, 3):
    indices = hermite_block(system, block)
    labels = [system.multi_indices[k] for k in indices]
    print(f"  block {block}: {len(indices)} functions, multi-indices {labels}")

big = HermiteSystem(m=5)
print(f"\nm=5: block 1 has {len(hermite_block(big, 1))} functions, "
      f"block 2 has {len(hermite_block(big, 2))}")

# quadrature check of orthonormality and zero mean
nodes, weights = np.polynomial.hermite_e.hermegauss(64)
weights = weights / weights.sum()
xx, yy = np.meshgrid(nodes, nodes, indexing="ij")
ww = np.outer(weights, weights).ravel()
grid = np.stack([xx.ravel(), yy.ravel()], axis=-1)

indices = block_function_indices(system, 3)
feats = hermite_features(system, indices, grid)
gram = feats.T @ (ww[:, None] * feats)
means = ww @ feats
print(f"\nquadrature Gram matrix deviation from identity: "
      f"{np.max(np.abs(gram - np.eye(len(indices)))):.2e}")
print(f"largest |mean| over functions of degree >= 1: {np.max(np.abs(means)):.2e}")
