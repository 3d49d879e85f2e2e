"""Fitting the lower-bound value functions by backward regression.

The terminal value is the payoff; at each earlier date the realised
next-date values are regressed on degree-2 monomials plus the payoff to
obtain a continuation estimate, and the date's value is the maximum of
exercise and continuation.  The induced stopping rule gives a lower bound
on the price.
"""
import numpy as np

from dualcv import (
    ModelSpec,
    Payoff,
    StreamKey,
    estimate_lower_bound,
    fit_value_functions,
    simulate_paths,
)

model = ModelSpec(dim=2, rate=0.0, dividends=0.02, sigmas=0.2, rho=np.eye(2),
                  spot=100.0, horizon=1.0, n_dates=20)
payoff = Payoff(strike=100.0)
key = StreamKey(seed=2024)

vfun = fit_value_functions(model, payoff, 50_000, 2, key)
q = vfun.continuation[0].coef.size
print(f"fitted {len(vfun.continuation)} continuation models with {q} "
      f"basis functions each")
print(f"largest |v| seen on the training set, by date:")
print("  " + " ".join(f"{b:.1f}" for b in vfun.bounds))

# value always dominates immediate exercise
probe = simulate_paths(model, payoff, 5, StreamKey(seed=7))
for j in (1, 10, 19):
    v = vfun.value(j, probe.states[:, j])
    print(f"date {j:2d}: values {np.round(v, 3)}")

lower = estimate_lower_bound(model, payoff, vfun, 200_000, StreamKey(seed=9))
print(f"\npolicy value (lower bound): {lower.value:.4f} +- {lower.std_error:.4f}")
