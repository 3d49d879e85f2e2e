"""Upper and lower price bounds for the 2-asset Bermudan max-call.

Runs the nested dual estimator with and without the control variate, the
early-exercise-premium estimator, and the policy lower bound, bracketing
the price from both sides.  With the control variate the same inner
budget yields a visibly smaller upward bias.
"""
import numpy as np

from dualcv import (
    EstimatorConfig,
    ModelSpec,
    Payoff,
    StreamKey,
    estimate_dual_cv,
    estimate_dual_standard,
    estimate_eep,
    estimate_lower_bound,
    fit_value_functions,
    simulate_paths,
)
from dualcv.basis import HermiteSystem, StateBasis
from dualcv.regress import fit_cv_coefficients

model = ModelSpec(dim=2, rate=0.0, dividends=0.02, sigmas=0.2, rho=np.eye(2),
                  spot=100.0, horizon=1.0, n_dates=20)
payoff = Payoff(strike=100.0)
key = StreamKey(seed=314)

vfun = fit_value_functions(model, payoff, 50_000, 2, key)
training = simulate_paths(model, payoff, 4096, key.with_(purpose="training"))
cv = fit_cv_coefficients(training, vfun, StateBasis(dim=2, degree=1),
                         HermiteSystem(m=2), n_blocks=1)

cfg = EstimatorConfig(n_outer=2000, n_inner=32)
rows = [
    ("dual (standard)", estimate_dual_standard(model, payoff, vfun, cfg, key)),
    ("dual (control variate)", estimate_dual_cv(model, payoff, vfun, cv, cfg, key)),
    ("early exercise premium", estimate_eep(model, payoff, vfun, cfg, key)),
    ("eep (control variate)", estimate_eep(model, payoff, vfun, cfg, key, cv=cv)),
]
lower = estimate_lower_bound(model, payoff, vfun, 200_000, key.with_(lane=1))

print(f"N = {cfg.n_outer} outer paths, N_d = {cfg.n_inner} inner samples\n")
print(f"{'estimator':26s} {'value':>9s} {'std err':>9s} {'inner sims':>12s}")
for name, est in rows:
    print(f"{name:26s} {est.value:9.4f} {est.std_error:9.4f} "
          f"{est.ledger.inner_sims:12d}")
print(f"{'policy lower bound':26s} {lower.value:9.4f} {lower.std_error:9.4f}")

print("\nall upper bounds sit above the lower bound; the control variate")
print("pulls the dual estimate down toward the price at the same cost")
