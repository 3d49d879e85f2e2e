"""A desk-scale cost-versus-RMSE sweep with CSV reports.

Runs the standard and control-variate estimators over a short schedule of
accuracy targets, estimates each cell's RMSE against a reference price,
fits log-log complexity slopes, and writes the three report files that the
figure renderer in frontend/ consumes.

This is a scaled-down version of the full experiment (small replication
count and scale factor) so it finishes in about a minute; increase
`replications`, `scale` or the epsilon range for sharper curves.
"""
import pathlib

import numpy as np

from dualcv import (
    EstimatorConfig,
    ModelSpec,
    Payoff,
    StreamKey,
    compute_reference,
    estimate_rmse,
    fit_value_functions,
    run_sweep,
    write_rmse_csv,
    write_run_csv,
    write_slope_csv,
)
from dualcv.harness import SweepSpec, slopes_from_rmse

model = ModelSpec(dim=2, rate=0.0, dividends=0.02, sigmas=0.2, rho=np.eye(2),
                  spot=100.0, horizon=1.0, n_dates=20)
payoff = Payoff(strike=100.0)
key = StreamKey(seed=161803)

vfun = fit_value_functions(model, payoff, 50_000, 2, key)

print("computing a quick reference price...")
ref = compute_reference(model, payoff, vfun, 4,
                        EstimatorConfig(n_outer=2000, n_inner=2000), key)
print(f"reference: {ref.value:.4f} +- {ref.std_error:.4f}")

sweep = SweepSpec(estimators=("standard", "cv"),
                  epsilons_standard=(0.125, 0.0625, 0.03125),
                  epsilons_cv=(0.125, 0.0625, 0.03125),
                  replications=20, scale=0.08)
print(f"running {len(sweep.estimators)} estimators x 3 epsilons x "
      f"{sweep.replications} replications...")
records = run_sweep(sweep, model, payoff, vfun, key, ref_value=ref.value)

cells = estimate_rmse(records, ref)
print(f"\n{'estimator':10s} {'epsilon':>9s} {'rmse':>8s} {'bias':>8s} {'cost':>12s}")
for c in cells:
    print(f"{c.estimator:10s} {c.epsilon:9.5f} {c.rmse:8.4f} {c.bias:+8.4f} "
          f"{c.mean_cost:12.0f}")

fits = slopes_from_rmse(cells)
for f in fits:
    print(f"\n{f.estimator}: cost ~ RMSE^-{f.slope:.2f} over {f.n_points} points")

out = pathlib.Path("out_demo")
out.mkdir(exist_ok=True)
write_run_csv(records, out / "runs.csv")
write_rmse_csv(cells, out / "rmse.csv")
write_slope_csv(fits, out / "slopes.csv")
print(f"\nreports in {out}/; render the figure with:")
print("  python -m complexity_figures --rmse out_demo/rmse.csv "
      "--slopes out_demo/slopes.csv --out out_demo/complexity.svg")
