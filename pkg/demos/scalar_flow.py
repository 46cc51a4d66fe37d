"""Migrate one scalar Gaussian prior into its posterior with the EDH flow.

The continuous flow is exact for linear-Gaussian models, so the migrated
auxiliary point should land on the Kalman posterior mean. The default
29-step geometric schedule gets close; refining the schedule closes the gap.

    python demos/scalar_flow.py
"""

import numpy as np

from flowpf import (
    FlowAuxiliary,
    LinearGaussianMeasurement,
    make_exponential_schedule,
    make_uniform_schedule,
    run_edh_flow,
)

prior_mean, prior_var, noise_var, z = 0.0, 1.0, 1.0, 1.5
kalman_mean = prior_mean + prior_var / (prior_var + noise_var) * (z - prior_mean)
kalman_var = prior_var * noise_var / (prior_var + noise_var)

meas = LinearGaussianMeasurement([[1.0]], [[noise_var]])
m, P = np.array([prior_mean]), np.array([[prior_var]])
rng = np.random.default_rng(0)
particles = m + np.sqrt(prior_var) * rng.standard_normal((20_000, 1))

print(f"Kalman posterior: mean {kalman_mean:.6f}, variance {kalman_var:.6f}")
for name, schedule in [
    ("29 geometric steps", make_exponential_schedule()),
    ("200 uniform steps", make_uniform_schedule(200)),
    ("10000 uniform steps", make_uniform_schedule(10_000)),
]:
    out = run_edh_flow(particles, FlowAuxiliary(m, m, P), meas, np.array([z]), schedule)
    print(f"{name:>20}: eta_bar {out.eta_bar[0]:.6f}  "
          f"particle mean {out.states.mean():.4f}  variance {out.states.var():.4f}  "
          f"log|det| {out.log_det:.4f}")
