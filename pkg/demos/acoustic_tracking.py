"""Track four acoustic targets once and score each filter with OMAT.

A single 40-step trajectory; the weighted LEDH filter typically ends with
the smallest position error. Expect a few minutes of runtime.

    python demos/acoustic_tracking.py
"""

import numpy as np

from flowpf import FilterConfig, acoustic_scenario, initial_state_sampler, omat, run_filter, target_positions

scenario = acoustic_scenario()
rng = np.random.default_rng(3)
truth = scenario.simulate_truth(40, rng)
measurements = scenario.measure(truth, rng)
belief = initial_state_sampler(scenario, rng)

for name in ("pfpf-ledh", "pfpf-edh", "ledh", "edh", "ekf", "ukf"):
    result = run_filter(name, scenario.filter_model, belief, measurements,
                        FilterConfig(n_particles=200), np.random.default_rng(7))
    errors = [omat(target_positions(x, 4), target_positions(e, 4)) for x, e in zip(truth, result.estimates)]
    ess = np.nanmean(result.ess) if np.isfinite(result.ess).any() else float("nan")
    print(f"{name:>10}: mean OMAT {np.mean(errors):6.3f} m   final {errors[-1]:6.3f} m   mean ESS {ess:6.1f}")
