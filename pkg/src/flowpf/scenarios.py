"""Benchmark scenarios: model pairs, initial conditions and default parameters.

Three presets are registered in :data:`PRESETS`:

``acoustic``
    Four constant-velocity targets in a 40 m x 40 m area, 25 acoustic
    sensors on a 5 x 5 grid, highly informative amplitude measurements.

    ============== ========= ==========================================
    parameter      default   meaning
    ============== ========= ==========================================
    num_targets    4         targets (1-4; initial states are fixed)
    psi            10.0      emitted amplitude
    d0             0.1       distance offset in the attenuation
    sigma_w        0.1       measurement noise std (variance 0.01)
    area           40.0      side of the square tracking area (m)
    sensors_side   5         sensors per side of the grid
    confine_truth  True      redraw trajectories that leave the area
    ============== ========= ==========================================

``linear-gaussian``
    ``x_k = alpha x_{k-1} + v_k`` on a sqrt(d) x sqrt(d) sensor grid with
    spatially correlated process noise, ``z_k = x_k + w_k``.

    ============== ========= ==========================================
    d              64        sensors / state dimension (perfect square)
    alpha          0.9       AR coefficient
    sigma_z        1.0       measurement noise std
    alpha0         3.0       dispersion amplitude
    alpha1         0.01      dispersion nugget
    beta           20.0      dispersion length scale
    ============== ========= ==========================================

``skewt-poisson``
    GH skewed-t dynamics on the same grid, Poisson count measurements.

    ============== ========= ==========================================
    d              144       sensors / state dimension
    alpha          0.9       AR coefficient of the location
    nu             7.0       degrees of freedom (> 4)
    gamma          0.3       skewness, same value in every coordinate
    alpha0/1, beta 3, 0.01, 20  dispersion as above
    m1             1.0       count rate scale
    m2             1/3       count rate exponent
    ============== ========= ==========================================
"""

from dataclasses import dataclass, field

import numpy as np

from .kalman import GaussianBelief
from .ssm import (
    GHSkewedTParams,
    SensorGrid,
    build_dispersion_matrix,
    make_acoustic_model,
    make_linear_gaussian_model,
    make_skewt_poisson_model,
)

ACOUSTIC_INITIAL_STATES = np.array(
    [
        [12.0, 6.0, 0.001, 0.001],
        [32.0, 32.0, -0.001, -0.005],
        [20.0, 13.0, -0.1, 0.01],
        [15.0, 35.0, 0.002, 0.002],
    ]
)
ACOUSTIC_TRUTH_PROCESS_COV = (
    np.array(
        [
            [1 / 3, 0.0, 0.5, 0.0],
            [0.0, 1 / 3, 0.0, 0.5],
            [0.5, 0.0, 1.0, 0.0],
            [0.0, 0.5, 0.0, 1.0],
        ]
    )
    / 20.0
)
ACOUSTIC_FILTER_PROCESS_COV = np.array(
    [
        [3.0, 0.0, 0.1, 0.0],
        [0.0, 3.0, 0.0, 0.1],
        [0.1, 0.0, 0.03, 0.0],
        [0.0, 0.1, 0.0, 0.03],
    ]
)
ACOUSTIC_INITIAL_STD = np.array([10.0, 10.0, 1.0, 1.0])

MAX_REJECTIONS = 10_000


@dataclass(frozen=True, eq=False)
class Scenario:
    """A truth-generating model, the model the filters assume, and initial conditions."""

    name: str
    params: dict
    truth_model: object
    filter_model: object
    x0: np.ndarray
    metric: str
    lost_track: bool
    num_targets: int = 0
    area: float = 0.0
    confine_truth: bool = False
    initial_cov: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.filter_model.dim_state

    def simulate_truth(self, n_steps, rng):
        """State trajectory ``x_1..x_K``; acoustic tracks may be redrawn to stay in the area."""
        dyn = self.truth_model.dynamic
        for _ in range(MAX_REJECTIONS):
            xs = []
            x = self.x0
            for _ in range(n_steps):
                x = dyn.sample(x, rng)
                xs.append(x)
            xs = np.array(xs)
            if not self.confine_truth or _inside(xs, self.num_targets, self.area):
                return xs
        raise RuntimeError("could not draw a trajectory that stays inside the area")

    def measure(self, states, rng):
        meas = self.truth_model.measurement
        return np.array([meas.sample(x, rng) for x in states])


def _inside(states, num_targets, area):
    pos = states.reshape(states.shape[:-1] + (num_targets, 4))[..., :2]
    return bool(np.all((pos >= 0.0) & (pos <= area)))


def initial_state_sampler(scenario, rng):
    """Initial Gaussian belief handed to every filter for one run.

    Acoustic: the mean is drawn around the true initial states (std 10 m for
    positions, 1 m/s for velocities) and redrawn per target until the
    position lies inside the area. Grid scenarios start from the true zero
    state with no uncertainty.
    """
    if scenario.metric != "omat":
        d = scenario.dim
        return GaussianBelief(np.zeros(d), np.zeros((d, d)))

    means = []
    for target in scenario.x0.reshape(-1, 4):
        for _ in range(MAX_REJECTIONS):
            draw = target + ACOUSTIC_INITIAL_STD * rng.standard_normal(4)
            if np.all((draw[:2] >= 0.0) & (draw[:2] <= scenario.area)):
                break
        else:
            raise RuntimeError("initial mean rejection sampling did not terminate; check the area")
        means.append(draw)
    return GaussianBelief(np.concatenate(means), scenario.initial_cov.copy())


def acoustic_scenario(num_targets=4, psi=10.0, d0=0.1, sigma_w=0.1, area=40.0,
                      sensors_side=5, confine_truth=True):
    if not 1 <= num_targets <= len(ACOUSTIC_INITIAL_STATES):
        raise ValueError("num_targets must be between 1 and 4")
    ticks = np.linspace(0.0, area, sensors_side)
    sensors = np.array([(x, y) for y in ticks for x in ticks])
    truth = make_acoustic_model(num_targets, sensors, psi, d0, sigma_w, ACOUSTIC_TRUTH_PROCESS_COV)
    model = make_acoustic_model(num_targets, sensors, psi, d0, sigma_w, ACOUSTIC_FILTER_PROCESS_COV)
    params = dict(num_targets=num_targets, psi=psi, d0=d0, sigma_w=sigma_w, area=area,
                  sensors_side=sensors_side, confine_truth=confine_truth)
    cov = np.kron(np.eye(num_targets), np.diag(ACOUSTIC_INITIAL_STD**2))
    return Scenario("acoustic", params, truth, model,
                    ACOUSTIC_INITIAL_STATES[:num_targets].reshape(-1), "omat", False,
                    num_targets=num_targets, area=area, confine_truth=confine_truth,
                    initial_cov=cov)


def linear_gaussian_scenario(d=64, alpha=0.9, sigma_z=1.0, alpha0=3.0, alpha1=0.01, beta=20.0):
    grid = SensorGrid(d)
    disp = build_dispersion_matrix(grid, alpha0, alpha1, beta)
    model = make_linear_gaussian_model(grid, alpha, sigma_z, disp)
    params = dict(d=d, alpha=alpha, sigma_z=sigma_z, alpha0=alpha0, alpha1=alpha1, beta=beta)
    return Scenario("linear-gaussian", params, model, model, np.zeros(d), "mse", False)


def skewt_poisson_scenario(d=144, alpha=0.9, nu=7.0, gamma=0.3, alpha0=3.0, alpha1=0.01,
                           beta=20.0, m1=1.0, m2=1.0 / 3.0):
    grid = SensorGrid(d)
    disp = build_dispersion_matrix(grid, alpha0, alpha1, beta)
    gh = GHSkewedTParams(nu=nu, gamma=np.full(d, gamma), sigma=disp, alpha=alpha)
    model = make_skewt_poisson_model(gh, m1, m2)
    params = dict(d=d, alpha=alpha, nu=nu, gamma=gamma, alpha0=alpha0, alpha1=alpha1,
                  beta=beta, m1=m1, m2=m2)
    return Scenario("skewt-poisson", params, model, model, np.zeros(d), "mse", True)


PRESETS = {
    "acoustic": acoustic_scenario,
    "linear-gaussian": linear_gaussian_scenario,
    "skewt-poisson": skewt_poisson_scenario,
}


def make_scenario(preset, **params):
    try:
        factory = PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown scenario preset {preset!r}; expected one of {sorted(PRESETS)}") from None
    return factory(**params)
