"""Particle flow particle filters and their baselines.

Each filter is exposed twice: as a pure step function that threads the
filter state explicitly (``pfpf_edh_step`` and friends), and through
:func:`make_filter`, which wraps the step in a small stateful object used by
the experiment runner. All weight arithmetic stays in log space.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .flow import (
    FlowAuxiliary,
    FlowDiagnostics,
    StepSchedule,
    make_exponential_schedule,
    run_edh_flow,
    run_ledh_flow,
)
from .kalman import PREDICTORS, UPDATERS, GaussianBelief, floor_covariance
from .metrics import perturb_covariance


class DegenerateWeightsError(RuntimeError):
    """Every particle has zero weight."""


FILTER_NAMES = ("pfpf-ledh", "pfpf-edh", "edh", "ledh", "bpf", "ekf", "ukf")


@dataclass
class FilterConfig:
    """Settings shared by all filters.

    ``sigma_p`` injects log-normal eigenvalue noise into the predictive
    covariance handed to the flow (sensitivity studies); the Kalman
    recursion itself is left untouched.
    """

    n_particles: int = 500
    resample_threshold: float = 0.5
    schedule: StepSchedule = field(default_factory=make_exponential_schedule)
    covariance_predictor: str = "ekf"
    seed: int = 0
    sigma_p: float = 0.0
    guard: bool = True
    linearization: str = "auxiliary"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must lie in (0, 1]")
        if self.covariance_predictor not in PREDICTORS:
            raise ValueError(f"covariance_predictor must be one of {sorted(PREDICTORS)}")
        if self.sigma_p < 0:
            raise ValueError("sigma_p must be non-negative")
        if self.linearization != "auxiliary":
            raise NotImplementedError("linearisation at particle locations is not supported")


@dataclass
class ParticleEnsemble:
    states: np.ndarray
    log_weights: np.ndarray

    @classmethod
    def uniform(cls, states):
        n = len(states)
        return cls(np.asarray(states, dtype=float), np.full(n, -np.log(n)))

    def __len__(self):
        return len(self.log_weights)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    def estimate(self):
        return self.weights @ self.states


@dataclass
class StepRecord:
    estimate: np.ndarray
    ess: float = float("nan")
    resampled: bool = False
    duration: float = float("nan")
    max_eps_rho: float = 0.0
    halvings: int = 0


@dataclass
class FilterResult:
    records: list = field(default_factory=list)
    weight_trace: list = field(default_factory=list)

    @property
    def estimates(self):
        return np.array([r.estimate for r in self.records])

    @property
    def ess(self):
        return np.array([r.ess for r in self.records])


# ---------------------------------------------------------------------------
# weights and resampling


def normalize_log_weights(log_weights):
    log_weights = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(log_weights)):
        raise DegenerateWeightsError("NaN log-weight encountered")
    total = logsumexp(log_weights)
    if not np.isfinite(total):
        raise DegenerateWeightsError("all particle weights are zero")
    return log_weights - total


def effective_sample_size(log_weights):
    """``1 / sum w_i^2`` for normalised log-weights, evaluated in log space."""
    return float(np.exp(-logsumexp(2.0 * np.asarray(log_weights))))


def systematic_resample(weights, rng):
    """Offspring indices from one uniform draw over ``N`` equal strata."""
    weights = np.asarray(weights, dtype=float)
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative /= cumulative[-1]
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions, side="right")


def _maybe_resample(ensemble, ess, config, rng, *carried):
    n = len(ensemble)
    if ess >= config.resample_threshold * n:
        return ensemble, False, carried
    idx = systematic_resample(ensemble.weights, rng)
    out = ParticleEnsemble(ensemble.states[idx], np.full(n, -np.log(n)))
    return out, True, tuple(c[idx] for c in carried)


def _sample_gaussian(mean, cov, n, rng):
    w, V = np.linalg.eigh(floor_covariance(cov, rel=0.0))
    root = V * np.sqrt(np.clip(w, 0.0, None))
    return mean + rng.standard_normal((n, mean.shape[-1])) @ root.T


def _flow_covariance(P, config, rng):
    P = floor_covariance(P)
    if config.sigma_p > 0:
        P = perturb_covariance(P, config.sigma_p, rng)
    return P


# ---------------------------------------------------------------------------
# step functions


def pfpf_ledh_step(ensemble, beliefs, model, z, config, rng):
    """One PF-PF step with per-particle (LEDH) flows and exact weights.

    ``beliefs`` holds one Gaussian per particle (batched arrays); its means
    are the particles' previous states. Returns the new ensemble, beliefs and
    a :class:`StepRecord`.
    """
    dyn, meas = model.dynamic, model.measurement
    predict = PREDICTORS[config.covariance_predictor]
    update = UPDATERS[config.covariance_predictor]
    x_prev = ensemble.states
    n = len(ensemble)

    predicted = predict(beliefs, dyn)
    P = predicted.cov
    if config.sigma_p > 0:
        P = np.array([_flow_covariance(Pi, config, rng) for Pi in P])
    else:
        P = floor_covariance(P)
    eta_bar_0 = dyn.deterministic_map(x_prev)
    eta0 = dyn.propagate(x_prev, dyn.sample_noise(rng, n))

    aux = FlowAuxiliary(eta_bar_0, eta_bar_0, P)
    flow = run_ledh_flow(eta0, aux, meas, z, config.schedule, guard=config.guard,
                         linearization=config.linearization)
    eta1 = flow.states

    log_w = (
        ensemble.log_weights
        + dyn.log_transition_density(eta1, x_prev)
        + meas.log_likelihood(z, eta1)
        + flow.log_det
        - dyn.log_transition_density(eta0, x_prev)
    )
    new = ParticleEnsemble(eta1, normalize_log_weights(log_w))
    ess = effective_sample_size(new.log_weights)

    posterior = update(predicted, meas, z, at=flow.eta_bar)
    cov = posterior.cov
    estimate = new.estimate()
    new, resampled, (cov,) = _maybe_resample(new, ess, config, rng, cov)
    beliefs = GaussianBelief(new.states, cov)
    record = StepRecord(estimate, ess, resampled, max_eps_rho=flow.diagnostics.max_eps_rho,
                        halvings=flow.diagnostics.halvings)
    return new, beliefs, record


def pfpf_edh_step(ensemble, belief, model, z, config, rng):
    """One PF-PF step with a shared (EDH) flow.

    The determinant of the shared map is common to all particles and drops
    out on normalisation, so the weight update needs only the three density
    evaluations.
    """
    dyn, meas = model.dynamic, model.measurement
    predict = PREDICTORS[config.covariance_predictor]
    update = UPDATERS[config.covariance_predictor]
    x_prev = ensemble.states
    n = len(ensemble)

    predicted = predict(belief, dyn)
    P = _flow_covariance(predicted.cov, config, rng)
    eta0 = dyn.propagate(x_prev, dyn.sample_noise(rng, n))
    eta_bar_0 = dyn.deterministic_map(belief.mean)

    flow = run_edh_flow(eta0, FlowAuxiliary(eta_bar_0, eta_bar_0, P), meas, z,
                        config.schedule, guard=config.guard)
    eta1 = flow.states

    log_w = (
        ensemble.log_weights
        + dyn.log_transition_density(eta1, x_prev)
        + meas.log_likelihood(z, eta1)
        - dyn.log_transition_density(eta0, x_prev)
    )
    new = ParticleEnsemble(eta1, normalize_log_weights(log_w))
    ess = effective_sample_size(new.log_weights)

    posterior = update(predicted, meas, z, at=flow.eta_bar)
    estimate = new.estimate()
    new, resampled, _ = _maybe_resample(new, ess, config, rng)
    record = StepRecord(estimate, ess, resampled, max_eps_rho=flow.diagnostics.max_eps_rho,
                        halvings=flow.diagnostics.halvings)
    return new, GaussianBelief(estimate, posterior.cov), record


def edh_filter_step(belief, model, z, config, rng):
    """Flow-only EDH filter with particles redrawn from the predictive Gaussian."""
    dyn, meas = model.dynamic, model.measurement
    predicted = PREDICTORS[config.covariance_predictor](belief, dyn)
    P = _flow_covariance(predicted.cov, config, rng)
    eta0 = _sample_gaussian(predicted.mean, P, config.n_particles, rng)
    # the shared affine flow keeps eta_bar equal to the particle mean
    aux = FlowAuxiliary(eta0.mean(axis=0), predicted.mean, P)
    flow = run_edh_flow(eta0, aux, meas, z, config.schedule, guard=config.guard)
    estimate = flow.states.mean(axis=0)
    posterior = UPDATERS[config.covariance_predictor](predicted, meas, z, at=estimate)
    record = StepRecord(estimate, max_eps_rho=flow.diagnostics.max_eps_rho,
                        halvings=flow.diagnostics.halvings)
    return flow.states, GaussianBelief(estimate, posterior.cov), record


def ledh_filter_step(belief, model, z, config, rng):
    """Flow-only LEDH filter: redraw, then linearise every particle at itself."""
    dyn, meas = model.dynamic, model.measurement
    predicted = PREDICTORS[config.covariance_predictor](belief, dyn)
    P = _flow_covariance(predicted.cov, config, rng)
    eta0 = _sample_gaussian(predicted.mean, P, config.n_particles, rng)
    aux = FlowAuxiliary(eta0, predicted.mean, P)
    flow = run_ledh_flow(eta0, aux, meas, z, config.schedule, guard=config.guard)
    estimate = flow.states.mean(axis=0)
    posterior = UPDATERS[config.covariance_predictor](predicted, meas, z, at=estimate)
    record = StepRecord(estimate, max_eps_rho=flow.diagnostics.max_eps_rho,
                        halvings=flow.diagnostics.halvings)
    return flow.states, GaussianBelief(estimate, posterior.cov), record


def bpf_step(ensemble, model, z, config, rng):
    """Bootstrap particle filter: propagate through the prior, weight by the likelihood."""
    states = model.dynamic.sample(ensemble.states, rng)
    log_w = ensemble.log_weights + model.measurement.log_likelihood(z, states)
    new = ParticleEnsemble(states, normalize_log_weights(log_w))
    ess = effective_sample_size(new.log_weights)
    estimate = new.estimate()
    new, resampled, _ = _maybe_resample(new, ess, config, rng)
    return new, StepRecord(estimate, ess, resampled)


def kalman_step(belief, model, z, config):
    predicted = PREDICTORS[config.covariance_predictor](belief, model.dynamic)
    posterior = UPDATERS[config.covariance_predictor](predicted, model.measurement, z)
    return posterior, StepRecord(posterior.mean)


# ---------------------------------------------------------------------------
# stateful wrappers


class Filter:
    """Holds one filter's running state; ``step`` consumes one measurement."""

    weighted = False

    def __init__(self, model, config):
        self.model = model
        self.config = config

    def initialize(self, belief, rng):
        raise NotImplementedError

    def step(self, z, rng):
        raise NotImplementedError

    def log_weights(self):
        return None


class _PFPFEDH(Filter):
    weighted = True

    def initialize(self, belief, rng):
        states = _sample_gaussian(belief.mean, belief.cov, self.config.n_particles, rng)
        self.ensemble = ParticleEnsemble.uniform(states)
        self.belief = GaussianBelief(np.asarray(belief.mean, float), np.asarray(belief.cov, float))

    def step(self, z, rng):
        self.ensemble, self.belief, rec = pfpf_edh_step(
            self.ensemble, self.belief, self.model, z, self.config, rng)
        return rec

    def log_weights(self):
        return self.ensemble.log_weights


class _PFPFLEDH(_PFPFEDH):
    def initialize(self, belief, rng):
        super().initialize(belief, rng)
        n, d = self.ensemble.states.shape
        cov = np.broadcast_to(np.asarray(belief.cov, float), (n, d, d)).copy()
        self.belief = GaussianBelief(self.ensemble.states, cov)

    def step(self, z, rng):
        self.ensemble, self.belief, rec = pfpf_ledh_step(
            self.ensemble, self.belief, self.model, z, self.config, rng)
        return rec


class _BPF(_PFPFEDH):
    def step(self, z, rng):
        self.ensemble, rec = bpf_step(self.ensemble, self.model, z, self.config, rng)
        return rec


class _FlowOnly(Filter):
    stepper = staticmethod(edh_filter_step)

    def initialize(self, belief, rng):
        self.belief = GaussianBelief(np.asarray(belief.mean, float), np.asarray(belief.cov, float))

    def step(self, z, rng):
        _, self.belief, rec = self.stepper(self.belief, self.model, z, self.config, rng)
        return rec


class _LEDHOnly(_FlowOnly):
    stepper = staticmethod(ledh_filter_step)


class _Kalman(_FlowOnly):
    def step(self, z, rng):
        self.belief, rec = kalman_step(self.belief, self.model, z, self.config)
        return rec


_REGISTRY = {
    "pfpf-ledh": _PFPFLEDH,
    "pfpf-edh": _PFPFEDH,
    "edh": _FlowOnly,
    "ledh": _LEDHOnly,
    "bpf": _BPF,
    "ekf": _Kalman,
    "ukf": _Kalman,
}


def make_filter(name, model, config):
    """Instantiate a filter by name (see ``FILTER_NAMES``)."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown filter {name!r}; expected one of {FILTER_NAMES}") from None
    if name in ("ekf", "ukf"):
        config = FilterConfig(**{**config.__dict__, "covariance_predictor": name})
    return cls(model, config)


def run_filter(name, model, initial_belief, measurements, config, rng,
               record_weights=False, timing=True):
    """Run a named filter over a measurement sequence."""
    flt = make_filter(name, model, config)
    flt.initialize(initial_belief, rng)
    result = FilterResult()
    for z in measurements:
        start = time.perf_counter()
        rec = flt.step(z, rng)
        rec.duration = time.perf_counter() - start if timing else float("nan")
        result.records.append(rec)
        if record_weights and flt.weighted:
            result.weight_trace.append(flt.log_weights().copy())
    return result


def flow_diagnostics(result):
    diag = FlowDiagnostics()
    for rec in result.records:
        diag.max_eps_rho = max(diag.max_eps_rho, rec.max_eps_rho)
        diag.halvings += rec.halvings
    return diag
