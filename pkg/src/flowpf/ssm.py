"""State-space models and the densities the filters evaluate.

All model methods are vectorised over leading axes: a state argument has
shape ``(..., d)`` and densities come back with shape ``(...)``. Models are
immutable after construction and hold no random state; samplers take an
explicit ``numpy.random.Generator``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .special import log_bessel_k

LOG_2PI = np.log(2.0 * np.pi)


class DegenerateInputError(ValueError):
    """A covariance or dispersion matrix could not be factorised."""


def _cholesky(cov, what="covariance"):
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise DegenerateInputError(f"{what} is not positive definite") from exc


def _psd_sqrt(cov):
    # Tolerates singular (e.g. all-zero) covariances.
    w, v = np.linalg.eigh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
    return v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]


class GaussianNoise:
    """Zero-mean Gaussian with a fixed covariance, factorised lazily."""

    def __init__(self, cov):
        self.cov = np.array(cov, dtype=float)
        self.cov.setflags(write=False)
        self.dim = self.cov.shape[0]

    @cached_property
    def chol(self):
        return _cholesky(self.cov)

    @cached_property
    def _sqrt(self):
        try:
            return self.chol
        except DegenerateInputError:
            return _psd_sqrt(self.cov)

    @cached_property
    def log_norm(self):
        return -0.5 * self.dim * LOG_2PI - np.sum(np.log(np.diag(self.chol)))

    def logpdf(self, residual):
        residual = np.asarray(residual, dtype=float)
        flat = residual.reshape(-1, self.dim)
        y = linalg.solve_triangular(self.chol, flat.T, lower=True)
        quad = np.einsum("ij,ij->j", y, y)
        return (self.log_norm - 0.5 * quad).reshape(residual.shape[:-1])[()]

    def sample(self, rng, size=None):
        shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
        u = rng.standard_normal(shape + (self.dim,))
        return u @ self._sqrt.T


def finite_difference_jacobian(fun, x, step=1e-6):
    """Central-difference Jacobian of ``fun`` at ``x`` (vectorised over leading axes)."""
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    cols = []
    for j in range(d):
        h = step * max(1.0, float(np.max(np.abs(x[..., j])))) if x.size else step
        dx = np.zeros(d)
        dx[j] = h
        cols.append((fun(x + dx) - fun(x - dx)) / (2.0 * h))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Abstract interface


class DynamicModel:
    """State transition ``x_k = g(x_{k-1}, v_k)``.

    Subclasses implement :meth:`deterministic_map`, :meth:`sample_noise`,
    :meth:`propagate` and :meth:`log_transition_density`. ``covariance`` is
    the (possibly state-independent) process covariance handed to the
    Kalman-type covariance predictors.
    """

    dim: int
    covariance: np.ndarray

    def deterministic_map(self, x):
        raise NotImplementedError

    def sample_noise(self, rng, size=None):
        raise NotImplementedError

    def propagate(self, x, noise):
        raise NotImplementedError

    def log_transition_density(self, x_next, x_prev):
        raise NotImplementedError

    def jacobian(self, x):
        """Jacobian of the deterministic map; central differences unless overridden."""
        return finite_difference_jacobian(self.deterministic_map, x)

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        size = x.shape[:-1] if x.ndim > 1 else None
        return self.propagate(x, self.sample_noise(rng, size))


class MeasurementModel:
    """Measurement ``z_k = h(x_k, w_k)`` with a local Gaussian description.

    ``jacobian`` returns ``(..., S, d)`` and ``noise_covariance`` returns
    ``(..., S, S)``; both feed the flow linearisation and the EKF/UKF.
    """

    dim: int
    dim_state: int

    def map(self, x):
        raise NotImplementedError

    def log_likelihood(self, z, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def noise_covariance(self, x):
        raise NotImplementedError

    def sample(self, x, rng):
        raise NotImplementedError


@dataclass(frozen=True)
class StateSpaceModel:
    dynamic: DynamicModel
    measurement: MeasurementModel

    def __post_init__(self):
        if self.measurement.dim_state != self.dynamic.dim:
            raise ValueError("measurement and dynamic models disagree on the state dimension")

    @property
    def dim_state(self):
        return self.dynamic.dim

    @property
    def dim_meas(self):
        return self.measurement.dim

    def simulate(self, x0, n_steps, rng_state, rng_meas):
        """Draw a trajectory ``x_1..x_K`` and its measurements from ``x0``."""
        xs, zs = [], []
        x = np.asarray(x0, dtype=float)
        for _ in range(n_steps):
            x = self.dynamic.sample(x, rng_state)
            xs.append(x)
            zs.append(self.measurement.sample(x, rng_meas))
        return np.array(xs), np.array(zs)


# ---------------------------------------------------------------------------
# Gaussian building blocks


class LinearGaussianDynamics(DynamicModel):
    """``x_k = F x_{k-1} + v_k``, ``v_k ~ N(0, Q)``."""

    def __init__(self, transition, process_cov):
        self.F = np.array(transition, dtype=float)
        self.F.setflags(write=False)
        self.noise = GaussianNoise(process_cov)
        self.dim = self.F.shape[0]
        self.covariance = self.noise.cov

    def deterministic_map(self, x):
        return np.asarray(x, dtype=float) @ self.F.T

    def sample_noise(self, rng, size=None):
        return self.noise.sample(rng, size)

    def propagate(self, x, noise):
        return self.deterministic_map(x) + noise

    def log_transition_density(self, x_next, x_prev):
        return self.noise.logpdf(np.asarray(x_next) - self.deterministic_map(x_prev))

    def jacobian(self, x):
        x = np.asarray(x)
        return np.broadcast_to(self.F, x.shape[:-1] + self.F.shape)


class AdditiveGaussianMeasurement(MeasurementModel):
    """``z = h(x) + w``, ``w ~ N(0, R)``; subclasses supply ``map``/``jacobian``."""

    def __init__(self, noise_cov, dim_state):
        self.noise = GaussianNoise(noise_cov)
        self.dim = self.noise.dim
        self.dim_state = dim_state

    def log_likelihood(self, z, x):
        return self.noise.logpdf(np.asarray(z) - self.map(x))

    def noise_covariance(self, x):
        x = np.asarray(x)
        return np.broadcast_to(self.noise.cov, x.shape[:-1] + self.noise.cov.shape)

    def sample(self, x, rng):
        x = np.asarray(x, dtype=float)
        size = x.shape[:-1] if x.ndim > 1 else None
        return self.map(x) + self.noise.sample(rng, size)


class LinearGaussianMeasurement(AdditiveGaussianMeasurement):
    def __init__(self, matrix, noise_cov):
        self.H = np.array(matrix, dtype=float)
        self.H.setflags(write=False)
        super().__init__(noise_cov, self.H.shape[1])

    def map(self, x):
        return np.asarray(x, dtype=float) @ self.H.T

    def jacobian(self, x):
        x = np.asarray(x)
        return np.broadcast_to(self.H, x.shape[:-1] + self.H.shape)


# ---------------------------------------------------------------------------
# Sensor grid scenarios


@dataclass(frozen=True, eq=False)
class SensorGrid:
    """``d`` sensors on the integer grid {1..sqrt(d)}^2, row-major."""

    d: int
    positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        side = int(round(np.sqrt(self.d)))
        if self.d < 1 or side * side != self.d:
            raise ValueError(f"number of sensors must be a perfect square, got {self.d}")
        rows, cols = np.divmod(np.arange(self.d), side)
        pos = np.column_stack([rows + 1.0, cols + 1.0])
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)


def build_dispersion_matrix(grid, alpha0, alpha1, beta):
    """Spatially correlated covariance ``a0 exp(-|Ri - Rj|^2 / beta) + a1 I``."""
    if alpha0 < 0 or alpha1 <= 0 or beta <= 0:
        raise ValueError("need alpha0 >= 0, alpha1 > 0, beta > 0")
    diff = grid.positions[:, None, :] - grid.positions[None, :, :]
    sq = np.sum(diff**2, axis=-1)
    return alpha0 * np.exp(-sq / beta) + alpha1 * np.eye(grid.d)


def make_linear_gaussian_model(grid, alpha, sigma_z, dispersion):
    """``x_k = alpha x_{k-1} + v``, ``v ~ N(0, dispersion)``; ``z = x + w``, ``w ~ N(0, sigma_z^2 I)``."""
    d = grid.d
    dynamic = LinearGaussianDynamics(alpha * np.eye(d), dispersion)
    measurement = LinearGaussianMeasurement(np.eye(d), sigma_z**2 * np.eye(d))
    return StateSpaceModel(dynamic, measurement)


# ---------------------------------------------------------------------------
# Acoustic multi-target tracking

CV_TRANSITION = np.array(
    [[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
)


class AcousticMeasurement(AdditiveGaussianMeasurement):
    """Sum of attenuated amplitudes ``psi / (|pos_c - R_s| + d0)`` at every sensor."""

    def __init__(self, num_targets, sensor_positions, psi, d0, sigma_w):
        self.num_targets = num_targets
        self.sensors = np.array(sensor_positions, dtype=float)
        self.sensors.setflags(write=False)
        self.psi = float(psi)
        self.d0 = float(d0)
        super().__init__(sigma_w**2 * np.eye(len(self.sensors)), 4 * num_targets)

    def _offsets(self, x):
        x = np.asarray(x, dtype=float)
        pos = x.reshape(x.shape[:-1] + (self.num_targets, 4))[..., :2]
        diff = pos[..., :, None, :] - self.sensors  # (..., C, S, 2)
        return diff, np.linalg.norm(diff, axis=-1)

    def map(self, x):
        _, r = self._offsets(x)
        return np.sum(self.psi / (r + self.d0), axis=-2)

    def jacobian(self, x):
        diff, r = self._offsets(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, -self.psi / (r * (r + self.d0) ** 2), 0.0)
        dpos = scale[..., None] * diff  # (..., C, S, 2)
        full = np.zeros(dpos.shape[:-1] + (4,))
        full[..., :2] = dpos
        # (..., C, S, 4) -> (..., S, 4C)
        full = np.moveaxis(full, -3, -2)
        return full.reshape(full.shape[:-2] + (4 * self.num_targets,))


def make_acoustic_model(num_targets, sensor_positions, psi, d0, sigma_w, process_cov):
    """Constant-velocity targets observed through summed acoustic amplitudes."""
    if num_targets < 1 or d0 <= 0:
        raise ValueError("need num_targets >= 1 and d0 > 0")
    eye = np.eye(num_targets)
    dynamic = LinearGaussianDynamics(np.kron(eye, CV_TRANSITION), np.kron(eye, process_cov))
    _cholesky(dynamic.covariance, "process covariance")
    measurement = AcousticMeasurement(num_targets, sensor_positions, psi, d0, sigma_w)
    return StateSpaceModel(dynamic, measurement)


# ---------------------------------------------------------------------------
# GH skewed-t dynamics with Poisson counts


@dataclass(frozen=True, eq=False)
class GHSkewedTParams:
    """Skewed-t transition ``x_k ~ GH(nu, gamma, sigma)`` centred at ``alpha x_{k-1}``."""

    nu: float
    gamma: np.ndarray
    sigma: np.ndarray
    alpha: float = 0.9

    def __post_init__(self):
        if not self.nu > 4:
            raise ValueError("nu must exceed 4 for a finite covariance")
        gamma = np.array(self.gamma, dtype=float).reshape(-1)
        sigma = np.array(self.sigma, dtype=float)
        if sigma.shape != (gamma.size, gamma.size):
            raise ValueError("sigma must be d x d with d = len(gamma)")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        chol = _cholesky(sigma, "dispersion matrix")
        for arr in (gamma, sigma, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "chol", chol)

    @property
    def dim(self):
        return self.gamma.size

    @property
    def mean_shift(self):
        """E[x_k] - mu_k."""
        return self.gamma * self.nu / (self.nu - 2.0)

    @property
    def covariance(self):
        nu = self.nu
        return nu / (nu - 2.0) * self.sigma + nu**2 / (
            (2.0 * nu - 8.0) * (nu / 2.0 - 1.0) ** 2
        ) * np.outer(self.gamma, self.gamma)


def log_gh_skewed_t_pdf(params, x, mu):
    """Log density of the GH skewed-t, normalising constant included.

    Mahalanobis terms use triangular solves against the Cholesky factor of
    the dispersion matrix. ``x`` and ``mu`` broadcast over leading axes.
    """
    d = params.dim
    nu = params.nu
    a = 0.5 * (nu + d)
    diff = np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)
    shape = diff.shape[:-1]
    flat = diff.reshape(-1, d)
    y = linalg.solve_triangular(params.chol, flat.T, lower=True)  # (d, n)
    g = linalg.solve_triangular(params.chol, params.gamma, lower=True)
    q = np.einsum("ij,ij->j", y, y)
    gg = float(g @ g)

    log_det = 2.0 * np.sum(np.log(np.diag(params.chol)))
    log_t = -a * np.log1p(q / nu)
    if gg == 0.0:
        # symmetric limit: multivariate Student t
        out = gammaln(a) - gammaln(0.5 * nu) - 0.5 * d * np.log(np.pi * nu) - 0.5 * log_det + log_t
        return out.reshape(shape)[()]

    log_c = (1.0 - a) * np.log(2.0) - gammaln(0.5 * nu) - 0.5 * d * np.log(np.pi * nu) - 0.5 * log_det
    s = np.sqrt((nu + q) * gg)
    out = log_c + log_bessel_k(a, s) + g @ y + a * np.log(s) + log_t
    return np.asarray(out).reshape(shape)[()]


def sample_gh_skewed_t(params, mu, rng, size=None):
    """Draw from the GH skewed-t via its normal variance-mean mixture.

    ``x = mu + gamma W + sqrt(W) L u`` with ``W ~ InvGamma(nu/2, nu/2)``.
    """
    shape = () if size is None else (size,) if np.isscalar(size) else tuple(size)
    w = 1.0 / rng.gamma(0.5 * params.nu, 2.0 / params.nu, size=shape)
    u = rng.standard_normal(shape + (params.dim,))
    w = np.asarray(w)[..., None]
    return np.asarray(mu) + params.gamma * w + np.sqrt(w) * (u @ params.chol.T)


class SkewedTDynamics(DynamicModel):
    """GH skewed-t transitions written as a conditional mean plus centred noise.

    ``deterministic_map`` is the conditional mean ``alpha x + gamma nu/(nu-2)``
    and ``sample_noise`` draws the centred mixture, so zero noise lands on the
    mean of the transition density.
    """

    def __init__(self, params):
        self.params = params
        self.dim = params.dim
        self.covariance = params.covariance
        self.covariance.setflags(write=False)

    def deterministic_map(self, x):
        return self.params.alpha * np.asarray(x, dtype=float) + self.params.mean_shift

    def sample_noise(self, rng, size=None):
        return sample_gh_skewed_t(self.params, 0.0, rng, size) - self.params.mean_shift

    def propagate(self, x, noise):
        return self.deterministic_map(x) + noise

    def log_transition_density(self, x_next, x_prev):
        return log_gh_skewed_t_pdf(self.params, x_next, self.params.alpha * np.asarray(x_prev))


class PoissonCountMeasurement(MeasurementModel):
    """Independent counts ``z_c ~ Poisson(m1 exp(m2 x_c))``."""

    def __init__(self, dim, m1, m2):
        if m1 <= 0:
            raise ValueError("m1 must be positive")
        self.dim = self.dim_state = dim
        self.m1 = float(m1)
        self.m2 = float(m2)

    def map(self, x):
        return self.m1 * np.exp(self.m2 * np.asarray(x, dtype=float))

    def log_likelihood(self, z, x):
        z = np.asarray(z, dtype=float)
        if np.any(z < 0) or np.any(z != np.round(z)):
            raise ValueError("Poisson observations must be non-negative integers")
        x = np.asarray(x, dtype=float)
        log_rate = np.log(self.m1) + self.m2 * x
        return np.sum(z * log_rate - np.exp(log_rate) - gammaln(z + 1.0), axis=-1)[()]

    def jacobian(self, x):
        rate = self.map(x)
        return _diag(self.m2 * rate)

    def noise_covariance(self, x):
        return _diag(self.map(x))

    def sample(self, x, rng):
        return rng.poisson(self.map(x)).astype(float)


def _diag(v):
    out = np.zeros(v.shape + (v.shape[-1],))
    idx = np.arange(v.shape[-1])
    out[..., idx, idx] = v
    return out


def make_skewt_poisson_model(params, m1, m2):
    """Skewed-t spatial dynamics observed through Poisson counts."""
    return StateSpaceModel(SkewedTDynamics(params), PoissonCountMeasurement(params.dim, m1, m2))
