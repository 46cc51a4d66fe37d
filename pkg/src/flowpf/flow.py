"""Exact Daum-Huang particle flows with the invertible-mapping bookkeeping.

The pseudo-time interval [0, 1] is discretised by a :class:`StepSchedule`.
At each node the drift is affine, ``d eta / d lambda = A eta + b``, and one
Euler step gives the affine map ``eta -> (I + eps A) eta + eps b``. Both flows
track a linearisation trajectory ``eta_bar`` that is migrated with the same
maps as the particles, so the end-to-end map is a composition of invertible
affine maps whose log-determinant is accumulated step by step.
"""

from dataclasses import dataclass, field

import numpy as np

MAX_HALVINGS = 6
INVERTIBILITY_MARGIN = 1e-6


class FlowError(RuntimeError):
    """The flow could not be carried out (non-PD innovation or non-invertible step)."""


class InvertibilityError(FlowError):
    def __init__(self, lam, rho, epsilon, particles=None):
        self.lam = lam
        self.rho = rho
        self.epsilon = epsilon
        self.particles = particles
        where = "" if particles is None else f" for particles {list(particles)[:10]}"
        super().__init__(
            f"flow step at lambda={lam:.6g} not invertible{where}: "
            f"eps * rho(A) = {epsilon:.3g} * {rho:.6g} >= 1"
        )


@dataclass(frozen=True, eq=False)
class StepSchedule:
    epsilons: np.ndarray

    def __post_init__(self):
        eps = np.array(self.epsilons, dtype=float).reshape(-1)
        if eps.size == 0 or np.any(eps <= 0):
            raise ValueError("step sizes must be strictly positive")
        if abs(eps.sum() - 1.0) > 1e-12:
            raise ValueError("step sizes must sum to one")
        eps.setflags(write=False)
        object.__setattr__(self, "epsilons", eps)

    @property
    def n_steps(self):
        return self.epsilons.size

    @property
    def lambdas(self):
        """Nodes lambda_0 = 0, ..., lambda_N = 1."""
        # clamp so rounding in the tail cannot overshoot and then step back to 1
        lam = np.concatenate([[0.0], np.minimum(np.cumsum(self.epsilons), 1.0)])
        lam[-1] = 1.0
        return lam


def make_exponential_schedule(n_steps=29, ratio=1.2):
    """Step sizes growing geometrically by ``ratio`` and summing to one."""
    if n_steps < 1 or ratio <= 0:
        raise ValueError("need n_steps >= 1 and ratio > 0")
    if ratio == 1.0:
        eps = np.full(n_steps, 1.0 / n_steps)
    else:
        eps = (1.0 - ratio) / (1.0 - ratio**n_steps) * ratio ** np.arange(n_steps)
    eps = eps / eps.sum()
    # absorb the last rounding error into the largest step
    k = int(np.argmax(eps))
    eps[k] += 1.0 - eps.sum()
    return StepSchedule(eps)


def make_uniform_schedule(n_steps):
    return make_exponential_schedule(n_steps, 1.0)


@dataclass(frozen=True, eq=False)
class FlowParams:
    """Affine drift ``A eta + b`` at one pseudo-time node (batched over leading axes)."""

    A: np.ndarray
    b: np.ndarray
    log_abs_det_step: np.ndarray


@dataclass(frozen=True, eq=False)
class FlowAuxiliary:
    """Linearisation data for a flow.

    ``eta_bar`` is the point the measurement model is linearised at and is
    migrated alongside the particles; ``eta_bar_0`` is the fixed prior mean
    entering ``b``; ``P`` the predictive covariance. For LEDH every field
    carries a leading particle axis (``P`` may also be shared, ``(d, d)``).
    """

    eta_bar: np.ndarray
    eta_bar_0: np.ndarray
    P: np.ndarray


@dataclass
class FlowDiagnostics:
    """Step-size safety record: largest ``eps * rho(A)`` seen and halving events."""

    max_eps_rho: float = 0.0
    halvings: int = 0
    n_checks: int = 0

    def merge(self, other):
        self.max_eps_rho = max(self.max_eps_rho, other.max_eps_rho)
        self.halvings += other.halvings
        self.n_checks += other.n_checks


def _matvec(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def compute_flow_params(lam, P, H, R, z, h_at_point, eta_bar, eta_bar_0, epsilon):
    """Drift parameters of the (L)EDH flow linearised at ``eta_bar``.

    ``A = -1/2 P H^T (lam H P H^T + R)^{-1} H`` and
    ``b = (I + 2 lam A)[(I + lam A) P H^T R^{-1} (z - e) + A eta_bar_0]`` with
    ``e = h(eta_bar) - H eta_bar``. Arguments broadcast over leading axes so
    one call serves a whole LEDH ensemble. The log-determinant of the Euler
    map ``I + epsilon A`` is returned alongside.
    """
    P = np.asarray(P, dtype=float)
    H = np.asarray(H, dtype=float)
    R = np.asarray(R, dtype=float)
    PHt = P @ np.swapaxes(H, -1, -2)
    innov = lam * (H @ PHt) + R
    try:
        np.linalg.cholesky(innov)
    except np.linalg.LinAlgError as exc:
        raise FlowError("lam H P H^T + R is not positive definite") from exc
    A = -0.5 * PHt @ np.linalg.solve(innov, H)

    e = np.asarray(h_at_point) - _matvec(H, eta_bar)
    resid = np.asarray(z) - e
    y = np.linalg.solve(R, resid[..., None])[..., 0]
    v = _matvec(PHt, y)
    v = v + lam * _matvec(A, v) + _matvec(A, eta_bar_0)
    b = v + 2.0 * lam * _matvec(A, v)

    d = A.shape[-1]
    _, logdet = np.linalg.slogdet(np.eye(d) + epsilon * A)
    return FlowParams(A, b, logdet)


def flow_step(eta, params, epsilon):
    """One Euler step ``eta + epsilon (A eta + b)``."""
    eta = np.asarray(eta, dtype=float)
    A = params.A
    if A.ndim == 2:
        return eta + epsilon * (eta @ A.T + params.b)
    return eta + epsilon * (_matvec(A, eta) + params.b)


def spectral_radius(A, method="auto", max_iter=50, tol=1e-8):
    """Largest eigenvalue magnitude of ``A`` (batched over leading axes).

    ``method="eig"`` uses a full eigensolve, ``"power"`` power iteration with
    an eigensolve fallback for entries that do not converge within
    ``max_iter``. ``"auto"`` picks the eigensolve for ``d <= 64``.
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    if method == "auto":
        method = "eig" if d <= 64 else "power"
    if method == "eig":
        return np.max(np.abs(np.linalg.eigvals(A)), axis=-1)[()]
    if method != "power":
        raise ValueError(f"unknown method {method!r}")

    batch = A.shape[:-2]
    v = np.broadcast_to(1.0 + 0.01 * np.arange(d), batch + (d,)).copy()
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    est = np.zeros(batch)
    converged = np.zeros(batch, dtype=bool)
    for _ in range(max_iter):
        w = _matvec(A, v)
        norm = np.linalg.norm(w, axis=-1)
        converged = np.abs(norm - est) <= tol * np.maximum(norm, 1e-300)
        est = norm
        if np.all(converged) or np.all(norm == 0):
            break
        v = w / np.where(norm > 0, norm, 1.0)[..., None]
    # |A v| / |v| is only reliable near convergence; fall back elsewhere
    bad = ~converged
    if np.any(bad):
        exact = np.max(np.abs(np.linalg.eigvals(A[bad] if batch else A)), axis=-1)
        if batch:
            est = est.copy()
            est[bad] = exact
        else:
            est = exact
    return np.asarray(est)[()]


def check_invertibility(A, epsilon, method="auto"):
    """Return ``(rho, ok)`` where ``ok`` iff ``epsilon * rho(A) < 1 - 1e-6``."""
    rho = spectral_radius(A, method=method)
    return rho, epsilon * rho < 1.0 - INVERTIBILITY_MARGIN


def _linearise(model, point):
    return model.jacobian(point), model.noise_covariance(point), model.map(point)


@dataclass
class EDHFlowResult:
    states: np.ndarray
    eta_bar: np.ndarray
    log_det: float
    transform: np.ndarray
    diagnostics: FlowDiagnostics = field(default_factory=FlowDiagnostics)


def run_edh_flow(states, aux, model, z, schedule, guard=True):
    """Migrate every particle with the shared EDH maps.

    The measurement model is linearised at the auxiliary point ``eta_bar``,
    which is migrated before the particles. Since all particles share the
    maps, they are composed into one affine transform ``M eta + c`` and
    applied once at the end. ``log_det`` accumulates
    ``sum_j log|det(I + eps_j A_j)|``.
    """
    states = np.asarray(states, dtype=float)
    eta_bar = np.array(aux.eta_bar, dtype=float)
    d = eta_bar.shape[-1]
    M = np.eye(d)
    c = np.zeros(d)
    log_det = 0.0
    diag = FlowDiagnostics()

    def advance(lam_prev, eps, depth):
        nonlocal eta_bar, M, c, log_det
        lam = lam_prev + eps
        H, R, h = _linearise(model, eta_bar)
        params = compute_flow_params(lam, aux.P, H, R, z, h, eta_bar, aux.eta_bar_0, eps)
        if guard:
            rho, ok = check_invertibility(params.A, eps)
            diag.n_checks += 1
            diag.max_eps_rho = max(diag.max_eps_rho, float(eps * rho))
            if not ok:
                if depth >= MAX_HALVINGS:
                    raise InvertibilityError(lam, float(rho), eps)
                diag.halvings += 1
                advance(lam_prev, 0.5 * eps, depth + 1)
                advance(lam_prev + 0.5 * eps, 0.5 * eps, depth + 1)
                return
        step = np.eye(d) + eps * params.A
        eta_bar = flow_step(eta_bar, params, eps)
        M = step @ M
        c = step @ c + eps * params.b
        log_det += float(params.log_abs_det_step)

    lam_prev = 0.0
    for lam_prev, eps in zip(schedule.lambdas[:-1], schedule.epsilons):
        advance(float(lam_prev), float(eps), 0)
    out = states @ M.T + c
    return EDHFlowResult(out, eta_bar, log_det, M, diag)


@dataclass
class LEDHFlowResult:
    states: np.ndarray
    eta_bar: np.ndarray
    log_det: np.ndarray
    diagnostics: FlowDiagnostics = field(default_factory=FlowDiagnostics)


def run_ledh_flow(states, aux, model, z, schedule, guard=True, linearization="auxiliary"):
    """Migrate each particle with its own locally linearised map.

    Particle ``i`` is linearised at its auxiliary point ``aux.eta_bar[i]``,
    which is migrated with the same per-particle map; the particle's map
    therefore depends only on its own inputs. Returns per-particle
    ``log theta_i = sum_j log|det(I + eps_j A_j^i)|``. A step that fails the
    invertibility guard is halved for the offending particles only.
    """
    if linearization != "auxiliary":
        raise NotImplementedError(
            "only linearisation along the auxiliary trajectory is supported"
        )
    eta = np.array(states, dtype=float)
    eta_bar = np.array(np.broadcast_to(aux.eta_bar, eta.shape), dtype=float)
    n, d = eta.shape
    eta_bar_0 = np.broadcast_to(aux.eta_bar_0, eta.shape)
    P = np.asarray(aux.P, dtype=float)
    shared_P = P.ndim == 2
    log_det = np.zeros(n)
    diag = FlowDiagnostics()

    def advance(idx, lam_prev, eps, depth):
        lam = lam_prev + eps
        pts = eta_bar[idx]
        H, R, h = _linearise(model, pts)
        Pi = P if shared_P else P[idx]
        params = compute_flow_params(lam, Pi, H, R, z, h, pts, eta_bar_0[idx], eps)
        if guard:
            rho, ok = check_invertibility(params.A, eps)
            diag.n_checks += idx.size
            diag.max_eps_rho = max(diag.max_eps_rho, float(np.max(eps * rho)))
            if not np.all(ok):
                bad = idx[~ok]
                if depth >= MAX_HALVINGS:
                    raise InvertibilityError(lam, float(np.max(rho[~ok])), eps, bad)
                diag.halvings += bad.size
                advance(bad, lam_prev, 0.5 * eps, depth + 1)
                advance(bad, lam_prev + 0.5 * eps, 0.5 * eps, depth + 1)
                good = idx[ok]
                if good.size == 0:
                    return
                params = FlowParams(params.A[ok], params.b[ok], params.log_abs_det_step[ok])
                idx = good
        eta_bar[idx] = flow_step(eta_bar[idx], params, eps)
        eta[idx] = flow_step(eta[idx], params, eps)
        log_det[idx] += params.log_abs_det_step

    everyone = np.arange(n)
    for lam_prev, eps in zip(schedule.lambdas[:-1], schedule.epsilons):
        advance(everyone, float(lam_prev), float(eps), 0)
    return LEDHFlowResult(eta, eta_bar, log_det, diag)
