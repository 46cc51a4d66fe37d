"""EKF and UKF recursions supplying the predictive covariance used by the flows.

Beliefs may carry leading batch axes (one belief per particle for PF-PF
LEDH); every function here is vectorised over them.
"""

from dataclasses import dataclass

import numpy as np


class InnovationCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __getitem__(self, idx):
        return GaussianBelief(self.mean[idx], self.cov[idx])


def symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def floor_covariance(P, rel=1e-9):
    """Symmetrise and lift eigenvalues to at least ``rel * trace(P) / d``."""
    P = symmetrize(np.asarray(P, dtype=float))
    d = P.shape[-1]
    w, V = np.linalg.eigh(P)
    floor = rel * np.trace(P, axis1=-2, axis2=-1) / d
    floor = np.maximum(floor, 0.0)[..., None]
    if np.all(w >= floor):
        return P
    w = np.maximum(w, floor)
    return symmetrize((V * w[..., None, :]) @ np.swapaxes(V, -1, -2))


def _matvec(M, v):
    return np.einsum("...ij,...j->...i", M, v)


def ekf_predict(belief, dynamic, process_cov=None):
    """``m <- g(m)``, ``P <- G P G^T + Q`` with ``G`` the dynamic Jacobian."""
    Q = dynamic.covariance if process_cov is None else process_cov
    G = dynamic.jacobian(belief.mean)
    mean = dynamic.deterministic_map(belief.mean)
    cov = G @ belief.cov @ np.swapaxes(G, -1, -2) + Q
    return GaussianBelief(mean, symmetrize(cov))


def ekf_update(belief, measurement, z, at=None):
    """EKF measurement update with a Joseph-form covariance.

    ``H`` and ``R`` are evaluated at ``at`` (defaults to the predicted mean);
    the measurement is linearised there, so the predicted measurement is
    ``h(at) + H (mean - at)``.
    """
    mean, P = belief.mean, belief.cov
    at = mean if at is None else np.broadcast_to(at, mean.shape)
    H = measurement.jacobian(at)
    R = measurement.noise_covariance(at)
    z_pred = measurement.map(at) + _matvec(H, mean - at)
    Ht = np.swapaxes(H, -1, -2)
    PHt = P @ Ht
    S = symmetrize(H @ PHt + R)
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InnovationCovarianceError("innovation covariance is not positive definite") from exc
    # K = P H^T S^{-1}, via S K^T = H P
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PHt, -1, -2)), -1, -2)
    new_mean = mean + _matvec(K, np.asarray(z) - z_pred)
    IKH = np.eye(P.shape[-1]) - K @ H
    cov = IKH @ P @ np.swapaxes(IKH, -1, -2) + K @ R @ np.swapaxes(K, -1, -2)
    return GaussianBelief(new_mean, symmetrize(cov))


@dataclass(frozen=True)
class UnscentedParams:
    """Scaled unscented transform settings (kappa defaults to 3 - d)."""

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float | None = None

    def weights(self, d):
        kappa = 3.0 - d if self.kappa is None else self.kappa
        lam = self.alpha**2 * (d + kappa) - d
        w0 = float(np.clip(lam / (d + lam), -1.0, 1.0))
        # spread chosen so the second moment stays exact after clamping w0
        spread = d / (1.0 - w0)
        wm = np.full(2 * d + 1, (1.0 - w0) / (2 * d))
        wm[0] = w0
        wc = wm.copy()
        wc[0] = w0 + 1.0 - self.alpha**2 + self.beta
        return spread, wm, wc


def _sqrt_factor(cov):
    try:
        return np.linalg.cholesky(floor_covariance(cov))
    except np.linalg.LinAlgError:
        # singular (e.g. all-zero) covariance: symmetric square root instead
        w, V = np.linalg.eigh(symmetrize(np.asarray(cov, dtype=float)))
        return V * np.sqrt(np.maximum(w, 0.0))[..., None, :]


def sigma_points(mean, cov, params=UnscentedParams()):
    d = mean.shape[-1]
    spread, wm, wc = params.weights(d)
    L = _sqrt_factor(cov)
    offsets = np.sqrt(spread) * np.swapaxes(L, -1, -2)  # rows are scaled columns of L
    pts = np.concatenate(
        [mean[..., None, :], mean[..., None, :] + offsets, mean[..., None, :] - offsets], axis=-2
    )
    return pts, wm, wc


def unscented_transform(fun, mean, cov, params=UnscentedParams()):
    """Mean, covariance and cross-covariance of ``fun(x)`` for ``x ~ N(mean, cov)``."""
    pts, wm, wc = sigma_points(mean, cov, params)
    y = fun(pts)
    y_mean = np.einsum("k,...ki->...i", wm, y)
    dy = y - y_mean[..., None, :]
    dx = pts - mean[..., None, :]
    y_cov = np.einsum("k,...ki,...kj->...ij", wc, dy, dy)
    xy_cov = np.einsum("k,...ki,...kj->...ij", wc, dx, dy)
    return y_mean, y_cov, xy_cov


def ukf_predict(belief, dynamic, process_cov=None, params=UnscentedParams()):
    Q = dynamic.covariance if process_cov is None else process_cov
    mean, cov, _ = unscented_transform(dynamic.deterministic_map, belief.mean, belief.cov, params)
    return GaussianBelief(mean, floor_covariance(cov + Q))


def ukf_update(belief, measurement, z, at=None, params=UnscentedParams()):
    """UKF measurement update; ``R`` is evaluated at ``at`` (default: the mean)."""
    at = belief.mean if at is None else np.broadcast_to(at, belief.mean.shape)
    z_mean, z_cov, xz_cov = unscented_transform(measurement.map, belief.mean, belief.cov, params)
    S = symmetrize(z_cov + measurement.noise_covariance(at))
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InnovationCovarianceError("innovation covariance is not positive definite") from exc
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(xz_cov, -1, -2)), -1, -2)
    mean = belief.mean + _matvec(K, np.asarray(z) - z_mean)
    cov = belief.cov - K @ S @ np.swapaxes(K, -1, -2)
    return GaussianBelief(mean, floor_covariance(cov))


PREDICTORS = {"ekf": ekf_predict, "ukf": ukf_predict}
UPDATERS = {"ekf": ekf_update, "ukf": ukf_update}
