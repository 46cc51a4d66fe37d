"""Error metrics and the predictive-covariance perturbation used in sensitivity runs."""

import numpy as np
from scipy.optimize import linear_sum_assignment


def omat(truth, estimate, p=1.0):
    """Optimal mass transfer distance between two equal-size point sets.

    ``(1/C min_pi sum_c |x_c - xhat_pi(c)|^p)^(1/p)``; the minimising
    permutation comes from an exact linear assignment solve.
    """
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    estimate = np.atleast_2d(np.asarray(estimate, dtype=float))
    if truth.shape != estimate.shape:
        raise ValueError(f"point sets differ in shape: {truth.shape} vs {estimate.shape}")
    if p < 1:
        raise ValueError("p must be >= 1")
    dist = np.linalg.norm(truth[:, None, :] - estimate[None, :, :], axis=-1)
    cost = dist**p
    rows, cols = linear_sum_assignment(cost)
    order = np.argsort(rows)
    total = 0.0
    for r, c in zip(rows[order], cols[order]):
        total += cost[r, c]
    return (total / len(truth)) ** (1.0 / p)


def target_positions(state, num_targets):
    """(x, y) of every target from a stacked ``[x, y, vx, vy] * C`` state."""
    state = np.asarray(state, dtype=float)
    return state.reshape(state.shape[:-1] + (num_targets, 4))[..., :2]


def mse(truth, estimate):
    """Mean over steps and dimensions of the squared error."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    return float(np.mean((truth - estimate) ** 2))


def perturb_covariance(P, sigma_p, rng):
    """Scale the eigenvalues of ``P`` by iid LogNormal(0, sigma_p^2) factors."""
    P = np.asarray(P, dtype=float)
    if sigma_p == 0:
        return P.copy()
    D, V = np.linalg.eigh(P)
    if np.any(D <= 0):
        raise np.linalg.LinAlgError("covariance to perturb is not positive definite")
    xi = rng.lognormal(0.0, sigma_p, size=D.shape)
    out = (V * (xi * D)) @ V.T
    return 0.5 * (out + out.T)
