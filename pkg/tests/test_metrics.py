import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flowpf.metrics import mse, omat, perturb_covariance, target_positions
from flowpf.ssm import SensorGrid, build_dispersion_matrix


def omat_enumerated(truth, estimate, p=1.0):
    # same cost matrix and row-order summation, so equality is exact
    truth, estimate = np.asarray(truth, float), np.asarray(estimate, float)
    c = len(truth)
    cost = np.linalg.norm(truth[:, None, :] - estimate[None, :, :], axis=-1) ** p
    best = np.inf
    for perm in itertools.permutations(range(c)):
        total = 0.0
        for i in range(c):
            total += cost[i, perm[i]]
        best = min(best, total)
    return (best / c) ** (1.0 / p)


def test_omat_examples():
    pts = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert omat(pts, pts) == 0.0
    assert omat([[0.0, 0.0]], [[3.0, 0.0]]) == pytest.approx(3.0)
    assert omat([[0, 0], [2, 0]], [[2, 0], [1, 0]], p=1) == pytest.approx(0.5)


def test_omat_p2_example():
    # identity pairing costs 1 + 1, swap costs 4 + 4 -> sqrt(2 / 2)
    assert omat([[0, 0], [1, 0]], [[0, 1], [1, 1]], p=2) == pytest.approx(1.0)


def test_omat_matches_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(200):
        c = int(rng.integers(1, 7))
        a, b = rng.uniform(0, 40, (c, 2)), rng.uniform(0, 40, (c, 2))
        assert omat(a, b) == omat_enumerated(a, b)


points = st.integers(1, 5).flatmap(
    lambda c: st.tuples(*[
        st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=c, max_size=c)
        for _ in range(3)
    ])
)


@given(points)
def test_omat_is_a_metric(sets):
    a, b, c = (np.array(s) for s in sets)
    assert omat(a, b) == pytest.approx(omat(b, a), abs=1e-12)
    assert omat(a, a) == 0.0
    assert omat(a, c) <= omat(a, b) + omat(b, c) + 1e-9


def test_omat_errors():
    with pytest.raises(ValueError):
        omat(np.zeros((2, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        omat(np.zeros((2, 2)), np.zeros((2, 2)), p=0.5)


def test_target_positions():
    x = np.arange(16.0)
    np.testing.assert_array_equal(target_positions(x, 4), [[0, 1], [4, 5], [8, 9], [12, 13]])
    assert target_positions(np.zeros((3, 8)), 2).shape == (3, 2, 2)


def test_mse_examples():
    x = np.random.default_rng(0).normal(size=(4, 3))
    assert mse(x, x) == 0.0
    assert mse(x, x + 1.0) == pytest.approx(1.0)
    assert mse([[0.0, 0.0]], [[1.0, 3.0]]) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))


@pytest.fixture(scope="module")
def grid_cov():
    return build_dispersion_matrix(SensorGrid(64), 3.0, 0.01, 20.0)


def test_perturb_zero_is_identity(grid_cov, rng):
    out = perturb_covariance(grid_cov, 0.0, rng)
    np.testing.assert_array_equal(out, grid_cov)
    assert out is not grid_cov


def test_perturb_stays_pd(grid_cov):
    rng = np.random.default_rng(1)
    for _ in range(1000):
        out = perturb_covariance(grid_cov, 1.0, rng)
        np.testing.assert_array_equal(out, out.T)
        np.linalg.cholesky(out)


def test_perturb_relative_error_near_sigma(grid_cov):
    rng = np.random.default_rng(2)
    ref = np.linalg.norm(grid_cov)
    ratios = [np.linalg.norm(grid_cov - perturb_covariance(grid_cov, 0.2, rng)) / ref for _ in range(10_000)]
    assert np.mean(ratios) == pytest.approx(0.2, rel=0.2)


def test_perturb_keeps_eigenvectors(rng):
    P = np.diag([1.0, 4.0, 9.0])
    out = perturb_covariance(P, 0.5, rng)
    np.testing.assert_allclose(out, np.diag(np.diag(out)), atol=1e-12)


def test_perturb_rejects_non_pd(rng):
    with pytest.raises(np.linalg.LinAlgError):
        perturb_covariance(np.diag([1.0, -1.0]), 0.2, rng)
