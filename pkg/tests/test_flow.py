import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from flowpf import flow as flowmod
from flowpf.flow import (
    FlowAuxiliary,
    FlowError,
    FlowParams,
    InvertibilityError,
    StepSchedule,
    check_invertibility,
    compute_flow_params,
    flow_step,
    make_exponential_schedule,
    make_uniform_schedule,
    run_edh_flow,
    run_ledh_flow,
    spectral_radius,
)
from flowpf.ssm import AcousticMeasurement, LinearGaussianMeasurement, PoissonCountMeasurement


def spd(rng, d, scale=1.0):
    X = rng.normal(size=(d, d))
    return scale * (X @ X.T / d + 0.5 * np.eye(d))


# -- schedule ---------------------------------------------------------------

def test_default_schedule():
    s = make_exponential_schedule()
    assert s.n_steps == 29
    assert s.epsilons[0] == pytest.approx(0.2 / (1.2**29 - 1), rel=1e-12)
    assert 0.0009 < s.epsilons[0] < 0.0011
    np.testing.assert_allclose(s.epsilons[1:] / s.epsilons[:-1], 1.2, rtol=1e-9)
    assert s.lambdas[0] == 0.0 and s.lambdas[-1] == 1.0
    assert abs(s.epsilons.sum() - 1.0) <= 1e-12


def test_uniform_schedule():
    np.testing.assert_allclose(make_uniform_schedule(10).epsilons, 0.1, rtol=1e-14)


@given(st.integers(1, 200), st.floats(0.5, 2.0))
@example(75, 0.625)  # cumsum overshoots 1 in the tail
def test_schedule_invariants(n, q):
    s = make_exponential_schedule(n, q)
    assert np.all(s.epsilons > 0)
    assert abs(s.epsilons.sum() - 1.0) <= 1e-12
    assert np.all(np.diff(s.lambdas) >= 0) and s.lambdas[0] == 0.0 and s.lambdas[-1] == 1.0


@pytest.mark.parametrize("eps", [[0.5, 0.4], [1.2, -0.2], []])
def test_schedule_validation(eps):
    with pytest.raises(ValueError):
        StepSchedule(eps)


# -- flow parameters ----------------------------------------------------------------

def test_params_zero_jacobian():
    p = compute_flow_params(0.3, np.eye(2), np.zeros((1, 2)), np.eye(1), np.array([2.0]),
                            np.array([5.0]), np.ones(2), np.ones(2), 0.1)
    np.testing.assert_array_equal(p.A, 0)
    np.testing.assert_array_equal(p.b, 0)


def test_params_scalar_hand_values():
    one = np.eye(1)
    p0 = compute_flow_params(0.0, one, one, one, np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0.1)
    assert p0.A[0, 0] == pytest.approx(-0.5)
    p = compute_flow_params(0.5, one, one, one, np.ones(1), np.zeros(1), np.zeros(1), np.zeros(1), 0.1)
    assert p.A[0, 0] == pytest.approx(-1 / 3)
    assert p.b[0] == pytest.approx(5 / 9)
    assert p.log_abs_det_step == pytest.approx(np.log(1 - 0.1 / 3))


def dense_params(lam, P, H, R, z, h, eta_bar, eta_bar_0):
    # explicit inverses on purpose: an oracle independent of the solver path
    d = P.shape[0]
    A = -0.5 * P @ H.T @ np.linalg.inv(lam * H @ P @ H.T + R) @ H
    e = h - H @ eta_bar
    b = (np.eye(d) + 2 * lam * A) @ ((np.eye(d) + lam * A) @ P @ H.T @ np.linalg.inv(R) @ (z - e)
                                     + A @ eta_bar_0)
    return A, b


@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(0.0, 1.0))
def test_params_match_dense_oracle(seed, lam):
    r = np.random.default_rng(seed)
    d, s = 4, 3
    P, R = spd(r, d), spd(r, s, 0.3)
    H = r.normal(size=(s, d))
    z, h = r.normal(size=(2, s))
    eta_bar, eta_bar_0 = r.normal(size=(2, d))
    p = compute_flow_params(lam, P, H, R, z, h, eta_bar, eta_bar_0, 0.05)
    A, b = dense_params(lam, P, H, R, z, h, eta_bar, eta_bar_0)
    np.testing.assert_allclose(p.A, A, rtol=1e-9, atol=1e-11)
    np.testing.assert_allclose(p.b, b, rtol=1e-9, atol=1e-11)
    _, logdet = np.linalg.slogdet(np.eye(d) + 0.05 * A)
    assert p.log_abs_det_step == pytest.approx(logdet, rel=1e-10, abs=1e-12)


def test_params_linear_special_case_has_no_offset(rng):
    P, R = spd(rng, 3), spd(rng, 2)
    H = rng.normal(size=(2, 3))
    eta_bar, eta_bar_0 = rng.normal(size=(2, 3))
    z = rng.normal(size=2)
    p = compute_flow_params(0.4, P, H, R, z, H @ eta_bar, eta_bar, eta_bar_0, 0.1)
    A = p.A
    want = (np.eye(3) + 0.8 * A) @ ((np.eye(3) + 0.4 * A) @ P @ H.T @ np.linalg.solve(R, z) + A @ eta_bar_0)
    np.testing.assert_allclose(p.b, want, rtol=1e-10)


def test_params_batched_equals_loop(rng):
    n, d, s = 5, 3, 2
    P = np.stack([spd(rng, d) for _ in range(n)])
    H = rng.normal(size=(n, s, d))
    R = np.stack([spd(rng, s) for _ in range(n)])
    h = rng.normal(size=(n, s))
    eb, eb0 = rng.normal(size=(2, n, d))
    z = rng.normal(size=s)
    batch = compute_flow_params(0.7, P, H, R, z, h, eb, eb0, 0.02)
    for i in range(n):
        one = compute_flow_params(0.7, P[i], H[i], R[i], z, h[i], eb[i], eb0[i], 0.02)
        np.testing.assert_allclose(batch.A[i], one.A, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(batch.b[i], one.b, rtol=1e-12, atol=1e-14)
        assert batch.log_abs_det_step[i] == pytest.approx(one.log_abs_det_step, rel=1e-12)


def test_params_reject_non_pd_innovation():
    with pytest.raises(FlowError):
        compute_flow_params(0.5, np.eye(1), np.eye(1), -np.eye(1), np.zeros(1), np.zeros(1),
                            np.zeros(1), np.zeros(1), 0.1)


# -- single step and guard ------------------------------------------------------------

def test_flow_step_examples():
    p = FlowParams(np.diag([-0.5, -0.5]), np.array([1.0, 0.0]), 0.0)
    np.testing.assert_allclose(flow_step(np.array([2.0, 2.0]), p, 0.1), [2.0, 1.9])
    eta = np.array([0.3, -1.0])
    np.testing.assert_array_equal(flow_step(eta, p, 0.0), eta)
    zero = FlowParams(np.zeros((2, 2)), np.array([1.0, 2.0]), 0.0)
    np.testing.assert_allclose(flow_step(eta, zero, 0.5), eta + 0.5 * np.array([1.0, 2.0]))


def test_check_invertibility_examples():
    rho, ok = check_invertibility(-np.eye(3), 0.5)
    assert rho == pytest.approx(1.0) and ok
    rho, ok = check_invertibility(np.diag([-10.0, -1.0]), 0.1)
    assert rho == pytest.approx(10.0) and not ok


def test_power_iteration_matches_eigensolve(rng):
    for _ in range(10):
        X = rng.normal(size=(16, 16))
        A = 0.5 * (X + X.T)
        exact = np.max(np.abs(np.linalg.eigvalsh(A)))
        assert spectral_radius(A, method="power") == pytest.approx(exact, abs=1e-6)
        assert spectral_radius(A, method="eig") == pytest.approx(exact, rel=1e-12)


def test_spectral_radius_batched(rng):
    A = rng.normal(size=(4, 6, 6))
    want = [np.max(np.abs(np.linalg.eigvals(a))) for a in A]
    np.testing.assert_allclose(spectral_radius(A), want, rtol=1e-12)
    np.testing.assert_allclose(spectral_radius(A, method="power"), want, rtol=1e-6)


def test_spectral_radius_unknown_method():
    with pytest.raises(ValueError):
        spectral_radius(np.eye(2), method="qr")


# -- EDH flow ----------------------------------------------------------------------------

def linear_setup(rng, d=3, s=2, r_scale=0.5):
    H = rng.normal(size=(s, d))
    meas = LinearGaussianMeasurement(H, r_scale * np.eye(s))
    P = spd(rng, d)
    m = rng.normal(size=d)
    z = H @ m + rng.normal(size=s)
    return meas, P, m, z


def manual_flow(states, aux, model, z, schedule):
    """Step-by-step EDH without map composition."""
    eta, eta_bar = states.copy(), aux.eta_bar.copy()
    for lam, eps in zip(schedule.lambdas[1:], schedule.epsilons):
        H = model.jacobian(eta_bar)
        p = compute_flow_params(lam, aux.P, H, model.noise_covariance(eta_bar), z,
                                model.map(eta_bar), eta_bar, aux.eta_bar_0, eps)
        eta_bar = flow_step(eta_bar, p, eps)
        eta = flow_step(eta, p, eps)
    return eta, eta_bar


def test_edh_composed_map_matches_stepwise(rng):
    meas = AcousticMeasurement(1, [[0, 0], [5, 0], [0, 5]], 10.0, 0.1, 0.3)
    m = np.array([2.0, 3.0, 0.1, 0.0])
    P = np.diag([1.0, 1.0, 0.1, 0.1])
    z = meas.map(m + np.array([0.3, -0.2, 0, 0]))
    states = m + rng.normal(size=(20, 4)) * 0.5
    aux = FlowAuxiliary(m.copy(), m.copy(), P)
    sched = make_exponential_schedule()
    res = run_edh_flow(states, aux, meas, z, sched)
    eta, eta_bar = manual_flow(states, aux, meas, z, sched)
    np.testing.assert_allclose(res.states, eta, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(res.eta_bar, eta_bar, rtol=1e-8, atol=1e-10)


def test_edh_differences_transform_by_product(rng):
    meas, P, m, z = linear_setup(rng)
    sched = make_exponential_schedule(12, 1.3)
    aux = FlowAuxiliary(m, m, P)
    x = rng.normal(size=3)
    delta = rng.normal(size=3)
    res = run_edh_flow(np.stack([x, x + delta]), aux, meas, z, sched)
    prod = np.eye(3)
    for lam, eps in zip(sched.lambdas[1:], sched.epsilons):
        A = -0.5 * P @ meas.H.T @ np.linalg.inv(lam * meas.H @ P @ meas.H.T + meas.noise.cov) @ meas.H
        prod = (np.eye(3) + eps * A) @ prod
    np.testing.assert_allclose(res.states[1] - res.states[0], prod @ delta, rtol=1e-8, atol=1e-12)
    assert res.log_det == pytest.approx(np.log(abs(np.linalg.det(prod))), rel=1e-10)


def test_edh_zero_information_is_identity(rng):
    H = rng.normal(size=(2, 3))
    meas = LinearGaussianMeasurement(H, 1e12 * np.eye(2))
    states = rng.normal(size=(10, 3))
    m = states.mean(axis=0)
    res = run_edh_flow(states, FlowAuxiliary(m, m, np.eye(3)), meas, np.ones(2), make_exponential_schedule())
    np.testing.assert_allclose(res.states, states, rtol=1e-6, atol=1e-9)


def test_edh_scalar_lands_near_kalman_mean():
    meas = LinearGaussianMeasurement([[1.0]], [[1.0]])
    aux = FlowAuxiliary(np.zeros(1), np.zeros(1), np.eye(1))
    res = run_edh_flow(np.zeros((1, 1)), aux, meas, np.array([1.0]), make_uniform_schedule(10_000))
    assert res.eta_bar[0] == pytest.approx(0.5, rel=1e-3)


# -- guard halving -----------------------------------------------------------------------

def refine(epsilons, limit):
    out = []
    for eps in epsilons:
        parts = [eps]
        while max(parts) > limit:
            parts = [q for p in parts for q in (p / 2, p / 2)]
        out.extend(parts)
    return StepSchedule(np.array(out))


def fake_radius(limit):
    # rho such that every step longer than `limit` fails
    def rho(A, method="auto"):
        A = np.asarray(A)
        return np.full(A.shape[:-2], 1.0 / limit)[()]
    return rho


def test_edh_halving_equals_refined_schedule(rng, monkeypatch):
    meas, P, m, z = linear_setup(rng)
    sched = make_exponential_schedule(6, 1.5)
    aux = FlowAuxiliary(m, m, P)
    states = rng.normal(size=(4, 3))
    limit = 0.1
    plain = run_edh_flow(states, aux, meas, z, refine(sched.epsilons, limit), guard=False)
    monkeypatch.setattr(flowmod, "spectral_radius", fake_radius(limit * (1 + 1e-9)))
    guarded = run_edh_flow(states, aux, meas, z, sched)
    assert guarded.diagnostics.halvings > 0
    np.testing.assert_allclose(guarded.states, plain.states, rtol=1e-12)
    assert guarded.log_det == pytest.approx(plain.log_det, rel=1e-12)


def test_ledh_halving_only_for_failing_particles(rng, monkeypatch):
    meas, P, m, z = linear_setup(rng)
    sched = make_exponential_schedule(6, 1.5)
    states = m + rng.normal(size=(5, 3))
    aux = FlowAuxiliary(states.copy(), np.broadcast_to(m, states.shape), P)
    limit = 0.1

    def rho(A, method="auto"):
        A = np.asarray(A)
        return np.full(A.shape[:-2], 1.0 / (limit * (1 + 1e-9)))

    monkeypatch.setattr(flowmod, "spectral_radius", rho)
    guarded = run_ledh_flow(states, aux, meas, z, sched)
    monkeypatch.undo()
    plain = run_ledh_flow(states, aux, meas, z, refine(sched.epsilons, limit), guard=False)
    np.testing.assert_allclose(guarded.states, plain.states, rtol=1e-12)
    np.testing.assert_allclose(guarded.log_det, plain.log_det, rtol=1e-12)
    assert guarded.diagnostics.halvings > 0


def test_guard_gives_up_after_max_halvings(rng, monkeypatch):
    meas, P, m, z = linear_setup(rng)
    monkeypatch.setattr(flowmod, "spectral_radius", fake_radius(1e-9))
    with pytest.raises(InvertibilityError) as err:
        run_edh_flow(m[None], FlowAuxiliary(m, m, P), meas, z, make_exponential_schedule())
    assert err.value.lam > 0
    with pytest.raises(InvertibilityError) as err:
        run_ledh_flow(m[None], FlowAuxiliary(m[None], m[None], P), meas, z, make_exponential_schedule())
    assert list(err.value.particles) == [0]


@given(seed=st.integers(0, 2**32 - 1))
def test_step_safety_bound(seed):
    # eps_j rho(A_j) <= eps_j / (2 lambda_j) <= 1/2 for any PD P and R
    r = np.random.default_rng(seed)
    meas, P, m, z = linear_setup(r, d=4, s=3, r_scale=r.uniform(1e-3, 10))
    res = run_edh_flow(m[None], FlowAuxiliary(m, m, P * r.uniform(0.01, 100)), meas, z,
                       make_exponential_schedule())
    assert res.diagnostics.max_eps_rho <= 0.5 + 1e-9
    assert res.diagnostics.halvings == 0
    assert np.isfinite(res.log_det)


# -- LEDH flow ------------------------------------------------------------------------------

def test_ledh_single_particle_equals_edh(rng):
    meas = AcousticMeasurement(1, [[0, 0], [5, 0], [0, 5]], 10.0, 0.1, 0.3)
    m = np.array([2.0, 3.0, 0.1, 0.0])
    P = np.diag([1.0, 1.0, 0.1, 0.1])
    z = meas.map(m) + 0.1
    x = m + np.array([0.2, -0.1, 0.0, 0.05])
    sched = make_exponential_schedule()
    edh = run_edh_flow(x[None], FlowAuxiliary(m, m, P), meas, z, sched)
    ledh = run_ledh_flow(x[None], FlowAuxiliary(m[None], m[None], P[None]), meas, z, sched)
    np.testing.assert_allclose(ledh.states, edh.states, rtol=1e-10)
    assert ledh.log_det[0] == pytest.approx(edh.log_det, rel=1e-10)


def test_ledh_linear_shared_theta(rng):
    meas, P, m, z = linear_setup(rng)
    states = rng.normal(size=(6, 3))
    aux = FlowAuxiliary(np.broadcast_to(m, states.shape), np.broadcast_to(m, states.shape), P)
    res = run_ledh_flow(states, aux, meas, z, make_exponential_schedule())
    np.testing.assert_allclose(res.log_det, res.log_det[0], rtol=1e-12)


def end_to_end_map(meas, aux_bar, aux_bar0, P, z, sched):
    def T(x):
        return run_ledh_flow(x[None], FlowAuxiliary(aux_bar[None], aux_bar0[None], P[None]),
                             meas, z, sched).states[0]
    return T


def test_ledh_log_det_matches_finite_difference_jacobian(rng):
    meas = PoissonCountMeasurement(3, 1.0, 1 / 3)
    P = spd(rng, 3)
    eb = rng.normal(size=3)
    z = np.array([1.0, 0.0, 3.0])
    sched = make_exponential_schedule()
    x = eb + rng.normal(size=3) * 0.3
    res = run_ledh_flow(x[None], FlowAuxiliary(eb[None], eb[None], P[None]), meas, z, sched)
    T = end_to_end_map(meas, eb, eb, P, z, sched)
    J = np.stack([(T(x + h) - T(x - h)) / 2e-5 for h in 1e-5 * np.eye(3)], axis=-1)
    _, logdet = np.linalg.slogdet(J)
    assert res.log_det[0] == pytest.approx(logdet, rel=1e-5)


def test_ledh_particle_map_depends_only_on_own_inputs(rng):
    meas = PoissonCountMeasurement(3, 1.0, 1 / 3)
    P = spd(rng, 3)
    states = rng.normal(size=(4, 3))
    z = np.array([1.0, 2.0, 0.0])
    sched = make_exponential_schedule()
    aux = FlowAuxiliary(states.copy(), states.copy(), P)
    full = run_ledh_flow(states, aux, meas, z, sched)
    sub = run_ledh_flow(states[2:3], FlowAuxiliary(states[2:3], states[2:3], P), meas, z, sched)
    np.testing.assert_array_equal(full.states[2], sub.states[0])


def test_ledh_rejects_particle_linearisation(rng):
    meas, P, m, z = linear_setup(rng)
    with pytest.raises(NotImplementedError):
        run_ledh_flow(m[None], FlowAuxiliary(m[None], m[None], P), meas, z,
                      make_exponential_schedule(), linearization="particle")
