import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from flowpf.special import log_bessel_k

ORDERS = [0.5, 1.0, 2.25, 3.5, 7.7, 15.0, 40.5, 76.0, 150.25, 300.0]
XS = [1e-3, 3e-2, 0.5, 1.0, 7.0, 55.0, 400.0, 3000.0, 1e4]


def mp_log_k(order, x):
    with mpmath.workdps(50):
        return float(mpmath.log(mpmath.besselk(order, x)))


@pytest.mark.parametrize("order", ORDERS)
def test_matches_arbitrary_precision(order):
    got = log_bessel_k(order, np.array(XS))
    want = np.array([mp_log_k(order, x) for x in XS])
    # error in log K is the relative error in K
    assert np.max(np.abs(got - want)) <= 1e-10


@pytest.mark.parametrize("x", [1e-3, 0.2, 1.0, 13.0, 900.0])
def test_half_order_closed_form(x):
    assert log_bessel_k(0.5, x) == pytest.approx(0.5 * np.log(np.pi / (2 * x)) - x, rel=1e-13, abs=1e-13)


@pytest.mark.parametrize("nu,x", [(1.5, 0.7), (4.2, 3.0), (20.0, 11.0), (60.5, 40.0)])
def test_three_term_recurrence(nu, x):
    lo, mid, hi = (log_bessel_k(nu + k, x) for k in (-1, 0, 1))
    rhs = np.logaddexp(lo, np.log(2 * nu / x) + mid)
    assert abs(np.expm1(hi - rhs)) <= 1e-9


def test_integral_representation():
    nu, x = 3.5, 2.0
    val, _ = integrate.quad(lambda t: np.exp(-x * np.cosh(t)) * np.cosh(nu * t), 0, 12.0,
                            epsabs=0, epsrel=1e-13, limit=200)
    assert log_bessel_k(nu, x) == pytest.approx(np.log(val), rel=1e-10)


def test_negative_order_folds():
    assert log_bessel_k(-2.3, 1.7) == log_bessel_k(2.3, 1.7)


@pytest.mark.parametrize("x", [0.0, -1.0, np.nan])
def test_domain(x):
    with pytest.raises(ValueError):
        log_bessel_k(1.0, x)


def test_vectorised_shape():
    x = np.linspace(0.1, 5, 12).reshape(3, 4)
    assert log_bessel_k(2.5, x).shape == (3, 4)


@given(st.floats(0.0, 200.0), st.floats(1e-3, 1e3), st.floats(1e-3, 10.0))
def test_decreasing_in_argument(order, x, dx):
    assert log_bessel_k(order, x + dx) < log_bessel_k(order, x)


@given(st.floats(0.0, 200.0), st.floats(1e-2, 1e3), st.floats(0.01, 5.0))
def test_increasing_in_order(order, x, dv):
    assert log_bessel_k(order + dv, x) >= log_bessel_k(order, x)
