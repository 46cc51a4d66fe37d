"""Special functions evaluated in log space."""

import numpy as np
from scipy import special


def log_bessel_k(order, x):
    """Logarithm of the modified Bessel function of the second kind, log K_order(x).

    Stable for large orders and arguments where ``K`` itself under- or
    overflows. The fractional part of the order is evaluated with the
    exponentially scaled ``scipy.special.kve``; the integer part is climbed
    with the forward recurrence on the ratio ``K_{v+1}/K_v``, which is the
    stable direction for ``K``.

    Parameters
    ----------
    order : float
        Non-negative order (``K_{-v} = K_v`` so negative orders are folded).
    x : array_like
        Positive arguments.

    Returns
    -------
    ndarray or float
        ``log K_order(x)`` with the shape of ``x``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("log_bessel_k is defined for x > 0 only")
    order = abs(float(order))

    n = int(np.floor(order))
    frac = order - n
    if frac < np.finfo(float).tiny:
        # kve returns NaN for subnormal orders; K is flat in the order there
        frac = 0.0
    log_k0 = np.log(special.kve(frac, x)) - x
    if n == 0:
        return log_k0[()]

    # ratio r_v = K_{v+1}(x) / K_v(x); r_{v} = 1 / r_{v-1} + 2 v / x
    ratio = special.kve(frac + 1.0, x) / special.kve(frac, x)
    out = log_k0 + np.log(ratio)
    v = frac + 1.0
    for _ in range(n - 1):
        ratio = 1.0 / ratio + 2.0 * v / x
        out += np.log(ratio)
        v += 1.0
    return out[()]
