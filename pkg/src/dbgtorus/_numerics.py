"""Scalar numerical primitives shared by the profile, metric and flow kernels.

Everything here is compiled with numba so the same code path serves the
vectorised Python API and the inner loops of the integrators.
"""

import math

import numpy as np
from numba import njit


# ---------------------------------------------------------------------------
# Smooth transition S(x) = f(x) / (f(x) + f(1 - x)),  f(x) = exp(-1/x) for x > 0
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def transition(x):
    """Return (S, S', S'') for the standard C^inf step from 0 (x <= 0) to 1 (x >= 1).

    Written through the logistic form S = 1 / (1 + exp(w)),
    w = 1/x - 1/(1-x), which is stable near both ends.
    """
    if x <= 0.0:
        return 0.0, 0.0, 0.0
    if x >= 1.0:
        return 1.0, 0.0, 0.0
    y = 1.0 / (1.0 - x) - 1.0 / x          # S = expit(y)
    dy = 1.0 / (x * x) + 1.0 / ((1.0 - x) * (1.0 - x))
    d2y = -2.0 / (x * x * x) + 2.0 / ((1.0 - x) ** 3)
    if y >= 0.0:
        e = math.exp(-y)
        s = 1.0 / (1.0 + e)
        s1 = e / ((1.0 + e) * (1.0 + e))
    else:
        e = math.exp(y)
        s = e / (1.0 + e)
        s1 = e / ((1.0 + e) * (1.0 + e))
    s2 = s1 * (1.0 - 2.0 * s)
    return s, s1 * dy, s2 * dy * dy + s1 * d2y


@njit(cache=True, error_model="numpy")
def bump(x):
    """Return (b, b') for b(x) = exp(-1 / (x (1 - x))) on (0, 1), zero elsewhere."""
    if x <= 0.0 or x >= 1.0:
        return 0.0, 0.0
    w = x * (1.0 - x)
    b = math.exp(-1.0 / w)
    return b, b * (1.0 - 2.0 * x) / (w * w)


@njit(cache=True, error_model="numpy")
def cutoff_xi(s):
    """Momentum cutoff: (xi, xi') with xi = 1 on [0, 1/3] and xi = 0 on [2/3, inf)."""
    v, d1, _ = transition(2.0 - 3.0 * s)
    return v, -3.0 * d1


@njit(cache=True, error_model="numpy")
def cutoff_xi2(s):
    """(xi, xi', xi'') for the momentum cutoff."""
    v, d1, d2 = transition(2.0 - 3.0 * s)
    return v, -3.0 * d1, 9.0 * d2


# ---------------------------------------------------------------------------
# Quintic Hermite interpolation on a uniform grid
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def hermite5(x0, hx, tab, x):
    """Evaluate the C^2 quintic Hermite interpolant and its first two derivatives.

    ``tab[k] = (y, y', y'')`` at node ``x0 + k*hx``.  An optional fourth column
    holds the increment y[k+1] - y[k] computed more accurately than the
    difference of rounded node values; second derivatives amplify that
    rounding by 60/hx^2, so tables used for curvature should supply it.
    Queries outside the grid are clamped to the end intervals (callers handle
    the exterior themselves).
    """
    n = tab.shape[0]
    u = (x - x0) / hx
    k = int(math.floor(u))
    if k < 0:
        k = 0
    elif k > n - 2:
        k = n - 2
    t = u - k
    y0 = tab[k, 0]
    y1 = tab[k + 1, 0]
    d0 = hx * tab[k, 1]
    d1 = hx * tab[k + 1, 1]
    e0 = hx * hx * tab[k, 2]
    e1 = hx * hx * tab[k + 1, 2]
    dy = tab[k, 3] if tab.shape[1] > 3 else y1 - y0
    c2 = 0.5 * e0
    c3 = 10.0 * dy - 6.0 * d0 - 4.0 * d1 - 0.5 * (3.0 * e0 - e1)
    c4 = -15.0 * dy + 8.0 * d0 + 7.0 * d1 + 0.5 * (3.0 * e0 - 2.0 * e1)
    c5 = 6.0 * dy - 3.0 * (d0 + d1) - 0.5 * (e0 - e1)
    v = y0 + t * (d0 + t * (c2 + t * (c3 + t * (c4 + t * c5))))
    dv = d0 + t * (2.0 * c2 + t * (3.0 * c3 + t * (4.0 * c4 + t * 5.0 * c5)))
    d2v = 2.0 * c2 + t * (6.0 * c3 + t * (12.0 * c4 + t * 20.0 * c5))
    return v, dv / hx, d2v / (hx * hx)


@njit(cache=True, error_model="numpy")
def hermite5_many(x0, hx, tab, xs):
    out = np.empty((xs.shape[0], 3))
    for i in range(xs.shape[0]):
        v, d1, d2 = hermite5(x0, hx, tab, xs[i])
        out[i, 0] = v
        out[i, 1] = d1
        out[i, 2] = d2
    return out


@njit(cache=True, error_model="numpy")
def transition_many(xs):
    out = np.empty((xs.shape[0], 3))
    for i in range(xs.shape[0]):
        a, b, c = transition(xs[i])
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
    return out


@njit(cache=True, error_model="numpy")
def bump_many(xs):
    out = np.empty((xs.shape[0], 2))
    for i in range(xs.shape[0]):
        a, b = bump(xs[i])
        out[i, 0] = a
        out[i, 1] = b
    return out


def gauss_legendre(n=10):
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
