"""Compiled Hamiltonian kernels: evaluation, implicit-midpoint steps, flights.

Phase-space vectors are laid out as z = (q_0..q_{n-1}, p_0..p_{n-1}).  The
radial data (g, g', g'') come from the quintic table of a ``RadialMetric``;
beyond r2 the factor is the constant g_inf, so every Hamiltonian is
independent of q there and orbits move on straight lines.
"""

import math

import numpy as np
from numba import njit

from ._numerics import cutoff_xi2, hermite5

FLAT = 0
CONFORMAL = 1
PERTURBED = 2
RELATIVISTIC = 3

OK = 0
NOT_CONVERGED = 1
ENERGY_RANGE = 2

NEWTON_TOL = 1e-13
NEWTON_MAXIT = 30

# Triple-jump composition coefficients (symmetric, order raised by two each level).
_CBRT2 = 2.0 ** (1.0 / 3.0)
_G4 = np.array([1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2)])
_FIFTH = 2.0 ** (1.0 / 5.0)
_G6_OUTER = np.array([1.0 / (2.0 - _FIFTH), -_FIFTH / (2.0 - _FIFTH), 1.0 / (2.0 - _FIFTH)])


def composition(order: int) -> np.ndarray:
    """Sub-step fractions of a symmetric composition of the midpoint rule."""
    if order == 2:
        return np.array([1.0])
    if order == 4:
        return _G4.copy()
    if order == 6:
        return np.concatenate([c * _G4 for c in _G6_OUTER])
    raise ValueError(f"order must be 2, 4 or 6, got {order}")


@njit(cache=True, error_model="numpy")
def radial(hr, gtab, r2, ginf, r):
    if r >= r2:
        return ginf, 0.0, 0.0
    return hermite5(0.0, hr, gtab, r)


@njit(cache=True, error_model="numpy")
def ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, gq, gp, M, want_hess):
    """Value of H; fills gradients gq, gp and, if requested, the Hessian M in (q, p) order.

    ``wconst`` is the constant c of the potential W = c - g^2 used by the
    perturbed kinds (1 for the original potential, g_inf^2 for the compact one).
    Returns NaN for the relativistic kind when 1 - 2 H_eps <= 0.
    """
    n = q.shape[0]
    r2s = 0.0
    s = 0.0
    for i in range(n):
        r2s += q[i] * q[i]
        s += p[i] * p[i]
    r = math.sqrt(r2s)
    if want_hess:
        for i in range(2 * n):
            for j in range(2 * n):
                M[i, j] = 0.0
    if kind == FLAT:
        for i in range(n):
            gq[i] = 0.0
            gp[i] = p[i]
            if want_hess:
                M[n + i, n + i] = 1.0
        return 0.5 * s

    g, g1, g2 = radial(hr, gtab, r2, ginf, r)

    if kind == CONFORMAL:
        F = g * g + delta
        f = 1.0 / F
        fr = -2.0 * g * g1 * f * f
        frr = -2.0 * (g1 * g1 + g * g2) * f * f + 8.0 * g * g * g1 * g1 * f * f * f
        A = fr / r if r > 0.0 else frr
        for i in range(n):
            gq[i] = 0.5 * s * A * q[i]
            gp[i] = f * p[i]
        if want_hess:
            B = (frr - A) / r2s if r > 0.0 else 0.0
            for i in range(n):
                for j in range(n):
                    M[i, j] = 0.5 * s * B * q[i] * q[j]
                    M[i, n + j] = A * q[i] * p[j]
                    M[n + j, i] = A * q[i] * p[j]
                M[i, i] += 0.5 * s * A
                M[n + i, n + i] = f
        return 0.5 * s * f

    # perturbed kinetic (and its relativistic transform)
    W = wconst - g * g
    Wr = -2.0 * g * g1
    Wrr = -2.0 * (g1 * g1 + g * g2)
    A = Wr / r if r > 0.0 else Wrr
    xi, xi1, xi2 = cutoff_xi2(s)
    H = 0.5 * s + eps * W * xi
    kin = 1.0 + 2.0 * eps * W * xi1
    for i in range(n):
        gq[i] = eps * xi * A * q[i]
        gp[i] = kin * p[i]
    if want_hess:
        B = (Wrr - A) / r2s if r > 0.0 else 0.0
        for i in range(n):
            for j in range(n):
                M[i, j] = eps * xi * B * q[i] * q[j]
                c = 2.0 * eps * xi1 * A * q[i] * p[j]
                M[i, n + j] = c
                M[n + j, i] = c
                M[n + i, n + j] = 4.0 * eps * W * xi2 * p[i] * p[j]
            M[i, i] += eps * xi * A
            M[n + i, n + i] += kin
    if kind == PERTURBED:
        return H

    w2 = 1.0 - 2.0 * H
    if not w2 > 0.0:
        return np.nan
    w = math.sqrt(w2)
    if want_hess:
        w3 = w2 * w
        for i in range(2 * n):
            gi = gq[i] if i < n else gp[i - n]
            for j in range(2 * n):
                gj = gq[j] if j < n else gp[j - n]
                M[i, j] = M[i, j] / w + gi * gj / w3
    for i in range(n):
        gq[i] /= w
        gp[i] /= w
    return -w


@njit(cache=True, error_model="numpy")
def ham_value(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p):
    n = q.shape[0]
    gq = np.empty(n)
    gp = np.empty(n)
    M = np.empty((1, 1))
    return ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, gq, gp, M, False)


@njit(cache=True, error_model="numpy")
def solve_inplace(A, b):
    """Gaussian elimination with partial pivoting; overwrites A and b, returns b."""
    m = b.shape[0]
    for k in range(m):
        piv = k
        big = abs(A[k, k])
        for i in range(k + 1, m):
            if abs(A[i, k]) > big:
                big = abs(A[i, k])
                piv = i
        if piv != k:
            for j in range(m):
                A[k, j], A[piv, j] = A[piv, j], A[k, j]
            b[k], b[piv] = b[piv], b[k]
        for i in range(k + 1, m):
            fac = A[i, k] / A[k, k]
            if fac != 0.0:
                for j in range(k, m):
                    A[i, j] -= fac * A[k, j]
                b[i] -= fac * b[k]
    for k in range(m - 1, -1, -1):
        acc = b[k]
        for j in range(k + 1, m):
            acc -= A[k, j] * b[j]
        b[k] = acc / A[k, k]
    return b


@njit(cache=True, error_model="numpy")
def _dx_matrix(M, n, DX):
    """DX = J M with J = [[0, I], [-I, 0]]."""
    for j in range(2 * n):
        for i in range(n):
            DX[i, j] = M[n + i, j]
            DX[n + i, j] = -M[i, j]


@njit(cache=True, error_model="numpy")
def workspace(n):
    """Scratch arrays shared by the stepping kernels (avoids per-step allocation)."""
    m2 = 2 * n
    return (np.empty(n), np.empty(n), np.empty((m2, m2)), np.empty((m2, m2)), np.empty(m2),
            np.empty(m2), np.empty(n), np.empty(n), np.empty((m2, m2)), np.empty(m2))


@njit(cache=True, error_model="numpy")
def midpoint_step(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, DXout):
    """One implicit-midpoint step of size h, solved by Newton; updates q, p in place.

    On success ``DXout`` holds J Hess H at the converged midpoint (to Newton
    tolerance) so callers can apply the exact linearisation of the step.
    Returns a status code.
    """
    return midpoint_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, DXout,
                       workspace(q.shape[0]))


@njit(cache=True, error_model="numpy")
def midpoint_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, DXout, ws):
    return midpoint_pred(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, DXout, ws, ws[5], False)


@njit(cache=True, error_model="numpy")
def midpoint_pred(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, DXout, ws, zpred, use_pred):
    """Midpoint step starting Newton from ``zpred`` when ``use_pred``, else from explicit Euler."""
    n = q.shape[0]
    m2 = 2 * n
    gq, gp, M, Jm, res, z, qm, pm = ws[0], ws[1], ws[2], ws[3], ws[4], ws[5], ws[6], ws[7]
    if use_pred:
        for i in range(m2):
            z[i] = zpred[i]
    else:
        v = ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, gq, gp, M, False)
        if v != v:
            return ENERGY_RANGE
        for i in range(n):
            z[i] = q[i] + h * gp[i]
            z[n + i] = p[i] - h * gq[i]
    status = NOT_CONVERGED
    for _ in range(NEWTON_MAXIT):
        for i in range(n):
            qm[i] = 0.5 * (q[i] + z[i])
            pm[i] = 0.5 * (p[i] + z[n + i])
        v = ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, qm, pm, gq, gp, M, True)
        if v != v:
            return ENERGY_RANGE
        for i in range(n):
            res[i] = -(z[i] - q[i] - h * gp[i])
            res[n + i] = -(z[n + i] - p[i] + h * gq[i])
        _dx_matrix(M, n, DXout)
        for i in range(m2):
            for j in range(m2):
                Jm[i, j] = -0.5 * h * DXout[i, j]
            Jm[i, i] += 1.0
        solve_inplace(Jm, res)
        big = 0.0
        for i in range(m2):
            z[i] += res[i]
            if abs(res[i]) > big:
                big = abs(res[i])
        if big <= NEWTON_TOL:
            status = OK
            break
    if status != OK:
        return status
    for i in range(n):
        q[i] = z[i]
        p[i] = z[n + i]
    return OK


@njit(cache=True, error_model="numpy")
def cayley_apply(DX, h, W):
    """W <- (I - h/2 DX)^{-1} (I + h/2 DX) W, column by column (exact step derivative)."""
    m2 = DX.shape[0]
    cayley_ws(DX, h, W, np.empty((m2, m2)), np.empty(m2))


@njit(cache=True, error_model="numpy")
def cayley_ws(DX, h, W, A, col):
    m2 = DX.shape[0]
    for k in range(W.shape[1]):
        for i in range(m2):
            acc = W[i, k]
            for j in range(m2):
                acc += 0.5 * h * DX[i, j] * W[j, k]
            col[i] = acc
        for i in range(m2):
            for j in range(m2):
                A[i, j] = -0.5 * h * DX[i, j]
            A[i, i] += 1.0
        solve_inplace(A, col)
        for i in range(m2):
            W[i, k] = col[i]


@njit(cache=True, error_model="numpy")
def composed_step(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W, with_tangent):
    """One macro step: symmetric composition of midpoint sub-steps with fractions ``coeffs``."""
    return composed_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W, with_tangent,
                       workspace(q.shape[0]))


@njit(cache=True, error_model="numpy")
def _solve4(A, b):
    """In-place 4 x 4 Gaussian elimination with partial pivoting (fixed size, unrolled by LLVM)."""
    for k in range(4):
        piv = k
        big = abs(A[k, k])
        for i in range(k + 1, 4):
            if abs(A[i, k]) > big:
                big = abs(A[i, k])
                piv = i
        if piv != k:
            for j in range(4):
                tmp = A[k, j]
                A[k, j] = A[piv, j]
                A[piv, j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        inv = 1.0 / A[k, k]
        for i in range(k + 1, 4):
            fac = A[i, k] * inv
            for j in range(k + 1, 4):
                A[i, j] -= fac * A[k, j]
            b[i] -= fac * b[k]
    for k in range(3, -1, -1):
        acc = b[k]
        for j in range(k + 1, 4):
            acc -= A[k, j] * b[j]
        b[k] = acc / A[k, k]


@njit(cache=True, error_model="numpy")
def _conf2_field(hr, gtab, r2, ginf, delta, x, y):
    """f = 1/G^2 and the radial coefficients A = f'/r, B = A'/r at (x, y)."""
    rr = x * x + y * y
    r = math.sqrt(rr)
    g, g1, g2 = radial(hr, gtab, r2, ginf, r)
    f = 1.0 / (g * g + delta)
    fr = -2.0 * g * g1 * f * f
    frr = -2.0 * (g1 * g1 + g * g2) * f * f + 8.0 * g * g * g1 * g1 * f * f * f
    if r > 0.0:
        A = fr / r
        B = (frr - A) / rr
    else:
        A = frr
        B = 0.0
    return f, A, B


@njit(cache=True, error_model="numpy")
def _conf2_matrix(f, A, B, x, y, u, v, c, Jm):
    """Jm = I + c DX for H = f(r)|p|^2/2 at the point (x, y, u, v)."""
    hs = 0.5 * (u * u + v * v)
    Jm[0, 0] = 1.0 + c * A * u * x
    Jm[0, 1] = c * A * u * y
    Jm[0, 2] = c * f
    Jm[0, 3] = 0.0
    Jm[1, 0] = c * A * v * x
    Jm[1, 1] = 1.0 + c * A * v * y
    Jm[1, 2] = 0.0
    Jm[1, 3] = c * f
    Jm[2, 0] = -c * hs * (A + B * x * x)
    Jm[2, 1] = -c * hs * B * x * y
    Jm[2, 2] = 1.0 - c * A * x * u
    Jm[2, 3] = -c * A * x * v
    Jm[3, 0] = -c * hs * B * x * y
    Jm[3, 1] = -c * hs * (A + B * y * y)
    Jm[3, 2] = -c * A * y * u
    Jm[3, 3] = 1.0 - c * A * y * v


@njit(cache=True, error_model="numpy")
def conf2_step(hr, gtab, r2, ginf, delta, q, p, h, W, with_tangent, Jm, rv, zpred, use_pred):
    """Implicit midpoint step for the planar conformal kinetic Hamiltonian.

    Same scheme and stopping rule as ``midpoint_ws``, written with scalar
    Hessian blocks.  Newton runs on the midpoint m = z0 + (h/2) X(m); the
    matrix I - (h/2) DX(m) of the last iteration also gives the Cayley
    tangent update.  ``zpred`` (a guess of the end point) seeds Newton when
    ``use_pred`` is set.
    """
    a = 0.5 * h
    x0 = q[0]
    y0 = q[1]
    u0 = p[0]
    v0 = p[1]
    if use_pred:
        x = 0.5 * (x0 + zpred[0])
        y = 0.5 * (y0 + zpred[1])
        u = 0.5 * (u0 + zpred[2])
        v = 0.5 * (v0 + zpred[3])
    else:
        f, A, B = _conf2_field(hr, gtab, r2, ginf, delta, x0, y0)
        hs = 0.5 * (u0 * u0 + v0 * v0)
        x = x0 + a * f * u0
        y = y0 + a * f * v0
        u = u0 - a * hs * A * x0
        v = v0 - a * hs * A * y0
    status = NOT_CONVERGED
    for _ in range(NEWTON_MAXIT):
        f, A, B = _conf2_field(hr, gtab, r2, ginf, delta, x, y)
        hs = 0.5 * (u * u + v * v)
        rv[0] = x0 + a * f * u - x
        rv[1] = y0 + a * f * v - y
        rv[2] = u0 - a * hs * A * x - u
        rv[3] = v0 - a * hs * A * y - v
        if not (abs(rv[0]) + abs(rv[1]) + abs(rv[2]) + abs(rv[3]) < np.inf):
            return ENERGY_RANGE
        _conf2_matrix(f, A, B, x, y, u, v, -a, Jm)
        _solve4(Jm, rv)
        x += rv[0]
        y += rv[1]
        u += rv[2]
        v += rv[3]
        big = max(max(abs(rv[0]), abs(rv[1])), max(abs(rv[2]), abs(rv[3])))
        if big <= 0.5 * NEWTON_TOL:
            status = OK
            break
    if status != OK:
        return status
    if with_tangent:
        f, A, B = _conf2_field(hr, gtab, r2, ginf, delta, x, y)
        for k in range(W.shape[1]):
            w0 = W[0, k]
            w1 = W[1, k]
            w2 = W[2, k]
            w3 = W[3, k]
            _conf2_matrix(f, A, B, x, y, u, v, a, Jm)
            for i in range(4):
                rv[i] = Jm[i, 0] * w0 + Jm[i, 1] * w1 + Jm[i, 2] * w2 + Jm[i, 3] * w3
            _conf2_matrix(f, A, B, x, y, u, v, -a, Jm)
            _solve4(Jm, rv)
            for i in range(4):
                W[i, k] = rv[i]
    q[0] = 2.0 * x - x0
    q[1] = 2.0 * y - y0
    p[0] = 2.0 * u - u0
    p[1] = 2.0 * v - v0
    return OK


@njit(cache=True, error_model="numpy")
def composed_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W, with_tangent, ws):
    DX = ws[8]
    if kind == CONFORMAL and q.shape[0] == 2:
        for c in coeffs:
            st = conf2_step(hr, gtab, r2, ginf, delta, q, p, c * h, W, with_tangent, ws[3], ws[9],
                            ws[9], False)
            if st != OK:
                return st
        return OK
    for c in coeffs:
        st = midpoint_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, c * h, DX, ws)
        if st != OK:
            return st
        if with_tangent:
            cayley_ws(DX, c * h, W, ws[3], ws[9])
    return OK


@njit(cache=True, error_model="numpy")
def wrap(q, cells):
    """Bring q into [-1, 1)^n, counting crossed fundamental domains in ``cells``."""
    for i in range(q.shape[0]):
        while q[i] >= 1.0:
            q[i] -= 2.0
            cells[i] += 1
        while q[i] < -1.0:
            q[i] += 2.0
            cells[i] -= 1


@njit(cache=True, error_model="numpy")
def flight_velocity(kind, eps, wconst, hr, gtab, r2, ginf, delta, p, v):
    """dq/dt in the flat region (any q with r >= r2 gives the same value)."""
    n = p.shape[0]
    far = np.full(n, 1.0)
    gq = np.empty(n)
    M = np.empty((1, 1))
    return ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, far, p, gq, v, M, False)


@njit(cache=True, error_model="numpy")
def time_to_disc(q, v, rad, tmax):
    """First t >= 0 at which q + t v is within ``rad`` of a lattice point of 2Z^n.

    Walks the unit cells [c-1, c+1)^n crossed by the ray.  Returns inf when no
    entry happens before ``tmax``.  Assumes q lies in [-1, 1)^n.
    """
    n = q.shape[0]
    vv = 0.0
    for i in range(n):
        vv += v[i] * v[i]
    if vv == 0.0:
        return np.inf
    c = np.zeros(n)
    t_cell = 0.0
    rr = rad * rad
    while t_cell <= tmax:
        b = 0.0
        d2 = 0.0
        for i in range(n):
            rel = q[i] - c[i]
            b += rel * v[i]
            d2 += rel * rel
        tc = -b / vv
        perp = d2 - b * b / vv
        if perp < rr:
            t_in = tc - math.sqrt((rr - perp) / vv)
            if t_in >= 0.0:
                return t_in if t_in <= tmax else np.inf
        t_exit = np.inf
        for i in range(n):
            if v[i] > 0.0:
                te = (c[i] + 1.0 - q[i]) / v[i]
            elif v[i] < 0.0:
                te = (c[i] - 1.0 - q[i]) / v[i]
            else:
                continue
            if te < t_exit:
                t_exit = te
        for i in range(n):
            if v[i] > 0.0:
                te = (c[i] + 1.0 - q[i]) / v[i]
            elif v[i] < 0.0:
                te = (c[i] - 1.0 - q[i]) / v[i]
            else:
                continue
            if te <= t_exit + 1e-14:
                c[i] += 2.0 if v[i] > 0.0 else -2.0
        t_cell = t_exit
    return np.inf


@njit(cache=True, error_model="numpy")
def radius(q):
    acc = 0.0
    for i in range(q.shape[0]):
        acc += q[i] * q[i]
    return math.sqrt(acc)


@njit(cache=True, error_model="numpy")
def flow_map(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, cells, h, nsteps, coeffs, skip,
             W, with_tangent):
    """Advance (q, p, cells) by nsteps macro steps in place; optional tangent matrix W.

    With ``skip`` the orbit jumps over whole steps of free flight outside the
    disc r < r2; the midpoint rule is exact there, so the result matches plain
    stepping up to rounding.  The tangent of a free flight is the shear
    dq = T (d^2H/dp^2) dp, applied exactly.
    """
    n = q.shape[0]
    v = np.empty(n)
    gq = np.empty(n)
    gp = np.empty(n)
    M = np.empty((2 * n, 2 * n))
    far = np.full(n, 1.0)
    ws = workspace(n)
    k = 0
    while k < nsteps:
        if skip and radius(q) >= r2:
            flight_velocity(kind, eps, wconst, hr, gtab, r2, ginf, delta, p, v)
            if h < 0.0:
                for i in range(n):
                    v[i] = -v[i]
            ah = abs(h)
            t_hit = time_to_disc(q, v, r2, (nsteps - k) * ah)
            if t_hit == np.inf:
                jump = nsteps - k
            else:
                jump = int(math.floor(t_hit / ah))
            if jump >= 1:
                T = jump * ah
                for i in range(n):
                    q[i] += T * v[i]
                wrap(q, cells)
                if with_tangent:
                    ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, far, p, gq, gp, M, True)
                    Th = jump * h
                    for col in range(W.shape[1]):
                        for i in range(n):
                            acc = 0.0
                            for j in range(n):
                                acc += M[n + i, n + j] * W[n + j, col]
                            W[i, col] += Th * acc
                k += jump
                continue
        st = composed_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W, with_tangent, ws)
        if st != OK:
            return st
        wrap(q, cells)
        k += 1
    return OK


# ---------------------------------------------------------------------------
# Traced integration with events
# ---------------------------------------------------------------------------

EV_CAP_ENTER = 0
EV_REACH_INNER = 1
EV_CAP_EXIT = 2
EV_SECTION = 3

EVENT_TTOL = 1e-10


@njit(cache=True, error_model="numpy")
def _dense(z0, z1, X0, X1, h, th, out, dout):
    """Cubic Hermite dense output on one macro step; th in [0, 1]."""
    t2 = th * th
    t3 = t2 * th
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + th
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    d00 = 6 * t2 - 6 * th
    d10 = 3 * t2 - 4 * th + 1
    d01 = -6 * t2 + 6 * th
    d11 = 3 * t2 - 2 * th
    for i in range(z0.shape[0]):
        out[i] = h00 * z0[i] + h10 * h * X0[i] + h01 * z1[i] + h11 * h * X1[i]
        dout[i] = (d00 * z0[i] + d01 * z1[i]) / h + d10 * X0[i] + d11 * X1[i]


@njit(cache=True, error_model="numpy")
def _event_fn(which, level, z, dz, n):
    """Event function value and its time derivative on a dense-output point."""
    if which == 0:
        rr = 0.0
        dr = 0.0
        for i in range(n):
            rr += z[i] * z[i]
            dr += z[i] * dz[i]
        r = math.sqrt(rr)
        return r - level, (dr / r if r > 0 else 0.0)
    return z[n - 1] - level, dz[n - 1]


@njit(cache=True, error_model="numpy")
def _locate(which, level, z0, z1, X0, X1, h, n):
    """Bisection to EVENT_TTOL on the dense output, then one Newton step."""
    zt = np.empty(2 * n)
    dzt = np.empty(2 * n)
    a, b = 0.0, 1.0
    _dense(z0, z1, X0, X1, h, a, zt, dzt)
    fa, _ = _event_fn(which, level, zt, dzt, n)
    ah = abs(h)
    while (b - a) * ah > EVENT_TTOL:
        c = 0.5 * (a + b)
        _dense(z0, z1, X0, X1, h, c, zt, dzt)
        fc, _ = _event_fn(which, level, zt, dzt, n)
        if (fc < 0.0) == (fa < 0.0):
            a, fa = c, fc
        else:
            b = c
    th = 0.5 * (a + b)
    _dense(z0, z1, X0, X1, h, th, zt, dzt)
    f, df = _event_fn(which, level, zt, dzt, n)
    if df != 0.0:
        cand = th - f / (df * h)
        if a <= cand <= b:
            th = cand
    return th


@njit(cache=True, error_model="numpy")
def clairaut_raw(kind, hr, gtab, r2, ginf, delta, q, p):
    """G(r) L / |p| with L = q x p (two dimensions); NaN when undefined."""
    if q.shape[0] != 2 or kind != CONFORMAL:
        return np.nan
    r = radius(q)
    if r >= r2:
        return np.nan
    g, _, _ = radial(hr, gtab, r2, ginf, r)
    G = math.sqrt(g * g + delta)
    sp = math.sqrt(p[0] * p[0] + p[1] * p[1])
    if sp == 0.0:
        return 0.0
    return G * (q[0] * p[1] - q[1] * p[0]) / sp


@njit(cache=True, error_model="numpy")
def integrate_trace(kind, eps, wconst, hr, gtab, r2, ginf, delta, r0, r1, q, p, cells, h, nsteps,
                    coeffs, skip, stride, sections, ev_cap):
    """Integrate with sampling, event localisation and conserved-quantity monitors.

    q, p, cells are advanced in place.  Returns
    (status, steps_done, ts, Q, P, C, Hs, Cl, ev_t, ev_kind, ev_z, ev_cells, n_ev,
     max_drift, pass_drift, n_pass).
    """
    n = q.shape[0]
    ns = nsteps // stride + 1
    ts = np.full(ns, np.nan)
    Q = np.full((ns, n), np.nan)
    P = np.full((ns, n), np.nan)
    C = np.zeros((ns, n), np.int64)
    Hs = np.full(ns, np.nan)
    Cl = np.full(ns, np.nan)
    ev_t = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, np.int64)
    ev_z = np.empty((ev_cap, 2 * n))
    ev_cells = np.empty((ev_cap, n), np.int64)
    pass_drift = np.empty(ev_cap)
    n_ev = 0
    n_pass = 0
    W = np.empty((2 * n, 1))
    v = np.empty(n)
    z0 = np.empty(2 * n)
    z1 = np.empty(2 * n)
    X0 = np.empty(2 * n)
    X1 = np.empty(2 * n)
    gq = np.empty(n)
    gp = np.empty(n)
    Mh = np.empty((1, 1))
    cand_th = np.empty(4)
    cand_kind = np.empty(4, np.int64)
    cand_which = np.empty(4, np.int64)
    cand_level = np.empty(4)
    ws = workspace(n)

    H0 = ham_value(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p)
    if H0 != H0:
        return (ENERGY_RANGE, 0, ts, Q, P, C, Hs, Cl, ev_t, ev_kind, ev_z, ev_cells, 0, 0.0,
                pass_drift, 0)
    max_drift = 0.0
    c_entry = clairaut_raw(kind, hr, gtab, r2, ginf, delta, q, p)
    in_disc = c_entry == c_entry
    cur_drift = 0.0

    ts[0] = 0.0
    for i in range(n):
        Q[0, i] = q[i]
        P[0, i] = p[i]
        C[0, i] = cells[i]
    Hs[0] = H0
    Cl[0] = c_entry

    ah = abs(h)
    k = 0
    status = OK
    while k < nsteps:
        next_sample = (k // stride + 1) * stride
        if skip and radius(q) >= r2:
            flight_velocity(kind, eps, wconst, hr, gtab, r2, ginf, delta, p, v)
            if h < 0.0:
                for i in range(n):
                    v[i] = -v[i]
            t_lim = (min(nsteps, next_sample) - k) * ah
            if sections and v[n - 1] != 0.0:
                face = 1.0 if v[n - 1] > 0.0 else -1.0
                t_face = (face - q[n - 1]) / v[n - 1]
                if t_face < t_lim:
                    t_lim = t_face
            t_hit = time_to_disc(q, v, r2, t_lim)
            t_go = min(t_hit, t_lim)
            jump = int(math.floor(t_go / ah))
            jump = min(jump, min(nsteps, next_sample) - k)
            if jump >= 1:
                T = jump * ah
                for i in range(n):
                    q[i] += T * v[i]
                wrap(q, cells)
                k += jump
                if k % stride == 0:
                    j = k // stride
                    ts[j] = k * h
                    for i in range(n):
                        Q[j, i] = q[i]
                        P[j, i] = p[i]
                        C[j, i] = cells[i]
                    Hs[j] = H0
                continue
        for i in range(n):
            z0[i] = q[i]
            z0[n + i] = p[i]
        st = composed_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W, False, ws)
        if st != OK:
            status = st
            break
        for i in range(n):
            z1[i] = q[i]
            z1[n + i] = p[i]
        # -- events on the unwrapped step -------------------------------------
        ra = 0.0
        rb = 0.0
        for i in range(n):
            ra += z0[i] * z0[i]
            rb += z1[i] * z1[i]
        ra = math.sqrt(ra)
        rb = math.sqrt(rb)
        nc = 0
        if ra >= r1 and rb < r1:
            cand_kind[nc] = EV_CAP_ENTER
            cand_which[nc] = 0
            cand_level[nc] = r1
            nc += 1
        if ra < r1 and rb >= r1:
            cand_kind[nc] = EV_CAP_EXIT
            cand_which[nc] = 0
            cand_level[nc] = r1
            nc += 1
        if ra >= r0 and rb < r0:
            cand_kind[nc] = EV_REACH_INNER
            cand_which[nc] = 0
            cand_level[nc] = r0
            nc += 1
        if sections and (z1[n - 1] >= 1.0 or z1[n - 1] < -1.0):
            cand_kind[nc] = EV_SECTION
            cand_which[nc] = 1
            cand_level[nc] = 1.0 if z1[n - 1] >= 1.0 else -1.0
            nc += 1
        if nc > 0:
            ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, z0[:n], z0[n:], gq, gp, Mh, False)
            for i in range(n):
                X0[i] = gp[i]
                X0[n + i] = -gq[i]
            ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, z1[:n], z1[n:], gq, gp, Mh, False)
            for i in range(n):
                X1[i] = gp[i]
                X1[n + i] = -gq[i]
            for c in range(nc):
                cand_th[c] = _locate(cand_which[c], cand_level[c], z0, z1, X0, X1, h, n)
            order = np.argsort(cand_th[:nc])
            zt = np.empty(2 * n)
            dzt = np.empty(2 * n)
            for c in order:
                if n_ev < ev_cap:
                    _dense(z0, z1, X0, X1, h, cand_th[c], zt, dzt)
                    ev_t[n_ev] = (k + cand_th[c]) * h
                    ev_kind[n_ev] = cand_kind[c]
                    for i in range(2 * n):
                        ev_z[n_ev, i] = zt[i]
                    for i in range(n):
                        ev_cells[n_ev, i] = cells[i]
                n_ev += 1
        wrap(q, cells)
        k += 1
        Hk = ham_value(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p)
        d = abs(Hk - H0)
        if d > max_drift:
            max_drift = d
        cl = clairaut_raw(kind, hr, gtab, r2, ginf, delta, q, p)
        if cl == cl:
            if not in_disc:
                in_disc = True
                c_entry = cl
                cur_drift = 0.0
            dd = abs(cl - c_entry)
            if dd > cur_drift:
                cur_drift = dd
        elif in_disc:
            in_disc = False
            if n_pass < ev_cap:
                pass_drift[n_pass] = cur_drift
            n_pass += 1
        if k % stride == 0:
            j = k // stride
            ts[j] = k * h
            for i in range(n):
                Q[j, i] = q[i]
                P[j, i] = p[i]
                C[j, i] = cells[i]
            Hs[j] = Hk
            Cl[j] = cl
    if in_disc and n_pass < ev_cap:
        pass_drift[n_pass] = cur_drift
        n_pass += 1
    return (status, k, ts, Q, P, C, Hs, Cl, ev_t, ev_kind, ev_z, ev_cells, min(n_ev, ev_cap),
            max_drift, pass_drift, min(n_pass, ev_cap))
