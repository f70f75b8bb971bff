"""Radial profile rho(l) of the focusing cap, in geodesic polar coordinates.

On [0, l1] the profile is the quintic l - 5a l^3 + 10a^2 l^5.  On the collar
[l1, l2] it is defined through its second derivative

    rho'' = lam1 * (-30 a l + 200 a^2 l^3) + C (1 - lam1) lam2,

twice integrated cell by cell with Gauss-Legendre and stored as a quintic
Hermite table.  Beyond l2 it is the straight line of slope one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ._numerics import bump_many, gauss_legendre, hermite5_many, transition_many
from .errors import NormalizationFailed
from .report import CertificateReport


@dataclass(frozen=True)
class CapParams:
    a: float = 5.0
    quadrature_tol: float = 1e-12
    grid_n: int = 4096

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be positive")
        if not self.quadrature_tol > 0:
            raise ValueError("quadrature_tol must be positive")
        if self.grid_n < 1000:
            raise ValueError("grid_n must be at least 1000")


def marker_radii(a: float) -> tuple[float, float, float]:
    """(l0, l1, l2) = (1/sqrt(10a), 1/sqrt(5a), 1/(2 sqrt(a)))."""
    return 1.0 / math.sqrt(10.0 * a), 1.0 / math.sqrt(5.0 * a), 0.5 / math.sqrt(a)


def _as_array(l):
    arr = np.asarray(l, dtype=float)
    return arr, arr.ndim == 0


@dataclass(frozen=True)
class Bumps:
    """The cutoff lam1 and the bump lam2 on the collar (l1, l2).

    lam1(l) = S((l2 - l) / (l2 - l1)) and lam2(l) = lam2_scale * b((l - l1) / (l2 - l1)).
    """

    l1: float
    l2: float
    lam2_scale: float = 1.0

    @property
    def width(self) -> float:
        return self.l2 - self.l1

    def lam1(self, l, deriv: int = 0):
        arr, scalar = _as_array(l)
        vals = transition_many(((self.l2 - arr) / self.width).ravel())
        out = vals[:, 0] if deriv == 0 else (-1.0) ** deriv * vals[:, deriv] / self.width**deriv
        out = out.reshape(arr.shape)
        return float(out) if scalar else out

    def lam2(self, l, deriv: int = 0):
        arr, scalar = _as_array(l)
        vals = bump_many(((arr - self.l1) / self.width).ravel())
        out = self.lam2_scale * vals[:, deriv] / self.width**deriv
        out = out.reshape(arr.shape)
        return float(out) if scalar else out


def build_bumps(params: CapParams) -> Bumps:
    _, l1, l2 = marker_radii(params.a)
    return Bumps(l1, l2)


def _poly_d2(a, l):
    return -30.0 * a * l + 200.0 * a * a * l**3


def _poly_d3(a, l):
    return -30.0 * a + 600.0 * a * a * l**2


def normalize_C(bumps: Bumps, a: float, tol: float = 1e-12) -> float:
    """Solve int_0^inf rho'' dl = 0 for the collar constant C.

    The integral is affine in C: I1 + C * I2 with I1 the polynomial part
    (its [0, l1] piece equals -1 exactly) and I2 the bump part.
    """
    l1, l2 = bumps.l1, bumps.l2
    core = -15.0 * a * l1**2 + 50.0 * a * a * l1**4
    opts = dict(epsabs=tol * 0.1, epsrel=1e-14, limit=200)
    i_collar, err1 = integrate.quad(lambda s: bumps.lam1(s) * _poly_d2(a, s), l1, l2, **opts)
    i2, err2 = integrate.quad(lambda s: (1.0 - bumps.lam1(s)) * bumps.lam2(s), l1, l2, **opts)
    if not (np.isfinite(i2) and i2 > 0):
        raise NormalizationFailed(f"bump integral is not positive: {i2!r}")
    if max(err1, err2) > tol:
        raise NormalizationFailed(f"quadrature did not reach {tol:g} (errors {err1:.2e}, {err2:.2e})")
    C = -(core + i_collar) / i2
    if not C > 0:
        raise NormalizationFailed(f"normalisation constant is not positive: {C!r}")
    return C


@dataclass(frozen=True)
class Profile:
    """Immutable rho(l) with derivatives; ``flat`` selects rho(l) = l."""

    a: float
    C: float
    l0: float
    l1: float
    l2: float
    flat: bool = False
    bumps: Bumps | None = field(default=None, repr=False)
    _h: float = field(default=0.0, repr=False)
    _table: np.ndarray | None = field(default=None, repr=False)
    end_slope_residual: float = 0.0

    # -- second and third derivatives are analytic everywhere ---------------
    def _collar_d2(self, l):
        lam1 = self.bumps.lam1(l)
        return lam1 * _poly_d2(self.a, l) + self.C * (1.0 - lam1) * self.bumps.lam2(l)

    def _collar_d3(self, l):
        b = self.bumps
        lam1, dlam1 = b.lam1(l), b.lam1(l, 1)
        lam2, dlam2 = b.lam2(l), b.lam2(l, 1)
        return (dlam1 * _poly_d2(self.a, l) + lam1 * _poly_d3(self.a, l)
                + self.C * (-dlam1 * lam2 + (1.0 - lam1) * dlam2))

    def derivatives(self, l) -> np.ndarray:
        """Array of shape (..., 4): rho, rho', rho'', rho''' at ``l`` (l >= 0)."""
        arr = np.asarray(l, dtype=float)
        flat_l = arr.ravel()
        out = np.zeros((flat_l.size, 4))
        if self.flat:
            out[:, 0] = flat_l
            out[:, 1] = 1.0
            return out.reshape(arr.shape + (4,))
        a = self.a
        core = flat_l <= self.l1
        s = flat_l[core]
        out[core, 0] = s - 5 * a * s**3 + 10 * a * a * s**5
        out[core, 1] = 1 - 15 * a * s**2 + 50 * a * a * s**4
        out[core, 2] = _poly_d2(a, s)
        out[core, 3] = _poly_d3(a, s)
        mid = (flat_l > self.l1) & (flat_l < self.l2)
        if mid.any():
            s = flat_l[mid]
            vals = hermite5_many(self.l1, self._h, self._table, s)
            out[mid, 0] = vals[:, 0]
            out[mid, 1] = vals[:, 1]
            out[mid, 2] = self._collar_d2(s)
            out[mid, 3] = self._collar_d3(s)
        far = flat_l >= self.l2
        if far.any():
            rho2 = self._table[-1, 0]
            out[far, 0] = rho2 + (flat_l[far] - self.l2)
            out[far, 1] = 1.0
        return out.reshape(arr.shape + (4,))

    def _component(self, l, k):
        arr = np.asarray(l, dtype=float)
        out = self.derivatives(arr)[..., k]
        return float(out) if arr.ndim == 0 else out

    def rho(self, l):
        return self._component(l, 0)

    def drho(self, l):
        return self._component(l, 1)

    def d2rho(self, l):
        return self._component(l, 2)

    def d3rho(self, l):
        return self._component(l, 3)

    def curvature(self, l):
        return curvature_of_profile(self, l)

    def slope_defect(self, l):
        """rho'(l) - 1 without cancellation near l = 0."""
        arr = np.asarray(l, dtype=float)
        x = arr.ravel()
        out = np.zeros_like(x)
        if not self.flat:
            core = x <= self.l1
            s = x[core]
            out[core] = -15 * self.a * s**2 + 50 * self.a**2 * s**4
            mid = (x > self.l1) & (x < self.l2)
            out[mid] = self.derivatives(x[mid])[:, 1] - 1.0
        out = out.reshape(arr.shape)
        return float(out) if arr.ndim == 0 else out

    def tail(self, s):
        """1/rho(s) - 1/s, evaluated without cancellation on the polynomial core."""
        arr = np.asarray(s, dtype=float)
        flat_s = arr.ravel()
        out = np.zeros_like(flat_s)
        if not self.flat:
            a = self.a
            core = flat_s <= self.l1
            t = flat_s[core]
            out[core] = (5 * a * t - 10 * a * a * t**3) / (1 - 5 * a * t**2 + 10 * a * a * t**4)
            rest = ~core
            t = flat_s[rest]
            rho = self.derivatives(t)[:, 0]
            out[rest] = (t - rho) / (t * rho)
        out = out.reshape(arr.shape)
        return float(out) if arr.ndim == 0 else out

    def to_json(self, n: int = 512) -> dict:
        ls = np.linspace(0.0, 1.2 * self.l2, n)
        d = self.derivatives(ls)
        return {
            "kind": "profile",
            "a": self.a,
            "C": self.C,
            "l0": self.l0,
            "l1": self.l1,
            "l2": self.l2,
            "flat": self.flat,
            "grid_n": 0 if self._table is None else int(self._table.shape[0] - 1),
            "grid": [[float(x), float(r), float(r1), float(r2)] for x, r, r1, r2 in zip(ls, d[:, 0], d[:, 1], d[:, 2])],
        }


def build_profile(params: CapParams) -> Profile:
    a = params.a
    l0, l1, l2 = marker_radii(a)
    bumps = build_bumps(params)
    C = normalize_C(bumps, a, params.quadrature_tol)
    proto = Profile(a=a, C=C, l0=l0, l1=l1, l2=l2, bumps=bumps)

    n = params.grid_n
    h = (l2 - l1) / n
    nodes = l1 + h * np.arange(n + 1)
    x, w = gauss_legendre(10)
    pts = nodes[:-1, None] + h * x[None, :]
    d2 = proto._collar_d2(pts.ravel()).reshape(pts.shape)
    d_slope = h * (d2 @ w)
    d_val = h * h * (d2 @ (w * (1.0 - x)))
    # column 3 keeps the exact cell increments of rho (see hermite5)
    table = np.zeros((n + 1, 4))
    table[0, 0] = l1 - 5 * a * l1**3 + 10 * a * a * l1**5
    table[0, 1] = 1 - 15 * a * l1**2 + 50 * a * a * l1**4
    for k in range(n):
        table[k + 1, 1] = table[k, 1] + d_slope[k]
        table[k, 3] = h * table[k, 1] + d_val[k]
        table[k + 1, 0] = table[k, 0] + table[k, 3]
    table[:, 2] = proto._collar_d2(nodes)
    residual = abs(table[-1, 1] - 1.0)
    table[-1, 1] = 1.0
    table[-1, 2] = 0.0
    return Profile(a=a, C=C, l0=l0, l1=l1, l2=l2, bumps=bumps, _h=h, _table=table,
                   end_slope_residual=float(residual))


def flat_profile(a: float = 5.0) -> Profile:
    """rho(l) = l, carrying the same marker radii as the cap of parameter ``a``."""
    l0, l1, l2 = marker_radii(a)
    return Profile(a=a, C=0.0, l0=l0, l1=l1, l2=l2, flat=True)


def curvature_of_profile(p: Profile, l):
    """Gaussian curvature K = -rho''/rho, with the l -> 0 limit 30a."""
    arr = np.asarray(l, dtype=float)
    flat_l = arr.ravel()
    out = np.zeros_like(flat_l)
    if not p.flat:
        a = p.a
        core = flat_l <= p.l1
        s = flat_l[core]
        # both numerator and denominator divided by l
        out[core] = (30 * a - 200 * a * a * s**2) / (1 - 5 * a * s**2 + 10 * a * a * s**4)
        rest = ~core
        d = p.derivatives(flat_l[rest])
        out[rest] = -d[:, 2] / d[:, 0]
    out = out.reshape(arr.shape)
    return float(out) if arr.ndim == 0 else out


def identity_rhs(a: float, l):
    """Closed form of rho rho''' - rho' rho'' on the polynomial core."""
    l = np.asarray(l, dtype=float)
    return 100 * a * a * l**3 * (1 + 12 * a * l**2 - 40 * a * a * l**4)


def identity_residual(p: Profile, n: int = 1000) -> float:
    """Max relative residual of the core identity over n points of (0, l1]."""
    ls = p.l1 * np.arange(1, n + 1) / n
    d = p.derivatives(ls)
    lhs = d[:, 0] * d[:, 3] - d[:, 1] * d[:, 2]
    rhs = identity_rhs(p.a, ls)
    return float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(rhs), np.finfo(float).tiny)))


def verify_profile(p: Profile, n: int = 2000) -> CertificateReport:
    """Certify conditions (i)-(v) and the core identity; never raises."""
    rep = CertificateReport("profile" + (" (flat)" if p.flat else f" a={p.a:g}"))
    ls = np.linspace(0.0, 1.5 * p.l2, 6 * n + 1)
    d = p.derivatives(ls)
    K = curvature_of_profile(p, ls)

    odd = abs(d[0, 0]) + abs(d[0, 2])
    rep.add("(i) rho(0)=0, rho'(0)=1, odd at 0, rho>0",
            odd == 0 and abs(d[0, 1] - 1) == 0 and bool(np.all(d[1:, 0] > 0)),
            residual=odd + abs(d[0, 1] - 1))

    crit = max(abs(p.drho(p.l0)), abs(p.drho(p.l1)))
    rep.add("(ii) rho'(l0)=rho'(l1)=0", crit <= 1e-10, residual=crit)

    core = np.linspace(0.0, p.l0, n + 1)
    k_core = curvature_of_profile(p, core)
    k_l1 = curvature_of_profile(p, p.l1)
    rep.add("(iii) K>0 on [0,l0], K(l1)<0", bool(np.all(k_core > 0)) and k_l1 < 0,
            residual=float(min(k_core.min(), -k_l1)))

    inner = p.l1 * np.arange(1, n + 1) / n
    di = p.derivatives(inner)
    wronsk = di[:, 0] * di[:, 3] - di[:, 1] * di[:, 2]
    k_inner = curvature_of_profile(p, np.concatenate([[0.0], inner]))
    mono = bool(np.all(wronsk > 0)) and bool(np.all(np.diff(k_inner) < 0))
    rep.add("(iv) K'<0 on (0,l1]", mono, residual=float(np.max(np.diff(k_inner))))

    xs = p.l1 + (p.l2 - p.l1) * np.linspace(0.01, 0.99, n)
    k_collar = curvature_of_profile(p, xs)
    beyond = ls[ls >= p.l2]
    slope_dev = float(np.max(np.abs(p.drho(beyond) - 1))) if beyond.size else 0.0
    k_beyond = float(np.max(np.abs(curvature_of_profile(p, beyond)))) if beyond.size else 0.0
    rep.add("(v) K<0 on (l1,l2), rho'=1 beyond l2",
            bool(np.all(k_collar < 0)) and slope_dev <= 1e-10 and k_beyond == 0,
            residual=max(slope_dev, k_beyond, float(k_collar.max())))

    rep.add("K<=0 on [l1,inf)", bool(np.all(K[ls >= p.l1] <= 0)), residual=float(K[ls >= p.l1].max()))
    ident = identity_residual(p)
    rep.add("identity rho rho''' - rho' rho'' (relative)", ident <= 1e-9, residual=ident)
    # rho' = (1 - 5a l^2)(1 - 10a l^2) on the core: negative exactly between l0 and l1
    between = (ls > p.l0) & (ls < p.l1)
    outside = ~between
    sign_ok = bool(np.all(d[outside, 1] >= -1e-12)) and (p.flat or bool(np.all(d[between, 1] < 0)))
    rep.add("rho' sign: >=0 off (l0,l1), <0 on (l0,l1)", sign_ok,
            residual=float(-min(d[outside, 1].min(), 0)))
    rep.add("rho(l) <= l", bool(np.all(d[:, 0] <= ls + 1e-15)), residual=float(np.max(d[:, 0] - ls)))
    rep.add("normalisation rho'(l2)=1", p.end_slope_residual <= 1e-10, residual=p.end_slope_residual)
    rep.add("K identically zero" if p.flat or not np.any(K) else "K not identically zero", True,
            residual=float(np.max(np.abs(K))))
    return rep
