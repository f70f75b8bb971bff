"""Conformal torus metric g(r)^2 (dx^2 + dy^2) realising a radial profile.

The map r(l) solves dr/r = dl/rho, i.e. r(l) = l exp(int_0^l (1/rho - 1/s) ds).
Its inverse l(r) gives the conformal factor g = dl/dr = rho(l(r)) / r.  A
uniform shift delta turns the factor into G^2 = g^2 + delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from ._numerics import gauss_legendre, hermite5_many
from .errors import CapTooLarge, SingularityFailure
from .profile import Profile
from .report import CertificateReport

R2_LIMIT = 0.95
K_ROUNDING = 1e-12


@dataclass(frozen=True)
class RadialMetric:
    profile: Profile
    delta: float
    r0: float
    r1: float
    r2: float
    g_inf: float
    _hl: float = field(repr=False, default=0.0)
    _ltab: np.ndarray | None = field(repr=False, default=None)   # r, r', r'' on uniform l grid
    _hr: float = field(repr=False, default=0.0)
    _gtab: np.ndarray | None = field(repr=False, default=None)   # g, g', g'' on uniform r grid
    _inverse_guess: object = field(repr=False, default=None)

    @property
    def flat(self) -> bool:
        return self.profile.flat

    @property
    def G_inf2(self) -> float:
        return self.g_inf**2 + self.delta

    # -- l <-> r ------------------------------------------------------------
    def r_of_l(self, l):
        arr = np.asarray(l, dtype=float)
        x = arr.ravel()
        out = np.empty_like(x)
        inside = x <= self.profile.l2
        out[inside] = hermite5_many(0.0, self._hl, self._ltab, x[inside])[:, 0]
        out[~inside] = self.r2 + (x[~inside] - self.profile.l2) / self.g_inf
        out = out.reshape(arr.shape)
        return float(out) if arr.ndim == 0 else out

    def l_of_r(self, r):
        arr = np.asarray(r, dtype=float)
        x = arr.ravel()
        out = np.empty_like(x)
        inside = x <= self.r2
        xi = x[inside]
        if xi.size:
            lv = np.clip(self._inverse_guess(xi), 0.0, self.profile.l2)
            for _ in range(8):
                vals = hermite5_many(0.0, self._hl, self._ltab, lv)
                step = (vals[:, 0] - xi) / vals[:, 1]
                lv = np.clip(lv - step, 0.0, self.profile.l2)
                if np.max(np.abs(step)) < 1e-15:
                    break
            out[inside] = lv
        out[~inside] = self.profile.l2 + (x[~inside] - self.r2) * self.g_inf
        out = out.reshape(arr.shape)
        return float(out) if arr.ndim == 0 else out

    # -- conformal factor -----------------------------------------------------
    def g_derivs(self, r, exact: bool = False) -> np.ndarray:
        """(..., 3) array of g, g', g'' of the unshifted factor.

        The default reads the C^2 quintic table shared with the flow kernels.
        ``exact=True`` inverts l(r) by Newton and applies the closed-form
        derivatives of rho(l(r)) / r; use it wherever second derivatives must
        be accurate beyond the table's rounding floor (~1e-7 relative).
        """
        arr = np.asarray(r, dtype=float)
        x = np.abs(arr.ravel())
        out = np.zeros((x.size, 3))
        inside = x < self.r2
        if exact:
            out[inside] = _g_from_profile(self.profile, self.l_of_r(x[inside]), x[inside])
        else:
            out[inside] = hermite5_many(0.0, self._hr, self._gtab, x[inside])
        out[~inside, 0] = self.g_inf
        return out.reshape(arr.shape + (3,))

    def g(self, r):
        arr = np.asarray(r, dtype=float)
        out = self.g_derivs(arr)[..., 0]
        return float(out) if arr.ndim == 0 else out

    def G2(self, r):
        """Shifted squared factor g^2 + delta."""
        return np.asarray(self.g(r)) ** 2 + self.delta

    def curvature(self, r, exact: bool = True):
        """Gaussian curvature -(Laplacian log G) / G^2 of (g^2 + delta)|dx|^2."""
        arr = np.asarray(r, dtype=float)
        x = np.abs(arr.ravel())
        d = self.g_derivs(x, exact=exact)
        g, g1, g2 = d[:, 0], d[:, 1], d[:, 2]
        F = g * g + self.delta
        lg1 = g * g1 / F
        lg2 = (g1 * g1 + g * g2) / F - 2.0 * (g * g1) ** 2 / F**2
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(x > 0, lg1 / np.where(x > 0, x, 1.0), lg2)
        out = -(lg2 + radial) / F
        out = out.reshape(arr.shape)
        return float(out) if arr.ndim == 0 else out

    def kernel_args(self):
        """(hr, gtab, r2, g_inf, delta) for the compiled flow kernels."""
        return self._hr, self._gtab, self.r2, self.g_inf, self.delta

    def with_delta(self, delta: float) -> "RadialMetric":
        return build_metric(self.profile, delta, n_l=self._ltab.shape[0] - 1, n_r=self._gtab.shape[0] - 1)

    def to_json(self, n: int = 512) -> dict:
        rs = np.linspace(0.0, 1.2 * self.r2, n)
        d = self.g_derivs(rs)
        return {
            "kind": "metric",
            "a": self.profile.a,
            "flat": self.flat,
            "delta": self.delta,
            "r0": self.r0,
            "r1": self.r1,
            "r2": self.r2,
            "g_inf": self.g_inf,
            "grid": [[float(r), float(g), float(g1)] for r, g, g1 in zip(rs, d[:, 0], d[:, 1])],
        }


def solve_r_of_l(p: Profile, n: int = 8192) -> tuple[float, np.ndarray]:
    """Tabulate r(l) = l exp(int_0^l tail) on a uniform grid of [0, l2].

    Returns (h, table) with table rows (r, r', r'').
    """
    probe = p.l1 * 1e-6
    t = p.tail(probe)
    if not np.isfinite(t) or abs(t) > 1.0:
        raise SingularityFailure(f"1/rho - 1/l is unbounded near 0 (value {t!r} at l={probe:g})")
    h = p.l2 / n
    nodes = h * np.arange(n + 1)
    x, w = gauss_legendre(10)
    pts = nodes[:-1, None] + h * x[None, :]
    cell = h * (p.tail(pts.ravel()).reshape(pts.shape) @ w)
    integral = np.concatenate([[0.0], np.cumsum(cell)])
    r = nodes * np.exp(integral)
    d = p.derivatives(nodes)
    tab = np.empty((n + 1, 3))
    tab[:, 0] = r
    tab[0, 1], tab[0, 2] = 1.0, 0.0
    tab[1:, 1] = r[1:] / d[1:, 0]
    tab[1:, 2] = r[1:] * (1.0 - d[1:, 1]) / d[1:, 0] ** 2
    return h, tab


def _g_from_profile(p: Profile, l, r):
    """g = rho(l)/r, g' = g (rho' - 1)/r and g'' from differentiating once more."""
    l = np.asarray(l, dtype=float)
    r = np.asarray(r, dtype=float)
    out = np.empty((r.size, 3))
    d = p.derivatives(l)
    m = p.slope_defect(l)
    pos = r > 0
    rp = r[pos]
    g = d[pos, 0] / rp
    g1 = g * m[pos] / rp
    out[pos, 0] = g
    out[pos, 1] = g1
    out[pos, 2] = (g1 * m[pos] + g * g * d[pos, 2]) / rp - g * m[pos] / rp**2
    out[~pos] = (1.0, 0.0, 0.5 * float(p.d3rho(0.0)))
    return out


def _g_table(p: Profile, proto: "RadialMetric", l_nodes, r_nodes):
    """Rows (g, g', g'', increment to the next node); the increment integrates g'."""
    tab = np.zeros((r_nodes.size, 4))
    tab[:, :3] = _g_from_profile(p, l_nodes, r_nodes)
    h = r_nodes[1] - r_nodes[0]
    x, w = gauss_legendre(8)
    pts = (r_nodes[:-1, None] + h * x[None, :]).ravel()
    dg = _g_from_profile(p, proto.l_of_r(pts), pts)[:, 1].reshape(-1, x.size)
    tab[:-1, 3] = h * (dg @ w)
    return tab


def build_metric(p: Profile, delta: float = 0.0, n_l: int = 8192, n_r: int = 4096) -> RadialMetric:
    hl, ltab = solve_r_of_l(p, n_l)
    l_nodes = hl * np.arange(n_l + 1)
    r2 = float(ltab[-1, 0])
    if r2 >= R2_LIMIT:
        raise CapTooLarge(f"r2 = {r2:.4f} does not fit in the fundamental domain (limit {R2_LIMIT})")
    guess = PchipInterpolator(ltab[:, 0], l_nodes, extrapolate=True)
    proto = RadialMetric(p, delta, 0.0, 0.0, r2, 1.0, hl, ltab, 1.0, None, guess)
    hr = r2 / n_r
    r_nodes = hr * np.arange(n_r + 1)
    l_of_nodes = proto.l_of_r(r_nodes)
    l_of_nodes[-1] = p.l2
    g_inf = float(p.rho(p.l2) / r2)
    gtab = _g_table(p, proto, l_of_nodes, r_nodes)
    gtab[-1] = (g_inf, 0.0, 0.0, 0.0)
    min_G2 = g_inf**2 + delta
    if not min_G2 > 0:
        raise ValueError(f"delta={delta} makes the shifted factor non-positive")
    r0 = float(proto.r_of_l(p.l0))
    r1 = float(proto.r_of_l(p.l1))
    return RadialMetric(p, float(delta), r0, r1, r2, g_inf, hl, ltab, hr, gtab, guess)


def gaussian_curvature_xy(m: RadialMetric, point) -> float:
    x, y = (float(v) for v in point)
    x = (x + 1.0) % 2.0 - 1.0
    y = (y + 1.0) % 2.0 - 1.0
    return float(m.curvature(math.hypot(x, y)))


def r2_upper_bound(a: float) -> float:
    """Upper bound exp(2 - ln(3 - sqrt 5)) / (2 sqrt a) on the flat radius r2."""
    return math.exp(2.0 - math.log(3.0 - math.sqrt(5.0))) / (2.0 * math.sqrt(a))


def geodesic_parallels(m: RadialMetric, n: int = 20000) -> list[float]:
    """Radii in (0, r2) where circles are geodesics: zeros of d/dr (r G(r))."""
    def dh(r):
        d = m.g_derivs(r)
        G = np.sqrt(d[..., 0] ** 2 + m.delta)
        return G + r * d[..., 0] * d[..., 1] / G

    rs = np.linspace(m.r2 * 1e-6, m.r2 * (1 - 1e-9), n)
    vals = dh(rs)
    roots = []
    for i in np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]:
        roots.append(brentq(lambda r: float(dh(r)), rs[i], rs[i + 1], xtol=1e-15, rtol=1e-15))
    return roots


def dbg_certificate(m: RadialMetric, n: int = 4000) -> CertificateReport:
    rep = CertificateReport(f"DBG metric a={m.profile.a:g} delta={m.delta:g}" + (" (flat)" if m.flat else ""))
    roots = geodesic_parallels(m)
    two = len(roots) == 2
    if two and m.delta == 0:
        off = max(abs(roots[0] - m.r0), abs(roots[1] - m.r1))
    else:
        off = 0.0 if two else float("inf")
    rep.add("(a) exactly two geodesic parallels in (0,r2)", two and off <= 1e-8, residual=off,
            detail=f"found {len(roots)}")
    if not two:
        rep.add("(b) curvature pattern", False, detail="no parallels to anchor the checks")
        return rep
    rp0, rp1 = roots
    inner = np.linspace(0.0, rp0, n)
    K_in = m.curvature(inner)
    rep.add("(b) K>0 on r<=r0", bool(np.all(K_in > 0)), residual=float(K_in.min()))
    K1 = float(m.curvature(rp1))
    rep.add("(b) K<0 on C_r1", K1 < 0, residual=K1)
    rs = np.linspace(0.0, rp1, n)
    dK = np.diff(m.curvature(rs))
    rep.add("(b) K strictly decreasing on [0,r1]", bool(np.all(dK < 0)), residual=float(dK.max()))
    outer = np.linspace(rp1, m.r2, n)
    K_out = m.curvature(outer)
    # K decays to zero flatly at r2; allow rounding-level positive values there.
    rep.add("K<=0 outside the cap", bool(np.all(K_out <= K_ROUNDING)), residual=float(K_out.max()))
    far = m.curvature(np.linspace(m.r2, 1.0, 50))
    rep.add("K=0 beyond r2", bool(np.all(far == 0)), residual=float(np.abs(far).max()))
    rep.add("cap fits the fundamental domain", m.r2 < 1.0, residual=m.r2)
    return rep


def certify_deltas(base: RadialMetric, deltas) -> dict[float, bool]:
    """Certificate outcome for each shift; used to bound the window of admissible shifts."""
    out = {}
    for d in deltas:
        out[float(d)] = dbg_certificate(base.with_delta(float(d))).passed
    return out


def largest_certified_delta(base: RadialMetric, delta0: float | None = None, steps: int = 6) -> float:
    """Largest |delta| on a geometric ladder for which both +delta and -delta certify."""
    if delta0 is None:
        delta0 = 1e-3 * (1.0 - base.g_inf**2)
    best = 0.0
    for k in range(steps):
        d = delta0 * 2.0**k
        ok = certify_deltas(base, [d, -d])
        if all(ok.values()):
            best = d
        else:
            break
    return best
