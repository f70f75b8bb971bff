"""Perpendicular Jacobi fields, Riccati blow-ups and the cone mechanism of the cap.

Along a unit-speed geodesic of (g^2 + delta)|dx|^2 the normal Jacobi component
solves J'' + K J = 0.  The geodesic and any number of (J, J') pairs are
advanced together by the implicit midpoint rule (composed to order 6 by
default): the orbit part is the flow kernel's step and the linear part is
the 2x2 Cayley step with K taken at the sub-step midpoint.  That is exactly
the midpoint rule of the augmented system, so Wronskians are conserved to
rounding.

Chords are symmetric about their closest approach c(0) to the centre; T1 and
T2 are the times at which the chord reaches the parallels r1 and r0.  The
rotation Killing field restricted to a chord is the Jacobi field
rho(l(t)) l'(t), which vanishes at t = 0, so J_S is a multiple of it and
u_S = J_S'/J_S vanishes wherever rho' does.  ``killing_jacobi`` evaluates it
as an oracle independent of the integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import brentq

from . import _kernels as K
from .conformal import RadialMetric
from .errors import ChordTooShallow
from .flow import DEFAULT_ORDER, CotangentState, HamiltonianSpec
from .report import CertificateReport

DEFAULT_JACOBI_H = 1e-3
TOL_A = 1e-6
CONE_TOL = 1e-8
ZERO_TTOL = 1e-10

EV_DOWN_R1 = 0
EV_DOWN_R0 = 1
EV_UP_R1 = 2
EV_UP_R0 = 3


# ---------------------------------------------------------------------------
# compiled core
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def curvature_at(hr, gtab, r2, ginf, delta, r):
    """Gaussian curvature of the table metric at radius r (zero beyond r2)."""
    if r >= r2:
        return 0.0
    g, g1, g2 = K.radial(hr, gtab, r2, ginf, r)
    F = g * g + delta
    lg1 = g * g1 / F
    lg2 = (g1 * g1 + g * g2) / F - 2.0 * (g * g1) ** 2 / (F * F)
    rad = lg1 / r if r > 0.0 else lg2
    return -(lg2 + rad) / F


@njit(cache=True, error_model="numpy")
def _cayley2(Kc, dt, Jw):
    a = 0.5 * dt
    det = 1.0 + a * a * Kc
    c11 = (1.0 - a * a * Kc) / det
    c12 = 2.0 * a / det
    c21 = -2.0 * a * Kc / det
    for k in range(Jw.shape[1]):
        J = Jw[0, k]
        Jp = Jw[1, k]
        Jw[0, k] = c11 * J + c12 * Jp
        Jw[1, k] = c21 * J + c11 * Jp


@njit(cache=True, error_model="numpy")
def jacobi_step(kind, hr, gtab, r2, ginf, delta, q, p, Jw, h, coeffs):
    """One composed step of the geodesic together with the Jacobi pairs in ``Jw`` (2 x k)."""
    n = q.shape[0]
    DX = np.empty((2 * n, 2 * n))
    qold = np.empty(n)
    for c in coeffs:
        for i in range(n):
            qold[i] = q[i]
        st = K.midpoint_step(kind, 0.0, 1.0, hr, gtab, r2, ginf, delta, q, p, c * h, DX)
        if st != K.OK:
            return st
        rm = 0.0
        for i in range(n):
            rm += (0.5 * (qold[i] + q[i])) ** 2
        Kc = 0.0 if kind == K.FLAT else curvature_at(hr, gtab, r2, ginf, delta, math.sqrt(rm))
        _cayley2(Kc, c * h, Jw)
    return K.OK


@njit(cache=True, error_model="numpy")
def jacobi_run(kind, hr, gtab, r2, ginf, delta, r0, r1, q, p, cells, Jw, h, nsteps, coeffs, skip,
               stride, stop_kind, stop_count, ev_cap, min_t):
    """Advance geodesic and Jacobi pairs, recording samples and radial crossing events.

    Crossings of r1 and r0 in either direction are bracketed on the orbit's
    dense output to 1e-10 in time, then polished by Newton iterations on the
    re-stepped numerical flow, so event states lie on the level set to
    rounding.  The run stops at the ``stop_count``-th event of kind
    ``stop_kind`` occurring after |t| > ``min_t`` (stop_count = 0 runs all
    ``nsteps``).  Returns (status, t_end, ts, Z, Jtr, ev_t, ev_kind, ev_z,
    ev_J, n_ev); Z rows are (q, p) with q lifted.
    """
    n = q.shape[0]
    kk = Jw.shape[1]
    ns = nsteps // stride + 2
    ts = np.full(ns, np.nan)
    Z = np.full((ns, 2 * n), np.nan)
    Jtr = np.full((ns, 2, kk), np.nan)
    ev_t = np.empty(ev_cap)
    ev_kind = np.empty(ev_cap, np.int64)
    ev_z = np.empty((ev_cap, 2 * n))
    ev_J = np.empty((ev_cap, 2, kk))
    n_ev = 0
    hits = 0
    q0 = np.empty(n)
    p0 = np.empty(n)
    J0 = np.empty((2, kk))
    z0 = np.empty(2 * n)
    z1 = np.empty(2 * n)
    X0 = np.empty(2 * n)
    X1 = np.empty(2 * n)
    gq = np.empty(n)
    gp = np.empty(n)
    Mh = np.empty((1, 1))
    v = np.empty(n)
    qe = np.empty(n)
    pe = np.empty(n)
    Je = np.empty((2, kk))
    cand_th = np.empty(4)
    cand_kind = np.empty(4, np.int64)
    cand_level = np.empty(4)

    def_ok = K.OK
    j = 0
    ts[0] = 0.0
    for i in range(n):
        Z[0, i] = q[i] + 2.0 * cells[i]
        Z[0, n + i] = p[i]
    Jtr[0] = Jw
    j = 1
    ah = abs(h)
    k = 0
    t_end = 0.0
    while k < nsteps:
        next_sample = (k // stride + 1) * stride
        if skip and K.radius(q) >= r2:
            K.flight_velocity(kind, 0.0, 1.0, hr, gtab, r2, ginf, delta, p, v)
            if h < 0.0:
                for i in range(n):
                    v[i] = -v[i]
            t_lim = (min(nsteps, next_sample) - k) * ah
            t_hit = K.time_to_disc(q, v, r2, t_lim)
            jump = int(math.floor(min(t_hit, t_lim) / ah))
            jump = min(jump, min(nsteps, next_sample) - k)
            if jump >= 1:
                T = jump * ah
                for i in range(n):
                    q[i] += T * v[i]
                K.wrap(q, cells)
                Th = jump * h
                for c in range(kk):
                    Jw[0, c] += Th * Jw[1, c]
                k += jump
                t_end = k * h
                if k % stride == 0:
                    ts[j] = t_end
                    for i in range(n):
                        Z[j, i] = q[i] + 2.0 * cells[i]
                        Z[j, n + i] = p[i]
                    Jtr[j] = Jw
                    j += 1
                continue
        for i in range(n):
            q0[i] = q[i]
            p0[i] = p[i]
            z0[i] = q[i]
            z0[n + i] = p[i]
        J0[:, :] = Jw
        st = jacobi_step(kind, hr, gtab, r2, ginf, delta, q, p, Jw, h, coeffs)
        if st != def_ok:
            return st, t_end, ts[:j], Z[:j], Jtr[:j], ev_t, ev_kind, ev_z, ev_J, n_ev
        for i in range(n):
            z1[i] = q[i]
            z1[n + i] = p[i]
        ra = 0.0
        rb = 0.0
        for i in range(n):
            ra += z0[i] * z0[i]
            rb += z1[i] * z1[i]
        ra = math.sqrt(ra)
        rb = math.sqrt(rb)
        nc = 0
        if ra >= r1 and rb < r1:
            cand_kind[nc] = EV_DOWN_R1
            cand_level[nc] = r1
            nc += 1
        if ra >= r0 and rb < r0:
            cand_kind[nc] = EV_DOWN_R0
            cand_level[nc] = r0
            nc += 1
        if ra < r1 and rb >= r1:
            cand_kind[nc] = EV_UP_R1
            cand_level[nc] = r1
            nc += 1
        if ra < r0 and rb >= r0:
            cand_kind[nc] = EV_UP_R0
            cand_level[nc] = r0
            nc += 1
        stop_here = False
        stop_th = 1.0
        if nc > 0:
            K.ham_eval(kind, 0.0, 1.0, hr, gtab, r2, ginf, delta, z0[:n], z0[n:], gq, gp, Mh, False)
            for i in range(n):
                X0[i] = gp[i]
                X0[n + i] = -gq[i]
            K.ham_eval(kind, 0.0, 1.0, hr, gtab, r2, ginf, delta, z1[:n], z1[n:], gq, gp, Mh, False)
            for i in range(n):
                X1[i] = gp[i]
                X1[n + i] = -gq[i]
            for c in range(nc):
                th = K._locate(0, cand_level[c], z0, z1, X0, X1, h, n)
                for _ in range(3):
                    for i in range(n):
                        qe[i] = q0[i]
                        pe[i] = p0[i]
                    Je[:, :] = J0
                    jacobi_step(kind, hr, gtab, r2, ginf, delta, qe, pe, Je, th * h, coeffs)
                    K.ham_eval(kind, 0.0, 1.0, hr, gtab, r2, ginf, delta, qe, pe, gq, gp, Mh, False)
                    re = K.radius(qe)
                    rdot = 0.0
                    for i in range(n):
                        rdot += qe[i] * gp[i]
                    rdot /= re
                    if rdot == 0.0:
                        break
                    dth = (re - cand_level[c]) / (rdot * h)
                    th -= dth
                    if abs(dth * h) < 1e-15:
                        break
                cand_th[c] = th
            order = np.argsort(cand_th[:nc])
            for c in order:
                for i in range(n):
                    qe[i] = q0[i]
                    pe[i] = p0[i]
                Je[:, :] = J0
                jacobi_step(kind, hr, gtab, r2, ginf, delta, qe, pe, Je, cand_th[c] * h, coeffs)
                if n_ev < ev_cap:
                    ev_t[n_ev] = (k + cand_th[c]) * h
                    ev_kind[n_ev] = cand_kind[c]
                    for i in range(n):
                        ev_z[n_ev, i] = qe[i] + 2.0 * cells[i]
                        ev_z[n_ev, n + i] = pe[i]
                    ev_J[n_ev] = Je
                    n_ev += 1
                if stop_count > 0 and cand_kind[c] == stop_kind and abs((k + cand_th[c]) * h) > min_t:
                    hits += 1
                    if hits >= stop_count:
                        stop_here = True
                        stop_th = cand_th[c]
                        for i in range(n):
                            q[i] = qe[i]
                            p[i] = pe[i]
                        Jw[:, :] = Je
                        break
        K.wrap(q, cells)
        if stop_here:
            t_end = (k + stop_th) * h
            ts[j] = t_end
            for i in range(n):
                Z[j, i] = q[i] + 2.0 * cells[i]
                Z[j, n + i] = p[i]
            Jtr[j] = Jw
            j += 1
            return def_ok, t_end, ts[:j], Z[:j], Jtr[:j], ev_t, ev_kind, ev_z, ev_J, n_ev
        k += 1
        t_end = k * h
        if k % stride == 0:
            ts[j] = t_end
            for i in range(n):
                Z[j, i] = q[i] + 2.0 * cells[i]
                Z[j, n + i] = p[i]
            Jtr[j] = Jw
            j += 1
    return def_ok, t_end, ts[:j], Z[:j], Jtr[:j], ev_t, ev_kind, ev_z, ev_J, n_ev


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransverseState:
    """Normal Jacobi data (J, J') at time t along a unit-speed geodesic."""

    J: float
    Jp: float
    t: float = 0.0

    def __post_init__(self):
        if self.J == 0.0 and self.Jp == 0.0:
            raise ValueError("a Jacobi field with J = J' = 0 is trivial")

    @property
    def u(self) -> float:
        return self.Jp / self.J if self.J != 0 else math.copysign(math.inf, self.Jp)


@dataclass
class JacobiTrace:
    """Samples of a geodesic with k Jacobi fields; J and Jp have shape (m, k)."""

    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    J: np.ndarray
    Jp: np.ndarray
    K: np.ndarray
    metric: RadialMetric | None = None
    h: float = DEFAULT_JACOBI_H
    order: int = DEFAULT_ORDER
    kind: int = K.CONFORMAL
    events: list = field(default_factory=list)

    @property
    def r(self) -> np.ndarray:
        w = (self.q + 1.0) % 2.0 - 1.0
        return np.linalg.norm(w, axis=1)

    def u(self, col: int = 0) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.Jp[:, col] / self.J[:, col]

    def wronskian(self, a: int = 0, b: int = 1) -> np.ndarray:
        return self.J[:, a] * self.Jp[:, b] - self.Jp[:, a] * self.J[:, b]


@dataclass(frozen=True)
class ConstantCurvature:
    """A segment of length T on which K is the constant ``K``."""

    K: float
    T: float


@dataclass
class CapChord:
    """One cap passage, parametrised so that t = 0 is the closest approach to the centre.

    ``start`` is the state at t = 0: q = (r_min, 0), p = G(r_min) (0, 1).
    ``boundary`` is the radius whose crossings end the chord (r1 for deep chords,
    r2 for shallow passages that stay in the negatively curved annulus).
    """

    metric: RadialMetric
    clairaut: float
    r_min: float
    T1: float
    T2: float | None
    boundary: float
    start: CotangentState
    entry: CotangentState
    exit: CotangentState
    h: float = DEFAULT_JACOBI_H
    order: int = DEFAULT_ORDER
    t_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    K_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def deep(self) -> bool:
        return self.T2 is not None

    def K_symmetry_residual(self) -> float:
        """max |K(t) - K(-t)| over the stored samples (which are symmetric in t)."""
        if self.K_samples.size == 0:
            return 0.0
        return float(np.max(np.abs(self.K_samples - self.K_samples[::-1])))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _spec_args(m: RadialMetric | None, flat: bool):
    if m is None:
        return K.FLAT, 1.0, np.zeros((2, 3)), 0.0, 1.0, 0.0, 0.0, 0.0
    hr, gtab, r2, g_inf, delta = m.kernel_args()
    kind = K.FLAT if flat else K.CONFORMAL
    return kind, hr, gtab, r2, g_inf, delta, m.r0, m.r1


def _run(m, q, p, cells, Jw, h, T, order, *, flat=False, stop_kind=-1, stop_count=0, stride=1,
         skip=True, ev_cap=10000, min_t=1e-7):
    """Whole steps only (floor(|T|/h)); callers add the partial step if they need exactly T."""
    kind, hr, gtab, r2, ginf, delta, r0, r1 = _spec_args(m, flat)
    nsteps = int(abs(T) / h + 1e-9)
    out = jacobi_run(kind, hr, gtab, r2, ginf, delta, r0, r1, q, p, cells, Jw,
                     math.copysign(h, T), nsteps, K.composition(order), skip, stride,
                     stop_kind, stop_count, ev_cap, min_t)
    status = out[0]
    if status != K.OK:
        from .flow import _raise_status
        _raise_status(status)
    return out


def _curv_series(m, kind, Z):
    if m is None or kind == K.FLAT:
        return np.zeros(Z.shape[0])
    w = (Z[:, :2] + 1.0) % 2.0 - 1.0
    r = np.linalg.norm(w, axis=1)
    hr, gtab, r2, ginf, delta = m.kernel_args()
    return np.array([curvature_at(hr, gtab, r2, ginf, delta, float(x)) for x in r])


def _trace_from(out, m, kind, h, order, t0=0.0) -> JacobiTrace:
    _, _, ts, Z, Jtr, ev_t, ev_kind, ev_z, ev_J, n_ev = out
    events = [(float(ev_t[i]) + t0, int(ev_kind[i]), ev_z[i].copy(), ev_J[i].copy()) for i in range(n_ev)]
    return JacobiTrace(ts + t0, Z[:, :2].copy(), Z[:, 2:].copy(), Jtr[:, 0, :].copy(), Jtr[:, 1, :].copy(),
                       _curv_series(m, kind, Z), m, h, order, kind, events)


def _join(back: JacobiTrace, fwd: JacobiTrace) -> JacobiTrace:
    """Concatenate a backward trace (reversed) and a forward trace sharing t = t0."""
    sl = slice(None, 0, -1)
    return JacobiTrace(np.concatenate([back.t[::-1][:-1], fwd.t]),
                       np.vstack([back.q[sl], fwd.q]) if back.q.shape[0] > 1 else fwd.q,
                       np.vstack([back.p[sl], fwd.p]) if back.p.shape[0] > 1 else fwd.p,
                       np.vstack([back.J[sl], fwd.J]) if back.J.shape[0] > 1 else fwd.J,
                       np.vstack([back.Jp[sl], fwd.Jp]) if back.Jp.shape[0] > 1 else fwd.Jp,
                       np.concatenate([back.K[::-1][:-1], fwd.K]),
                       fwd.metric, fwd.h, fwd.order, fwd.kind, back.events + fwd.events)


# ---------------------------------------------------------------------------
# chords
# ---------------------------------------------------------------------------

def rG(m: RadialMetric, r):
    """r G(r): the Clairaut value of a geodesic tangent to the circle of radius r."""
    return np.asarray(r) * np.sqrt(np.asarray(m.g(r)) ** 2 + m.delta)


def rmin_for_clairaut(m: RadialMetric, c: float) -> float:
    """Closest-approach radius of the chord with Clairaut value c entering from outside.

    A chord coming in from the flat region turns at the largest r < r2 with
    r G(r) = c, which is on the core branch below r0 whenever c < r1 G(r1).
    """
    c = abs(float(c))
    if c == 0.0:
        return 0.0
    lim = float(rG(m, m.r1))
    if c < lim:
        return brentq(lambda r: float(rG(m, r)) - c, 0.0, m.r0, xtol=1e-15, rtol=1e-15)
    if c >= float(rG(m, m.r2)):
        raise ChordTooShallow(f"Clairaut value {c:.6g} never enters the disc r < r2")
    return brentq(lambda r: float(rG(m, r)) - c, m.r1, m.r2, xtol=1e-15, rtol=1e-15)


def build_chord(m: RadialMetric, r_min: float, h: float = DEFAULT_JACOBI_H, order: int = DEFAULT_ORDER,
                boundary: str | None = None) -> CapChord:
    """Chord whose closest approach to the centre is at radius ``r_min``.

    Deep chords (r_min < r1) end on the parallel r1; chords with r_min >= r1 are
    shallow passages of the annulus and end on r2.
    """
    if not 0.0 <= r_min < m.r2:
        raise ValueError("r_min must lie in [0, r2)")
    G = math.sqrt(float(m.g(r_min)) ** 2 + m.delta)
    start = CotangentState([r_min, 0.0], [0.0, G])
    deep = r_min < m.r1
    if boundary is None:
        boundary = "r1" if deep else "r2"
    rb = m.r1 if boundary == "r1" else m.r2
    if rb <= r_min:
        raise ChordTooShallow("the chord never crosses the requested boundary")
    kind, hr, gtab, r2, ginf, delta, r0, r1 = _spec_args(m, False)
    # r0/r1 event levels; the boundary r2 is handled by re-labelling r1 := r2
    lvl1 = rb
    halves = []
    for sgn in (1.0, -1.0):
        q = start.q.copy()
        p = start.p.copy()
        cells = np.zeros(2, np.int64)
        Jw = np.zeros((2, 0))
        nsteps = int(math.ceil(4.0 / h))
        out = jacobi_run(kind, hr, gtab, r2, ginf, delta, r0, lvl1, q, p, cells, Jw, sgn * h, nsteps,
                         K.composition(order), False, 1, EV_UP_R1, 1, 100, 1e-7)
        if out[0] != K.OK:
            from .flow import _raise_status
            _raise_status(out[0])
        halves.append((out, q.copy(), p.copy(), cells.copy()))
    (fo, fq, fp, fc), (bo, bq, bp, bc) = halves
    T1 = float(fo[1])
    T1b = -float(bo[1])
    T2 = None
    if r_min < m.r0 and boundary == "r1":
        up0 = [fo[5][i] for i in range(fo[9]) if fo[6][i] == EV_UP_R0]
        T2 = float(up0[0]) if up0 else None
    ts = np.concatenate([bo[2][::-1][:-1], fo[2]])
    Z = np.vstack([bo[3][::-1][:-1], fo[3]])
    Ks = _curv_series(m, kind, Z)
    c = float(rG(m, r_min))
    return CapChord(m, c, float(r_min), 0.5 * (T1 + T1b), T2, rb, start,
                    CotangentState(bq, bp, bc), CotangentState(fq, fp, fc), h, order, ts, Ks)


def chord_from_clairaut(m: RadialMetric, c: float, **kw) -> CapChord:
    return build_chord(m, rmin_for_clairaut(m, c), **kw)


def chord_from_entry_angle(m: RadialMetric, theta: float, **kw) -> CapChord:
    """Chord entering C_{r1} at angle theta from the inward radial direction."""
    return chord_from_clairaut(m, float(rG(m, m.r1)) * abs(math.sin(theta)), **kw)


def killing_jacobi(m: RadialMetric, trace_q, trace_p, r_min: float) -> np.ndarray:
    """J_S along a chord from the rotation Killing field: rho(l) l'(t) / rho'(l(r_min)).

    Uses l' = G dr/dt with dr/dt = (q . p) / (r F).  Valid for delta = 0.
    """
    q = np.atleast_2d(trace_q)
    p = np.atleast_2d(trace_p)
    r = np.linalg.norm(q, axis=1)
    g = np.asarray(m.g(r))
    F = g * g + m.delta
    rdot = np.einsum("ij,ij->i", q, p) / (np.where(r > 0, r, 1.0) * F)
    ldot = np.sqrt(F) * rdot
    rho = r * np.sqrt(F)
    prof = m.profile
    d1 = float(prof.drho(m.l_of_r(r_min)))
    return rho * ldot / d1


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _inits(init) -> tuple[np.ndarray, float]:
    if isinstance(init, TransverseState):
        init = [init]
    Jw = np.array([[s.J for s in init], [s.Jp for s in init]], dtype=float)
    t0 = init[0].t
    if any(s.t != t0 for s in init):
        raise ValueError("all initial Jacobi data must share the same time")
    return Jw, t0


def _propagate_constant(seg: ConstantCurvature, Jw, t0, h, order):
    n = int(math.ceil(seg.T / h - 1e-12))
    dt = seg.T / n
    coeffs = K.composition(order)
    ts = t0 + dt * np.arange(n + 1)
    J = np.empty((n + 1, Jw.shape[1]))
    Jp = np.empty_like(J)
    J[0], Jp[0] = Jw
    W = Jw.copy()
    for i in range(n):
        for c in coeffs:
            _cayley2(seg.K, c * dt, W)
        J[i + 1], Jp[i + 1] = W
    z = np.zeros((n + 1, 2))
    return JacobiTrace(ts, z, z.copy(), J, Jp, np.full(n + 1, seg.K), None, dt, order, K.FLAT)


def propagate(segment, init, h: float | None = None, order: int | None = None, *,
              T: float | None = None, flat: bool = False) -> JacobiTrace:
    """Propagate Jacobi data along a segment.

    Args:
        segment: a ``CapChord`` (init given at t = init.t in [-T1, T1]; the trace covers
            [-T1, T1]), a ``ConstantCurvature`` (init at t = 0), or a pair
            ``(metric, CotangentState)`` for an orbit segment of length ``T`` started at
            a unit covector (``flat=True`` treats the base metric as flat).
        init: one ``TransverseState`` or a list of them sharing the same time.

    Returns:
        JacobiTrace with one column per initial state.
    """
    Jw, t0 = _inits(init)
    if isinstance(segment, ConstantCurvature):
        return _propagate_constant(segment, Jw, t0, h or DEFAULT_JACOBI_H, order or DEFAULT_ORDER)
    if isinstance(segment, CapChord):
        ch = segment
        h = h or ch.h
        order = order or ch.order
        if not -ch.T1 - 1e-12 <= t0 <= ch.T1 + 1e-12:
            raise ValueError("initial time must lie on the chord")
        m = ch.metric
        # orbit state at t0: advance from the closest approach
        q = ch.start.q.copy()
        p = ch.start.p.copy()
        cells = np.zeros(2, np.int64)
        if t0 != 0.0:
            _advance_exact(m, q, p, cells, np.zeros((2, 0)), t0, h, order)
        pieces = []
        for sgn, length in ((1.0, ch.T1 - t0), (-1.0, t0 + ch.T1)):
            if length <= 1e-13:
                pieces.append(None)
                continue
            qq, pp, cc, WW = q.copy(), p.copy(), cells.copy(), Jw.copy()
            out = _run(m, qq, pp, cc, WW, h, sgn * length, order, skip=False)
            tr = _trace_from(out, m, K.CONFORMAL, h, order, t0)
            # land exactly on the chord end with a partial step
            last = out[1]
            rem = sgn * length - last
            if abs(rem) > 1e-14:
                _advance_exact(m, qq, pp, cc, WW, rem, h, order)
                tr = _append(tr, t0 + sgn * length, qq, pp, cc, WW, m)
            pieces.append(tr)
        fwd, back = pieces
        if back is None:
            return fwd
        if fwd is None:
            b = back
            return JacobiTrace(b.t[::-1], b.q[::-1], b.p[::-1], b.J[::-1], b.Jp[::-1], b.K[::-1],
                               b.metric, b.h, b.order, b.kind, b.events)
        return _join(back, fwd)
    m, state = segment
    if T is None:
        raise ValueError("orbit segments need a length T")
    q, p, cells = state.q.copy(), state.p.copy(), state.cells.copy()
    h = h or DEFAULT_JACOBI_H
    order = order or DEFAULT_ORDER
    stride = max(1, int(abs(T) / h) // 200000)
    out = _run(m, q, p, cells, Jw, h, T, order, flat=flat, stride=stride)
    tr = _trace_from(out, m, K.FLAT if flat or m is None else K.CONFORMAL, h, order, t0)
    rem = T - out[1]
    if abs(rem) > 1e-14:
        _advance_exact(m, q, p, cells, Jw, rem, h, order, flat=flat)
        tr = _append(tr, t0 + T, q, p, cells, Jw, m)
    return tr


def _advance_exact(m, q, p, cells, Jw, T, h, order, flat=False):
    """Advance by exactly T: whole steps of size h then one partial step."""
    kind, hr, gtab, r2, ginf, delta, _, _ = _spec_args(m, flat)
    coeffs = K.composition(order)
    n = int(abs(T) // h)
    sgn = math.copysign(1.0, T)
    for _ in range(n):
        jacobi_step(kind, hr, gtab, r2, ginf, delta, q, p, Jw, sgn * h, coeffs)
    rem = T - sgn * n * h
    if rem != 0.0:
        jacobi_step(kind, hr, gtab, r2, ginf, delta, q, p, Jw, rem, coeffs)
    K.wrap(q, cells)


def _append(tr: JacobiTrace, t, q, p, cells, Jw, m) -> JacobiTrace:
    lift = q + 2.0 * cells
    Kv = _curv_series(m, tr.kind, np.concatenate([lift, p])[None, :])
    return JacobiTrace(np.append(tr.t, t), np.vstack([tr.q, lift]), np.vstack([tr.p, p]),
                       np.vstack([tr.J, Jw[0]]), np.vstack([tr.Jp, Jw[1]]), np.append(tr.K, Kv),
                       tr.metric, tr.h, tr.order, tr.kind, tr.events)


def _state_at(trace: JacobiTrace, i: int, dt: float, col: int):
    """(J, J') at trace.t[i] + dt obtained by re-stepping from sample i."""
    if trace.metric is None and trace.kind == K.FLAT and np.all(trace.q == 0):
        W = np.array([[trace.J[i, col]], [trace.Jp[i, col]]])
        for c in K.composition(trace.order):
            _cayley2(float(trace.K[i]), c * dt, W)
        return W[0, 0], W[1, 0]
    kind, hr, gtab, r2, ginf, delta, _, _ = _spec_args(trace.metric, trace.kind == K.FLAT)
    q = (trace.q[i] + 1.0) % 2.0 - 1.0
    p = trace.p[i].copy()
    W = np.array([[trace.J[i, col]], [trace.Jp[i, col]]])
    jacobi_step(kind, hr, gtab, r2, ginf, delta, q, p, W, dt, K.composition(trace.order))
    return W[0, 0], W[1, 0]


def riccati_events(trace: JacobiTrace, col: int = 0) -> list[float]:
    """Times where J (column ``col``) vanishes, i.e. where u = J'/J blows up.

    Sign changes between samples are refined by bisection to 1e-10 in t,
    re-stepping the augmented system from the left sample.
    """
    J = trace.J[:, col]
    out = []
    idx = np.nonzero((J[:-1] != 0) & (np.sign(J[:-1]) != np.sign(J[1:])))[0]
    for i in idx:
        a, b = 0.0, float(trace.t[i + 1] - trace.t[i])
        fa = J[i]
        while abs(b - a) > ZERO_TTOL:
            c = 0.5 * (a + b)
            fc, _ = _state_at(trace, i, c, col)
            if (fc < 0) == (fa < 0):
                a, fa = c, fc
            else:
                b = c
        out.append(float(trace.t[i] + 0.5 * (a + b)))
    out.extend(float(t) for t in trace.t[J == 0.0])
    return sorted(out)


def _value_at(trace: JacobiTrace, t: float, col: int) -> tuple[float, float]:
    i = int(np.clip(np.searchsorted(trace.t, t) - 1, 0, trace.t.size - 1))
    dt = t - trace.t[i]
    if abs(dt) < 1e-15:
        return float(trace.J[i, col]), float(trace.Jp[i, col])
    return _state_at(trace, i, dt, col)


@dataclass
class AReport:
    chord_rmin: float
    T1: float
    T2: float
    u_S: dict
    extra_zeros: int
    tol: float = TOL_A

    @property
    def max_residual(self) -> float:
        return max(abs(v) for v in self.u_S.values())

    @property
    def flagged(self) -> bool:
        return self.max_residual > self.tol

    def as_report(self) -> CertificateReport:
        rep = CertificateReport(f"(A) on chord r_min={self.chord_rmin:.6g}")
        for k, v in self.u_S.items():
            rep.add(f"|u_S({k})| <= {self.tol:g}", abs(v) <= self.tol, residual=abs(v))
        rep.add("J_S vanishes only at t=0", self.extra_zeros == 0, residual=self.extra_zeros)
        return rep


def check_A(chord: CapChord, h: float | None = None, order: int | None = None) -> AReport:
    """u_S at +-T1 and +-T2, and the number of zeros of J_S other than t = 0."""
    if not chord.deep:
        raise ChordTooShallow("(A) needs a chord reaching the parallel r0")
    tr = propagate(chord, TransverseState(0.0, 1.0, 0.0), h, order)
    vals = {}
    for name, t in (("T1", chord.T1), ("-T1", -chord.T1), ("T2", chord.T2), ("-T2", -chord.T2)):
        J, Jp = _value_at(tr, t, 0)
        vals[name] = Jp / J
    zeros = [t for t in riccati_events(tr) if abs(t) > 1e-8]
    # t = 0 is an exact zero of J_S and a sample point; other zeros are sign changes
    return AReport(chord.r_min, chord.T1, chord.T2, vals, len(zeros))


TRANSFER_RTOL = 1e-13


def _meridian_rhs(m: RadialMetric):
    """Unit-speed geodesic in (r, theta) plus two Jacobi pairs, theta measured from the meridian.

    With rho = r G and dl = G dr: r' = cos(theta) / G, theta' = -(rho_l / rho) sin(theta),
    and K = -(log G)_rr - (log G)_r / r over G^2 (with the r -> 0 limit at the centre).
    """
    def rhs(s, y):
        r, th, jc, jcp, js, jsp = y
        g, g1, g2 = m.g_derivs(abs(r), exact=True)
        G2 = g * g + m.delta
        G = math.sqrt(G2)
        L1 = g * g1 / G2                                   # (log G)_r
        L2 = (g1 * g1 + g * g2) / G2 - 2.0 * L1 * L1       # (log G)_rr
        K = -(L2 + (L1 / r if r > 1e-12 else L2)) / G2
        sn = math.sin(th)
        dth = -(1.0 / r + L1) / G * sn if sn != 0.0 else 0.0
        return [math.cos(th) / G, dth, jcp, -K * jc, jsp, -K * js]
    return rhs


def chord_transfer(chord: CapChord, rtol: float = TRANSFER_RTOL) -> tuple[float, np.ndarray]:
    """(T1, M) with M the 2 x 2 map of Jacobi data (J, J') from the chord entry to its exit.

    Integrates half the chord in meridian coordinates with the closed-form
    derivatives of g (no tables), then uses K(t) = K(-t): the field with
    (J, J')(0) = (1, 0) is even and the one with (0, 1) is odd.
    """
    from scipy.integrate import solve_ivp

    m = chord.metric
    th0 = 0.0 if chord.r_min == 0.0 else 0.5 * math.pi
    hit = lambda s, y: y[0] - chord.boundary
    hit.terminal, hit.direction = True, 1.0
    sol = solve_ivp(_meridian_rhs(m), [0.0, 10.0 * max(chord.T1, 1.0)],
                    [chord.r_min, th0, 1.0, 0.0, 0.0, 1.0], method="DOP853", rtol=rtol,
                    atol=rtol * 1e-2, events=hit)
    if not sol.t_events[0].size:
        raise ChordTooShallow("the meridian integration never reached the chord boundary")
    jc, jcp, js, jsp = sol.y_events[0][0][2:]
    fwd = np.array([[jc, js], [jcp, jsp]])
    back = np.array([[jc, -js], [-jcp, jsp]])      # the same fields at -T1
    return float(sol.t_events[0][0]), fwd @ np.linalg.inv(back)


def cone_transit(chord: CapChord, u_entry: float, h: float | None = None, order: int | None = None,
                 method: str = "transfer") -> float:
    """u at the chord exit for the Jacobi field with u = u_entry at the entry.

    ``method="transfer"`` uses ``chord_transfer``.  Near the critical Clairaut
    value the chord lingers by the closed geodesic on r1 and the tabulated
    metric of the flow kernels leaves errors near 1e-8 in u; the transfer
    matrix keeps them near 1e-11.  ``method="trace"`` propagates with the
    flow kernels as ``propagate`` does.
    """
    if method == "trace":
        tr = propagate(chord, TransverseState(1.0, float(u_entry), -chord.T1), h, order)
        return float(tr.Jp[-1, 0] / tr.J[-1, 0]) if tr.J[-1, 0] != 0 else math.inf
    if method != "transfer":
        raise ValueError("method must be 'transfer' or 'trace'")
    _, M = chord_transfer(chord)
    J, Jp = M @ np.array([1.0, float(u_entry)])
    return float(Jp / J) if J != 0 else math.inf


def conjugate_time(chord: CapChord, h: float | None = None, order: int | None = None) -> float | None:
    """First blow-up tau > 0 of u_C (J_C(0) = 1, J_C'(0) = 0), or None."""
    tr = propagate(chord, TransverseState(1.0, 0.0, 0.0), h, order)
    taus = [t for t in riccati_events(tr) if t > 0]
    return taus[0] if taus else None


def riccati_residual(trace: JacobiTrace, col: int = 0, u_max: float = 100.0, delta: float = 1e-5) -> float:
    """max |u' + u^2 + K| over the samples with |u| <= ``u_max``, where u = J'/J.

    u' comes from a five-point stencil of half-width 2 ``delta`` whose points
    are obtained by re-stepping the augmented system from each sample, so the
    check does not depend on the sample spacing.  Near a zero of J, u behaves
    like 1/(t - tau) and the stencil error grows like delta^4/(t - tau)^6;
    |u| <= 100 keeps samples at least about 0.01 away from every zero.
    """
    worst = 0.0
    for i in range(trace.t.size):
        if trace.J[i, col] == 0.0 or abs(trace.Jp[i, col] / trace.J[i, col]) > u_max:
            continue
        us = []
        for k in (-2, -1, 1, 2):
            a, b = _state_at(trace, i, k * delta, col)
            us.append(b / a)
        du = (us[0] - 8 * us[1] + 8 * us[2] - us[3]) / (12 * delta)
        u = trace.Jp[i, col] / trace.J[i, col]
        worst = max(worst, abs(du + u * u + trace.K[i]))
    return float(worst)


@dataclass
class AdvanceReport:
    margin: float
    entry_times: list[float]
    u_at_entries: list[float]
    expansion: list[float]


def strict_advance(m: RadialMetric, state: CotangentState, T_max: float = 200.0, *, visits: int = 2,
                   h: float | None = None, order: int | None = None, flat: bool = False) -> AdvanceReport:
    """Start on the cone boundary u = 0 at the first entry into C_{r1} and report u at the next entry.

    The orbit is the unit-speed geodesic through ``state``.  ``expansion`` lists
    |(J, J')| ratios between consecutive entries.  With ``flat=True`` the same
    orbit geometry is used with K = 0 (the neutral baseline).
    """
    h = h or DEFAULT_JACOBI_H
    order = order or DEFAULT_ORDER
    q, p, cells = state.q.copy(), state.p.copy(), state.cells.copy()
    Jw = np.zeros((2, 1))
    Jw[0, 0] = 1.0
    out = _run(m, q, p, cells, Jw, h, T_max, order, flat=flat, stop_kind=EV_DOWN_R1, stop_count=1,
               stride=10 ** 9)
    entries = [e for i, e in enumerate(out[5][: out[9]]) if out[6][i] == EV_DOWN_R1]
    if not entries:
        raise ChordTooShallow("the orbit never enters C_r1 within T_max")
    t_first = float(out[1])
    Jw[:, 0] = (1.0, 0.0)
    times = [t_first]
    us = [0.0]
    norms = [1.0]
    for _ in range(visits - 1):
        out = _run(m, q, p, cells, Jw, h, T_max, order, flat=flat, stop_kind=EV_DOWN_R1, stop_count=1,
                   stride=10 ** 9)
        ev = [i for i in range(out[9]) if out[6][i] == EV_DOWN_R1]
        if not ev:
            break
        times.append(times[-1] + float(out[1]))
        us.append(float(Jw[1, 0] / Jw[0, 0]))
        norms.append(float(np.hypot(Jw[0, 0], Jw[1, 0])))
    if len(us) < 2:
        raise ChordTooShallow("the orbit does not return to C_r1 within T_max")
    exp = [norms[i + 1] / norms[i] for i in range(len(norms) - 1)]
    return AdvanceReport(us[1], times, us, exp)
