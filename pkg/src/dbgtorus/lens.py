"""Lens maps of the unit ball D inscribed in the cube [-1, 1]^3.

For the Euclidean ball, vectors and covectors are identified, so the lens map
and its dual are the same straight-chord map.  ``phi1`` / ``phi2`` carry face
covectors on the bottom face z = -1 and the top face z = +1 to boundary
covectors of D, along straight lines.  The perturbed dual lens map
``sigma_eps`` replaces the free transit between the faces by the transit of the
perturbed relativistic flow.

The transit from z = -1 to z = +1 has height 2.  Time runs at unit speed in z
for the relativistic flow on the section, so the transit map is the time-two
map, R composed with itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conformal import RadialMetric
from .errors import BranchConflict, MissesBall, TangentRay
from .returnmap import R_exact_many, RMAP_H, RMAP_ORDER, PerturbedMap

TRANSVERSAL_TOL = 1e-12
TRANSIT_TIME = 2.0
# Random boundary samples stay this far from grazing.  Chart derivatives blow
# up like powers of 1/<foot, v>, and below about 0.02 finite differences can no
# longer resolve a 1e-6 symplectic defect.
SAMPLE_TRANSVERSALITY = 0.02


@dataclass(frozen=True)
class BoundaryCovector:
    foot: np.ndarray
    cov: np.ndarray
    orientation: str  # "in" or "out"

    def __post_init__(self):
        foot = np.asarray(self.foot, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "foot", foot)
        object.__setattr__(self, "cov", cov)
        if self.orientation not in ("in", "out"):
            raise ValueError("orientation must be 'in' or 'out'")
        if abs(np.linalg.norm(foot) - 1.0) > 1e-12 or abs(np.linalg.norm(cov) - 1.0) > 1e-12:
            raise ValueError("foot and covector must be unit vectors")
        inward = float(cov @ foot) < 0.0
        if inward != (self.orientation == "in"):
            raise ValueError("orientation does not match the covector")

    def __neg__(self) -> "BoundaryCovector":
        return BoundaryCovector(self.foot, -self.cov, "out" if self.orientation == "in" else "in")

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.foot, self.cov])


@dataclass(frozen=True)
class FaceCovector:
    x: float
    y: float
    alpha: float
    beta: float
    face: int = -1    # -1 for the bottom face z = -1, +1 for the top face

    @property
    def gamma(self) -> float:
        return math.sqrt(1.0 - self.alpha**2 - self.beta**2)

    @property
    def point(self) -> np.ndarray:
        return np.array([self.x, self.y, float(self.face)])

    @property
    def direction(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])

    def section(self) -> np.ndarray:
        """Projection to (x, y, alpha, beta)."""
        return np.array([self.x, self.y, self.alpha, self.beta])


def face_from_section(z, face: int) -> FaceCovector:
    """Inverse of the projection: lift (x, y, alpha, beta) to the face with gamma > 0."""
    x, y, a, b = (float(v) for v in z)
    if not a * a + b * b < 1.0:
        raise ValueError("alpha^2 + beta^2 must be below 1")
    return FaceCovector(x, y, a, b, face)


# ---------------------------------------------------------------------------
# the Euclidean lens map
# ---------------------------------------------------------------------------

def lens_map(v: BoundaryCovector) -> BoundaryCovector:
    """Exit of the straight chord entering at ``v.foot`` with direction ``v.cov``."""
    if v.orientation != "in":
        raise ValueError("lens_map takes inward covectors")
    c = float(v.foot @ v.cov)
    if c >= -TRANSVERSAL_TOL:
        raise TangentRay(f"<foot, v> = {c:.3e} is not transversal")
    foot = v.foot - 2.0 * c * v.cov
    foot = foot / np.linalg.norm(foot)
    return BoundaryCovector(foot, v.cov, "out")


def dual_lens(chi: BoundaryCovector) -> BoundaryCovector:
    """sigma_0 = L beta L^-1; L is the identity for the Euclidean ball."""
    return lens_map(chi)


def _roots(P, d):
    b = float(P @ d)
    disc = b * b - (float(P @ P) - 1.0)
    if disc <= TRANSVERSAL_TOL:
        raise MissesBall(f"line misses the ball (discriminant {disc:.3e})")
    s = math.sqrt(disc)
    return -b - s, -b + s


def phi1(zeta: FaceCovector) -> BoundaryCovector:
    """First forward intersection of the ray from the bottom face with the sphere."""
    if zeta.face != -1:
        raise ValueError("phi1 starts on the bottom face")
    P, d = zeta.point, zeta.direction
    t, _ = _roots(P, d)
    if t < -1e-12:
        raise MissesBall("the ball lies behind the face point")
    foot = P + max(t, 0.0) * d
    return BoundaryCovector(foot / np.linalg.norm(foot), d, "in")


def phi2(zeta: FaceCovector) -> BoundaryCovector:
    """First backward intersection of the ray reaching the top face with the sphere."""
    if zeta.face != 1:
        raise ValueError("phi2 starts on the top face")
    P, d = zeta.point, zeta.direction
    _, t = _roots(P, d)
    if t > 1e-12:
        raise MissesBall("the ball lies ahead of the face point")
    foot = P + min(t, 0.0) * d
    return BoundaryCovector(foot / np.linalg.norm(foot), d, "out")


def phi1_inv(chi: BoundaryCovector) -> FaceCovector:
    """Back along the inward ray to z = -1."""
    d = chi.cov
    if chi.orientation != "in" or d[2] <= 0.0:
        raise ValueError("phi1_inv needs an inward covector pointing up")
    t = (-1.0 - chi.foot[2]) / d[2]
    P = chi.foot + t * d
    return FaceCovector(float(P[0]), float(P[1]), float(d[0]), float(d[1]), -1)


def phi2_inv(nu: BoundaryCovector) -> FaceCovector:
    """Forward along the outward ray to z = +1."""
    d = nu.cov
    if nu.orientation != "out" or d[2] <= 0.0:
        raise ValueError("phi2_inv needs an outward covector pointing up")
    t = (1.0 - nu.foot[2]) / d[2]
    P = nu.foot + t * d
    return FaceCovector(float(P[0]), float(P[1]), float(d[0]), float(d[1]), 1)


# ---------------------------------------------------------------------------
# decomposition of the free transit
# ---------------------------------------------------------------------------

def free_transit(z: np.ndarray) -> np.ndarray:
    """Free transit from the bottom face to the top face: R o R on lifted (x, y, alpha, beta)."""
    return R_exact_many(R_exact_many(np.atleast_2d(z)))


def composed_transit(z) -> np.ndarray:
    """Pi_+ phi2^-1 sigma_0 phi1 Pi_-^-1 applied to one section point."""
    chi = phi1(face_from_section(z, -1))
    return phi2_inv(dual_lens(chi)).section()


@dataclass
class DecompositionReport:
    n: int
    excluded: int
    max_residual: float
    a: float


def decomposition_check(Z: np.ndarray, a: float = float("nan")) -> DecompositionReport:
    """Max coordinate difference between the free transit and its lens decomposition."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    ref = free_transit(Z)
    worst = 0.0
    excluded = 0
    for z, r in zip(Z, ref):
        try:
            out = composed_transit(z)
        except (MissesBall, TangentRay):
            excluded += 1
            continue
        worst = max(worst, float(np.abs(out - r).max()))
    return DecompositionReport(len(Z), excluded, worst, a)


def support_sample(metric: RadialMetric, n: int, seed: int = 0, max_s: float = 2.0 / 3.0) -> np.ndarray:
    """Bottom-face points whose free transit passes over the disc r < r2 (the region K).

    Rejection sampling over base points in [-1, 1)^2 and covectors uniform in
    the disc alpha^2 + beta^2 < max_s, keeping rays whose horizontal segment
    comes within r2 of a lattice point of 2Z^2.  Only these rays can feel a
    potential that vanishes outside the disc.  The returned lift is shifted
    by that lattice point, so the ray crosses the disc centred at the origin.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x1E75])))
    out = []
    while len(out) < n:
        x, y = rng.uniform(-1.0, 1.0, 2)
        rad = math.sqrt(max_s * rng.uniform())
        th = rng.uniform(0.0, 2.0 * math.pi)
        a, b = rad * math.cos(th), rad * math.sin(th)
        c = _segment_hits_disc(np.array([x, y]), np.array([a, b]) * TRANSIT_TIME / math.sqrt(1 - rad * rad),
                               metric.r2)
        if c is not None:
            # shift the lift so that the disc crossed is the one under the ball
            out.append((x - c[0], y - c[1], a, b))
    return np.array(out)


def _segment_hits_disc(P, D, rad):
    """First lattice point of 2Z^2 that the segment P + t D, t in [0, 1], passes within ``rad`` of."""
    lo = np.floor((np.minimum(P, P + D) - rad + 1.0) / 2.0).astype(int)
    hi = np.ceil((np.maximum(P, P + D) + rad + 1.0) / 2.0).astype(int)
    dd = float(D @ D)
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            c = np.array([2.0 * i, 2.0 * j])
            t = 0.0 if dd == 0.0 else min(1.0, max(0.0, float((c - P) @ D) / dd))
            if np.linalg.norm(P + t * D - c) < rad:
                return c
    return None


def ball_shadow_radius_limit(max_s: float = 2.0 / 3.0) -> float:
    """Largest r2 for which every ray with alpha^2 + beta^2 <= max_s crossing the cylinder
    {r < r2, |z| <= 1} meets the open unit ball.

    The worst rays pass through a rim point (r2, +-1) leaning away from the
    axis; the condition 1 + r^2 - (gamma - r sqrt(s))^2 < 1 gives a quadratic in r.
    """
    s = max_s
    g = math.sqrt(1.0 - s)
    # (1 - s) r^2 + 2 g sqrt(s) r - g^2 < 0
    A, B, C = 1.0 - s, 2.0 * g * math.sqrt(s), -(g * g)
    return (-B + math.sqrt(B * B - 4 * A * C)) / (2 * A)


# ---------------------------------------------------------------------------
# charts and symplectic defects
# ---------------------------------------------------------------------------

def _frame(foot0: np.ndarray) -> np.ndarray:
    """Rotation taking e_x to ``foot0``; columns are foot0 and two orthonormal tangents."""
    f = foot0 / np.linalg.norm(foot0)
    helper = np.array([0.0, 0.0, 1.0]) if abs(f[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, f)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(f, e1)
    return np.column_stack([f, e1, e2])


class SphereChart:
    """Coordinates (theta, phi, t1, t2) on U*_in or U*_out near a base point.

    The foot is Rot (cos theta cos phi, cos theta sin phi, sin theta), so the
    base foot sits on the chart's equator at (0, 0).  (t1, t2) are the
    covector components along the unit tangents d/dphi and d/dtheta.  The
    normal component is fixed by |cov| = 1 and the orientation.
    """

    def __init__(self, foot0, orientation: str):
        self.rot = _frame(np.asarray(foot0, float))
        self.orientation = orientation

    def _basis(self, th, ph):
        c, s = math.cos(th), math.sin(th)
        cp, sp = math.cos(ph), math.sin(ph)
        R = self.rot
        foot = R @ np.array([c * cp, c * sp, s])
        e_ph = R @ np.array([-sp, cp, 0.0])
        e_th = R @ np.array([-s * cp, -s * sp, c])
        return foot, e_ph, e_th

    def embed(self, u) -> tuple[np.ndarray, np.ndarray]:
        th, ph, t1, t2 = u
        foot, e_ph, e_th = self._basis(th, ph)
        nrm = math.sqrt(max(0.0, 1.0 - t1 * t1 - t2 * t2))
        sign = -1.0 if self.orientation == "in" else 1.0
        return foot, t1 * e_ph + t2 * e_th + sign * nrm * foot

    def to_covector(self, u) -> BoundaryCovector:
        foot, cov = self.embed(u)
        return BoundaryCovector(foot, cov / np.linalg.norm(cov), self.orientation)

    def coords(self, v: BoundaryCovector) -> np.ndarray:
        f = self.rot.T @ v.foot
        th = math.asin(max(-1.0, min(1.0, f[2])))
        ph = math.atan2(f[1], f[0])
        _, e_ph, e_th = self._basis(th, ph)
        return np.array([th, ph, float(v.cov @ e_ph), float(v.cov @ e_th)])


class FaceChart:
    """(x, y, alpha, beta) on a face; the covector is (alpha, beta, gamma)."""

    def __init__(self, face: int):
        self.face = face

    def embed(self, u):
        x, y, a, b = u
        return np.array([x, y, float(self.face)]), np.array([a, b, math.sqrt(1.0 - a * a - b * b)])


def _richardson(central, step):
    return (4.0 * central(step) - central(2.0 * step)) / 3.0


def pullback_form(chart, u, step: float = 1e-6) -> np.ndarray:
    """Matrix of the canonical form sum dp_k ^ dq_k pulled back through a chart embedding."""
    u = np.asarray(u, dtype=float)

    def tangents(d):
        T = np.empty((4, 6))
        for i in range(4):
            e = np.zeros(4)
            e[i] = d
            q1, p1 = chart.embed(u + e)
            q0, p0 = chart.embed(u - e)
            T[i, :3] = (q1 - q0) / (2 * d)
            T[i, 3:] = (p1 - p0) / (2 * d)
        return T

    T = _richardson(tangents, step)
    dq, dp = T[:, :3], T[:, 3:]
    return dp @ dq.T - dq @ dp.T


def chart_jacobian(fun, u, step: float = 1e-5) -> np.ndarray:
    """Richardson-extrapolated central differences of a chart-to-chart map."""
    u = np.asarray(u, dtype=float)

    def central(d):
        cols = []
        for i in range(4):
            e = np.zeros(4)
            e[i] = d
            cols.append((np.asarray(fun(u + e)) - np.asarray(fun(u - e))) / (2 * d))
        return np.column_stack(cols)

    return _richardson(central, step)


def chart_defect(fun, chart_in, chart_out, u, step: float = 1e-5) -> float:
    """max |D^T W_out D - W_in| for a map written in charts."""
    u = np.asarray(u, dtype=float)
    D = chart_jacobian(fun, u, step)
    W_in = pullback_form(chart_in, u, step / 10)
    W_out = pullback_form(chart_out, np.asarray(fun(u)), step / 10)
    return float(np.abs(D.T @ W_out @ D - W_in).max())


def _step(v: BoundaryCovector) -> float:
    # the normal component sqrt(1 - t1^2 - t2^2) stiffens near grazing rays
    return 1e-5 * min(1.0, 10.0 * abs(float(v.foot @ v.cov)))


def sigma0_defect(chi: BoundaryCovector) -> float:
    cin = SphereChart(chi.foot, "in")
    cout = SphereChart(dual_lens(chi).foot, "out")
    return chart_defect(lambda u: cout.coords(dual_lens(cin.to_covector(u))), cin, cout, cin.coords(chi),
                        _step(chi))


def phi1_defect(zeta: FaceCovector) -> float:
    fin = FaceChart(-1)
    chi = phi1(zeta)
    cout = SphereChart(chi.foot, "in")
    return chart_defect(lambda u: cout.coords(phi1(face_from_section(u, -1))), fin, cout, zeta.section(),
                        _step(chi))


def phi2_defect(zeta: FaceCovector) -> float:
    fin = FaceChart(1)
    nu = phi2(zeta)
    cout = SphereChart(nu.foot, "out")
    return chart_defect(lambda u: cout.coords(phi2(face_from_section(u, 1))), fin, cout, zeta.section(),
                        _step(nu))


# ---------------------------------------------------------------------------
# the perturbed dual lens map
# ---------------------------------------------------------------------------

@dataclass
class SigmaEps:
    """sigma_eps built from the perturbed transit (time-two map) of the relativistic flow.

    Upward inward covectors use the forward branch; downward ones use the
    reflected backward branch; horizontal ones keep sigma_0.  Away from rays
    over the disc both branches reduce to sigma_0 because the transit there
    is free.
    """

    pmap: PerturbedMap

    @property
    def eps(self) -> float:
        return self.pmap.eps

    def transit(self, z: np.ndarray, sign: float = 1.0) -> np.ndarray:
        return self.pmap.many(np.atleast_2d(z), sign * TRANSIT_TIME)[0]

    def forward_branch(self, chi: BoundaryCovector) -> BoundaryCovector:
        z = phi1_inv(chi).section()
        out = self.transit(z, 1.0)
        return phi2(face_from_section(out, 1))

    def backward_branch(self, chi: BoundaryCovector) -> BoundaryCovector:
        nu = -chi
        z = phi2_inv(nu).section()
        back = self.transit(z, -1.0)
        return -phi1(face_from_section(back, -1))

    def __call__(self, chi: BoundaryCovector) -> BoundaryCovector:
        if chi.orientation != "in":
            raise ValueError("sigma_eps takes inward covectors")
        dz = chi.cov[2]
        if dz > 0.0:
            return self.forward_branch(chi)
        if dz < 0.0:
            return self.backward_branch(chi)
        return dual_lens(chi)

    def branch_check(self, chi: BoundaryCovector, tol: float = 1e-6) -> float:
        """Where both branches are defined (a horizontal covector never is), compare them."""
        try:
            a = self.forward_branch(chi).as_array()
            b = self.backward_branch(chi).as_array()
        except ValueError:
            return 0.0
        d = float(np.abs(a - b).max())
        if d > tol:
            raise BranchConflict(f"branches differ by {d:.3e}")
        return d

    def defect(self, chi: BoundaryCovector) -> float:
        cin = SphereChart(chi.foot, "in")
        cout = SphereChart(self(chi).foot, "out")
        return chart_defect(lambda u: cout.coords(self(cin.to_covector(u))), cin, cout, cin.coords(chi),
                            _step(chi))


def build_sigma_eps(metric: RadialMetric, eps: float, *, h: float = RMAP_H, order: int = RMAP_ORDER) -> SigmaEps:
    """Perturbed dual lens map for the compactly supported potential W = g_inf^2 - g^2."""
    return SigmaEps(PerturbedMap(metric, eps, "compact", h, order))


def inward_sample(n: int, seed: int = 0, min_transversality: float = SAMPLE_TRANSVERSALITY
                  ) -> list[BoundaryCovector]:
    """Feet uniform on the sphere, directions uniform on the inward hemisphere with
    -<foot, v> >= ``min_transversality``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5EED])))
    out = []
    while len(out) < n:
        f = rng.standard_normal(3)
        f /= np.linalg.norm(f)
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        if v @ f > 0:
            v = -v
        if v @ f > -min_transversality:
            continue
        out.append(BoundaryCovector(f, v, "in"))
    return out


def chords_over_disc(metric: RadialMetric, n: int, seed: int = 0) -> list[BoundaryCovector]:
    """Inward covectors phi1(Pi^-1(z)) for z in the support region K (rays meeting the ball)."""
    out = []
    for z in support_sample(metric, 4 * n, seed):
        try:
            out.append(phi1(face_from_section(z, -1)))
        except MissesBall:
            continue
        if len(out) == n:
            break
    return out


def lens_suite(metric: RadialMetric, eps: float, n: int = 1000, *, n_sigma_defect: int = 100,
               seed: int = 0) -> dict:
    """Every lens-map check on n samples, with pass/fail against the fixed tolerances.

    Reversibility and the sigma_0 defect use random transversal boundary
    covectors.  The sigma_eps and phi checks use chords over the disc, where
    the perturbation acts.  The (costly) sigma_eps defect uses the first
    ``n_sigma_defect`` of them.
    """
    vs = inward_sample(n, seed)
    rev = max(float(np.abs((-lens_map(-lens_map(v))).as_array() - v.as_array()).max()) for v in vs)
    unit = max(abs(float(np.linalg.norm(lens_map(v).foot)) - 1.0) for v in vs)
    S = build_sigma_eps(metric, eps)
    chords = chords_over_disc(metric, n, seed)
    sym = max(float(np.abs((-S(-S(c))).as_array() - c.as_array()).max()) for c in chords)
    shift = max(float(np.abs(S(c).as_array() - dual_lens(c).as_array()).max()) for c in chords)
    d_s0 = max(sigma0_defect(v) for v in vs)
    faces = [phi1_inv(c) for c in chords]
    d_p1 = max(phi1_defect(z) for z in faces)
    d_p2 = max(phi2_defect(face_from_section(free_transit(z.section())[0], 1)) for z in faces)
    d_se = max(S.defect(c) for c in chords[:n_sigma_defect])
    dec = decomposition_check(support_sample(metric, n, seed), metric.profile.a)
    out = {"a": metric.profile.a, "eps": eps, "samples": n, "sigma_eps_samples": len(chords),
           "lens_reversibility": rev, "exit_foot_norm_error": unit, "sigma_eps_symmetry": sym,
           "sigma_eps_max_shift": shift, "defect_sigma0": d_s0, "defect_phi1": d_p1,
           "defect_phi2": d_p2, "defect_sigma_eps": d_se,
           "decomposition_residual": dec.max_residual, "excluded": dec.excluded,
           "shadow_radius_limit": ball_shadow_radius_limit(), "r2": metric.r2}
    out["passed"] = (rev <= 1e-7 and unit <= 1e-12 and sym <= 1e-7
                     and max(d_s0, d_p1, d_p2, d_se) <= 1e-6
                     and dec.max_residual <= 1e-9 and dec.excluded == 0)
    return out
