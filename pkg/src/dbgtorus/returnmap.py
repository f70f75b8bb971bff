"""Section return maps on the 2-torus T0 = [-1, 1)^2.

``R_exact`` is the closed-form return map of the free relativistic
Hamiltonian -sqrt(1 - alpha^2 - beta^2).  ``R_eps`` is the time-one map of the
perturbed relativistic Hamiltonian -sqrt(1 - 2 H_eps), with

    H_eps = |p|^2 / 2 + eps W(r) xi(|p|^2),    W = c - g(r)^2.

The cutoff xi vanishes for |p|^2 >= 2/3, so R_eps agrees with R_exact there.
Everything here works on lifts: positions are compared in the universal
cover, so wrapping never produces spurious jumps of size 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.stats import qmc

from . import _kernels as K
from .conformal import RadialMetric
from .errors import DegenerateCovector
from .flow import CotangentState, HamiltonianSpec, flow_map
from .lyapunov import SampleSpec, run_ensemble, shifted_metric_for_level

DEGENERACY = 1e-12
SUPPORT_EDGE = 2.0 / 3.0
# Time-one maps use the fourth-order composition at h = 5e-3.  The forces are
# eps * grad W, so the local error scales with eps and stays far below the
# O(eps) discrepancies being measured (see tests/test_returnmap.py).
RMAP_H = 5e-3
RMAP_ORDER = 4
FD_STEP = 1e-5
# Samples cover alpha^2 + beta^2 <= MAX_S.  Closer to the unit circle the map
# only shears faster (1/gamma grows) while the perturbation is already off.
MAX_S = 0.9


@dataclass(frozen=True)
class SectionPoint:
    """(x, y, alpha, beta) on B*T0 with an optional unwrapped position."""

    x: float
    y: float
    alpha: float
    beta: float
    lift: tuple[float, float] | None = None

    @property
    def s(self) -> float:
        return self.alpha**2 + self.beta**2

    @property
    def gamma(self) -> float:
        return math.sqrt(1.0 - self.s)

    @property
    def position(self) -> np.ndarray:
        return np.array(self.lift if self.lift is not None else (self.x, self.y), dtype=float)

    def as_array(self, lifted: bool = True) -> np.ndarray:
        x, y = self.position if lifted else (self.x, self.y)
        return np.array([x, y, self.alpha, self.beta])

    @classmethod
    def from_array(cls, z) -> "SectionPoint":
        """Wrap (x, y) into [-1, 1) and keep the given position as the lift."""
        z = np.asarray(z, dtype=float)
        q = z[:2].copy()
        cells = np.zeros(2, np.int64)
        K.wrap(q, cells)
        return cls(float(q[0]), float(q[1]), float(z[2]), float(z[3]), (float(z[0]), float(z[1])))

    def reversed(self) -> "SectionPoint":
        return SectionPoint(self.x, self.y, -self.alpha, -self.beta, self.lift)


def _check_codisc(pt: SectionPoint) -> None:
    if not pt.s < 1.0 - DEGENERACY:
        raise DegenerateCovector(f"alpha^2 + beta^2 = {pt.s:.15g} is not inside the open unit disc")


def R_exact(pt: SectionPoint) -> SectionPoint:
    """Free return map: move by (alpha, beta) / gamma, keep the covector."""
    _check_codisc(pt)
    g = pt.gamma
    x, y = pt.position
    return SectionPoint.from_array([x + pt.alpha / g, y + pt.beta / g, pt.alpha, pt.beta])


def R_exact_jacobian(pt: SectionPoint) -> np.ndarray:
    """Analytic Jacobian of ``R_exact`` in (x, y, alpha, beta)."""
    _check_codisc(pt)
    a, b, g = pt.alpha, pt.beta, pt.gamma
    g3 = g**3
    D = np.eye(4)
    D[0, 2] = 1.0 / g + a * a / g3
    D[0, 3] = a * b / g3
    D[1, 2] = a * b / g3
    D[1, 3] = 1.0 / g + b * b / g3
    return D


@dataclass(frozen=True)
class PerturbedMap:
    """R_eps for one metric, eps and potential, with its integrator settings."""

    metric: RadialMetric
    eps: float
    potential: str = "unit"
    h: float = RMAP_H
    order: int = RMAP_ORDER

    @property
    def spec(self) -> HamiltonianSpec:
        return HamiltonianSpec("Relativistic", self.metric, self.eps, potential=self.potential)

    def __call__(self, pt: SectionPoint, T: float = 1.0) -> SectionPoint:
        _check_codisc(pt)
        st = CotangentState(pt.position, [pt.alpha, pt.beta])
        end = flow_map(self.spec, st, T, self.h, order=self.order)
        lift = end.lift
        return SectionPoint(float(end.q[0]), float(end.q[1]), float(end.p[0]), float(end.p[1]),
                            (float(lift[0]), float(lift[1])))

    def inverse(self, pt: SectionPoint) -> SectionPoint:
        """Time -1 of the same flow."""
        return self(pt, -1.0)

    def many(self, Z: np.ndarray, T: float = 1.0) -> np.ndarray:
        """Rows (x, y, alpha, beta) (lifted) mapped in one compiled loop."""
        Z = np.ascontiguousarray(Z, dtype=float)
        out = Z.copy()
        status = np.zeros(Z.shape[0], np.int64)
        _many(*self.spec.kernel_args(), out, math.copysign(self.h, T), int(round(abs(T) / self.h)),
              K.composition(self.order), status)
        bad = np.flatnonzero(status != K.OK)
        if bad.size:
            from .flow import _raise_status
            _raise_status(int(status[bad[0]]))
        return out


def R_eps(pt: SectionPoint, eps: float, metric: RadialMetric, *, potential: str = "unit",
          h: float = RMAP_H, order: int = RMAP_ORDER) -> SectionPoint:
    """Time-one map of the perturbed relativistic Hamiltonian."""
    return PerturbedMap(metric, eps, potential, h, order)(pt)


@njit(cache=True, parallel=True, error_model="numpy")
def _many(kind, eps, wconst, hr, gtab, r2, ginf, delta, Z, h, nsteps, coeffs, status):
    for i in prange(Z.shape[0]):
        q = Z[i, :2].copy()
        p = Z[i, 2:].copy()
        cells = np.zeros(2, np.int64)
        base = np.empty(2)
        # keep the lift: start from the wrapped point and add the starting cell back
        K.wrap(q, cells)
        for k in range(2):
            base[k] = 2.0 * cells[k]
            cells[k] = 0
        W = np.empty((4, 1))
        st = K.flow_map(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, cells, h, nsteps,
                        coeffs, True, W, False)
        status[i] = st
        for k in range(2):
            Z[i, k] = q[k] + 2.0 * cells[k] + base[k]
            Z[i, 2 + k] = p[k]


def R_exact_many(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    s = Z[:, 2] ** 2 + Z[:, 3] ** 2
    if np.any(s >= 1.0 - DEGENERACY):
        raise DegenerateCovector("sample outside the open unit codisc")
    g = np.sqrt(1.0 - s)
    out = Z.copy()
    out[:, 0] += Z[:, 2] / g
    out[:, 1] += Z[:, 3] / g
    return out


# ---------------------------------------------------------------------------
# Jacobians and symplecticity
# ---------------------------------------------------------------------------

OMEGA = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])


def fd_jacobian(fmany, Z: np.ndarray, step: float = FD_STEP, richardson: bool = False) -> np.ndarray:
    """Central-difference Jacobians (N x 4 x 4) of a vectorised map on lifted rows.

    With ``richardson`` the estimates at ``step`` and ``2 step`` are combined
    as (4 D_h - D_2h) / 3, cancelling the leading O(step^2) term.  Each
    quotient divides by the representable spread (z + d) - (z - d), so
    affine maps are differentiated exactly.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    N = Z.shape[0]

    def central(d):
        pts = np.empty((8 * N, 4))
        for j in range(4):
            e = np.zeros(4)
            e[j] = d
            pts[(2 * j) * N:(2 * j + 1) * N] = Z + e
            pts[(2 * j + 1) * N:(2 * j + 2) * N] = Z - e
        img = fmany(pts)
        D = np.empty((N, 4, 4))
        for j in range(4):
            spread = pts[(2 * j) * N:(2 * j + 1) * N, j] - pts[(2 * j + 1) * N:(2 * j + 2) * N, j]
            D[:, :, j] = (img[(2 * j) * N:(2 * j + 1) * N]
                          - img[(2 * j + 1) * N:(2 * j + 2) * N]) / spread[:, None]
        return D

    Dh = central(step)
    if not richardson:
        return Dh
    return (4.0 * Dh - central(2.0 * step)) / 3.0


def symplectic_defect_matrix(D: np.ndarray) -> np.ndarray:
    """max |D^T Omega D - Omega| for each Jacobian in a stack."""
    D = np.asarray(D)
    if D.ndim == 2:
        D = D[None]
    P = np.einsum("nji,jk,nkl->nil", D, OMEGA, D)
    return np.abs(P - OMEGA).max(axis=(1, 2))


def symplectic_defect(fmany, pt, fd_step: float = FD_STEP, richardson: bool = True) -> float:
    """Defect of the central-difference Jacobian of ``fmany`` at one point (x, y, alpha, beta).

    Plain central differences at 1e-5 leave an O(step^2) error near 1e-5 for
    maps that pass through the collar, so the Richardson form is the default.
    """
    z = pt.as_array() if isinstance(pt, SectionPoint) else np.asarray(pt, float)
    return float(symplectic_defect_matrix(fd_jacobian(fmany, z[None], fd_step, richardson))[0])


# ---------------------------------------------------------------------------
# closeness scan
# ---------------------------------------------------------------------------

def section_sample(n: int, seed: int = 0, max_s: float = MAX_S) -> np.ndarray:
    """Deterministic scrambled-Sobol points of B*T0 (positions uniform, covectors uniform in a disc)."""
    u = qmc.Sobol(d=4, scramble=True, seed=seed).random_base2(max(0, math.ceil(math.log2(n))))[:n]
    x = 2.0 * u[:, 0] - 1.0
    y = 2.0 * u[:, 1] - 1.0
    rad = np.sqrt(max_s * u[:, 2])
    th = 2.0 * np.pi * u[:, 3]
    return np.column_stack([x, y, rad * np.cos(th), rad * np.sin(th)])


@dataclass
class ClosenessEntry:
    eps: float
    c0: float
    c1: float | None
    symplectic_defect: float
    support_max_s: float          # largest alpha^2 + beta^2 where |R_eps - R_exact| > SUPPORT_TOL
    outside_support_max: float    # largest discrepancy over samples with s >= 2/3


@dataclass
class MapClosenessReport:
    entries: list[ClosenessEntry]
    n_samples: int
    n_c1: int
    settings: dict = field(default_factory=dict)

    def orders(self, which: str = "c0") -> list[float]:
        """Empirical orders log(d_i / d_{i+1}) / log(eps_i / eps_{i+1}) on consecutive grid points."""
        e = self.entries
        out = []
        for a, b in zip(e, e[1:]):
            da, db = getattr(a, which), getattr(b, which)
            out.append(math.log(da / db) / math.log(a.eps / b.eps))
        return out

    def monotone(self, which: str = "c0") -> bool:
        vals = [getattr(x, which) for x in sorted(self.entries, key=lambda x: -x.eps)]
        return all(b <= a for a, b in zip(vals, vals[1:]))

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_c1": self.n_c1,
            "settings": self.settings,
            "entries": [vars(x) for x in self.entries],
            "order_c0": self.orders("c0"),
            "order_c1": self.orders("c1") if all(x.c1 is not None for x in self.entries) else None,
        }


SUPPORT_TOL = 1e-8


def closeness_scan(metric: RadialMetric, eps_grid, sample_n: int = 10_000, m: int = 1, *,
                   c1_n: int | None = None, seed: int = 0, potential: str = "unit",
                   h: float = RMAP_H, order: int = RMAP_ORDER) -> MapClosenessReport:
    """Sup-norm C0 (and C1 when m = 1) distance between R_eps and R_exact on a fixed sample.

    C1 uses Richardson-extrapolated central differences at 1e-5 on the first
    ``c1_n`` samples (default: all); the symplectic defect reuses those Jacobians.
    """
    if m not in (0, 1):
        raise ValueError("m must be 0 or 1")
    Z = section_sample(sample_n, seed)
    s = Z[:, 2] ** 2 + Z[:, 3] ** 2
    ref = R_exact_many(Z)
    n1 = sample_n if c1_n is None else min(c1_n, sample_n)
    Zc = Z[:n1]
    Dref = np.stack([R_exact_jacobian(SectionPoint(*z)) for z in Zc]) if m == 1 else None
    entries = []
    for eps in eps_grid:
        pm = PerturbedMap(metric, float(eps), potential, h, order)
        img = pm.many(Z)
        diff = np.abs(img - ref).max(axis=1)
        big = diff > SUPPORT_TOL
        c1 = None
        if m == 1:
            D = fd_jacobian(pm.many, Zc, FD_STEP, richardson=True)
            c1 = float(np.abs(D - Dref).max())
            defect = float(symplectic_defect_matrix(D).max())
        else:
            defect = float("nan")
        entries.append(ClosenessEntry(
            float(eps), float(diff.max()), c1, defect,
            float(s[big].max()) if big.any() else 0.0,
            float(diff[s >= SUPPORT_EDGE].max()) if (s >= SUPPORT_EDGE).any() else 0.0))
    return MapClosenessReport(entries, sample_n, n1 if m == 1 else 0,
                              {"h": h, "order": order, "potential": potential, "seed": seed,
                               "fd_step": FD_STEP, "max_s": MAX_S})


def reversibility_residual(pm: PerturbedMap, Z: np.ndarray) -> float:
    """max |S R S R z - z| with S the momentum reversal; zero for a reversible map."""
    S = np.array([1.0, 1.0, -1.0, -1.0])
    back = pm.many(pm.many(Z) * S) * S
    return float(np.abs(back - Z).max())


# ---------------------------------------------------------------------------
# energy windows
# ---------------------------------------------------------------------------

@dataclass
class WindowLevel:
    level: float
    shift: float                  # delta of the equivalent metric (g^2 + delta)|dx|^2
    positive_fraction: float
    lower95: float
    indicator: bool


def energy_window_scan(metric: RadialMetric | None, eps: float, n_levels: int = 3, *,
                       delta0: float | None = None, n_orbits: int = 50, T: float = 200.0,
                       seed: int = 0, potential: str = "unit") -> list[WindowLevel]:
    """Positivity indicators on levels {H_eps = h} for h across (eps(1 - delta0), eps(1 + delta0)).

    On such a level the cutoff equals 1 (checked), so the orbits are the
    geodesics of (g^2 + d)|dx|^2 with d = h/eps - c, where W = c - g^2.  Each
    level is handed to a Lyapunov ensemble on that metric.  The indicator is
    positive when the one-sided 95% lower bound of the positive fraction is
    above zero.  With eps = 0 or no metric the flow is free and the ensembles
    are flat.
    """
    if eps == 0.0 or metric is None or metric.flat:
        out = []
        for lev in np.linspace(0.25, 0.5, n_levels) if n_levels > 1 else [0.5]:
            rep = run_ensemble(SampleSpec(HamiltonianSpec("Flat"), n_orbits, T, 1.0, seed, float(lev)),
                               keep_entries=False)
            lo = rep.positive_lower_bound()
            out.append(WindowLevel(float(lev), 0.0, rep.positive_fraction, lo, lo > 0.0))
        return out
    if delta0 is None:
        from .conformal import largest_certified_delta
        delta0 = largest_certified_delta(metric)
    c = 1.0 if potential == "unit" else metric.g_inf**2
    levels = eps * (1.0 + delta0 * np.linspace(-1.0, 1.0, n_levels)) if n_levels > 1 else np.array([eps])
    out = []
    for lev in levels:
        shift = lev / eps - c
        top = 2.0 * eps * (1.0 + shift)         # largest |p|^2 on the level
        if top >= 1.0 / 3.0:
            raise ValueError(f"level {lev:g} reaches |p|^2 = {top:.3g} >= 1/3 where the cutoff is active")
        m = metric.with_delta(shift) if potential == "compact" else shifted_metric_for_level(metric, eps, lev)
        # the ensemble runs on the unit level of the equivalent metric; positivity is scale-free
        rep = run_ensemble(SampleSpec(HamiltonianSpec("ConformalKinetic", m), n_orbits, T, 1.0, seed),
                           keep_entries=False)
        lo = rep.positive_lower_bound()
        out.append(WindowLevel(float(lev), float(shift), rep.positive_fraction, lo, lo > 0.0))
    return out


# ---------------------------------------------------------------------------
# bounded actions
# ---------------------------------------------------------------------------

N_DIRS = 90


@njit(cache=True, error_model="numpy")
def _widths(p, cs, sn, lo, hi):
    for d in range(cs.shape[0]):
        v = cs[d] * p[0] + sn[d] * p[1]
        if v < lo[d]:
            lo[d] = v
        if v > hi[d]:
            hi[d] = v


@njit(cache=True, parallel=True, error_model="numpy")
def _action_kernel(kind, eps, wconst, hr, gtab, r2, ginf, delta, Z, h, nsteps, coeffs, cs, sn,
                   widths, status):
    """Directional widths of the visited momentum set at nsteps and 2 nsteps."""
    nd = cs.shape[0]
    for o in prange(Z.shape[0]):
        q = Z[o, :2].copy()
        p = Z[o, 2:].copy()
        cells = np.zeros(2, np.int64)
        K.wrap(q, cells)
        lo = np.full(nd, np.inf)
        hi = np.full(nd, -np.inf)
        _widths(p, cs, sn, lo, hi)
        W = np.empty((4, 1))
        v = np.empty(2)
        ws = K.workspace(2)
        for half in range(2):
            k = 0
            while k < nsteps:
                if K.radius(q) >= r2:
                    # momenta are constant along free flights: jump to the next disc entry
                    K.flight_velocity(kind, eps, wconst, hr, gtab, r2, ginf, delta, p, v)
                    t_hit = K.time_to_disc(q, v, r2, (nsteps - k) * h)
                    jump = nsteps - k if t_hit == np.inf else int(math.floor(t_hit / h))
                    if jump >= 1:
                        for i in range(2):
                            q[i] += jump * h * v[i]
                        K.wrap(q, cells)
                        k += jump
                        continue
                st = K.composed_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W,
                                   False, ws)
                if st != K.OK:
                    status[o] = st
                    break
                K.wrap(q, cells)
                _widths(p, cs, sn, lo, hi)
                k += 1
            for d in range(nd):
                widths[o, half, d] = hi[d] - lo[d]


@dataclass
class ActionRangeReport:
    T: float
    osc_T: float          # max over orbits of the momentum-set diameter up to T
    osc_2T: float
    per_orbit_T: np.ndarray
    per_orbit_2T: np.ndarray

    @property
    def ratio(self) -> float:
        return self.osc_2T / self.osc_T if self.osc_T > 0 else 1.0


def action_range(metric: RadialMetric, eps: float, Z: np.ndarray, T: float = 1e4, *,
                 potential: str = "unit", h: float = 1e-2, order: int = 2) -> ActionRangeReport:
    """Diameter of the visited (alpha, beta) set along orbits of the perturbed relativistic flow.

    The diameter is the largest width over ``N_DIRS`` directions, which
    underestimates the true diameter by at most a factor cos(pi / (2 N_DIRS)).
    Momenta only change inside the disc, where every step is sampled.  The
    flow here uses the plain midpoint rule at h = 1e-2 by default: it is
    symplectic, the forces are O(eps), and only the momentum envelope is read.
    """
    Z = np.ascontiguousarray(Z, dtype=float)
    spec = HamiltonianSpec("Relativistic", metric, eps, potential=potential)
    th = np.pi * np.arange(N_DIRS) / N_DIRS
    widths = np.zeros((Z.shape[0], 2, N_DIRS))
    status = np.zeros(Z.shape[0], np.int64)
    nsteps = int(round(T / h))
    _action_kernel(*spec.kernel_args(), Z, h, nsteps, K.composition(order), np.cos(th), np.sin(th),
                   widths, status)
    if np.any(status != K.OK):
        from .flow import _raise_status
        _raise_status(int(status[status != K.OK][0]))
    dT = widths[:, 0, :].max(axis=1)
    d2 = widths[:, 1, :].max(axis=1)
    return ActionRangeReport(T, float(dT.max()), float(d2.max()), dT, d2)
