"""Finite-time Lyapunov exponents over Liouville-sampled ensembles.

One tangent vector rides along each orbit.  It is pushed forward by the exact
derivative of every midpoint sub-step (a Cayley transform) and by the exact
shear of every skipped free flight, then renormalised every ``renorm_dt``.
The top exponent is (1/T) times the sum of the logarithms of the stretch
factors, measured in the Euclidean chart norm on (dx, dy, dalpha, dbeta).

Orbits are independent, so the ensemble kernel runs them in a ``prange`` loop.
Every orbit draws from its own counter-based stream keyed by (seed, index).
Results therefore do not depend on the thread count or on the orbit order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit, prange
from scipy.stats import binomtest

from . import _kernels as K
from .conformal import RadialMetric
from .errors import EnergyOutOfRange, StepRejected
from .flow import CotangentState, HamiltonianSpec

# Ensemble integrator: plain midpoint (order 2) at h = 7e-3, with the momentum
# rescaled onto the energy level at every disc exit.  Without that projection the
# per-passage energy errors random-walk on chaotic orbits over T ~ 1e4.  See
# scripts/lyapunov_step_study.py for the step comparison.
LYAP_H = 7e-3
LYAP_ORDER = 2
ENTRY_CAP = 1 << 16

# Alternative chart norm used by the norm-robustness check: momenta weighted by 4.
ALT_NORM_WEIGHTS = np.array([1.0, 1.0, 4.0, 4.0])


@dataclass(frozen=True)
class SampleSpec:
    """An ensemble: ``n_orbits`` Liouville samples on {H = energy_level}, run to time T."""

    hamiltonian: HamiltonianSpec
    n_orbits: int
    T: float
    renorm_dt: float = 1.0
    seed: int = 0
    energy_level: float = 0.5
    h: float = LYAP_H
    order: int = LYAP_ORDER
    project: bool = True

    def __post_init__(self):
        if self.n_orbits < 1:
            raise ValueError("n_orbits must be at least 1")
        if self.renorm_dt <= 0 or self.T < 100 * self.renorm_dt * (1 - 1e-12):
            raise ValueError("need renorm_dt > 0 and T >= 100 renorm_dt")
        if self.energy_level <= 0:
            raise ValueError("energy_level must be positive")
        if self.hamiltonian.kind not in ("Flat", "ConformalKinetic"):
            raise ValueError("ensembles are defined for the Flat and ConformalKinetic kinds; "
                             "perturbed levels go through an equivalent shifted metric")
        if self.hamiltonian.n != 2:
            raise ValueError("ensembles are two-dimensional")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def renorm_steps(self) -> int:
        return max(1, round(self.renorm_dt / self.h))

    @property
    def n_chunks(self) -> int:
        return max(1, round(self.T / (self.renorm_steps * self.h)))

    @property
    def horizon(self) -> float:
        """The horizon actually integrated (T rounded to whole renormalisation intervals)."""
        return self.n_chunks * self.renorm_steps * self.h

    @property
    def threshold(self) -> float:
        """Positivity cutoff: five times the free-shear ceiling 2 log T / T."""
        T = self.horizon
        return 5.0 * 2.0 * math.log(T) / T

    def describe(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "hamiltonian"}
        d["hamiltonian"] = self.hamiltonian.describe()
        return d


def orbit_rng(seed: int, index: int) -> np.random.Generator:
    """Philox stream keyed by (seed, index): independent of how orbits are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def _draw(spec: SampleSpec, index: int):
    rng = orbit_rng(spec.seed, index)
    m = spec.hamiltonian.metric
    flat = spec.hamiltonian.kind == "Flat"
    tries = 0
    while True:
        tries += 1
        xy = rng.uniform(-1.0, 1.0, size=2)
        u = rng.uniform()
        if flat:
            G2 = 1.0
            break
        G2 = float(m.G2(math.hypot(*xy)))
        if u * (1.0 + m.delta) < G2:
            break
    theta = rng.uniform(0.0, 2.0 * math.pi)
    speed = math.sqrt(2.0 * spec.energy_level * G2)
    p = speed * np.array([math.cos(theta), math.sin(theta)])
    w = rng.standard_normal(4)
    return CotangentState(xy, p), w / np.linalg.norm(w), tries


def sample_liouville(spec: SampleSpec) -> list[CotangentState]:
    """Base points with density proportional to G(r)^2, directions uniform.

    Acceptance-rejection against the envelope sup G^2 = 1 + delta.  The
    momentum has metric length sqrt(2 E), so H equals ``energy_level``.
    """
    return [_draw(spec, i)[0] for i in range(spec.n_orbits)]


def acceptance_rate(spec: SampleSpec) -> float:
    """Fraction of proposals accepted while drawing the ensemble."""
    tries = sum(_draw(spec, i)[2] for i in range(spec.n_orbits))
    return spec.n_orbits / tries


# ---------------------------------------------------------------------------
# compiled orbit loop
# ---------------------------------------------------------------------------

@njit(cache=True, error_model="numpy")
def _clairaut_any(hr, gtab, r2, ginf, delta, q, p):
    """G L / |p| about the nearest lattice point; outside the disc G is the constant G_inf."""
    g, _, _ = K.radial(hr, gtab, r2, ginf, K.radius(q))
    sp = math.sqrt(p[0] * p[0] + p[1] * p[1])
    return math.sqrt(g * g + delta) * (q[0] * p[1] - q[1] * p[0]) / sp


@njit(cache=True, error_model="numpy")
def _orbit(kind, eps, wconst, hr, gtab, r2, ginf, delta, r1, q, p, cells, w, h, coeffs, skip,
           renorm_steps, n_chunks, check_chunk, entries, level, project):
    """Advance one orbit with its tangent vector; returns summary numbers.

    Output: (status, log-sum at ``check_chunk``, final log-sum, disc entries,
    deep passages, max Clairaut change over a passage, mean |Clairaut| at entry).
    """
    n = q.shape[0]
    W = np.empty((2 * n, 1))
    for i in range(2 * n):
        W[i, 0] = w[i]
    v = np.empty(n)
    gq = np.empty(n)
    gp = np.empty(n)
    M = np.empty((2 * n, 2 * n))
    far = np.full(n, 1.0)
    ws = K.workspace(n)
    single = coeffs.shape[0] == 1
    hist = np.empty((3, 2 * n))
    hist[0, :n] = q
    hist[0, n:] = p
    n_hist = 1
    zp = np.empty(2 * n)
    logsum = 0.0
    log_check = np.nan
    n_in = 0
    n_deep = 0
    deep_now = False
    cl_drift = 0.0
    cl_abs = 0.0
    cl_in = 0.0
    t = 0.0
    inside = K.radius(q) < r2
    if inside:
        cl_in = K.clairaut_raw(kind, hr, gtab, r2, ginf, delta, q, p)
        deep_now = K.radius(q) < r1
    ah = abs(h)
    for chunk in range(n_chunks):
        k = 0
        while k < renorm_steps:
            if skip and not inside:
                K.flight_velocity(kind, eps, wconst, hr, gtab, r2, ginf, delta, p, v)
                t_hit = K.time_to_disc(q, v, r2, (renorm_steps - k) * ah)
                jump = renorm_steps - k if t_hit == np.inf else int(math.floor(t_hit / ah))
                if jump >= 1:
                    Tj = jump * h
                    for i in range(n):
                        q[i] += Tj * v[i]
                    K.wrap(q, cells)
                    K.ham_eval(kind, eps, wconst, hr, gtab, r2, ginf, delta, far, p, gq, gp, M, True)
                    for i in range(n):
                        acc = 0.0
                        for j in range(n):
                            acc += M[n + i, n + j] * W[n + j, 0]
                        W[i, 0] += Tj * acc
                    k += jump
                    t += Tj
                    n_hist = 1
                    hist[0, :n] = q
                    hist[0, n:] = p
                    continue
            if single and n_hist >= 3:
                # quadratic extrapolation of the last three states: O(h^3) start for Newton
                for i in range(2 * n):
                    zp[i] = 3.0 * hist[0, i] - 3.0 * hist[1, i] + hist[2, i]
                if kind == K.CONFORMAL:
                    st = K.conf2_step(hr, gtab, r2, ginf, delta, q, p, h, W, True, ws[3], ws[9], zp, True)
                else:
                    st = K.midpoint_pred(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, ws[8],
                                         ws, zp, True)
                    if st == K.OK:
                        K.cayley_ws(ws[8], h, W, ws[3], ws[9])
            else:
                st = K.composed_ws(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p, h, coeffs, W,
                                   True, ws)
            if st != K.OK:
                return st, log_check, logsum, n_in, n_deep, cl_drift, cl_abs
            c0 = cells[0]
            c1 = cells[1]
            K.wrap(q, cells)
            if c0 != cells[0] or c1 != cells[1]:
                n_hist = 0
            else:
                for i in range(2 * n):
                    hist[2, i] = hist[1, i]
                    hist[1, i] = hist[0, i]
                hist[0, :n] = q
                hist[0, n:] = p
                n_hist += 1
            k += 1
            t += h
            r = K.radius(q)
            now_inside = r < r2
            if now_inside and not inside:
                if n_in < entries.shape[0]:
                    entries[n_in] = t
                n_in += 1
                deep_now = False
                if kind == K.CONFORMAL:
                    cl_in = K.clairaut_raw(kind, hr, gtab, r2, ginf, delta, q, p)
                    cl_abs += abs(cl_in)
            elif inside and not now_inside and kind == K.CONFORMAL:
                d = abs(_clairaut_any(hr, gtab, r2, ginf, delta, q, p) - cl_in)
                if d > cl_drift:
                    cl_drift = d
                if project:
                    # H is quadratic in p: rescaling p restores the level without moving the path
                    Hx = K.ham_value(kind, eps, wconst, hr, gtab, r2, ginf, delta, q, p)
                    lam = math.sqrt(level / Hx)
                    for i in range(n):
                        p[i] *= lam
                    n_hist = 0
            if now_inside and r < r1 and not deep_now:
                deep_now = True
                n_deep += 1
            inside = now_inside
        nrm = 0.0
        for i in range(2 * n):
            nrm += W[i, 0] * W[i, 0]
        nrm = math.sqrt(nrm)
        logsum += math.log(nrm)
        for i in range(2 * n):
            W[i, 0] /= nrm
        if chunk + 1 == check_chunk:
            log_check = logsum
    for i in range(2 * n):
        w[i] = W[i, 0]
    if n_in > 0:
        cl_abs /= n_in
    return K.OK, log_check, logsum, n_in, n_deep, cl_drift, cl_abs


@njit(cache=True, parallel=True, error_model="numpy")
def _ensemble(kind, eps, wconst, hr, gtab, r2, ginf, delta, r1, Q, P, C, Wv, h, coeffs, skip,
              renorm_steps, n_chunks, check_chunk, entries, out, counts, level, project):
    for o in prange(Q.shape[0]):
        st, lc, lf, n_in, n_deep, cld, cla = _orbit(
            kind, eps, wconst, hr, gtab, r2, ginf, delta, r1, Q[o], P[o], C[o], Wv[o], h, coeffs,
            skip, renorm_steps, n_chunks, check_chunk, entries[o], level, project)
        out[o, 0] = lc
        out[o, 1] = lf
        out[o, 2] = cld
        out[o, 3] = cla
        counts[o, 0] = st
        counts[o, 1] = n_in
        counts[o, 2] = n_deep


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class OrbitExponent:
    index: int
    chi: float                 # chi+(T) in the Euclidean chart norm
    chi_alt: float             # the same orbit measured in the weighted chart norm
    chi_2T: float | None       # filled for flagged orbits when the stability run is requested
    crossings: int             # entries into the disc r < r2
    deep_crossings: int        # passages reaching r < r1
    clairaut_drift: float      # max change of the Clairaut value across one passage
    clairaut_mean: float       # mean |Clairaut value| at entry
    entry_times: list[float] = field(default_factory=list)


@dataclass
class LyapunovReport:
    spec: SampleSpec
    horizon: float
    threshold: float
    orbits: list[OrbitExponent]
    baseline: float | None = None   # Pesin estimate of a reference (flat) ensemble

    @property
    def chis(self) -> np.ndarray:
        return np.array([o.chi for o in self.orbits])

    @property
    def flagged(self) -> np.ndarray:
        return self.chis > self.threshold

    @property
    def positive_fraction(self) -> float:
        return float(np.mean(self.flagged))

    def positive_interval(self, confidence: float = 0.95) -> tuple[float, float]:
        """Clopper-Pearson interval for the positive-exponent fraction."""
        k = int(self.flagged.sum())
        ci = binomtest(k, len(self.orbits)).proportion_ci(confidence_level=confidence, method="exact")
        return float(ci.low), float(ci.high)

    def positive_lower_bound(self, confidence: float = 0.95) -> float:
        """One-sided exact lower confidence bound for the positive fraction."""
        k = int(self.flagged.sum())
        n = len(self.orbits)
        if k == 0:
            return 0.0
        ci = binomtest(k, n, alternative="greater").proportion_ci(confidence_level=confidence,
                                                                  method="exact")
        return float(ci.low)

    @property
    def pesin(self) -> tuple[float, float]:
        return pesin_lower_bound(self)

    def subset(self, min_crossings: int) -> "LyapunovReport":
        keep = [o for o in self.orbits if o.crossings >= min_crossings]
        return LyapunovReport(self.spec, self.horizon, self.threshold, keep, self.baseline)

    def to_dict(self, entry_times: bool = False) -> dict:
        est, se = self.pesin
        lo, hi = self.positive_interval()
        rows = []
        for o in self.orbits:
            d = asdict(o)
            if not entry_times:
                d.pop("entry_times")
            rows.append(d)
        return {
            "params": self.spec.describe(),
            "horizon": self.horizon,
            "threshold": self.threshold,
            "per_orbit": rows,
            "positive_fraction": self.positive_fraction,
            "positive_fraction_ci95": [lo, hi],
            "positive_fraction_lower95": self.positive_lower_bound(),
            "pesin_lower_bound": est,
            "pesin_standard_error": se,
            "baseline": self.baseline,
        }


def _raise(status: int, where: str):
    if status == K.ENERGY_RANGE:
        raise EnergyOutOfRange(where)
    if status != K.OK:
        raise StepRejected(where)


def _run_batch(spec: SampleSpec, states, vecs, n_chunks: int, check_chunk: int):
    args = spec.hamiltonian.kernel_args()
    m = spec.hamiltonian.metric
    r1 = m.r1 if m is not None else 0.0
    N = len(states)
    Q = np.array([s.q for s in states], dtype=float).reshape(N, 2)
    P = np.array([s.p for s in states], dtype=float).reshape(N, 2)
    C = np.array([s.cells for s in states], dtype=np.int64).reshape(N, 2)
    Wv = np.array(vecs, dtype=float).reshape(N, 4)
    entries = np.full((N, ENTRY_CAP), np.nan)
    out = np.empty((N, 4))
    counts = np.zeros((N, 3), np.int64)
    _ensemble(*args, r1, Q, P, C, Wv, spec.h, K.composition(spec.order), True, spec.renorm_steps,
              n_chunks, check_chunk, entries, out, counts, spec.energy_level, spec.project)
    for o in range(N):
        _raise(int(counts[o, 0]), f"orbit {o}")
    finals = [CotangentState(Q[o], P[o], C[o]) for o in range(N)]
    return out, counts, entries, finals, Wv


def finite_time_exponent(state: CotangentState, spec: SampleSpec, w0=None, T: float | None = None,
                         renorm_dt: float | None = None) -> float:
    """chi+(T) of one orbit with initial tangent ``w0`` (default: the first chart axis)."""
    if T is not None or renorm_dt is not None:
        spec = SampleSpec(spec.hamiltonian, 1, T if T is not None else spec.T,
                          renorm_dt if renorm_dt is not None else spec.renorm_dt, spec.seed,
                          spec.energy_level, spec.h, spec.order, spec.project)
    w = np.array([1.0, 0.0, 0.0, 0.0]) if w0 is None else np.asarray(w0, float) / np.linalg.norm(w0)
    out, *_ = _run_batch(spec, [state.copy()], [w], spec.n_chunks, spec.n_chunks)
    return float(out[0, 1] / spec.horizon)


def _alt_log(w) -> float:
    return math.log(np.linalg.norm(ALT_NORM_WEIGHTS * w))


def run_ensemble(spec: SampleSpec, *, stability: bool = False, keep_entries: bool = True,
                 baseline: float | None = None) -> LyapunovReport:
    """Sample, integrate, and summarise an ensemble.

    With ``stability`` the flagged orbits are continued from T to 2T and
    chi+(2T) is recorded.  The per-orbit numbers depend only on (seed, index).
    """
    draws = [_draw(spec, i) for i in range(spec.n_orbits)]
    states = [d[0] for d in draws]
    w0 = [d[1] for d in draws]
    nc = spec.n_chunks
    out, counts, entries, finals, wT = _run_batch(spec, states, [w.copy() for w in w0], nc, nc)
    T = spec.horizon
    orbits = []
    for o in range(spec.n_orbits):
        S = out[o, 1]
        chi_alt = (S + _alt_log(wT[o]) - _alt_log(w0[o])) / T
        et = entries[o][~np.isnan(entries[o])].tolist() if keep_entries else []
        orbits.append(OrbitExponent(o, float(S / T), float(chi_alt), None, int(counts[o, 1]),
                                    int(counts[o, 2]), float(out[o, 2]), float(out[o, 3]), et))
    rep = LyapunovReport(spec, T, spec.threshold, orbits, baseline)
    if stability:
        idx = np.flatnonzero(rep.flagged)
        if idx.size:
            out2, *_ = _run_batch(spec, [finals[i] for i in idx], [wT[i].copy() for i in idx], nc, nc)
            for j, i in enumerate(idx):
                orbits[i].chi_2T = float((out[i, 1] + out2[j, 1]) / (2.0 * T))
    return rep


def pesin_lower_bound(report: LyapunovReport) -> tuple[float, float]:
    """Monte Carlo mean of max(chi+(T), 0) and its standard error.

    A finite-T, finite-N proxy for the integral of the top exponent against
    the Liouville measure, which bounds the metric entropy from below.
    """
    x = np.maximum(report.chis, 0.0)
    if x.size == 0:
        return 0.0, 0.0
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return float(x.mean()), se


@dataclass
class RecurrenceStats:
    counts: np.ndarray            # disc entries per orbit
    histogram: dict[int, int]     # entry count -> number of orbits
    return_times: np.ndarray      # all gaps between consecutive entries
    mean_count: float
    mean_return_time: float


def recurrence_stats(report: LyapunovReport) -> RecurrenceStats:
    counts = np.array([o.crossings for o in report.orbits], dtype=int)
    vals, freq = np.unique(counts, return_counts=True)
    gaps = [np.diff(o.entry_times) for o in report.orbits if len(o.entry_times) > 1]
    gaps = np.concatenate(gaps) if gaps else np.zeros(0)
    return RecurrenceStats(counts, {int(v): int(f) for v, f in zip(vals, freq)}, gaps,
                           float(counts.mean()) if counts.size else 0.0,
                           float(gaps.mean()) if gaps.size else float("nan"))


def mean_g2(m: RadialMetric, n: int = 400) -> float:
    """(1/4) of the integral of G^2 over the square, by tensor Gauss-Legendre on the disc plus the flat rest."""
    x, wx = np.polynomial.legendre.leggauss(n)
    r = 0.5 * m.r2 * (x + 1.0)
    wr = 0.5 * m.r2 * wx
    disc = 2.0 * math.pi * float(np.sum(wr * r * m.G2(r)))
    rest = (4.0 - math.pi * m.r2**2) * m.G_inf2
    return (disc + rest) / (4.0 * (1.0 + m.delta))


def shifted_metric_for_level(m: RadialMetric, eps: float, level: float) -> RadialMetric:
    """Metric whose geodesics are the orbits of the perturbed kinetic flow on {H_eps = level}.

    With W = 1 - g^2 and the cutoff equal to 1 on the level, |p|^2 = 2 eps (g^2 + d)
    with d = (level - eps) / eps, so the orbits are the geodesics of (g^2 + d)|dx|^2.
    """
    return m.with_delta((level - eps) / eps)
