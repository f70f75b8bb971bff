import math

import numpy as np
import pytest

from dbgtorus import lyapunov as L
from dbgtorus.flow import HamiltonianSpec, hamiltonian_value, unit_covector


@pytest.fixture(scope="module")
def dbg(metric5):
    return HamiltonianSpec("ConformalKinetic", metric5)


@pytest.fixture(scope="module")
def small(dbg):
    return L.run_ensemble(L.SampleSpec(dbg, 12, 200.0, seed=3))


def test_spec_validation(dbg):
    with pytest.raises(ValueError):
        L.SampleSpec(dbg, 10, 50.0)  # shorter than 100 renormalisations
    with pytest.raises(ValueError):
        L.SampleSpec(dbg, 0, 200.0)
    with pytest.raises(ValueError):
        L.SampleSpec(HamiltonianSpec("Relativistic", dbg.metric, eps=0.1), 5, 200.0)


def test_threshold_formula(dbg):
    s = L.SampleSpec(dbg, 1, 1000.0)
    assert s.threshold == pytest.approx(10 * math.log(s.horizon) / s.horizon)


def test_samples_on_energy_level(dbg):
    spec = L.SampleSpec(dbg, 50, 200.0, energy_level=0.5)
    for st in L.sample_liouville(spec):
        assert hamiltonian_value(dbg, st) == pytest.approx(0.5, rel=1e-12)


def test_acceptance_rate_matches_mean_g2(dbg):
    spec = L.SampleSpec(dbg, 4000, 200.0, seed=1)
    rate = L.acceptance_rate(spec)
    target = L.mean_g2(dbg.metric)
    # binomial-ish fluctuation on 4000 draws
    assert abs(rate - target) <= 5 * math.sqrt(target * (1 - target) / 4000)


def test_orbit_rng_independent_of_order(dbg):
    a = L.sample_liouville(L.SampleSpec(dbg, 8, 200.0, seed=9))
    b = L.sample_liouville(L.SampleSpec(dbg, 3, 200.0, seed=9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.q, y.q)
        np.testing.assert_array_equal(x.p, y.p)


def test_determinism(dbg, small):
    again = L.run_ensemble(L.SampleSpec(dbg, 12, 200.0, seed=3))
    np.testing.assert_array_equal(small.chis, again.chis)


def test_flat_exponents_below_shear_ceiling():
    rep = L.run_ensemble(L.SampleSpec(HamiltonianSpec("Flat"), 10, 300.0))
    T = rep.horizon
    assert rep.chis.max() <= 2 * math.log(T) / T


@pytest.mark.parametrize("angle", [0.3, 1.9, 4.0])
def test_renormalisation_interval_invariance(dbg, angle):
    # exponents near 4 amplify rounding by e^{4T}; compare before that saturates,
    # on an orbit that starts in the cap so the window sees the curvature
    h = L.LYAP_H
    spec = L.SampleSpec(dbg, 1, 400 * h, renorm_dt=4 * h)
    st = unit_covector(dbg.metric, [0.05, 0.08], angle)
    a = L.finite_time_exponent(st, spec)
    b = L.finite_time_exponent(st, spec, renorm_dt=2 * h)
    assert a > 0.1
    assert abs(a - b) <= 1e-6 * abs(a)


def test_norm_robustness(small):
    T = small.horizon
    for o in small.orbits:
        assert abs(o.chi - o.chi_alt) <= math.log(4.0) * 2 / T + 1e-12


def test_clairaut_drift_per_passage(small):
    # second-order scheme at the ensemble step: drift is O(h^2), not round-off
    assert max(o.clairaut_drift for o in small.orbits) <= 1e-3


def test_subset_and_report(small):
    sub = small.subset(1)
    assert all(o.crossings >= 1 for o in sub.orbits)
    d = small.to_dict()
    assert len(d["per_orbit"]) == 12
    lo, hi = d["positive_fraction_ci95"]
    assert lo <= d["positive_fraction"] <= hi
    assert 0.0 <= d["positive_fraction_lower95"] <= d["positive_fraction"]


def test_recurrence_stats(small):
    rs = L.recurrence_stats(small)
    assert sum(rs.histogram.values()) == 12
    assert rs.counts.sum() == sum(o.crossings for o in small.orbits)
    assert np.all(rs.return_times > 0)


def test_pesin_estimate_nonnegative(small):
    est, se = small.pesin
    assert est >= 0 and se >= 0


def test_shifted_metric_delta(metric5):
    m = L.shifted_metric_for_level(metric5, 0.01, 0.5)
    assert m.delta == pytest.approx(49.0)
