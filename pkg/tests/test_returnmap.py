import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbgtorus import returnmap as RM
from dbgtorus.errors import DegenerateCovector
from dbgtorus.returnmap import SectionPoint


def test_zero_momentum_fixed():
    out = RM.R_exact(SectionPoint(0.3, -0.4, 0.0, 0.0))
    assert (out.x, out.y, out.alpha, out.beta) == (0.3, -0.4, 0.0, 0.0)


def test_exact_example():
    out = RM.R_exact(SectionPoint(0.0, 0.0, 0.6, 0.0))
    assert out.x == pytest.approx(0.75, abs=1e-15)
    assert (out.y, out.alpha, out.beta) == (0.0, 0.6, 0.0)


def test_exact_wraps_and_keeps_lift():
    out = RM.R_exact(SectionPoint(0.9, 0.0, 0.6, 0.0))
    assert out.x == pytest.approx(-0.35)
    assert out.lift[0] == pytest.approx(1.65)


def test_degenerate_covector():
    with pytest.raises(DegenerateCovector):
        RM.R_exact(SectionPoint(0.0, 0.0, 0.8, 0.6))


def test_exact_jacobian_symplectic_and_unimodular():
    pt = SectionPoint(0.0, 0.0, 0.3, 0.2)
    D = RM.R_exact_jacobian(pt)
    assert RM.symplectic_defect_matrix(D).max() <= 1e-15
    assert abs(np.linalg.det(D) - 1.0) <= 1e-10
    assert RM.symplectic_defect(RM.R_exact_many, pt, 1e-5) <= 1e-8


def test_identity_defect_zero():
    assert RM.symplectic_defect(lambda Z: np.array(Z, float), SectionPoint(0.1, 0.2, 0.3, 0.1)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 0.95), st.floats(0, 2 * math.pi))
def test_exact_jacobian_matches_fd(x, y, rad, th):
    pt = SectionPoint(x, y, rad * math.cos(th), rad * math.sin(th))
    D = RM.fd_jacobian(RM.R_exact_many, pt.as_array()[None], 1e-5, richardson=True)[0]
    assert np.abs(D - RM.R_exact_jacobian(pt)).max() <= 1e-6


def test_eps_zero_matches_exact(metric5):
    Z = RM.section_sample(64, seed=2)
    img = RM.PerturbedMap(metric5, 0.0).many(Z)
    assert np.abs(img - RM.R_exact_many(Z)).max() <= 1e-8


def test_single_point_call_matches_batch(metric5):
    pm = RM.PerturbedMap(metric5, 0.05)
    z = RM.section_sample(4, seed=5)[3]
    one = pm(SectionPoint.from_array(z))
    assert np.abs(one.as_array() - pm.many(z[None])[0]).max() <= 1e-13


def test_outside_momentum_cutoff_unperturbed(metric5):
    Z = RM.section_sample(256, seed=1)
    Z = Z[Z[:, 2] ** 2 + Z[:, 3] ** 2 >= 2 / 3]
    assert len(Z) > 10
    img = RM.PerturbedMap(metric5, 0.1).many(Z)
    assert np.abs(img - RM.R_exact_many(Z)).max() <= 1e-8


def test_reversibility(metric5):
    pm = RM.PerturbedMap(metric5, 0.1)
    assert RM.reversibility_residual(pm, RM.section_sample(64, seed=4)) <= 1e-7


def test_perturbed_map_symplectic(metric5):
    pm = RM.PerturbedMap(metric5, 0.1)
    for z in RM.section_sample(8, seed=6):
        assert RM.symplectic_defect(pm.many, SectionPoint.from_array(z)) <= 1e-6


def test_closeness_small(metric5):
    rep = RM.closeness_scan(metric5, [1e-1, 1e-2, 1e-3], sample_n=128, c1_n=16)
    assert rep.monotone("c0") and rep.monotone("c1")
    for o in rep.orders("c0"):
        assert 0.7 <= o <= 1.3
    for e in rep.entries:
        assert e.support_max_s < 2 / 3 + 1e-3
        assert e.outside_support_max <= 1e-8
        assert e.symplectic_defect <= 1e-6
    a, b = rep.entries[0], rep.entries[1]
    assert a.c0 > 0 and b.c0 > 0


def test_section_sample_deterministic():
    np.testing.assert_array_equal(RM.section_sample(100, 3), RM.section_sample(100, 3))
    Z = RM.section_sample(100, 3)
    assert np.all(Z[:, 2] ** 2 + Z[:, 3] ** 2 < RM.MAX_S)


def test_action_range_zero_eps(metric5):
    Z = RM.section_sample(4, seed=7)
    rep = RM.action_range(metric5, 0.0, Z, T=50.0)
    assert rep.osc_2T <= 1e-12


def test_action_range_fast_orbit_unperturbed(metric5):
    Z = np.array([[0.1, 0.2, 0.7, 0.5], [-0.5, 0.3, -0.6, 0.6]])
    rep = RM.action_range(metric5, 1e-2, Z, T=50.0)
    assert rep.osc_2T <= 1e-8


def test_action_range_ratio_short(metric5):
    rep = RM.action_range(metric5, 1e-2, RM.section_sample(8, seed=8), T=50.0)
    assert rep.osc_T > 0
    assert rep.ratio >= 1.0


def test_energy_window_flat_negative():
    levels = RM.energy_window_scan(None, 0.0, n_levels=2, n_orbits=10, T=100.0)
    assert not any(w.indicator for w in levels)


def test_energy_window_centre_positive(metric5):
    (w,) = RM.energy_window_scan(metric5, 0.01, n_levels=1, n_orbits=20, T=100.0)
    assert w.shift == 0.0
    assert w.indicator
