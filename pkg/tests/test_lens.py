import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dbgtorus import lens as LS
from dbgtorus.errors import MissesBall, TangentRay
from dbgtorus.lens import BoundaryCovector, FaceCovector


def bc(foot, cov, orient="in"):
    return BoundaryCovector(np.array(foot, float), np.array(cov, float), orient)


def test_diameter_chord():
    out = LS.lens_map(bc([0, 0, -1], [0, 0, 1]))
    np.testing.assert_allclose(out.foot, [0, 0, 1], atol=1e-15)
    np.testing.assert_array_equal(out.cov, [0, 0, 1])
    assert out.orientation == "out"


def test_horizontal_diameter():
    out = LS.lens_map(bc([1, 0, 0], [-1, 0, 0]))
    np.testing.assert_allclose(out.foot, [-1, 0, 0], atol=1e-15)


def test_tangent_ray_rejected():
    s = math.sqrt(0.5)
    # outward-pointing covectors cannot be constructed as inward ones
    with pytest.raises(ValueError):
        bc([1, 0, 0], [s, s, 0])
    with pytest.raises(TangentRay):
        LS.lens_map(bc([1, 0, 0], [-1e-13, 1.0, 0.0]))


def test_orientation_is_checked():
    with pytest.raises(ValueError):
        bc([0, 0, -1], [0, 0, 1], "out")


def test_reversibility_and_unit_feet():
    for v in LS.inward_sample(1000, seed=1, min_transversality=1e-6):
        w = LS.lens_map(v)
        assert abs(np.linalg.norm(w.foot) - 1.0) <= 1e-12
        assert np.abs((-LS.lens_map(-w)).as_array() - v.as_array()).max() <= 1e-12


def test_dual_lens_is_lens_map():
    for v in LS.inward_sample(20, seed=2):
        np.testing.assert_array_equal(LS.dual_lens(v).as_array(), LS.lens_map(v).as_array())


def test_sigma0_symplectic():
    for v in LS.inward_sample(25, seed=3):
        assert LS.sigma0_defect(v) <= 1e-6


def test_phi1_vertical_ray():
    chi = LS.phi1(FaceCovector(0.0, 0.0, 0.0, 0.0, -1))
    np.testing.assert_allclose(chi.foot, [0, 0, -1], atol=1e-15)
    np.testing.assert_array_equal(chi.cov, [0, 0, 1])


def test_corner_ray_misses_ball():
    with pytest.raises(MissesBall):
        LS.phi1(FaceCovector(0.99, 0.99, 0.0, 0.1, -1))
    with pytest.raises(MissesBall):
        LS.phi2(FaceCovector(0.99, 0.99, 0.0, 0.1, 1))


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(0, 0.6), st.floats(0, 2 * math.pi))
def test_phi_inverses(x, y, rad, th):
    z = FaceCovector(x, y, rad * math.cos(th), rad * math.sin(th), -1)
    try:
        chi = LS.phi1(z)
    except MissesBall:
        assume(False)
    back = LS.phi1_inv(chi)
    assert np.abs(back.section() - z.section()).max() <= 1e-12
    top = FaceCovector(x, y, z.alpha, z.beta, 1)
    try:
        nu = LS.phi2(top)
    except MissesBall:
        return
    assert np.abs(LS.phi2_inv(nu).section() - top.section()).max() <= 1e-12


def test_phi_defects():
    for z in [FaceCovector(0.1, -0.2, 0.2, 0.1, -1), FaceCovector(-0.3, 0.1, -0.3, 0.2, -1)]:
        assert LS.phi1_defect(z) <= 1e-6
        assert LS.phi2_defect(FaceCovector(z.x, z.y, z.alpha, z.beta, 1)) <= 1e-6


def test_zero_momentum_decomposition():
    rep = LS.decomposition_check(np.array([[0.2, -0.3, 0.0, 0.0]]))
    assert rep.excluded == 0 and rep.max_residual <= 1e-15


def test_decomposition_over_support(metric25):
    rep = LS.decomposition_check(LS.support_sample(metric25, 200, seed=1), metric25.profile.a)
    assert rep.excluded == 0
    assert rep.max_residual <= 1e-9


def test_small_cap_parameter_has_exclusions(metric5):
    # r2 at a = 5 exceeds the shadow limit of the inscribed ball
    assert metric5.r2 > LS.ball_shadow_radius_limit()
    rep = LS.decomposition_check(LS.support_sample(metric5, 400, seed=0))
    assert rep.excluded > 0


def test_support_sample_rays_cross_disc(metric25):
    Z = LS.support_sample(metric25, 50, seed=4)
    for z in Z:
        g = math.sqrt(1 - z[2] ** 2 - z[3] ** 2)
        d = np.array([z[2], z[3]]) * LS.TRANSIT_TIME / g
        t = np.clip(-(z[:2] @ d) / (d @ d), 0, 1) if d @ d > 0 else 0.0
        assert np.linalg.norm(z[:2] + t * d) < metric25.r2


@pytest.fixture(scope="module")
def sigma(metric25):
    return LS.build_sigma_eps(metric25, 1e-2)


def test_sigma_eps_equals_sigma0_away(sigma):
    chi = LS.phi1(FaceCovector(0.9, 0.0, 0.0, 0.05, -1))   # ray far from the disc
    assert np.abs(sigma(chi).as_array() - LS.dual_lens(chi).as_array()).max() <= 1e-12


def test_sigma_eps_symmetry_and_branches(metric25, sigma):
    for c in LS.chords_over_disc(metric25, 20, seed=5):
        assert np.abs((-sigma(-sigma(c))).as_array() - c.as_array()).max() <= 1e-7
        assert sigma.branch_check(c) <= 1e-6


def test_sigma_eps_defect(metric25, sigma):
    for c in LS.chords_over_disc(metric25, 3, seed=6):
        assert sigma.defect(c) <= 1e-6


def test_sigma_eps_converges_linearly(metric25):
    chords = LS.chords_over_disc(metric25, 30, seed=7)

    def dev(eps):
        S = LS.build_sigma_eps(metric25, eps)
        return max(np.abs(S(c).as_array() - LS.dual_lens(c).as_array()).max() for c in chords)

    d1, d2 = dev(1e-2), dev(1e-3)
    assert 0.7 <= math.log10(d1 / d2) <= 1.3


def test_suite_small(metric25):
    res = LS.lens_suite(metric25, 1e-2, n=40, n_sigma_defect=3)
    assert res["passed"], res
