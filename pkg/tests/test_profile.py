import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbgtorus.errors import NormalizationFailed
from dbgtorus.profile import (CapParams, build_profile, curvature_of_profile, flat_profile,
                              identity_residual, marker_radii, normalize_C, build_bumps, verify_profile, Bumps)


def test_marker_radii_closed_form():
    l0, l1, l2 = marker_radii(5.0)
    assert l0 == pytest.approx(1 / math.sqrt(50))
    assert l1 == pytest.approx(1 / math.sqrt(25))
    assert l2 == pytest.approx(1 / (2 * math.sqrt(5)))


def test_core_polynomial(profile5):
    a = 5.0
    ls = np.linspace(0, profile5.l1, 50)
    poly = ls - 5 * a * ls**3 + 10 * a * a * ls**5
    assert np.abs(profile5.rho(ls) - poly).max() < 1e-15


def test_origin_conditions(profile5):
    d = profile5.derivatives(0.0)
    assert d[0] == 0 and d[1] == 1 and d[2] == 0


def test_critical_parallels(profile5):
    assert abs(profile5.drho(profile5.l0)) <= 1e-10
    assert abs(profile5.drho(profile5.l1)) <= 1e-10


def test_slope_sign_pattern(profile5):
    # rho' dips below zero strictly between the two parallels and nowhere else
    ls = np.linspace(0, 1.5 * profile5.l2, 6001)
    dr = profile5.drho(ls)
    inside = (ls > profile5.l0 + 1e-9) & (ls < profile5.l1 - 1e-9)
    assert np.all(dr[inside] < 0)
    assert np.all(dr[~inside] >= -1e-10)
    assert profile5.drho(math.sqrt(3 / (20 * 5.0))) == pytest.approx(-1 / 8, rel=1e-12)


def test_linear_after_l2(profile5):
    ls = np.linspace(profile5.l2, 2 * profile5.l2, 20)
    slope = profile5.drho(ls)
    assert np.ptp(slope) < 1e-12
    assert np.abs(profile5.d2rho(ls)).max() < 1e-12


def test_curvature_signs(profile5):
    assert curvature_of_profile(profile5, 0.0) == pytest.approx(30 * 5.0)
    assert np.all(profile5.curvature(np.linspace(0, profile5.l0, 100)) > 0)
    assert profile5.curvature(profile5.l1) < 0


def test_certificate_passes(profile5):
    rep = verify_profile(profile5)
    assert rep.passed, rep.summary()


def test_identity_residual(profile5):
    assert identity_residual(profile5) <= 1e-9


def test_flat_profile_is_identity():
    p = flat_profile()
    ls = np.linspace(0, 1, 7)
    assert np.allclose(p.rho(ls), ls) and np.allclose(p.drho(ls), 1.0)


def test_bad_params():
    with pytest.raises(ValueError):
        CapParams(a=-1.0)
    with pytest.raises(ValueError):
        CapParams(grid_n=10)


def test_normalisation_needs_a_bump():
    b = build_bumps(CapParams(a=5.0))
    assert normalize_C(b, 5.0) > 0
    with pytest.raises(NormalizationFailed):
        normalize_C(Bumps(b.l1, b.l2, lam2_scale=0.0), 5.0)


@settings(max_examples=8, deadline=None)
@given(st.floats(min_value=2.0, max_value=400.0))
def test_identity_for_any_a(a):
    assert identity_residual(build_profile(CapParams(a=a)), 200) <= 1e-9


@settings(max_examples=8, deadline=None)
@given(st.floats(min_value=2.0, max_value=200.0))
def test_scaling_symmetry(a):
    # rho_a(l) = rho_1(sqrt(a) l) / sqrt(a): derivatives scale by powers of sqrt(a)
    p, q = build_profile(CapParams(a=a)), build_profile(CapParams(a=1.0))
    s = math.sqrt(a)
    ls = np.linspace(0, 1.2 * p.l2, 40)
    dp, dq = p.derivatives(ls), q.derivatives(s * ls)
    assert np.allclose(dp[:, 0], dq[:, 0] / s, rtol=1e-9, atol=1e-13)
    assert np.allclose(dp[:, 1], dq[:, 1], rtol=1e-9, atol=1e-12)
