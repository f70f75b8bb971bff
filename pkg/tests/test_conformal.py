import math

import numpy as np
import pytest

from dbgtorus.conformal import (build_metric, dbg_certificate, gaussian_curvature_xy, geodesic_parallels,
                                largest_certified_delta, r2_upper_bound)
from dbgtorus.profile import CapParams, build_profile, curvature_of_profile, flat_profile

# r(l) = l exp(int_0^l (1/rho - 1/s) ds) by adaptive quadrature on rho alone,
# independent of the tabulated solver (a = 5 and a = 25).
ORACLE = {
    5.0: (0.18915269247054586, 0.3848332726118118, 0.5117827578741972, 0.17806134013552458),
    25.0: (0.08459165569825067, 0.17210267151274394, 0.2288762072638041, 0.17806134013552238),
}


@pytest.mark.parametrize("a", [5.0, 25.0])
def test_radii_match_quadrature_oracle(a, metric5, metric25):
    m = metric5 if a == 5.0 else metric25
    r0, r1, r2, ginf = ORACLE[a]
    assert m.r0 == pytest.approx(r0, abs=1e-10)
    assert m.r1 == pytest.approx(r1, abs=1e-10)
    assert m.r2 == pytest.approx(r2, abs=1e-10)
    assert m.g_inf == pytest.approx(ginf, abs=1e-10)


def test_g_at_origin_and_tail(metric5):
    assert metric5.g(0.0) == pytest.approx(1.0, abs=1e-8)
    assert np.all(metric5.g(np.linspace(metric5.r2, 1.0, 20)) == metric5.g_inf)


def test_g_decreasing(metric5):
    # g meets g_inf flatly at r2, so fine differences there sit at rounding level
    fine = np.diff(metric5.g(np.linspace(0, metric5.r2, 3001)))
    assert fine.max() <= 1e-15
    assert np.all(np.diff(metric5.g(np.linspace(0, metric5.r2, 33))) < 0)


def test_round_trip(metric5):
    rs = np.linspace(0, 0.99, 500)
    assert np.abs(metric5.r_of_l(metric5.l_of_r(rs)) - rs).max() <= 1e-10


def test_rho_equals_r_g(metric5):
    rs = np.linspace(0, metric5.r2, 500)
    lhs = metric5.profile.rho(metric5.l_of_r(rs))
    assert np.abs(lhs - rs * metric5.g(rs)).max() <= 1e-8


def test_curvature_cross_check(metric5):
    rs = np.linspace(1e-3, metric5.r2 * 0.999, 400)
    Kp = curvature_of_profile(metric5.profile, metric5.l_of_r(rs))
    assert np.abs(Kp - metric5.curvature(rs)).max() <= 1e-6


def test_curvature_extremes(metric5):
    # K(0) = 30 a from the polynomial core; the collar minimum is strongly negative
    assert metric5.curvature(0.0) == pytest.approx(150.0, rel=1e-8)
    assert metric5.curvature(np.linspace(metric5.r1, metric5.r2, 4000)).min() < -1000


def test_curvature_is_periodic(metric5):
    assert gaussian_curvature_xy(metric5, (0.1, 0.05)) == gaussian_curvature_xy(metric5, (2.1, -1.95))


def test_parallels(metric5):
    roots = geodesic_parallels(metric5)
    assert roots == pytest.approx([metric5.r0, metric5.r1], abs=1e-8)


def test_certificate(metric5):
    rep = dbg_certificate(metric5)
    assert rep.passed, rep.summary()


def test_r2_upper_bound():
    for a in (5.0, 25.0, 100.0, 400.0):
        assert ORACLE.get(a, (0, 0, 0))[2] <= r2_upper_bound(a)


def test_r2_scales_like_inverse_sqrt_a():
    assert ORACLE[25.0][2] == pytest.approx(ORACLE[5.0][2] / math.sqrt(5.0), rel=1e-12)


def test_shifted_certificate(metric5):
    d = largest_certified_delta(metric5)
    assert d > 0
    assert dbg_certificate(metric5.with_delta(d)).passed
    assert dbg_certificate(metric5.with_delta(-d)).passed


def test_flat_metric_is_flat():
    m = build_metric(flat_profile())
    assert m.flat
    assert np.allclose(m.g(np.linspace(0, 1, 11)), 1.0)
    assert np.allclose(m.curvature(np.linspace(0.01, 0.9, 11)), 0.0)
