import math

import numpy as np
import pytest

from dbgtorus import jacobi as J
from dbgtorus.errors import ChordTooShallow
from dbgtorus.flow import unit_covector


@pytest.fixture(scope="module")
def chord(metric5):
    return J.build_chord(metric5, 0.3 * metric5.r0)


def test_sine_on_unit_sphere():
    tr = J.propagate(J.ConstantCurvature(1.0, 3.0), J.TransverseState(0.0, 1.0))
    assert np.abs(tr.J[:, 0] - np.sin(tr.t)).max() <= 1e-10


def test_flat_linear_growth():
    tr = J.propagate(J.ConstantCurvature(0.0, 2.0), J.TransverseState(0.0, 1.0))
    assert np.abs(tr.J[:, 0] - tr.t).max() <= 1e-12
    assert J.riccati_events(tr) == [0.0]


def test_cosine_blowup_at_half_pi():
    tr = J.propagate(J.ConstantCurvature(1.0, 3.0), J.TransverseState(1.0, 0.0))
    assert J.riccati_events(tr) == pytest.approx([math.pi / 2], abs=1e-10)


def test_trivial_state_rejected():
    with pytest.raises(ValueError):
        J.TransverseState(0.0, 0.0)


def test_chord_geometry(chord):
    assert 0 < chord.T2 < chord.T1
    assert chord.K_symmetry_residual() <= 1e-8


def test_property_A(chord):
    rep = J.check_A(chord)
    assert rep.max_residual <= 1e-6
    assert rep.extra_zeros == 0


def test_property_B(chord):
    tau = J.conjugate_time(chord)
    assert tau is not None and 0 < tau < chord.T2


def test_cone_preserved_and_monotone(chord):
    u0 = J.cone_transit(chord, 0.0)
    assert u0 >= 0.0
    assert J.cone_transit(chord, 0.5) >= u0


def test_wronskian_and_riccati(chord):
    tr = J.propagate(chord, [J.TransverseState(0.0, 1.0), J.TransverseState(1.0, 0.0)])
    w = tr.wronskian()
    assert np.abs(w - w[0]).max() <= 1e-8
    assert J.riccati_residual(tr, 0) <= 1e-6


def test_central_chord_parity(metric5):
    tr = J.propagate(J.build_chord(metric5, 0.0), J.TransverseState(0.0, 1.0))
    assert np.abs(tr.J[:, 0] + tr.J[::-1, 0]).max() <= 1e-7
    assert np.abs(tr.Jp[:, 0] - tr.Jp[::-1, 0]).max() <= 1e-7


def test_killing_field_matches_J_S(metric5, chord):
    tr = J.propagate(chord, J.TransverseState(0.0, 1.0))
    assert np.abs(J.killing_jacobi(metric5, tr.q, tr.p, chord.r_min) - tr.J[:, 0]).max() <= 1e-7


def test_shallow_chord(metric5):
    sh = J.build_chord(metric5, 0.5 * (metric5.r1 + metric5.r2))
    assert not sh.deep
    assert J.cone_transit(sh, 0.0) >= -1e-8
    with pytest.raises(ChordTooShallow):
        J.check_A(sh)


def test_strict_advance_dbg_vs_flat(metric5):
    st = unit_covector(metric5, [0.7, 0.1], 2.3)
    dbg = J.strict_advance(metric5, st, visits=3)
    assert dbg.margin > 0
    assert all(mu > 1 for mu in dbg.expansion)
    flat = J.strict_advance(metric5, st, visits=3, flat=True)
    assert abs(flat.margin) < dbg.margin


@pytest.mark.parametrize("frac", [0.05, 0.3, 0.5])
def test_rmin_inverse(metric5, frac):
    r = frac * metric5.r0
    assert J.rmin_for_clairaut(metric5, float(J.rG(metric5, r))) == pytest.approx(r, abs=1e-12)


def test_rmin_outer_branch(metric5):
    # a Clairaut value above r1 G(r1) turns the incoming chord in the annulus
    c = float(J.rG(metric5, 0.9 * metric5.r0))
    r = J.rmin_for_clairaut(metric5, c)
    assert metric5.r1 <= r < metric5.r2
    assert float(J.rG(metric5, r)) == pytest.approx(c, rel=1e-12)


def test_transfer_matches_trace(chord):
    T1, M = J.chord_transfer(chord)
    assert T1 == pytest.approx(chord.T1, abs=1e-9)
    assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-10)
    for u in (0.0, 0.7):
        assert J.cone_transit(chord, u) == pytest.approx(J.cone_transit(chord, u, method="trace"), abs=1e-7)


def test_near_critical_chord_exits_on_cone_boundary(metric5):
    # Clairaut value just below r1 G(r1): property (A) puts the exit exactly on u = 0
    c = 0.995 * float(J.rG(metric5, metric5.r1))
    assert abs(J.cone_transit(J.chord_from_clairaut(metric5, c), 0.0)) <= 1e-10
