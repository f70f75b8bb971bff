import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbgtorus.errors import EnergyOutOfRange, OutsideCap
from dbgtorus.flow import (CotangentState, HamiltonianSpec, clairaut_value, flow_map, hamiltonian_value,
                           integrate, maupertuis_check, unit_covector)


def test_spec_validation(metric5):
    with pytest.raises(ValueError):
        HamiltonianSpec("Nope")
    with pytest.raises(ValueError):
        HamiltonianSpec("ConformalKinetic")
    with pytest.raises(ValueError):
        HamiltonianSpec("PerturbedKinetic", metric5, -1.0)


def test_state_wraps_and_keeps_lift():
    s = CotangentState([2.5, -1.5], [0.1, 0.2])
    assert np.allclose(s.q, [0.5, 0.5])
    assert np.allclose(s.lift, [2.5, 0.5 - 2.0])


def test_flat_closed_form():
    spec = HamiltonianSpec("Flat")
    st0 = CotangentState([0.1, 0.2], [0.3, -0.7])
    end = flow_map(spec, st0, 7.0, 1e-2)
    assert np.abs(end.lift - (st0.lift + 7.0 * st0.p)).max() <= 1e-12
    assert np.array_equal(end.p, st0.p)


def test_relativistic_eps0_closed_form(metric5):
    spec = HamiltonianSpec("Relativistic", metric5, 0.0)
    st0 = CotangentState([0.3, 0.4], [0.5, 0.2])
    end = flow_map(spec, st0, 3.0)
    v = st0.p / math.sqrt(1 - st0.p @ st0.p)
    assert np.abs(end.lift - (st0.lift + 3.0 * v)).max() <= 1e-10 * 3.0


def test_relativistic_energy_range(metric5):
    with pytest.raises(EnergyOutOfRange):
        hamiltonian_value(HamiltonianSpec("Relativistic", metric5, 0.0), CotangentState([0.5, 0.5], [0.8, 0.8]))


def test_energy_and_clairaut_conservation(metric5):
    tr = integrate(HamiltonianSpec("ConformalKinetic", metric5), unit_covector(metric5, [0.7, 0.1], 2.3),
                   100.0, sample_dt=1.0)
    assert tr.max_energy_drift <= 1e-8
    assert tr.passage_clairaut_drift.size > 0
    assert tr.passage_clairaut_drift.max() <= 1e-7


def test_unit_covector_level(metric5):
    s = unit_covector(metric5, [0.1, 0.2], 0.4)
    assert hamiltonian_value(HamiltonianSpec("ConformalKinetic", metric5), s) == pytest.approx(0.5, rel=1e-14)


def test_clairaut_outside_cap(metric5):
    with pytest.raises(OutsideCap):
        clairaut_value(metric5, CotangentState([0.9, 0.0], [0.0, 1.0]))


def test_events_recorded(metric5):
    tr = integrate(HamiltonianSpec("ConformalKinetic", metric5), unit_covector(metric5, [0.7, 0.05], math.pi),
                   5.0, sample_dt=0.1)
    kinds = [e.kind for e in tr.events]
    assert "CapEnter" in kinds and "ReachInner" in kinds


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_short_reversibility(metric5, x, y, th):
    spec = HamiltonianSpec("ConformalKinetic", metric5)
    s0 = unit_covector(metric5, [x, y], th)
    s1 = flow_map(spec, s0, 2.0)
    back = flow_map(spec, s1, -2.0)
    assert np.abs(back.lift - s0.lift).max() <= 1e-8
    assert np.abs(back.p - s0.p).max() <= 1e-8


@settings(max_examples=10, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_momentum_reversal_symmetry(metric5, x, y, th):
    # H is even in p, so reversing momenta retraces the orbit
    spec = HamiltonianSpec("PerturbedKinetic", metric5, 0.05)
    s0 = CotangentState([x, y], [0.3 * math.cos(th), 0.3 * math.sin(th)])
    s1 = flow_map(spec, s0, 1.5)
    s2 = flow_map(spec, CotangentState(s1.lift, -s1.p), 1.5)
    assert np.abs(s2.lift - s0.lift).max() <= 1e-8


def test_tangent_map_is_symplectic(metric5):
    spec = HamiltonianSpec("ConformalKinetic", metric5)
    _, W = flow_map(spec, unit_covector(metric5, [0.3, 0.1], 3.0), 1.0, tangent=True)
    Om = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    assert np.abs(W.T @ Om @ W - Om).max() <= 1e-9 * max(1.0, np.abs(W).max() ** 2)


def test_maupertuis(metric5):
    rep = maupertuis_check(metric5, 0.01, [([0.3, 0.1], 2.5), ([0.05, -0.2], 1.0)], h=1e-3)
    assert rep.max_distance <= 1e-6
