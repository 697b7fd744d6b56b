import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mane_lab import DomainError, InputError, build_system, reference_orbit
from mane_lab.systems import (
    SystemSpec,
    open_plane_potential,
    psl2r_covector,
    psl2r_left_momenta,
    reference_segment,
    register_system,
    vertical_orbit_check,
)


def test_reference_constants(systems):
    h, p, f = systems["heisenberg"].reference, systems["psl2r"].reference, systems["flat"].reference
    assert (h.c_u, h.c_a) == (0.5, 0.5)
    assert (p.c_u, p.c_a) == (0.25, 0.5)
    assert p.barrier_diag == pytest.approx(math.pi)
    assert (f.c_u, f.barrier_diag) == (0.0, 0.0)


def test_unknown_kind():
    with pytest.raises(InputError):
        build_system("torus")
    with pytest.raises(InputError):
        build_system({"kind": "nope"})


def test_spec_roundtrip():
    s = SystemSpec.from_dict({"kind": "heisenberg", "params": {}})
    assert SystemSpec.from_dict(s.to_dict()) == s


def test_plugin_registration(systems):
    register_system("flat_copy", lambda params: systems["flat"])
    assert build_system("flat_copy") is systems["flat"]


@pytest.mark.parametrize(
    "name, k, T, A",
    [("heisenberg", 0.375, 4 * math.pi, math.pi), ("psl2r", 0.1875, 4 * math.pi, math.pi / 2),
     ("heisenberg", 0.48, 10 * math.pi, 1.6 * math.pi)],
)
def test_reference_orbit_closed_forms(systems, name, k, T, A):
    got_T, got_A = reference_orbit(systems[name], k)
    assert got_T == pytest.approx(T, rel=1e-14)
    assert got_A == pytest.approx(A, rel=1e-14)


@pytest.mark.parametrize("name, k", [("heisenberg", 0.5), ("heisenberg", 0.0), ("psl2r", 0.25), ("psl2r", -0.1)])
def test_reference_orbit_domain(systems, name, k):
    with pytest.raises(DomainError):
        reference_orbit(systems[name], k)


def test_reference_orbit_needs_family(systems):
    with pytest.raises(InputError):
        reference_orbit(systems["flat"], 0.1)


@pytest.mark.parametrize("name, c, A", [("heisenberg", 0.5, 2 * math.pi), ("psl2r", 0.25, math.pi)])
def test_action_at_critical_level_relation(systems, name, c, A):
    ref = systems[name].reference
    kmax = ref.k_max
    for k in np.linspace(0.02, 0.98, 20) * kmax:
        T, a = reference_orbit(systems[name], k)
        assert a + (c - k) * T == pytest.approx(A * (1 - math.pi / T), abs=1e-12)


def test_iterates_cost_more_than_prime_orbit():
    # n-fold iterate of the period-T/n circle versus the prime orbit of period T
    for T in np.linspace(4 * math.pi + 0.1, 400, 200):
        prime = 2 * math.pi * (1 - math.pi / T)
        for n in range(2, int(T / (2 * math.pi)) + 1):
            assert 2 * math.pi * n * (1 - n * math.pi / T) > prime


def test_open_plane_potential_smooth_and_nonnegative():
    r = np.linspace(0.0, 5.0, 5001)
    U, dU = open_plane_potential(r)
    assert np.all(U >= 0)
    assert np.all(U[r <= 1] == 2.0)
    assert np.allclose(U[r >= 2], 1 / r[r >= 2])
    # analytic slope against central differences
    h = 1e-6
    inner = r[(r > 0.01) & (r < 4.99)]
    fd = (open_plane_potential(inner + h)[0] - open_plane_potential(inner - h)[0]) / (2 * h)
    assert np.max(np.abs(fd - open_plane_potential(inner)[1])) < 1e-6
    # C^2 at the patch boundaries: one-sided second derivatives agree
    h = 1e-7
    for r0 in (1.0, 2.0):
        left = (open_plane_potential(r0)[1] - open_plane_potential(r0 - h)[1]) / h
        right = (open_plane_potential(r0 + h)[1] - open_plane_potential(r0)[1]) / h
        assert abs(open_plane_potential(r0 - h)[0] - open_plane_potential(r0 + h)[0]) < 1e-3
        assert abs(left - right) < 1e-4


def test_psl2r_left_momenta_roundtrip():
    x = np.array([0.4, 2.3, 1.1])
    p = psl2r_covector(x, 0.3, -0.4, 0.5)
    assert np.allclose(psl2r_left_momenta(x, p), [0.3, -0.4, 0.5], atol=1e-14)


@pytest.mark.parametrize("name, k", [("heisenberg", 0.375), ("psl2r", 0.1875)])
def test_reference_segment_is_closed_at_energy_k(systems, name, k):
    seg = reference_segment(systems[name], k, 500, max_step=0.01)
    z = seg.phase()
    assert np.max(np.abs(z[-1] - z[0])) < 1e-8
    assert np.allclose(seg.energy_log, k, atol=1e-10)


@pytest.mark.parametrize("x, duration", [((0.0, 0.0, 0.0), 1.0), ((1.0, 2.0, 3.0), 5.0)])
def test_vertical_orbits(systems, x, duration):
    res, act = vertical_orbit_check(systems["heisenberg"], np.array(x), duration)
    assert res < 1e-8
    assert abs(act) < 1e-10


def test_vertical_orbit_empty_and_wrong_system(systems):
    assert vertical_orbit_check(systems["heisenberg"], np.zeros(3), 0.0) == (0.0, 0.0)
    with pytest.raises(InputError):
        vertical_orbit_check(systems["psl2r"], np.array([0.0, 1.0, 0.0]), 1.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 10))
def test_vertical_orbit_property(a, b, c, duration):
    sys = build_system("heisenberg")
    res, act = vertical_orbit_check(sys, np.array([a, b, c]), duration, nodes=200)
    assert res < 1e-6 * max(1.0, abs(a))
    assert abs(act) < 1e-8
