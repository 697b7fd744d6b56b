import numpy as np
import pytest
from hypothesis import given, strategies as st

from mane_lab import (
    CotangentState,
    InputError,
    NumericalError,
    TangentState,
    build_system,
    convexity_probe,
    energy,
    legendre_forward,
    legendre_inverse,
)
from mane_lab.core import fd_symplectic_gradient, sample_states
from mane_lab.systems import psl2r_covector

from conftest import ALL


def fd_dLdv(sys, x, v, step=1e-6):
    out = np.empty(sys.dimension)
    for i in range(sys.dimension):
        e = np.zeros(sys.dimension)
        e[i] = step
        out[i] = (sys.lagrangian(x, v + e) - sys.lagrangian(x, v - e)) / (2 * step)
    return out


def test_flat_forward_is_identity(systems):
    p = legendre_forward(systems["flat"], TangentState(np.zeros(2), np.array([1.0, 2.0]))).momentum
    assert np.allclose(p, [1.0, 2.0])


@pytest.mark.parametrize("v, p", [((1.0, 0.0, 0.0), (1.0, 0.0, 1.0)), ((0.0, 0.0, 0.0), (0.0, 0.0, 1.0))])
def test_heisenberg_forward_matches_finite_differences(systems, v, p):
    sys = systems["heisenberg"]
    x, v = np.zeros(3), np.array(v)
    got = legendre_forward(sys, TangentState(x, v)).momentum
    assert np.allclose(got, fd_dLdv(sys, x, v), atol=1e-8)
    assert np.allclose(got, p, atol=1e-12)


def test_inverse_examples(systems):
    v = legendre_inverse(systems["flat"], CotangentState(np.zeros(2), np.array([3.0, -1.0]))).velocity
    assert np.allclose(v, [3.0, -1.0])
    v = legendre_inverse(systems["heisenberg"], CotangentState(np.zeros(3), np.array([1.0, 0.0, 1.0]))).velocity
    assert np.allclose(v, [1.0, 0.0, 0.0], atol=1e-12)


def test_dimension_mismatch(systems):
    with pytest.raises(InputError):
        legendre_forward(systems["heisenberg"], TangentState(np.zeros(2), np.zeros(2)))
    with pytest.raises(InputError):
        legendre_inverse(systems["flat"], CotangentState(np.zeros(2), np.zeros(3)))


def test_psl2r_chart_rejects_lower_half_plane(systems):
    with pytest.raises(InputError):
        legendre_forward(systems["psl2r"], TangentState(np.array([0.0, -1.0, 0.0]), np.zeros(3)))


def test_inverse_fails_on_non_tonelli_input():
    # a concave fiber: Newton cannot find dL/dv = p for large p in 50 steps
    from dataclasses import replace

    sys = build_system("flat")
    bad = replace(sys, dLdv=lambda x, v: np.tanh(v), d2Ldv2=lambda x, v: np.diag(1 - np.tanh(v) ** 2))
    with pytest.raises(NumericalError):
        legendre_inverse(bad, CotangentState(np.zeros(2), np.array([2.0, 0.0])))


def test_energy_examples(systems, rng):
    for name in ALL:
        sys = systems[name]
        x, _ = sample_states(sys, rng, 1)
        assert energy(sys, TangentState(x[0], np.zeros(sys.dimension))) == pytest.approx(
            -float(sys.lagrangian(x[0], np.zeros(sys.dimension))), abs=1e-14
        )
    sys = systems["heisenberg"]
    assert energy(sys, TangentState(np.zeros(3), np.array([1.0, 0.0, 0.0]))) == pytest.approx(0.5, abs=1e-14)
    psl = systems["psl2r"]
    x = np.array([0.3, 1.7, -0.4])
    p = psl2r_covector(x, 0.3, 0.4, 0.5)
    v = legendre_inverse(psl, CotangentState(x, p)).velocity
    assert energy(psl, TangentState(x, v)) == pytest.approx(0.25, abs=1e-12)


@pytest.mark.parametrize("name", ALL)
def test_legendre_roundtrip_and_fenchel(systems, name):
    sys = systems[name]
    x, v = sample_states(sys, np.random.default_rng(7), 1000)
    p = sys.dLdv(x, v)
    fenchel = sys.hamiltonian(x, p) - (np.sum(p * v, axis=-1) - sys.lagrangian(x, v))
    assert np.max(np.abs(fenchel)) < 1e-9
    for xi, vi, pi in zip(x, v, p):
        t = legendre_inverse(sys, CotangentState(xi, pi))
        assert np.max(np.abs(t.velocity - vi)) < 1e-9
        assert np.max(np.abs(legendre_forward(sys, t).momentum - pi)) < 1e-9


@pytest.mark.parametrize("name", ALL)
@given(seed=st.integers(0, 2 ** 32 - 1), scale=st.floats(0.1, 5.0))
def test_convexity_and_vector_field(systems, name, seed, scale):
    sys = systems[name]
    x, v = sample_states(sys, np.random.default_rng(seed), 4, vscale=scale)
    for xi, vi in zip(x, v):
        assert convexity_probe(sys, xi, vi) > 1e-6
        pi = sys.dLdv(xi, vi)
        xf = sys.ham_vector_field(xi, pi)
        assert np.max(np.abs(xf - fd_symplectic_gradient(sys, xi, pi))) < 1e-6 * max(1.0, np.max(np.abs(xf)))
        # dH/dp inverts the Legendre map
        assert np.allclose(sys.dHdp(xi, pi), vi, atol=1e-9 * max(1.0, np.max(np.abs(vi))))
