import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mane_lab import (
    DiscretePath,
    HolonomicMeasureSample,
    InputError,
    graph_union_witness,
    horocycle_measure,
    rescale_measure,
    sample_from_path,
    stationarity_residual,
)
from mane_lab.acceptance import random_sample
from mane_lab.core import energy_array
from mane_lab.measures import mean_energy
from mane_lab.systems import reference_path

from conftest import ALL


def _circle(n=10000):
    phi = np.linspace(0, 2 * math.pi, n + 1)
    return DiscretePath(np.stack([np.cos(phi), np.sin(phi)], 1), 2 * math.pi, closed=True)


def _kinetic(x, v):
    return 0.5 * np.sum(v * v, axis=-1)


@pytest.fixture(scope="module")
def horocycles(systems):
    psl = systems["psl2r"]
    return horocycle_measure(psl, 0.5, 0.0, 50.0), horocycle_measure(psl, 0.0, 0.5, 50.0)


# ---------------------------------------------------------------- path samples

def test_constant_path_sample(systems):
    heis = systems["heisenberg"]
    x = np.array([0.1, 0.2, -0.3])
    s = sample_from_path(heis, DiscretePath(np.repeat(x[None], 6, 0), 2.0))
    assert np.all(s.bases == x) and np.all(s.velocities == 0)
    assert s.integrate(heis.lagrangian) == pytest.approx(float(heis.lagrangian(x, np.zeros(3))), abs=1e-15)
    assert math.fsum(s.weights) == pytest.approx(1.0, abs=1e-12)


def test_heisenberg_orbit_average_lagrangian(systems):
    heis = systems["heisenberg"]
    s = sample_from_path(heis, reference_path(heis, 3 / 8, 2000))
    assert s.integrate(heis.lagrangian) == pytest.approx(-1 / 8, abs=1e-3)


def test_flat_circle_kinetic_average(systems):
    s = sample_from_path(systems["flat"], _circle())
    assert s.integrate(_kinetic) == pytest.approx(0.5, abs=1e-6)


def test_sample_reproduces_path_action(systems):
    from mane_lab import path_action
    heis = systems["heisenberg"]
    path = reference_path(heis, 0.3, 500)
    s = sample_from_path(heis, path)
    assert s.integrate(heis.lagrangian) * path.duration == pytest.approx(path_action(heis, path), abs=1e-12)


# ---------------------------------------------------------------- rescaling

def test_rescale_examples(systems):
    flat = systems["flat"]
    s = sample_from_path(flat, _circle(2000))
    same = rescale_measure(s, 1.0)
    assert np.array_equal(same.velocities, s.velocities) and np.array_equal(same.weights, s.weights)
    doubled = rescale_measure(s, 2.0)
    assert doubled.integrate(_kinetic) == pytest.approx(4 * s.integrate(_kinetic), rel=1e-14)

    heis = systems["heisenberg"]
    h = sample_from_path(heis, reference_path(heis, 0.2, 400))
    zero = rescale_measure(h, 0.0)
    assert np.all(zero.velocities == 0)
    lhs = mean_energy(heis, zero)
    rhs = -h.integrate(lambda x, v: heis.lagrangian(x, np.zeros_like(v)))
    assert lhs == pytest.approx(rhs, abs=1e-14)

    with pytest.raises(InputError):
        rescale_measure(s, math.inf)


@given(st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False))
def test_rescale_composition_is_exact(systems, a, b):
    s = sample_from_path(systems["heisenberg"], reference_path(systems["heisenberg"], 0.2, 50))
    twice = rescale_measure(rescale_measure(s, a), b)
    once = rescale_measure(s, a * b)
    assert np.array_equal(twice.velocities, once.velocities)
    assert np.array_equal(twice.weights, s.weights)


def test_weight_validation():
    b = np.zeros((2, 2))
    with pytest.raises(InputError):
        HolonomicMeasureSample(b, b, np.array([0.5, 0.4]))
    with pytest.raises(InputError):
        HolonomicMeasureSample(b, b, np.array([1.5, -0.5]))
    with pytest.raises(InputError):
        HolonomicMeasureSample(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))


# ---------------------------------------------------------------- stationarity

@pytest.mark.parametrize("name", ALL)
def test_stationarity_identity_on_random_samples(systems, name):
    rng = np.random.default_rng(2024)
    for _ in range(20):
        s = random_sample(systems[name], rng, int(rng.integers(1, 40)))
        assert math.fsum(s.weights) == pytest.approx(1.0, abs=1e-12)
        fd, ident = stationarity_residual(systems[name], s)
        assert abs(fd - ident) < 1e-6
        # the identity value is the integral of E + L
        el = s.integrate(lambda x, v: energy_array(systems[name], x, v) + systems[name].lagrangian(x, v))
        assert ident == pytest.approx(el, abs=1e-12)


def test_stationarity_on_near_critical_orbit(systems):
    heis = systems["heisenberg"]
    s = sample_from_path(heis, reference_path(heis, 0.48, 2000))
    fd, ident = stationarity_residual(heis, s)
    assert abs(fd - ident) < 1e-6
    assert ident > 0.1


# ---------------------------------------------------------------- horocycles

def test_horocycle_constants(systems, horocycles):
    a, b = horocycles
    assert np.max(np.abs(a.orbit.energy_log - 0.25)) < 1e-8
    assert np.max(np.abs(b.orbit.integral_logs["f"] + 0.5)) < 1e-7
    assert np.max(np.abs(a.orbit.integral_logs["p_gamma"] - 0.5)) < 1e-8
    psl = systems["psl2r"]
    for m in horocycles:
        assert m.integrate(psl.lagrangian) + 0.25 == pytest.approx(0.0, abs=1e-6)
        assert mean_energy(psl, m) == pytest.approx(0.25, abs=1e-6)
        fd, ident = stationarity_residual(psl, m)
        assert abs(fd) < 1e-6 and abs(fd - ident) < 1e-6


def test_horocycle_validation(systems):
    with pytest.raises(InputError):
        horocycle_measure(systems["psl2r"], 0.5, 0.1, 10.0)
    with pytest.raises(InputError):
        horocycle_measure(systems["heisenberg"], 0.5, 0.0, 10.0)
    with pytest.raises(InputError):
        horocycle_measure(systems["psl2r"], 0.5, 0.0, 0.0)


# ---------------------------------------------------------------- graph witness

def test_witness_examples(systems, horocycles):
    a, b = horocycles
    assert graph_union_witness(a, a, 1e-2) is None
    w = graph_union_witness(a, b, 1e-2)
    assert w is not None and w.distance < 1e-2 and w.gap > 0.1
    assert np.linalg.norm(w.vA - w.vB) == pytest.approx(w.gap)

    flat = systems["flat"]
    p = sample_from_path(flat, DiscretePath(np.zeros((5, 2)), 1.0))
    q = sample_from_path(flat, DiscretePath(np.ones((5, 2)), 1.0))
    assert graph_union_witness(p, q, 1e-2) is None
    with pytest.raises(InputError):
        graph_union_witness(p, q, 0.0)


def test_witness_is_first_in_cell_order(systems, horocycles):
    a, b = horocycles
    w1 = graph_union_witness(a, b, 1e-2)
    w2 = graph_union_witness(a, b, 1e-2)
    assert np.array_equal(w1.base, w2.base) and w1.gap == w2.gap
