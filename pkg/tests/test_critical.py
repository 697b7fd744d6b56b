import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mane_lab import (
    InputError,
    MinimizeConfig,
    estimate_cu,
    horocycle_measure,
    measure_energy_gap,
    sample_from_path,
)
from mane_lab.critical import grid_epsilon, loop_sweep
from mane_lab.measures import HolonomicMeasureSample
from mane_lab.systems import reference_path

CFG = MinimizeConfig(starts=3)
SHORT_GRID = (2 * math.pi, 4 * math.pi, 8 * math.pi)


def test_flat_bracket_contains_zero(systems):
    est = estimate_cu(systems["flat"], -0.1, 0.2, 0.01, SHORT_GRID, CFG)
    assert est.conclusive and est.status == "ok"
    assert est.contains(0.0)
    assert est.width <= 0.01
    assert est.lower <= est.upper
    for k, path, a in est.witness_loops:
        assert a < 0 and k <= est.upper


def test_witnesses_are_negative(systems):
    est = estimate_cu(systems["heisenberg"], 0.0, 0.7, 0.05, SHORT_GRID, CFG)
    assert est.witness_loops
    for k, path, a in est.witness_loops:
        assert a < -est.epsilon
    rows = [s for s in est.sweeps if s["certified"]]
    assert all(s["loop_action"] < -est.epsilon for s in rows)


def test_grid_permutation_invariance(systems):
    sys = systems["heisenberg"]
    a = estimate_cu(sys, 0.0, 0.7, 0.05, SHORT_GRID, CFG)
    b = estimate_cu(sys, 0.0, 0.7, 0.05, SHORT_GRID[::-1], CFG)
    c = estimate_cu(sys, 0.0, 0.7, 0.05, (SHORT_GRID[1], SHORT_GRID[2], SHORT_GRID[0]), CFG)
    assert a.conclusive
    assert (a.lower, a.upper) == (b.lower, b.upper) == (c.lower, c.upper)
    assert a.epsilon == b.epsilon == c.epsilon


@pytest.fixture(scope="module")
def heis_loops(systems):
    loops, failures = loop_sweep(systems["heisenberg"], SHORT_GRID, CFG)
    assert not failures
    return loops


@given(st.floats(-1.0, 1.0), st.floats(0.0, 1.0))
def test_monotonicity_in_k(heis_loops, k1, dk):
    k2 = k1 + dk
    for T, res in heis_loops.items():
        a1, a2 = res.action + k1 * T, res.action + k2 * T
        assert a1 <= a2
        if a2 < 0:
            assert a1 < 0


def test_bracket_must_contain_reference(systems):
    with pytest.raises(InputError):
        estimate_cu(systems["heisenberg"], 0.6, 0.9, 0.02, SHORT_GRID, CFG)
    with pytest.raises(InputError):
        estimate_cu(systems["flat"], 0.2, 0.1, 0.02, SHORT_GRID, CFG)
    with pytest.raises(InputError):
        estimate_cu(systems["flat"], -0.1, 0.1, 0.0, SHORT_GRID, CFG)
    with pytest.raises(InputError):
        estimate_cu(systems["flat"], -0.1, 0.1, 0.01, [], CFG)


def test_inconclusive_results_keep_input_bracket(systems):
    flat = systems["flat"]
    est = estimate_cu(flat, -0.1, 0.2, 0.01, SHORT_GRID, CFG, epsilon=1e3)
    assert not est.conclusive and est.status == "no witness at k_lo"
    assert (est.lower, est.upper) == (-0.1, 0.2)
    # without reference data a bracket entirely below the true value is allowed
    bare = dataclasses.replace(flat, reference=None)
    est = estimate_cu(bare, -0.3, -0.2, 0.01, SHORT_GRID, CFG)
    assert not est.conclusive and est.status == "witness at k_hi"
    assert (est.lower, est.upper) == (-0.3, -0.2)
    assert est.record()["upper_is_heuristic"]


def test_grid_epsilon(systems):
    assert grid_epsilon(systems["flat"], SHORT_GRID, CFG) == pytest.approx(1e-6)
    eps = grid_epsilon(systems["heisenberg"], SHORT_GRID, CFG)
    assert 1e-6 <= eps < 1e-2


def test_energy_gap_examples(systems):
    flat = systems["flat"]
    point = HolonomicMeasureSample(np.array([[0.3, -1.0]]), np.zeros((1, 2)), np.array([1.0]))
    assert measure_energy_gap(flat, point, 0.0) == 0.0

    heis = systems["heisenberg"]
    sample = sample_from_path(heis, reference_path(heis, 0.48, 2000))
    assert measure_energy_gap(heis, sample, 0.5) == pytest.approx(0.02, abs=1e-3)

    horo = horocycle_measure(systems["psl2r"], 0.5, 0.0, 50.0)
    assert measure_energy_gap(systems["psl2r"], horo, 0.25) == pytest.approx(0.0, abs=1e-8)
