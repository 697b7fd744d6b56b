"""Bracketing the critical value of the universal cover by the sign of loop actions.

For each period T the best closed-loop minimizer of A_L does not depend on
k, and A_{L+k} = A_L + k T.  One sweep of loop minimizations over the
T-grid therefore serves every bisection step.  A loop with A_{L+k} below
-epsilon certifies k < c_u; the absence of such a loop only suggests
k >= c_u, so the upper end of the bracket is heuristic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from scipy.optimize import brentq

from .core import InputError, LagrangianSystem, NumericalError, OptimizationError
from .measures import HolonomicMeasureSample, mean_energy
from .systems import reference_path
from .variational import DiscretePath, MinimizeConfig, MinimizeResult, minimize_closed_loop, path_action

__all__ = [
    "CriticalValueEstimate",
    "DEFAULT_T_GRID",
    "estimate_cu",
    "grid_epsilon",
    "loop_sweep",
    "measure_energy_gap",
]

DEFAULT_T_GRID: Tuple[float, ...] = tuple(2.0 * math.pi * 2 ** j for j in range(7))
# certification slack for systems without a closed-orbit family
EPSILON_FLOOR = 1e-6


@dataclass
class CriticalValueEstimate:
    lower: float
    upper: float
    witness_loops: List[Tuple[float, DiscretePath, float]] = field(default_factory=list)
    sweeps: List[dict] = field(default_factory=list)
    epsilon: float = 0.0
    conclusive: bool = True
    status: str = "ok"
    failures: Dict[float, str] = field(default_factory=dict)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, c: float) -> bool:
        return self.lower <= c <= self.upper

    def overlaps(self, other: "CriticalValueEstimate") -> bool:
        return max(self.lower, other.lower) <= min(self.upper, other.upper)

    def record(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "upper_is_heuristic": True,
            "width": self.width,
            "epsilon": self.epsilon,
            "conclusive": self.conclusive,
            "status": self.status,
            "witnesses": [{"k": k, "T": p.duration, "action": a} for k, p, a in self.witness_loops],
            "failures": {repr(T): msg for T, msg in self.failures.items()},
        }


def _k_for_period(sys: LagrangianSystem, T: float) -> Optional[float]:
    ref = sys.reference
    k_max = ref.k_max
    lo, hi = 1e-12 * k_max, k_max * (1 - 1e-12)
    if not ref.orbit_period(lo) < T < ref.orbit_period(hi):
        return None
    return brentq(lambda k: ref.orbit_period(k) - T, lo, hi, xtol=1e-15, rtol=1e-15)


def grid_epsilon(sys: LagrangianSystem, T_grid: Sequence[float], cfg: MinimizeConfig) -> float:
    """Twice the worst path_action error on reference orbits at the grid's periods.

    Each reference orbit of period T is sampled at the node count the loop
    minimizer uses for T and compared with its closed-form action.  Systems
    without a closed-orbit family get EPSILON_FLOOR.
    """
    ref = sys.reference
    if ref is None or ref.orbit_start is None or ref.k_max is None:
        return EPSILON_FLOOR
    worst = 0.0
    for T in T_grid:
        k = _k_for_period(sys, T)
        if k is None:
            continue
        path = reference_path(sys, k, cfg.nodes_for(T))
        worst = max(worst, abs(path_action(sys, path, k) - ref.orbit_action(k)))
    return max(EPSILON_FLOOR, 2.0 * worst)


def loop_sweep(sys: LagrangianSystem, T_grid: Sequence[float], cfg: MinimizeConfig):
    """Best closed loop per period; returns ({T: MinimizeResult}, {T: failure message})."""
    loops: Dict[float, MinimizeResult] = {}
    failures: Dict[float, str] = {}
    for T in sorted(set(float(t) for t in T_grid)):
        try:
            loops[T] = minimize_closed_loop(sys, T, cfg)
        except OptimizationError as exc:
            failures[T] = str(exc)
    return loops, failures


def estimate_cu(sys: LagrangianSystem, k_lo: float, k_hi: float, tol: float,
                T_grid: Sequence[float] = DEFAULT_T_GRID, cfg: MinimizeConfig = MinimizeConfig(),
                epsilon: Optional[float] = None) -> CriticalValueEstimate:
    """Bisect [k_lo, k_hi] on the existence of a loop with A_{L+k} < -epsilon.

    ``epsilon`` defaults to :func:`grid_epsilon`.  If k_lo has no witness, or
    k_hi has one, the estimate is returned with ``conclusive=False`` and the
    input bracket, never as a point value.
    """
    if not k_lo < k_hi:
        raise InputError("need k_lo < k_hi")
    if not tol > 0:
        raise InputError("tol must be positive")
    T_grid = [float(t) for t in T_grid]
    if not T_grid or min(T_grid) <= 0:
        raise InputError("T_grid must be a nonempty list of positive periods")
    ref = sys.reference
    if ref is not None and ref.c_u is not None and not k_lo <= ref.c_u <= k_hi:
        raise InputError(f"{sys.name}: bracket [{k_lo}, {k_hi}] excludes the reference value {ref.c_u}")
    eps = grid_epsilon(sys, T_grid, cfg) if epsilon is None else float(epsilon)

    loops, failures = loop_sweep(sys, T_grid, cfg)
    if not loops:
        raise NumericalError(f"{sys.name}: no period in the grid produced a converged loop")
    periods = sorted(loops)
    base_action = {T: loops[T].action for T in periods}
    sweeps: List[dict] = []

    def probe(k):
        best = None
        for T in periods:
            a = base_action[T] + k * T
            sweeps.append({"k": k, "T": T, "loop_action": a, "loop_energy": loops[T].energy,
                           "certified": bool(a < -eps)})
            if a < -eps and (best is None or a < best[1]):
                best = (T, a)
        return best

    est = CriticalValueEstimate(k_lo, k_hi, [], sweeps, eps, True, "ok", failures)
    w = probe(k_lo)
    if w is None:
        est.conclusive, est.status = False, "no witness at k_lo"
        return est
    est.witness_loops.append((k_lo, loops[w[0]].path, w[1]))
    if probe(k_hi) is not None:
        est.conclusive, est.status = False, "witness at k_hi"
        return est
    lo, hi = k_lo, k_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        w = probe(mid)
        if w is None:
            hi = mid
        else:
            lo = mid
            est.witness_loops.append((mid, loops[w[0]].path, w[1]))
    est.lower, est.upper = lo, hi
    return est


def measure_energy_gap(sys: LagrangianSystem, sample: HolonomicMeasureSample, c: float) -> float:
    """|integral of E dmu - c|."""
    return abs(mean_energy(sys, sample) - c)
