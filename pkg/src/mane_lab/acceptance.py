"""Executable acceptance criteria.

Each criterion is a function of a shared :class:`Context` returning a
:class:`CriterionResult`.  Criteria that touch several model systems only
evaluate the systems selected in the context, so ``verify-paper`` can be run
per system.  Expensive intermediate results (c_u estimates, horocycle
samples) are cached on the context and shared between criteria.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .barrier import (
    aubry_flag,
    barrier_profile,
    preorbit_energy_defect,
    random_preorbit,
    shift_identity_residual,
)
from .core import CotangentState, ManeLabError, NumericalError, legendre_forward, legendre_inverse, sample_states
from .critical import estimate_cu
from .flow import IntegratorConfig, _propagate
from .measures import HolonomicMeasureSample, horocycle_measure, mean_energy, stationarity_residual, graph_union_witness
from .symmaps import CotangentLift, Composition, FiberTranslation, action_identity_residual, bump_function, cu_invariance_report
from .systems import build_system, reference_segment, vertical_orbit_check
from .variational import MinimizeConfig, finite_time_potential, minimize_closed_loop

__all__ = ["Context", "CriterionResult", "CRITERIA", "ALL_SYSTEMS", "run_criteria", "criteria_for"]

ALL_SYSTEMS = ("flat", "heisenberg", "psl2r", "open_plane")

# T grid used for the c_u brackets: the default geometric grid plus one more doubling
CU_T_GRID = tuple(2.0 * math.pi * 2 ** j for j in range(8))
CU_BRACKETS = {"heisenberg": (0.3, 0.7, 0.5), "psl2r": (0.1, 0.4, 0.25)}
CU_TOL = 0.02
BARRIER_T_GRID = (10.0, 20.0, 40.0, 80.0)
HOROCYCLE_LENGTH = 50.0
HOROCYCLE_POINTS = 8


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    values: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f}s)"

    def record(self) -> dict:
        return {"criterion": self.number, "title": self.title, "passed": self.passed,
                "detail": self.detail, "values": self.values}


@dataclass
class Context:
    seed: int = 0
    threads: int = 1
    systems: Sequence[str] = ALL_SYSTEMS
    cache: Dict[str, object] = field(default_factory=dict)

    def minimize_cfg(self, **kw) -> MinimizeConfig:
        return MinimizeConfig(seed=self.seed, threads=self.threads, **kw)

    def rng(self, *key) -> np.random.Generator:
        return np.random.default_rng([self.seed, *key])

    def wants(self, name: str) -> bool:
        return name in self.systems

    def system(self, name: str):
        key = "system:" + name
        if key not in self.cache:
            self.cache[key] = build_system(name)
        return self.cache[key]

    def cu(self, name: str):
        key = "cu:" + name
        if key not in self.cache:
            lo, hi, _ = CU_BRACKETS[name]
            self.cache[key] = estimate_cu(self.system(name), lo, hi, CU_TOL, CU_T_GRID, self.minimize_cfg())
        return self.cache[key]

    def horocycles(self) -> List[HolonomicMeasureSample]:
        if "horocycles" not in self.cache:
            sys = self.system("psl2r")
            out = []
            for j in range(HOROCYCLE_POINTS):
                phi = 2 * math.pi * j / HOROCYCLE_POINTS
                pa, pb = 0.5 * math.cos(phi), 0.5 * math.sin(phi)
                # exact points on the circle where the trig values are exact
                if j % 2 == 0:
                    pa, pb = [(0.5, 0.0), (0.0, 0.5), (-0.5, 0.0), (0.0, -0.5)][j // 2]
                out.append(horocycle_measure(sys, pa, pb, HOROCYCLE_LENGTH))
            self.cache["horocycles"] = out
        return self.cache["horocycles"]


def _rel(a, b):
    return abs(a - b) / abs(b)


def _none_selected(n, title):
    return CriterionResult(n, title, True, "skipped: no selected system is involved", {"skipped": True})


# ---------------------------------------------------------------- closed-orbit families

def _orbit_family(ctx, n, title, name, ks):
    if not ctx.wants(name):
        return _none_selected(n, title)
    sys = ctx.system(name)
    ref = sys.reference
    rows, ok = [], True
    for k in ks:
        T = ref.orbit_period(k)
        res = minimize_closed_loop(sys, T, ctx.minimize_cfg(), k=k)
        want = ref.orbit_action(k)
        ea, ee = _rel(res.action, want), _rel(res.energy, k)
        good = ea <= 0.02 and ee <= 0.02
        ok &= good
        rows.append({"k": k, "T": T, "action": res.action, "expected": want, "energy": res.energy,
                     "action_rel_err": ea, "energy_rel_err": ee, "passed": good})
    worst_a = max(r["action_rel_err"] for r in rows)
    worst_e = max(r["energy_rel_err"] for r in rows)
    return CriterionResult(n, title, ok, f"max rel err action {worst_a:.2e}, energy {worst_e:.2e} (tol 2e-2)",
                           {"system": name, "rows": rows})


def criterion_1(ctx):
    return _orbit_family(ctx, 1, "heisenberg closed-orbit family", "heisenberg", (0.1, 0.2, 0.3, 0.375, 0.45))


def criterion_2(ctx):
    return _orbit_family(ctx, 2, "psl2r closed-orbit family", "psl2r", (0.05, 0.125, 0.1875, 0.22))


# ---------------------------------------------------------------- c_u brackets

def criterion_3(ctx):
    title = "c_u brackets"
    names = [s for s in ("heisenberg", "psl2r") if ctx.wants(s)]
    if not names:
        return _none_selected(3, title)
    ok, parts, vals = True, [], {}
    for name in names:
        t0 = time.perf_counter()
        est = ctx.cu(name)
        target = CU_BRACKETS[name][2]
        good = est.conclusive and est.width <= 0.04 + 1e-12 and est.contains(target)
        ok &= good
        parts.append(f"{name} [{est.lower:.5g}, {est.upper:.5g}] ∋ {target}: {good}")
        vals[name] = dict(est.record(), target=target, seconds=time.perf_counter() - t0)
    return CriterionResult(3, title, ok, "; ".join(parts), vals)


# ---------------------------------------------------------------- barriers

DIAGONAL_POINTS = {"heisenberg": (0.0, 0.0, 0.0), "psl2r": (0.0, 1.0, 0.0)}


def criterion_4(ctx):
    title = "diagonal barrier asymptotes"
    names = [s for s in ("heisenberg", "psl2r") if ctx.wants(s)]
    if not names:
        return _none_selected(4, title)
    ok, parts, vals = True, [], {}
    for name in names:
        sys = ctx.system(name)
        x = np.array(DIAGONAL_POINTS[name])
        prof = barrier_profile(sys, x, x, sys.reference.c_u, BARRIER_T_GRID, ctx.minimize_cfg())
        a, b = prof.limit_fit["a"], prof.limit_fit["b"]
        a_want = 2 * math.pi if name == "heisenberg" else math.pi
        good = _rel(a, a_want) <= 0.05 and not aubry_flag(prof)
        if name == "heisenberg":
            good &= _rel(b, 2 * math.pi ** 2) <= 0.05
        ok &= good
        parts.append(f"{name} a={a:.5g} (want {a_want:.5g}), b={b:.5g}, flagged={aubry_flag(prof)}")
        vals[name] = {"T": prof.T_values, "hT_plus_cT": prof.h_T_plus_cT, "fit": prof.limit_fit,
                      "liminf_proxy": prof.liminf_proxy, "grid_slack": prof.grid_slack,
                      "aubry_flag": aubry_flag(prof)}
    return CriterionResult(4, title, ok, "; ".join(parts), vals)


def criterion_5(ctx):
    title = "heisenberg vertical orbit"
    if not ctx.wants("heisenberg"):
        return _none_selected(5, title)
    res, act = vertical_orbit_check(ctx.system("heisenberg"), np.array([0.3, -0.2, 0.1]), 5.0)
    ok = res < 1e-6 and abs(act) < 1e-8
    return CriterionResult(5, title, ok, f"el_residual {res:.2e}, A_(L+1/2) {act:.2e}",
                           {"el_residual": res, "action": act})


# ---------------------------------------------------------------- horocycles

def criterion_6(ctx):
    title = "horocycle constants"
    if not ctx.wants("psl2r"):
        return _none_selected(6, title)
    sys = ctx.system("psl2r")
    worst = {"energy": 0.0, "p_gamma": 0.0, "f": 0.0, "action": 0.0}
    for s in ctx.horocycles():
        seg = s.orbit
        worst["energy"] = max(worst["energy"], float(np.max(np.abs(seg.energy_log - 0.25))))
        worst["p_gamma"] = max(worst["p_gamma"], float(np.max(np.abs(seg.integral_logs["p_gamma"] - 0.5))))
        worst["f"] = max(worst["f"], float(np.max(np.abs(seg.integral_logs["f"] + 0.5))))
        worst["action"] = max(worst["action"], abs(s.integrate(lambda x, v: sys.lagrangian(x, v) + 0.25)))
    ok = worst["energy"] <= 1e-7 and worst["p_gamma"] <= 1e-8 and worst["f"] <= 1e-7 and worst["action"] <= 1e-5
    detail = ", ".join(f"{k} dev {v:.1e}" for k, v in worst.items())
    return CriterionResult(6, title, ok, detail, worst)


def criterion_7(ctx):
    title = "non-graph witness"
    if not ctx.wants("psl2r"):
        return _none_selected(7, title)
    hs = ctx.horocycles()
    a, b = hs[0], hs[2]  # (1/2, 0) and (0, 1/2)
    w = graph_union_witness(a, b, 1e-2)
    ok = w is not None and w.gap > 0.1 and w.distance < 1e-2
    if w is None:
        return CriterionResult(7, title, False, "no witness found", {})
    return CriterionResult(7, title, ok, f"gap {w.gap:.3g} at distance {w.distance:.3g}",
                           {"gap": w.gap, "distance": w.distance, "base": w.base.tolist()})


# ---------------------------------------------------------------- symplectic maps

CATALOG_MAPS = {
    "heisenberg": lambda: _catalog(np.zeros(3)),
    "psl2r": lambda: _catalog(np.array([0.0, 1.0, 0.0])),
}


def _catalog(center):
    bump = FiberTranslation(bump_function(center, 0.1, 1.0), 3)
    # shears that preserve the half-space y > 0
    lift = CotangentLift(np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.0], [0.0, 0.1, 1.0]]), np.array([0.3, 0.0, -0.2]))
    return {"bump": bump, "lift": lift, "composition": Composition(bump, lift)}


ORBIT_KS = {"heisenberg": (0.1, 0.2, 0.3, 0.375, 0.45), "psl2r": (0.05, 0.1, 0.125, 0.1875, 0.22)}


def criterion_8(ctx):
    title = "symplectic action identity"
    names = [s for s in ("heisenberg", "psl2r") if ctx.wants(s)]
    if not names:
        return _none_selected(8, title)
    ok, vals, parts = True, {}, []
    for name in names:
        sys = ctx.system(name)
        maps = CATALOG_MAPS[name]()
        worst = 0.0
        for k in ORBIT_KS[name]:
            seg = reference_segment(sys, k, 1000, max_step=0.005)
            for psi in maps.values():
                worst = max(worst, action_identity_residual(sys, psi, seg, k))
        # brackets before and after a map
        psi = maps["bump"] if name == "heisenberg" else maps["lift"]
        lo, hi, target = CU_BRACKETS[name]
        est0, est1 = cu_invariance_report(sys, psi, (lo, hi), CU_TOL, ctx.minimize_cfg(), CU_T_GRID,
                                          original=ctx.cu(name))
        overlap = est0.overlaps(est1) and est1.conclusive
        good = worst < 1e-4 and overlap
        ok &= good
        parts.append(f"{name} max residual {worst:.1e}, brackets [{est0.lower:.4g}, {est0.upper:.4g}] / "
                     f"[{est1.lower:.4g}, {est1.upper:.4g}] overlap={overlap}")
        vals[name] = {"max_residual": worst, "original": est0.record(), "mapped": est1.record()}
    return CriterionResult(8, title, ok, "; ".join(parts), vals)


# ---------------------------------------------------------------- pre-orbits and measures

def criterion_9(ctx):
    title = "pre-orbit identities"
    names = [s for s in ALL_SYSTEMS if ctx.wants(s)]
    if not names:
        return _none_selected(9, title)
    rng = ctx.rng(9)
    worst_shift, worst_ratio, violations = 0.0, 0.0, 0
    for i in range(50):
        sys = ctx.system(names[i % len(names)])
        y = random_preorbit(sys, rng)
        t = float(rng.uniform(0.0, y.segments[0].duration))
        k = float(rng.uniform(-0.5, 0.5))
        worst_shift = max(worst_shift, shift_identity_residual(sys, y, t, k, IntegratorConfig(step=5e-3)))
        try:
            d = preorbit_energy_defect(sys, y)
        except NumericalError:
            violations += 1
            continue
        if d.defect > d.bound:
            violations += 1
        worst_ratio = max(worst_ratio, d.defect / d.bound if d.bound > 0 else 0.0)
    ok = worst_shift < 1e-6 and violations == 0
    return CriterionResult(9, title, ok,
                           f"max shift residual {worst_shift:.1e}, max defect/bound {worst_ratio:.3f}, "
                           f"violations {violations}/50",
                           {"max_shift_residual": worst_shift, "max_defect_ratio": worst_ratio,
                            "violations": violations})


def random_sample(sys, rng, atoms=None) -> HolonomicMeasureSample:
    """Random atomic measure with Dirichlet weights on sampled states."""
    atoms = atoms or int(rng.integers(1, 40))
    x, v = sample_states(sys, rng, atoms)
    w = rng.dirichlet(np.ones(atoms))
    w /= math.fsum(w)
    return HolonomicMeasureSample(x, v, w, source={"kind": "random"})


def criterion_10(ctx):
    title = "stationarity identity"
    names = [s for s in ALL_SYSTEMS if ctx.wants(s)]
    if not names:
        return _none_selected(10, title)
    worst = {}
    for j, name in enumerate(names):
        sys = ctx.system(name)
        rng = ctx.rng(10, ALL_SYSTEMS.index(name))
        err = 0.0
        for _ in range(100):
            fd, ident = stationarity_residual(sys, random_sample(sys, rng))
            err = max(err, abs(fd - ident))
        worst[name] = err
    ok = max(worst.values()) < 1e-6
    parts = [f"{k} {v:.1e}" for k, v in worst.items()]
    vals = {"max_residual": worst}
    if ctx.wants("psl2r"):
        e = max(abs(mean_energy(ctx.system("psl2r"), s) - 0.25) for s in ctx.horocycles())
        ok &= e <= 1e-6
        parts.append(f"horocycle |mean E - 1/4| {e:.1e}")
        vals["horocycle_energy_dev"] = e
    return CriterionResult(10, title, ok, ", ".join(parts), vals)


def criterion_11(ctx):
    title = "open-plane barrier growth"
    if not ctx.wants("open_plane"):
        return _none_selected(11, title)
    sys = ctx.system("open_plane")
    x = np.zeros(2)
    Ts = (10.0, 80.0, 640.0)
    h = [finite_time_potential(sys, x, x, T, ctx.minimize_cfg()) for T in Ts]
    ok = h[0] < h[1] < h[2] and h[2] > 2 * h[0]
    return CriterionResult(11, title, ok, "h^T(0,0) at T=10,80,640: " + ", ".join(f"{v:.5g}" for v in h),
                           {"T": list(Ts), "hT": h})


def _hygiene(sys, rng):
    n = sys.dimension
    x, v = sample_states(sys, rng, 1000)
    p = sys.dLdv(x, v)
    rt = 0.0
    for xi, vi, pi in zip(x, v, p):
        back = legendre_inverse(sys, CotangentState(xi, pi)).velocity
        rt = max(rt, float(np.max(np.abs(back - vi))))
        fwd = legendre_forward(sys, legendre_inverse(sys, CotangentState(xi, pi))).momentum
        rt = max(rt, float(np.max(np.abs(fwd - pi))))
    fenchel = float(np.max(np.abs(sys.hamiltonian(x, p) - (np.sum(p * v, axis=-1) - sys.lagrangian(x, v)))))
    xs, vs = sample_states(sys, rng, 10)
    z0 = np.concatenate([xs, sys.dLdv(xs, vs)], axis=1)
    _, zs = _propagate(sys, z0, 100.0, IntegratorConfig(step=1e-3))
    xb, pb = zs[..., :n], zs[..., n:]
    H = sys.hamiltonian(xb, pb)
    drift = float(np.max(np.abs(H - H[0]) / np.maximum(1.0, np.abs(H[0]))))
    fi = 0.0
    for f in sys.first_integrals.values():
        F = np.asarray(f(xb, pb), float)
        fi = max(fi, float(np.max(np.abs(F - F[0]) / np.maximum(1.0, np.abs(F[0])))))
    return {"legendre_roundtrip": rt, "fenchel": fenchel, "energy_drift": drift, "integral_drift": fi}


def criterion_12(ctx):
    title = "core numeric hygiene"
    names = [s for s in ALL_SYSTEMS if ctx.wants(s)]
    vals, ok, parts = {}, True, []
    for name in names:
        r = _hygiene(ctx.system(name), ctx.rng(12, ALL_SYSTEMS.index(name)))
        good = (r["legendre_roundtrip"] < 1e-9 and r["fenchel"] < 1e-9
                and r["energy_drift"] < 1e-6 and r["integral_drift"] < 1e-6)
        ok &= good
        vals[name] = r
        parts.append(f"{name} " + "/".join(f"{v:.0e}" for v in r.values()))
    return CriterionResult(12, title, ok, "roundtrip/fenchel/energy/integrals: " + ", ".join(parts), vals)


CRITERIA: Dict[int, Callable[[Context], CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5, 6: criterion_6,
    7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11, 12: criterion_12,
}

_INVOLVES = {
    1: {"heisenberg"}, 2: {"psl2r"}, 3: {"heisenberg", "psl2r"}, 4: {"heisenberg", "psl2r"},
    5: {"heisenberg"}, 6: {"psl2r"}, 7: {"psl2r"}, 8: {"heisenberg", "psl2r"}, 9: set(ALL_SYSTEMS),
    10: set(ALL_SYSTEMS), 11: {"open_plane"}, 12: set(ALL_SYSTEMS),
}


def criteria_for(systems: Sequence[str]) -> List[int]:
    """Criterion numbers that involve at least one of ``systems``."""
    return [n for n in CRITERIA if _INVOLVES[n] & set(systems)]


def run_one(n: int, ctx: Context) -> CriterionResult:
    fn = CRITERIA[n]
    t0 = time.perf_counter()
    try:
        res = fn(ctx)
    except ManeLabError as exc:
        res = CriterionResult(n, fn.__name__, False, f"error: {type(exc).__name__}: {exc}", {})
    res.seconds = time.perf_counter() - t0
    return res


def run_criteria(numbers: Optional[Sequence[int]] = None, ctx: Optional[Context] = None,
                 echo: Optional[Callable[[str], None]] = None) -> List[CriterionResult]:
    ctx = ctx or Context()
    numbers = list(numbers) if numbers is not None else criteria_for(ctx.systems)
    out = []
    for n in numbers:
        res = run_one(n, ctx)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
