"""Peierls-barrier sweeps, Aubry indicators and pre-orbit machinery.

The barrier is a liminf in T that cannot be certified numerically.  Profiles
report the minimum of h^T + cT over the tail half of the T grid and a least
squares fit of a - b/T; neither is claimed to be the true limit.

A pre-orbit is a chain of Hamiltonian flow segments with small jumps between
consecutive segments.  Phase-space barriers are only bounded above, by
families of pre-orbits that shadow fixed-endpoint minimizers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    ChartExitError,
    CotangentState,
    InputError,
    LagrangianSystem,
    NumericalError,
    OptimizationError,
    sample_states,
)
from .flow import (
    IntegratorConfig,
    OrbitSegment,
    _propagate,
    flow_map,
    orbit_action,
    segment_from_arrays,
)
from .variational import (
    DiscretePath,
    MinimizeConfig,
    minimize_fixed_endpoints,
    path_action,
)

__all__ = [
    "BarrierProfile",
    "barrier_profile",
    "aubry_indicator",
    "aubry_flag",
    "PreOrbit",
    "EnergyDefect",
    "preorbit_action",
    "preorbit_energy_defect",
    "shift_identity_residual",
    "FamilyConfig",
    "PhaseBarrierFamily",
    "phase_barrier_family",
    "phase_barrier_upper",
    "node_momenta",
    "random_preorbit",
]


# ---------------------------------------------------------------- profiles

@dataclass
class BarrierProfile:
    x0: np.ndarray
    x1: np.ndarray
    c: float
    T_values: List[float]
    h_T: List[float]
    h_T_plus_cT: List[float]
    liminf_proxy: float
    limit_fit: Optional[Dict[str, float]] = None
    grid_slack: float = 0.0
    failures: Dict[float, str] = field(default_factory=dict)

    @property
    def tail(self) -> List[float]:
        """The documented liminf window: entries in the last half of the grid."""
        return self.T_values[len(self.T_values) // 2:]

    def strictly_increasing(self) -> bool:
        v = self.h_T_plus_cT
        return all(b > a for a, b in zip(v, v[1:]))

    def rows(self):
        return [(T, h, hc) for T, h, hc in zip(self.T_values, self.h_T, self.h_T_plus_cT)]


def _fit(T, y):
    T = np.asarray(T, float)
    A = np.stack([np.ones_like(T), -1.0 / T], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.asarray(y, float), rcond=None)
    resid = np.asarray(y) - A @ coef
    return {"a": float(coef[0]), "b": float(coef[1]), "rms": float(np.sqrt(np.mean(resid ** 2)))}


def barrier_profile(sys: LagrangianSystem, x0, x1, c: float, T_grid: Sequence[float],
                    cfg: MinimizeConfig = MinimizeConfig()) -> BarrierProfile:
    """h^T(x0, x1) + cT over an increasing T grid of at least four periods.

    Failed periods are recorded and skipped.  ``grid_slack`` is the largest
    change of a tail minimizer's action when its grid is refined twofold by
    linear interpolation, floored at cfg.grad_tol.
    """
    T_grid = [float(t) for t in T_grid]
    if len(T_grid) < 4 or any(b <= a for a, b in zip(T_grid, T_grid[1:])) or T_grid[0] <= 0:
        raise InputError("T_grid must be increasing, positive, with at least 4 entries")
    x0 = sys.check_point(x0)
    x1 = sys.check_point(x1)
    tail_from = T_grid[len(T_grid) // 2]
    Ts, hs, hcs, failures = [], [], [], {}
    slack = cfg.grad_tol
    for T in T_grid:
        try:
            res = minimize_fixed_endpoints(sys, x0, x1, T, cfg)
        except OptimizationError as exc:
            failures[T] = str(exc)
            continue
        Ts.append(T)
        hs.append(res.action)
        hcs.append(res.action + c * T)
        if T >= tail_from:
            fine = res.path.resample(2 * res.path.m)
            slack = max(slack, abs(path_action(sys, fine) - res.action))
    tail_vals = [v for T, v in zip(Ts, hcs) if T >= tail_from]
    proxy = min(tail_vals) if tail_vals else math.inf
    fit = _fit(Ts, hcs) if len(Ts) >= 2 else None
    return BarrierProfile(x0, x1, float(c), Ts, hs, hcs, proxy, fit, slack, failures)


def aubry_indicator(profile: BarrierProfile) -> float:
    """The profile's liminf proxy; see :func:`aubry_flag` for the decision."""
    return profile.liminf_proxy


def aubry_flag(profile: BarrierProfile) -> bool:
    """True when the proxy is within 3x the profile's grid slack of zero."""
    return profile.liminf_proxy <= 3.0 * profile.grid_slack


# ---------------------------------------------------------------- pre-orbits

def _phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


@dataclass(frozen=True)
class PreOrbit:
    segments: tuple
    jumps: tuple
    total_T: float
    delta: float

    @classmethod
    def from_segments(cls, segments: Sequence[OrbitSegment]) -> "PreOrbit":
        segments = tuple(segments)
        if not segments:
            raise InputError("a pre-orbit needs at least one segment")
        jumps = tuple(
            _phase_distance(a.phase()[-1], b.phase()[0]) for a, b in zip(segments, segments[1:])
        )
        return cls(segments, jumps, float(sum(s.duration for s in segments)), math.fsum(jumps))

    def concatenate(self, other: "PreOrbit") -> "PreOrbit":
        return PreOrbit.from_segments(self.segments + other.segments)

    @property
    def first(self) -> CotangentState:
        return self.segments[0].first

    @property
    def last(self) -> CotangentState:
        return self.segments[-1].last


def random_preorbit(sys: LagrangianSystem, rng: np.random.Generator, segments: int = 3,
                    duration=(0.5, 2.0), jump: float = 1e-3, vscale: float = 0.5,
                    cfg: IntegratorConfig = IntegratorConfig(step=5e-3), tries: int = 20) -> PreOrbit:
    """A chain of flow segments from a random start with random phase jumps of size <= ``jump``.

    Segments that leave the chart are redrawn, up to ``tries`` times per segment.
    """
    n = sys.dimension
    x, v = sample_states(sys, rng, 1, vscale)
    z = np.concatenate([x[0], sys.dLdv(x[0], v[0])])
    segs = []
    for _ in range(segments):
        for _ in range(tries):
            d = rng.normal(size=2 * n)
            start = z if not segs else z + rng.uniform(0, jump) * d / np.linalg.norm(d)
            if not sys.in_chart(start[:n]):
                continue
            T = float(rng.uniform(*duration))
            try:
                t, zs = _propagate(sys, start, T, cfg)
            except ChartExitError:
                continue
            if not np.all(sys.in_chart(zs[:, :n])) or not np.all(np.isfinite(zs)):
                continue
            break
        else:
            raise NumericalError(f"{sys.name}: could not draw an in-chart segment")
        t0 = segs[-1].times[-1] if segs else 0.0
        segs.append(segment_from_arrays(sys, t + t0, zs[:, :n], zs[:, n:]))
        z = zs[-1]
    return PreOrbit.from_segments(segs)


def preorbit_action(sys: LagrangianSystem, y: PreOrbit, k: float) -> float:
    """Sum over segments of the phase-space action of lambda - H + k; jumps cost nothing."""
    return float(sum(orbit_action(sys, s, k) for s in y.segments))


class EnergyDefect(NamedTuple):
    defect: float
    bound: float


def _grad_norm_H(sys, x, p):
    return np.sqrt(np.sum(sys.dHdx(x, p) ** 2, axis=-1) + np.sum(sys.dHdp(x, p) ** 2, axis=-1))


def preorbit_energy_defect(sys: LagrangianSystem, y: PreOrbit, samples_per_jump: int = 21) -> EnergyDefect:
    """|H(end) - H(start)| and the bound C_lip * delta.

    C_lip is the largest |grad H| over the segment states and points sampled
    on the straight phase lines across each jump.  Raises NumericalError if
    the defect exceeds the bound plus the summed per-segment energy drift.
    """
    n = sys.dimension
    pts = [s.phase() for s in y.segments]
    s_line = np.linspace(0.0, 1.0, samples_per_jump)[:, None]
    for a, b in zip(y.segments, y.segments[1:]):
        za, zb = a.phase()[-1], b.phase()[0]
        pts.append((1 - s_line) * za + s_line * zb)
    z = np.concatenate(pts)
    c_lip = float(np.max(_grad_norm_H(sys, z[:, :n], z[:, n:])))
    e0 = float(y.segments[0].energy_log[0])
    e1 = float(y.segments[-1].energy_log[-1])
    defect = abs(e1 - e0)
    bound = c_lip * y.delta
    drift = sum(abs(float(s.energy_log[-1] - s.energy_log[0])) for s in y.segments)
    if defect > bound + drift + 1e-12 * max(1.0, abs(e0)):
        raise NumericalError(f"energy defect {defect:.3e} exceeds C_lip*delta {bound:.3e} + drift {drift:.3e}")
    return EnergyDefect(defect, bound)


def _split_segment(sys, seg: OrbitSegment, t: float, cfg: IntegratorConfig):
    """(head, tail) of a segment cut at time t after its start."""
    t_abs = seg.times[0] + t
    z = seg.phase()
    i = int(np.searchsorted(seg.times, t_abs, side="right") - 1)
    n = sys.dimension
    if seg.times[i] == t_abs:
        head = slice(0, i + 1)
        return (
            segment_from_arrays(sys, seg.times[head], seg.bases[head], seg.momenta[head]),
            segment_from_arrays(sys, seg.times[i:], seg.bases[i:], seg.momenta[i:]),
        )
    zt = flow_map(sys, z[i], t_abs - seg.times[i], cfg)
    ht = np.append(seg.times[: i + 1], t_abs)
    hz = np.vstack([z[: i + 1], zt])
    tt = np.insert(seg.times[i + 1:], 0, t_abs)
    tz = np.vstack([zt, z[i + 1:]])
    return (
        segment_from_arrays(sys, ht, hz[:, :n], hz[:, n:]),
        segment_from_arrays(sys, tt, tz[:, :n], tz[:, n:]),
    )


def shift_identity_residual(sys: LagrangianSystem, y: PreOrbit, t: float, k: float,
                            cfg: IntegratorConfig = IntegratorConfig()) -> float:
    """|A(y) - A(y shifted by t) - action of the initial arc [0, t]|.

    The shifted pre-orbit starts at the flow image of y's first state after
    time t; an off-grid cut point is reached by one integrator step.
    """
    first = y.segments[0]
    if t == 0:
        return 0.0
    if not 0 < t < first.duration:
        raise InputError("shift time must lie in [0, first segment duration)")
    head, tail = _split_segment(sys, first, t, cfg)
    shifted = PreOrbit.from_segments((tail,) + tuple(y.segments[1:]))
    return abs(preorbit_action(sys, y, k) - preorbit_action(sys, shifted, k) - orbit_action(sys, head, k))


# ---------------------------------------------------------------- restricted families

@dataclass(frozen=True)
class FamilyConfig:
    durations: tuple = (10.0, 20.0, 40.0, 80.0)
    jump_cap: float = 1e-2
    # member i must respect jump_cap * cap_decay**i
    cap_decay: float = 0.8
    segment_duration: float = 1.0
    min_segment_duration: float = 1.0 / 64
    free_endpoints: bool = True
    energy_tol: float = 1e-6
    minimize: MinimizeConfig = MinimizeConfig()
    integrator: IntegratorConfig = IntegratorConfig(step=1e-2)

    def __post_init__(self):
        if len(self.durations) < 1 or any(d <= 0 for d in self.durations):
            raise InputError("family durations must be positive")
        if not (self.jump_cap > 0 and 0 < self.cap_decay <= 1 and self.segment_duration > 0):
            raise InputError("invalid jump cap schedule")


def node_momenta(sys: LagrangianSystem, path: DiscretePath) -> np.ndarray:
    """Discrete Legendre momenta at every node.

    Node i < m uses -dS_i/dx_i of its forward cell; node m uses dS_{m-1}/dx_m.
    At a discrete stationary point the two one-sided values agree at interior nodes.
    """
    x, h = path.nodes, path.h
    v = path.velocities()
    xa, xb = x[:-1], x[1:]
    A = 0.5 * (sys.dLdv(xa, v) + sys.dLdv(xb, v))
    p = np.empty_like(x)
    p[:-1] = A - 0.5 * h * sys.dLdx(xa, v)
    p[-1] = A[-1] + 0.5 * h * sys.dLdx(xb[-1], v[-1])
    return p


def _shadow_chain(sys, path: DiscretePath, stride: int, icfg: IntegratorConfig):
    """Flow segments restarted from the Legendre lift every ``stride`` nodes."""
    n = sys.dimension
    m = path.m
    P = node_momenta(sys, path)
    starts = list(range(0, m, stride))
    ends = [min(s + stride, m) for s in starts]
    h = path.h
    # equal-length pieces are integrated as one batch; a short final piece separately
    groups: Dict[int, List[int]] = {}
    for j, (a, b) in enumerate(zip(starts, ends)):
        groups.setdefault(b - a, []).append(j)
    segs: List[Optional[OrbitSegment]] = [None] * len(starts)
    for length, idx in groups.items():
        z0 = np.stack([np.concatenate([path.nodes[starts[j]], P[starts[j]]]) for j in idx])
        dur = length * h
        sub = max(1, math.ceil(dur / icfg.step - 1e-9))
        t, zs = _propagate(sys, z0, dur, IntegratorConfig(dur / sub, icfg.scheme, icfg.max_energy_drift))
        for col, j in enumerate(idx):
            zz = zs[:, col, :]
            segs[j] = segment_from_arrays(sys, starts[j] * h + t, zz[:, :n], zz[:, n:])
    end = segment_from_arrays(sys, [path.duration], path.nodes[-1:], P[-1:])
    return segs + [end]


@dataclass
class PhaseBarrierFamily:
    value: float
    k: float
    members: List[dict] = field(default_factory=list)
    preorbits: List[Optional[PreOrbit]] = field(default_factory=list)
    diagnostics: List[str] = field(default_factory=list)

    def tail_value(self, actions: Sequence[float]) -> float:
        """Tail-window minimum of per-member values (inf for inadmissible members)."""
        vals = list(actions)
        tail = vals[len(vals) // 2:]
        finite = [a for a in tail if math.isfinite(a)]
        return min(finite) if finite else math.inf


def phase_barrier_family(sys: LagrangianSystem, X0: CotangentState, X1: CotangentState, k: float,
                         fcfg: FamilyConfig = FamilyConfig()) -> PhaseBarrierFamily:
    """Restricted family of pre-orbits over the base points of X0 and X1.

    Member i shadows the fixed-endpoint minimizer of duration durations[i]:
    flow segments restart from the minimizer's discrete Legendre lift, the
    restart interval being halved until every jump is below the member's cap.
    With ``free_endpoints`` the end covectors are those of the lift (the
    family then bounds the minimum over covectors in the two fibres);
    otherwise zero-length segments at X0 and X1 are attached and count as
    jumps.  The value is the minimum action over the tail half of the members.
    """
    x0 = sys.check_point(X0.base)
    x1 = sys.check_point(X1.base)
    H0 = float(sys.hamiltonian(x0, X0.momentum))
    H1 = float(sys.hamiltonian(x1, X1.momentum))
    fam = PhaseBarrierFamily(math.inf, float(k))
    if abs(H0 - H1) > fcfg.energy_tol * max(1.0, abs(H0)):
        fam.diagnostics.append(f"energy mismatch: H(X0)={H0:.9g}, H(X1)={H1:.9g}")
        return fam
    actions = []
    for i, T in enumerate(fcfg.durations):
        cap = fcfg.jump_cap * fcfg.cap_decay ** i
        rec = {"T": float(T), "cap": cap, "admissible": False}
        try:
            res = minimize_fixed_endpoints(sys, x0, x1, float(T), fcfg.minimize)
        except OptimizationError as exc:
            rec["error"] = str(exc)
            fam.members.append(rec)
            fam.preorbits.append(None)
            actions.append(math.inf)
            continue
        path = res.path
        tau = fcfg.segment_duration
        y = None
        while tau >= fcfg.min_segment_duration:
            stride = max(1, int(round(tau / path.h)))
            segs = _shadow_chain(sys, path, stride, fcfg.integrator)
            if not fcfg.free_endpoints:
                segs = [segment_from_arrays(sys, [0.0], x0[None], X0.momentum[None])] + segs
                segs.append(segment_from_arrays(sys, [path.duration], x1[None], X1.momentum[None]))
            cand = PreOrbit.from_segments(segs)
            if max(cand.jumps, default=0.0) <= cap:
                y = cand
                break
            if stride == 1:
                break
            tau /= 2.0
        rec.update({"lagrangian_action": res.action + k * T, "segment_duration": tau})
        if y is None:
            rec["reason"] = "jump cap not met"
            fam.members.append(rec)
            fam.preorbits.append(None)
            actions.append(math.inf)
            continue
        a = preorbit_action(sys, y, k)
        rec.update({"admissible": True, "action": a, "delta": y.delta,
                    "max_jump": max(y.jumps, default=0.0), "segments": len(y.segments)})
        fam.members.append(rec)
        fam.preorbits.append(y)
        actions.append(a)
    fam.value = fam.tail_value(actions)
    if not math.isfinite(fam.value):
        fam.diagnostics.append("no admissible member in the tail window")
    return fam


def phase_barrier_upper(sys: LagrangianSystem, X0: CotangentState, X1: CotangentState, k: float,
                        fcfg: FamilyConfig = FamilyConfig()) -> float:
    """Upper bound for the phase-space barrier of H - k; +inf if no member is admissible."""
    return phase_barrier_family(sys, X0, X1, k, fcfg).value
