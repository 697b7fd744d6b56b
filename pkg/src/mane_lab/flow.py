"""Fixed-step integration of the Hamiltonian flow and orbit-level diagnostics."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .core import (
    ChartExitError,
    CotangentState,
    InputError,
    LagrangianSystem,
    NumericalError,
)

__all__ = [
    "IntegratorConfig",
    "OrbitSegment",
    "EnergyDriftWarning",
    "integrate",
    "flow_map",
    "orbit_action",
    "el_residual",
    "segment_from_arrays",
]

SCHEMES = ("rk4", "midpoint")


class EnergyDriftWarning(UserWarning):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    scheme: str = "rk4"
    max_energy_drift: float = 1e-6

    def __post_init__(self):
        if not self.step > 0:
            raise InputError("integrator step must be positive")
        if self.scheme not in SCHEMES:
            raise InputError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")


@dataclass(frozen=True)
class OrbitSegment:
    """A sampled phase-space trajectory. Arrays are (N,), (N, n), (N, n)."""

    times: np.ndarray
    bases: np.ndarray
    momenta: np.ndarray
    energy_log: np.ndarray
    integral_logs: Dict[str, np.ndarray] = field(default_factory=dict)
    drift: float = 0.0
    drift_exceeded: bool = False

    def __len__(self):
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def states(self) -> List[CotangentState]:
        return [CotangentState(b, p) for b, p in zip(self.bases, self.momenta)]

    @property
    def first(self) -> CotangentState:
        return CotangentState(self.bases[0].copy(), self.momenta[0].copy())

    @property
    def last(self) -> CotangentState:
        return CotangentState(self.bases[-1].copy(), self.momenta[-1].copy())

    def phase(self) -> np.ndarray:
        return np.concatenate([self.bases, self.momenta], axis=1)


def segment_from_arrays(sys: LagrangianSystem, times, bases, momenta, max_drift=np.inf):
    """Build an OrbitSegment and fill in its energy and first-integral logs."""
    times = np.asarray(times, float)
    bases = np.asarray(bases, float)
    momenta = np.asarray(momenta, float)
    if len(times) > 1 and not np.all(np.diff(times) > 0):
        raise InputError("segment times must be strictly increasing")
    if not (len(times) == len(bases) == len(momenta)):
        raise InputError("segment arrays must have equal length")
    H = sys.hamiltonian(bases, momenta)
    logs = {name: np.asarray(f(bases, momenta), float) for name, f in sys.first_integrals.items()}
    drift = abs(H[-1] - H[0]) / max(1.0, abs(H[0]))
    return OrbitSegment(times, bases, momenta, H, logs, float(drift), bool(drift > max_drift))


def _rhs(sys, z):
    n = sys.dimension
    return sys.ham_vector_field(z[..., :n], z[..., n:])


def _step_rk4(sys, z, h):
    k1 = _rhs(sys, z)
    k2 = _rhs(sys, z + 0.5 * h * k1)
    k3 = _rhs(sys, z + 0.5 * h * k2)
    k4 = _rhs(sys, z + h * k3)
    return z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _step_midpoint(sys, z, h, tol=1e-14, max_iter=100):
    # Fixed-point iteration on the implicit midpoint equation.
    z1 = _step_rk4(sys, z, h)
    for _ in range(max_iter):
        z_new = z + h * _rhs(sys, 0.5 * (z + z1))
        if np.max(np.abs(z_new - z1)) <= tol * max(1.0, np.max(np.abs(z_new))):
            return z_new
        z1 = z_new
    raise NumericalError("implicit midpoint iteration did not converge; reduce the step")


def _propagate(sys, z0, duration, cfg):
    """Return (times, states) for a signed duration; states has shape (N+1, ..., 2n)."""
    nsteps = max(1, int(math.ceil(abs(duration) / cfg.step - 1e-9))) if duration != 0 else 0
    h = duration / nsteps if nsteps else 0.0
    step = _step_rk4 if cfg.scheme == "rk4" else _step_midpoint
    n = sys.dimension
    out = np.empty((nsteps + 1,) + z0.shape)
    out[0] = z0
    z = z0
    for i in range(nsteps):
        z = step(sys, z, h)
        if not np.all(sys.in_chart(z[..., :n])):
            raise ChartExitError(f"{sys.name}: trajectory left the chart at t={(i + 1) * h:.6g}")
        out[i + 1] = z
    return h * np.arange(nsteps + 1), out


def integrate(sys: LagrangianSystem, start: CotangentState, duration: float,
              cfg: IntegratorConfig = IntegratorConfig()) -> OrbitSegment:
    """Integrate the Hamiltonian flow for ``duration`` with a fixed step.

    The step is shrunk slightly so that it divides ``duration`` exactly.  An
    energy drift above ``cfg.max_energy_drift`` is flagged on the result and
    raises an :class:`EnergyDriftWarning`.
    """
    if duration < 0:
        raise InputError("duration must be nonnegative; use flow_map for backward time")
    sys.check_point(start.base)
    z0 = np.concatenate([start.base, start.momentum]).astype(float)
    t, zs = _propagate(sys, z0, duration, cfg)
    n = sys.dimension
    seg = segment_from_arrays(sys, t, zs[:, :n], zs[:, n:], cfg.max_energy_drift)
    if seg.drift_exceeded:
        warnings.warn(
            f"{sys.name}: relative energy drift {seg.drift:.3e} exceeds {cfg.max_energy_drift:.1e}",
            EnergyDriftWarning,
            stacklevel=2,
        )
    return seg


def flow_map(sys: LagrangianSystem, z, t: float, cfg: IntegratorConfig = IntegratorConfig()):
    """Time-t map on phase arrays of shape (..., 2n); t may be negative."""
    z = np.asarray(z, float)
    if t == 0:
        return z.copy()
    _, zs = _propagate(sys, z, t, cfg)
    return zs[-1]


def liouville_integrand(sys, bases, momenta):
    """lambda(X_H) = p . dH/dp along flow lines."""
    return np.sum(momenta * sys.dHdp(bases, momenta), axis=-1)


def orbit_action(sys: LagrangianSystem, seg: OrbitSegment, k: float) -> float:
    """Trapezoid quadrature of lambda(dGamma/dt) - H + k over the segment."""
    if len(seg) == 0:
        raise InputError("empty segment")
    if len(seg) == 1:
        return 0.0
    g = liouville_integrand(sys, seg.bases, seg.momenta) - sys.hamiltonian(seg.bases, seg.momenta) + k
    return float(np.sum(np.diff(seg.times) * 0.5 * (g[1:] + g[:-1])))


def el_residual(sys: LagrangianSystem, path) -> float:
    """Max over interior nodes of |d/dt dL/dv - dL/dx| by centered differences.

    Momenta are evaluated at cell midpoints and differenced across each node,
    so the stencil touches only the two neighbours.  Closed paths are treated
    periodically (every node is interior).
    """
    x = np.asarray(path.nodes, float)
    m = len(x) - 1
    if m < 2:
        raise InputError("el_residual needs at least 3 nodes")
    h = path.duration / m
    if path.closed:
        x = np.concatenate([x[-2:-1], x, x[1:2]])
    mid = 0.5 * (x[1:] + x[:-1])
    vmid = (x[1:] - x[:-1]) / h
    pmid = sys.dLdv(mid, vmid)
    dp = (pmid[1:] - pmid[:-1]) / h
    vc = (x[2:] - x[:-2]) / (2 * h)
    res = dp - sys.dLdx(x[1:-1], vc)
    return float(np.max(np.abs(res)))
