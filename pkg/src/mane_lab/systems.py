"""Built-in model systems: flat space, the Heisenberg group, PSL(2,R), and an
open-plane system with a decaying potential.

Heisenberg chart: (x, y, z) with L = 1/2 (x'^2 + y'^2 + w^2) + w, w = z' - x y'.
PSL(2,R) chart: (x, y, theta), y > 0, theta unwrapped to the real line, with
L = (x'^2 + y'^2 + (y theta' + x')^2) / (2 y^2) + theta' + x'/y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict

import numpy as np

from .core import (
    CotangentState,
    DomainError,
    InputError,
    LagrangianSystem,
    ReferenceData,
)

__all__ = [
    "SystemSpec",
    "build_system",
    "register_system",
    "reference_orbit",
    "reference_segment",
    "reference_path",
    "vertical_orbit_check",
    "psl2r_left_momenta",
    "psl2r_covector",
    "open_plane_potential",
]


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    params: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d) -> "SystemSpec":
        if isinstance(d, str):
            return cls(d)
        return cls(d["kind"], dict(d.get("params", {})))

    def to_dict(self):
        return {"kind": self.kind, "params": dict(self.params)}


_REGISTRY: Dict[str, Callable[[dict], LagrangianSystem]] = {}


def register_system(kind: str, factory: Callable[[dict], LagrangianSystem]) -> None:
    """Plug-in hook: ``factory(params)`` must return a LagrangianSystem."""
    _REGISTRY[kind] = factory


def build_system(spec) -> LagrangianSystem:
    if not isinstance(spec, SystemSpec):
        spec = SystemSpec.from_dict(spec)
    try:
        factory = _REGISTRY[spec.kind]
    except KeyError:
        raise InputError(
            f"unknown system kind {spec.kind!r}; known: {sorted(_REGISTRY)}"
        ) from None
    return factory(dict(spec.params))


# ---------------------------------------------------------------- flat

def _flat(params) -> LagrangianSystem:
    n = int(params.get("dim", 2))
    if n < 1:
        raise InputError("flat: dim must be >= 1")

    def lag(x, v):
        return 0.5 * np.sum(v * v, axis=-1)

    def ham(x, p):
        return 0.5 * np.sum(p * p, axis=-1)

    integrals = {f"p{i}": (lambda x, p, i=i: p[..., i]) for i in range(n)}
    return LagrangianSystem(
        name="flat",
        dimension=n,
        lagrangian=lag,
        dLdv=lambda x, v: np.array(v, dtype=float, copy=True),
        dLdx=lambda x, v: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v))),
        hamiltonian=ham,
        dHdp=lambda x, p: np.array(p, dtype=float, copy=True),
        dHdx=lambda x, p: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(p))),
        d2Ldv2=lambda x, v: np.eye(n),
        first_integrals=integrals,
        coord_names=tuple(f"x{i}" for i in range(n)),
        sample_base=lambda rng, size: rng.uniform(-1, 1, size=(size, n)),
        reference=ReferenceData(c_u=0.0, c_a=0.0, c_0=0.0, barrier_diag=0.0),
        params={"dim": n},
    )


# ---------------------------------------------------------------- Heisenberg

def _heis_s(k):
    if not 0.0 < k < 0.5:
        raise DomainError(f"heisenberg: closed contractible orbits need 0 < k < 1/2, got {k}")
    return math.sqrt(1.0 - 2.0 * k)


def _heis_orbit_start(k) -> CotangentState:
    # Circle through the origin, counterclockwise, p_z = s, planar speed rho.
    s = _heis_s(k)
    rho = math.sqrt(2.0 * s * (1.0 - s))
    return CotangentState(np.zeros(3), np.array([rho, 0.0, s]))


def _heisenberg(params) -> LagrangianSystem:
    def w_of(x, v):
        return v[..., 2] - x[..., 0] * v[..., 1]

    def lag(x, v):
        w = w_of(x, v)
        return 0.5 * (v[..., 0] ** 2 + v[..., 1] ** 2 + w * w) + w

    def dLdv(x, v):
        w1 = w_of(x, v) + 1.0
        return np.stack([v[..., 0], v[..., 1] - x[..., 0] * w1, w1], axis=-1)

    def dLdx(x, v):
        w1 = w_of(x, v) + 1.0
        zero = np.zeros_like(w1)
        return np.stack([-v[..., 1] * w1, zero, zero], axis=-1)

    def d2Ldv2(x, v):
        a = x[..., 0]
        one = np.ones_like(a)
        zero = np.zeros_like(a)
        return np.stack(
            [
                np.stack([one, zero, zero], axis=-1),
                np.stack([zero, 1 + a * a, -a], axis=-1),
                np.stack([zero, -a, one], axis=-1),
            ],
            axis=-2,
        )

    def ham(x, p):
        q = p[..., 1] + x[..., 0] * p[..., 2]
        return 0.5 * (p[..., 0] ** 2 + q * q + (p[..., 2] - 1.0) ** 2)

    def dHdp(x, p):
        q = p[..., 1] + x[..., 0] * p[..., 2]
        return np.stack([p[..., 0], q, x[..., 0] * q + p[..., 2] - 1.0], axis=-1)

    def dHdx(x, p):
        q = p[..., 1] + x[..., 0] * p[..., 2]
        zero = np.zeros_like(q)
        return np.stack([q * p[..., 2], zero, zero], axis=-1)

    ref = ReferenceData(
        c_u=0.5,
        c_a=0.5,
        barrier_diag=2.0 * math.pi,
        orbit_action=lambda k: 2.0 * math.pi * (1.0 - _heis_s(k)),
        orbit_period=lambda k: 2.0 * math.pi / _heis_s(k),
        k_max=0.5,
        orbit_start=_heis_orbit_start,
    )
    return LagrangianSystem(
        name="heisenberg",
        dimension=3,
        lagrangian=lag,
        dLdv=dLdv,
        dLdx=dLdx,
        hamiltonian=ham,
        dHdp=dHdp,
        dHdx=dHdx,
        d2Ldv2=d2Ldv2,
        first_integrals={"p_y": lambda x, p: p[..., 1], "p_z": lambda x, p: p[..., 2]},
        coord_names=("x", "y", "z"),
        sample_base=lambda rng, size: rng.uniform(-1, 1, size=(size, 3)),
        reference=ref,
    )


# ---------------------------------------------------------------- PSL(2,R)

def _psl_s(k):
    if not 0.0 < k < 0.25:
        raise DomainError(f"psl2r: closed contractible orbits need 0 < k < 1/4, got {k}")
    return math.sqrt(1.0 - 4.0 * k)


def psl2r_left_momenta(x, p):
    """Left-invariant momenta (p_alpha, p_beta, p_gamma) of a chart covector."""
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    y, th = x[..., 1], x[..., 2]
    u = y * p[..., 0] - p[..., 2]
    w = y * p[..., 1]
    c, s = np.cos(th), np.sin(th)
    return np.stack([u * c + w * s, -u * s + w * c, p[..., 2]], axis=-1)


def psl2r_covector(x, p_alpha, p_beta, p_gamma) -> np.ndarray:
    """Chart momenta (p_x, p_y, p_theta) from left-invariant momenta at ``x``."""
    x = np.asarray(x, float)
    y, th = x[..., 1], x[..., 2]
    c, s = np.cos(th), np.sin(th)
    u = p_alpha * c - p_beta * s
    w = p_alpha * s + p_beta * c
    return np.stack(np.broadcast_arrays((u + p_gamma) / y, w / y, p_gamma * np.ones_like(y)), axis=-1)


def _psl_orbit_start(k) -> CotangentState:
    s = _psl_s(k)
    pg = 0.5 * (1.0 + s)
    rho = math.sqrt((1.0 - s) * (1.0 + 3.0 * s) / 4.0)
    base = np.array([0.0, 1.0, 0.0])
    return CotangentState(base, psl2r_covector(base, rho, 0.0, pg))


def _psl2r(params) -> LagrangianSystem:
    def lag(x, v):
        y = x[..., 1]
        a = y * v[..., 2] + v[..., 0]
        return (v[..., 0] ** 2 + v[..., 1] ** 2 + a * a) / (2 * y * y) + v[..., 2] + v[..., 0] / y

    def dLdv(x, v):
        y = x[..., 1]
        a = y * v[..., 2] + v[..., 0]
        return np.stack(
            [(v[..., 0] + a) / (y * y) + 1.0 / y, v[..., 1] / (y * y), a / y + 1.0], axis=-1
        )

    def dLdx(x, v):
        y = x[..., 1]
        a = y * v[..., 2] + v[..., 0]
        dy = -(v[..., 0] ** 2 + v[..., 1] ** 2 + a * a) / y**3 + a * v[..., 2] / (y * y) - v[..., 0] / (y * y)
        zero = np.zeros_like(y)
        return np.stack([zero, dy, zero], axis=-1)

    def d2Ldv2(x, v):
        y = x[..., 1]
        zero = np.zeros_like(y)
        return np.stack(
            [
                np.stack([2 / y**2, zero, 1 / y], axis=-1),
                np.stack([zero, 1 / y**2, zero], axis=-1),
                np.stack([1 / y, zero, np.ones_like(y)], axis=-1),
            ],
            axis=-2,
        )

    def ham(x, p):
        y = x[..., 1]
        u = y * p[..., 0] - p[..., 2]
        return 0.5 * (u * u + (y * p[..., 1]) ** 2 + (p[..., 2] - 1.0) ** 2)

    def dHdp(x, p):
        y = x[..., 1]
        u = y * p[..., 0] - p[..., 2]
        return np.stack([y * u, y * y * p[..., 1], -u + p[..., 2] - 1.0], axis=-1)

    def dHdx(x, p):
        y = x[..., 1]
        u = y * p[..., 0] - p[..., 2]
        zero = np.zeros_like(y)
        return np.stack([zero, u * p[..., 0] + y * p[..., 1] ** 2, zero], axis=-1)

    def f_integral(x, p):
        v = dHdp(x, p)
        return v[..., 2] + v[..., 0] / x[..., 1]

    def sample(rng, size):
        return np.stack(
            [
                rng.uniform(-1, 1, size),
                np.exp(rng.uniform(-0.7, 0.7, size)),
                rng.uniform(-math.pi, math.pi, size),
            ],
            axis=-1,
        )

    def to_chart(u):
        x = np.array(u, dtype=float, copy=True)
        x[..., 1] = np.exp(x[..., 1])
        return x

    def from_chart(x):
        u = np.array(x, dtype=float, copy=True)
        u[..., 1] = np.log(u[..., 1])
        return u

    def chart_jac(u):
        j = np.ones_like(u)
        j[..., 1] = np.exp(u[..., 1])
        return j

    ref = ReferenceData(
        c_u=0.25,
        c_a=0.5,
        barrier_diag=math.pi,
        orbit_action=lambda k: math.pi * (1.0 - _psl_s(k)),
        orbit_period=lambda k: 2.0 * math.pi / _psl_s(k),
        k_max=0.25,
        orbit_start=_psl_orbit_start,
    )
    return LagrangianSystem(
        name="psl2r",
        dimension=3,
        lagrangian=lag,
        dLdv=dLdv,
        dLdx=dLdx,
        hamiltonian=ham,
        dHdp=dHdp,
        dHdx=dHdx,
        d2Ldv2=d2Ldv2,
        first_integrals={
            "p_gamma": lambda x, p: p[..., 2],
            "f": f_integral,
            "p_x": lambda x, p: p[..., 0],
        },
        coord_names=("x", "y", "theta"),
        chart_ok=lambda x: x[..., 1] > 0,
        to_chart=to_chart,
        from_chart=from_chart,
        chart_jac=chart_jac,
        sample_base=sample,
        reference=ref,
    )


# ---------------------------------------------------------------- open plane

def _quintic_coeffs(r0, r1, u0, u1):
    """Coefficients in t = r - r0 matching value/first/second derivative."""
    h = r1 - r0
    A = np.zeros((6, 6))
    A[0, 0], A[1, 1], A[2, 2] = 1.0, 1.0, 2.0
    for j in range(6):
        A[3, j] = h**j
        A[4, j] = j * h ** (j - 1) if j >= 1 else 0.0
        A[5, j] = j * (j - 1) * h ** (j - 2) if j >= 2 else 0.0
    return np.linalg.solve(A, np.array([*u0, *u1], dtype=float))


_R_IN, _R_OUT, _U_IN = 1.0, 2.0, 2.0
_BLEND = _quintic_coeffs(
    _R_IN, _R_OUT, (_U_IN, 0.0, 0.0), (1.0 / _R_OUT, -1.0 / _R_OUT**2, 2.0 / _R_OUT**3)
)


def open_plane_potential(r):
    """U and dU/dr as functions of the radius.

    U = 2 on r <= 1, U = 1/r on r >= 2, and a quintic in between that matches
    value, slope and curvature at both ends (C^2, monotone, U >= 1/2 there).
    """
    r = np.asarray(r, float)
    t = np.clip(r - _R_IN, 0.0, _R_OUT - _R_IN)
    pw = np.stack([t**j for j in range(6)])
    blend = np.tensordot(_BLEND, pw, axes=1)
    dblend = np.tensordot(_BLEND[1:] * np.arange(1, 6), pw[:5], axes=1)
    rr = np.maximum(r, _R_OUT)
    U = np.where(r <= _R_IN, _U_IN, np.where(r >= _R_OUT, 1.0 / rr, blend))
    dU = np.where(r <= _R_IN, 0.0, np.where(r >= _R_OUT, -1.0 / rr**2, dblend))
    return U, dU


def _open_plane(params) -> LagrangianSystem:
    def lag(x, v):
        U, _ = open_plane_potential(np.linalg.norm(x, axis=-1))
        return 0.5 * np.sum(v * v, axis=-1) + U

    def grad_U(x):
        r = np.linalg.norm(x, axis=-1)
        _, dU = open_plane_potential(r)
        safe = np.where(r > 0, r, 1.0)
        return (dU / safe)[..., None] * x

    def ham(x, p):
        U, _ = open_plane_potential(np.linalg.norm(x, axis=-1))
        return 0.5 * np.sum(p * p, axis=-1) - U

    return LagrangianSystem(
        name="open_plane",
        dimension=2,
        lagrangian=lag,
        dLdv=lambda x, v: np.array(v, dtype=float, copy=True) + 0.0 * x,
        dLdx=lambda x, v: grad_U(x) + 0.0 * v,
        hamiltonian=ham,
        dHdp=lambda x, p: np.array(p, dtype=float, copy=True) + 0.0 * x,
        dHdx=lambda x, p: -grad_U(x) + 0.0 * p,
        d2Ldv2=lambda x, v: np.eye(2),
        first_integrals={
            "angular_momentum": lambda x, p: x[..., 0] * p[..., 1] - x[..., 1] * p[..., 0]
        },
        coord_names=("x0", "x1"),
        sample_base=lambda rng, size: rng.uniform(-3, 3, size=(size, 2)),
        reference=ReferenceData(c_u=0.0),
    )


register_system("flat", _flat)
register_system("heisenberg", _heisenberg)
register_system("psl2r", _psl2r)
register_system("open_plane", _open_plane)


# ---------------------------------------------------------------- closed forms

def reference_orbit(sys: LagrangianSystem, k: float):
    """(period, A_{L+k}-action) of the prime closed contractible orbit at energy k."""
    ref = sys.reference
    if ref is None or ref.orbit_period is None:
        raise InputError(f"{sys.name} has no closed-orbit family")
    return ref.orbit_period(k), ref.orbit_action(k)


def vertical_orbit_check(sys: LagrangianSystem, x, duration: float, nodes: int = 1000):
    """Euler-Lagrange residual and A_{L+1/2} of t -> (x, y, z - t) on [0, duration]."""
    from .flow import el_residual
    from .variational import DiscretePath, path_action

    if sys.name != "heisenberg":
        raise InputError("vertical_orbit_check needs the heisenberg system")
    x = sys.check_point(x)
    if duration == 0:
        return 0.0, 0.0
    t = np.linspace(0.0, duration, nodes + 1)
    pts = np.repeat(x[None, :], nodes + 1, axis=0)
    pts[:, 2] = x[2] - t
    path = DiscretePath(pts, duration)
    return el_residual(sys, path), path_action(sys, path, 0.5)


def reference_segment(sys: LagrangianSystem, k: float, nodes: int = 1000, max_step: float = 0.05):
    """One period of the prime closed orbit at energy k, sampled at ``nodes`` + 1 times.

    The orbit is integrated with RK4 at a step dividing T/nodes and at most
    ``max_step``, then subsampled onto the uniform grid.
    """
    from .flow import IntegratorConfig, integrate, segment_from_arrays

    ref = sys.reference
    if ref is None or ref.orbit_start is None:
        raise InputError(f"{sys.name} has no closed-orbit family")
    T, _ = reference_orbit(sys, k)
    sub = max(1, math.ceil(T / nodes / max_step))
    seg = integrate(sys, ref.orbit_start(k), T, IntegratorConfig(step=T / (nodes * sub)))
    idx = np.arange(0, nodes * sub + 1, sub)
    return segment_from_arrays(sys, seg.times[idx], seg.bases[idx], seg.momenta[idx])


def reference_path(sys: LagrangianSystem, k: float, nodes: int = 1000):
    """Closed DiscretePath sampled from :func:`reference_segment`."""
    from .variational import path_from_segment

    return path_from_segment(reference_segment(sys, k, nodes), closed=True)
