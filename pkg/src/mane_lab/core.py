"""Chart-based Tonelli systems and the Legendre dictionary.

Every system lives in one global chart of a universal cover.  All callables
on :class:`LagrangianSystem` are vectorised over leading axes: positions,
velocities and momenta are arrays of shape ``(..., n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ManeLabError(Exception):
    """Base class for library errors."""


class InputError(ManeLabError, ValueError):
    """Invalid input: wrong dimension, out-of-range parameter, unknown kind."""


class DomainError(InputError):
    """Parameter outside the range where the requested object exists."""


class NumericalError(ManeLabError, RuntimeError):
    """A numerical procedure failed (non-convergence, loss of accuracy)."""


class ChartExitError(NumericalError):
    """A trajectory left the coordinate chart."""


class OptimizationError(NumericalError):
    """No optimizer start converged."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


@dataclass(frozen=True)
class TangentState:
    base: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class CotangentState:
    base: np.ndarray
    momentum: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.base, self.momentum])

    @classmethod
    def from_array(cls, z) -> "CotangentState":
        z = np.asarray(z, dtype=float)
        n = z.shape[-1] // 2
        return cls(z[:n].copy(), z[n:].copy())


@dataclass(frozen=True)
class ReferenceData:
    """Published constants of a model system, used only as test oracles."""

    c_u: Optional[float] = None
    c_a: Optional[float] = None
    c_0: Optional[float] = None
    barrier_diag: Optional[float] = None
    orbit_action: Optional[Callable[[float], float]] = None
    orbit_period: Optional[Callable[[float], float]] = None
    # closed contractible orbits exist for 0 < k < k_max
    k_max: Optional[float] = None
    orbit_start: Optional[Callable[[float], CotangentState]] = None


def _identity_opt():
    return (lambda u: u, lambda x: x, lambda u: np.ones_like(u))


@dataclass(frozen=True)
class LagrangianSystem:
    """A Tonelli pair (L, H) presented in a single chart.

    ``to_chart``/``from_chart``/``chart_jac`` give a coordinate change used by
    the path optimizer (e.g. log y on the upper half plane); ``chart_jac`` is
    the derivative of ``to_chart``, either its diagonal (..., n) or the full
    Jacobian (..., n, n) with entry [i, j] = d x_i / d u_j.
    """

    name: str
    dimension: int
    lagrangian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dLdv: ArrayFn
    dLdx: ArrayFn
    hamiltonian: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dHdp: ArrayFn
    dHdx: ArrayFn
    d2Ldv2: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    first_integrals: Mapping[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(
        default_factory=dict
    )
    coord_names: tuple = ()
    chart_ok: Optional[Callable[[np.ndarray], np.ndarray]] = None
    to_chart: Callable = None
    from_chart: Callable = None
    chart_jac: Callable = None
    sample_base: Optional[Callable] = None
    reference: Optional[ReferenceData] = None
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        ident = _identity_opt()
        for attr, default in zip(("to_chart", "from_chart", "chart_jac"), ident):
            if getattr(self, attr) is None:
                object.__setattr__(self, attr, default)
        if not self.coord_names:
            object.__setattr__(
                self, "coord_names", tuple(f"q{i}" for i in range(self.dimension))
            )

    def ham_vector_field(self, x, p) -> np.ndarray:
        """Phase velocity (dH/dp, -dH/dx), shape (..., 2n)."""
        return np.concatenate([self.dHdp(x, p), -self.dHdx(x, p)], axis=-1)

    def chart_metric(self, a, b) -> np.ndarray:
        """Chart Euclidean distance; a surrogate for the lifted Riemannian one."""
        return np.linalg.norm(np.asarray(a, float) - np.asarray(b, float), axis=-1)

    def in_chart(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        ok = np.all(np.isfinite(x), axis=-1)
        if self.chart_ok is not None:
            ok = ok & self.chart_ok(x)
        return ok

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise InputError(
                f"{self.name}: expected coordinates of length {self.dimension}, got shape {x.shape}"
            )
        if not np.all(self.in_chart(x)):
            raise InputError(f"{self.name}: point outside the chart: {x}")
        return x

    def _check_vec(self, w, what) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape[-1:] != (self.dimension,):
            raise InputError(f"{self.name}: {what} must have length {self.dimension}")
        if not np.all(np.isfinite(w)):
            raise InputError(f"{self.name}: non-finite {what}")
        return w


def tangent(sys: LagrangianSystem, base, velocity) -> TangentState:
    return TangentState(sys.check_point(base), sys._check_vec(velocity, "velocity"))


def cotangent(sys: LagrangianSystem, base, momentum) -> CotangentState:
    return CotangentState(sys.check_point(base), sys._check_vec(momentum, "momentum"))


def legendre_forward(sys: LagrangianSystem, s: TangentState) -> CotangentState:
    x = sys.check_point(s.base)
    v = sys._check_vec(s.velocity, "velocity")
    return CotangentState(x.copy(), np.asarray(sys.dLdv(x, v), float))


def fd_hessian_v(sys: LagrangianSystem, x, v, step=1e-6) -> np.ndarray:
    """Centered finite-difference Jacobian of dL/dv in v (n x n)."""
    n = sys.dimension
    J = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = step
        J[:, j] = (sys.dLdv(x, v + e) - sys.dLdv(x, v - e)) / (2 * step)
    return J


def legendre_inverse(
    sys: LagrangianSystem, s: CotangentState, tol=1e-13, max_iter=50
) -> TangentState:
    """Solve dL/dv(x, v) = p for v by Newton's method.

    The initial guess is dH/dp(x, p), which is exact for a consistent pair.
    """
    x = sys.check_point(s.base)
    p = sys._check_vec(s.momentum, "momentum")
    v = np.asarray(sys.dHdp(x, p), float).copy()
    scale = max(1.0, float(np.max(np.abs(p))))
    for _ in range(max_iter):
        r = sys.dLdv(x, v) - p
        if np.max(np.abs(r)) <= tol * scale:
            return TangentState(x.copy(), v)
        J = sys.d2Ldv2(x, v) if sys.d2Ldv2 is not None else fd_hessian_v(sys, x, v)
        try:
            v = v - np.linalg.solve(J, r)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular fiber Hessian at {x}") from exc
        if not np.all(np.isfinite(v)):
            break
    raise NumericalError(
        f"{sys.name}: Legendre inverse did not converge in {max_iter} iterations"
    )


def energy(sys: LagrangianSystem, s: TangentState) -> float:
    x = sys.check_point(s.base)
    v = sys._check_vec(s.velocity, "velocity")
    return float(energy_array(sys, x, v))


def energy_array(sys: LagrangianSystem, x, v) -> np.ndarray:
    """E(x, v) = dL/dv . v - L, vectorised."""
    return np.sum(sys.dLdv(x, v) * v, axis=-1) - sys.lagrangian(x, v)


def convexity_probe(sys: LagrangianSystem, x, v, step=1e-5) -> float:
    """Smallest eigenvalue of the finite-difference fiber Hessian of L."""
    n = sys.dimension
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = step
            ej[j] = step
            H[i, j] = (
                sys.lagrangian(x, v + ei + ej)
                - sys.lagrangian(x, v + ei - ej)
                - sys.lagrangian(x, v - ei + ej)
                + sys.lagrangian(x, v - ei - ej)
            ) / (4 * step * step)
    H = 0.5 * (H + H.T)
    return float(np.linalg.eigvalsh(H)[0])


def fd_symplectic_gradient(sys: LagrangianSystem, x, p, step=1e-6) -> np.ndarray:
    """J grad H by centered differences of the Hamiltonian; test oracle."""
    n = sys.dimension
    out = np.empty(2 * n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        dHdp = (sys.hamiltonian(x, p + e) - sys.hamiltonian(x, p - e)) / (2 * step)
        dHdx = (sys.hamiltonian(x + e, p) - sys.hamiltonian(x - e, p)) / (2 * step)
        out[i] = dHdp
        out[n + i] = -dHdx
    return out


def sample_states(sys: LagrangianSystem, rng: np.random.Generator, size: int, vscale=1.0):
    """Random (x, v) pairs from the system's compact sampling region."""
    if sys.sample_base is not None:
        x = sys.sample_base(rng, size)
    else:
        x = rng.uniform(-1.0, 1.0, size=(size, sys.dimension))
    v = vscale * rng.normal(size=(size, sys.dimension))
    return x, v
