"""Exact symplectomorphisms with explicit primitives, and the checks they support.

Supported maps: fiber translation by the differential of a catalog function
f (primitive f o pi), cotangent lifts of affine chart maps (primitive 0), and
compositions (primitive S1 + S2 o Psi1).  Maps act on phase arrays of shape
(..., 2n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ChartExitError,
    CotangentState,
    DomainError,
    InputError,
    LagrangianSystem,
    NumericalError,
    ReferenceData,
    convexity_probe,
    sample_states,
)
from .critical import DEFAULT_T_GRID, CriticalValueEstimate, estimate_cu
from .flow import OrbitSegment, el_residual
from .barrier import FamilyConfig, PreOrbit, phase_barrier_family, preorbit_action
from .variational import MinimizeConfig, el_grid_bound, path_action, path_from_segment

__all__ = [
    "ScalarField",
    "ExactSymplectomorphism",
    "FiberTranslation",
    "CotangentLift",
    "Composition",
    "identity_map",
    "bump_function",
    "linear_function",
    "build_map",
    "mapped_system",
    "apply",
    "apply_preorbit",
    "action_identity_residual",
    "cu_invariance_report",
    "barrier_transport_check",
    "lipschitz_estimate",
    "tonelli_probe",
]


# ---------------------------------------------------------------- base functions

@dataclass(frozen=True)
class ScalarField:
    """A smooth f on the chart with gradient and Hessian, vectorised over (..., n)."""

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)


def bump_function(center, amplitude: float = 0.1, width: float = 1.0) -> ScalarField:
    """f(x) = amplitude * exp(-|x - center|^2 / (2 width^2))."""
    c = np.asarray(center, float)
    if not width > 0:
        raise InputError("bump width must be positive")
    s2 = width * width

    def value(x):
        d = np.asarray(x, float) - c
        return amplitude * np.exp(-0.5 * np.sum(d * d, axis=-1) / s2)

    def grad(x):
        d = np.asarray(x, float) - c
        return -(value(x) / s2)[..., None] * d

    def hess(x):
        d = np.asarray(x, float) - c
        f = value(x)[..., None, None]
        eye = np.eye(len(c))
        return f * (d[..., :, None] * d[..., None, :] / (s2 * s2) - eye / s2)

    return ScalarField("bump", value, grad, hess,
                       {"center": c.tolist(), "amplitude": amplitude, "width": width})


def linear_function(coeffs) -> ScalarField:
    """f(x) = a . x, whose differential is a constant covector."""
    a = np.asarray(coeffs, float)
    n = len(a)
    return ScalarField(
        "linear",
        lambda x: np.asarray(x, float) @ a,
        lambda x: np.broadcast_to(a, np.shape(x)).copy(),
        lambda x: np.zeros(np.shape(x)[:-1] + (n, n)),
        {"coeffs": a.tolist()},
    )


# ---------------------------------------------------------------- maps

class ExactSymplectomorphism:
    """Base class: ``forward``, ``inverse`` and ``primitive`` on (..., 2n) phase arrays."""

    kind = "abstract"
    dimension: int

    def forward(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def primitive(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse_map(self) -> "ExactSymplectomorphism":
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def __call__(self, state: CotangentState) -> CotangentState:
        return CotangentState.from_array(self.forward(state.as_array()))

    def apply_inverse(self, state: CotangentState) -> CotangentState:
        return CotangentState.from_array(self.inverse(state.as_array()))

    def S(self, state: CotangentState) -> float:
        return float(self.primitive(state.as_array()))

    def then(self, other: "ExactSymplectomorphism") -> "Composition":
        """other o self."""
        return Composition(self, other)


class FiberTranslation(ExactSymplectomorphism):
    """(x, p) -> (x, p + df(x)); primitive f o pi."""

    kind = "fiber_translation"

    def __init__(self, f: ScalarField, dimension: int, sign: float = 1.0):
        self.f = f
        self.dimension = dimension
        self.sign = sign

    def _split(self, z):
        z = np.asarray(z, float)
        return z[..., : self.dimension], z[..., self.dimension:]

    def forward(self, z):
        x, p = self._split(z)
        return np.concatenate([x, p + self.sign * self.f.grad(x)], axis=-1)

    def inverse(self, z):
        x, p = self._split(z)
        return np.concatenate([x, p - self.sign * self.f.grad(x)], axis=-1)

    def primitive(self, z):
        x, _ = self._split(z)
        return self.sign * self.f.value(x)

    def inverse_map(self):
        return FiberTranslation(self.f, self.dimension, -self.sign)

    def spec(self):
        return {"kind": self.kind, "f": {"kind": self.f.name, **self.f.params}, "sign": self.sign}


class CotangentLift(ExactSymplectomorphism):
    """Lift of the affine chart map x -> A x + b: (x, p) -> (A x + b, A^{-T} p); primitive 0."""

    kind = "cotangent_lift"

    def __init__(self, A, b=None):
        A = np.asarray(A, float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise InputError("cotangent lift needs a square matrix")
        if abs(np.linalg.det(A)) < 1e-12:
            raise InputError("cotangent lift needs an invertible matrix")
        self.A = A
        self.dimension = A.shape[0]
        self.b = np.zeros(self.dimension) if b is None else np.asarray(b, float)
        self.Ainv = np.linalg.inv(A)

    def _split(self, z):
        z = np.asarray(z, float)
        return z[..., : self.dimension], z[..., self.dimension:]

    def base_map(self, x):
        return np.asarray(x, float) @ self.A.T + self.b

    def base_inverse(self, x):
        return (np.asarray(x, float) - self.b) @ self.Ainv.T

    def forward(self, z):
        x, p = self._split(z)
        return np.concatenate([self.base_map(x), p @ self.Ainv], axis=-1)

    def inverse(self, z):
        x, p = self._split(z)
        return np.concatenate([self.base_inverse(x), p @ self.A], axis=-1)

    def primitive(self, z):
        return np.zeros(np.shape(z)[:-1])

    def inverse_map(self):
        return CotangentLift(self.Ainv, -self.Ainv @ self.b)

    def spec(self):
        return {"kind": self.kind, "matrix": self.A.tolist(), "offset": self.b.tolist()}


class Composition(ExactSymplectomorphism):
    """second o first, with primitive S_first + S_second o first."""

    kind = "composition"

    def __init__(self, first: ExactSymplectomorphism, second: ExactSymplectomorphism):
        if first.dimension != second.dimension:
            raise InputError("composed maps must act on the same dimension")
        self.first, self.second = first, second
        self.dimension = first.dimension

    def forward(self, z):
        return self.second.forward(self.first.forward(z))

    def inverse(self, z):
        return self.first.inverse(self.second.inverse(z))

    def primitive(self, z):
        return self.first.primitive(z) + self.second.primitive(self.first.forward(z))

    def inverse_map(self):
        return Composition(self.second.inverse_map(), self.first.inverse_map())

    def spec(self):
        return {"kind": self.kind, "maps": [self.first.spec(), self.second.spec()]}


def identity_map(dimension: int) -> CotangentLift:
    return CotangentLift(np.eye(dimension))


def build_map(spec: dict, dimension: int) -> ExactSymplectomorphism:
    """Construct a map from its catalog description (as used in CLI configs)."""
    kind = spec.get("kind")
    if kind == "identity":
        return identity_map(dimension)
    if kind == "fiber_translation":
        fs = dict(spec.get("f", {}))
        fk = fs.pop("kind", "bump")
        if fk == "bump":
            f = bump_function(fs.get("center", [0.0] * dimension), fs.get("amplitude", 0.1), fs.get("width", 1.0))
        elif fk == "linear":
            f = linear_function(fs["coeffs"])
        else:
            raise InputError(f"unknown function kind {fk!r}")
        m = FiberTranslation(f, dimension, float(spec.get("sign", 1.0)))
    elif kind == "cotangent_lift":
        m = CotangentLift(spec.get("matrix", np.eye(dimension)), spec.get("offset"))
    elif kind == "composition":
        maps = [build_map(s, dimension) for s in spec.get("maps", [])]
        if not maps:
            raise InputError("composition needs at least one map")
        m = maps[0]
        for nxt in maps[1:]:
            m = Composition(m, nxt)
    else:
        raise InputError(f"unknown map kind {kind!r}")
    if m.dimension != dimension:
        raise InputError(f"map acts on dimension {m.dimension}, system has {dimension}")
    return m


# ---------------------------------------------------------------- mapped systems

def _mapped_reference(ref: Optional[ReferenceData], psi: ExactSymplectomorphism) -> Optional[ReferenceData]:
    # Closed orbits are carried to closed orbits with the same action; the
    # critical constants are deliberately not transferred.
    if ref is None or ref.orbit_start is None:
        return None
    return ReferenceData(
        orbit_action=ref.orbit_action,
        orbit_period=ref.orbit_period,
        k_max=ref.k_max,
        orbit_start=lambda k: psi(ref.orbit_start(k)),
    )


def _mapped_by_translation(sys: LagrangianSystem, m: FiberTranslation) -> LagrangianSystem:
    f, sg = m.f, m.sign

    def shift(x):
        return sg * f.grad(x)

    def dHdp(x, p):
        return sys.dHdp(x, p - shift(x))

    def dHdx(x, p):
        q = p - shift(x)
        return sys.dHdx(x, q) - sg * np.einsum("...ij,...j->...i", f.hess(x), sys.dHdp(x, q))

    return replace(
        sys,
        name=f"{sys.name}~fiber_translation",
        lagrangian=lambda x, v: sys.lagrangian(x, v) + np.sum(shift(x) * v, axis=-1),
        dLdv=lambda x, v: sys.dLdv(x, v) + shift(x),
        dLdx=lambda x, v: sys.dLdx(x, v) + sg * np.einsum("...ij,...j->...i", f.hess(x), v),
        hamiltonian=lambda x, p: sys.hamiltonian(x, p - shift(x)),
        dHdp=dHdp,
        dHdx=dHdx,
        first_integrals={k: (lambda x, p, g=g: g(x, p - shift(x))) for k, g in sys.first_integrals.items()},
        reference=_mapped_reference(sys.reference, m),
        params={**sys.params, "map": m.spec()},
    )


def _mapped_by_lift(sys: LagrangianSystem, m: CotangentLift) -> LagrangianSystem:
    A, Ainv, b = m.A, m.Ainv, m.b
    back = m.base_inverse

    def lag(x, v):
        return sys.lagrangian(back(x), v @ Ainv.T)

    def dLdv(x, v):
        return sys.dLdv(back(x), v @ Ainv.T) @ Ainv

    def dLdx(x, v):
        return sys.dLdx(back(x), v @ Ainv.T) @ Ainv

    def ham(x, p):
        return sys.hamiltonian(back(x), p @ A)

    def dHdp(x, p):
        return sys.dHdp(back(x), p @ A) @ A.T

    def dHdx(x, p):
        return sys.dHdx(back(x), p @ A) @ Ainv

    d2 = None
    if sys.d2Ldv2 is not None:
        def d2(x, v):
            return Ainv.T @ sys.d2Ldv2(back(x), v @ Ainv.T) @ Ainv

    def chart_jac(u):
        j = np.asarray(sys.chart_jac(u), float)
        if j.ndim == np.ndim(u):
            j = j[..., None, :] * np.eye(len(b))
        return np.einsum("ij,...jk->...ik", A, j)

    sample = None
    if sys.sample_base is not None:
        def sample(rng, size):
            return m.base_map(sys.sample_base(rng, size))

    chart_ok = None
    if sys.chart_ok is not None:
        def chart_ok(x):
            return sys.chart_ok(back(x))

    return replace(
        sys,
        name=f"{sys.name}~cotangent_lift",
        lagrangian=lag,
        dLdv=dLdv,
        dLdx=dLdx,
        hamiltonian=ham,
        dHdp=dHdp,
        dHdx=dHdx,
        d2Ldv2=d2,
        first_integrals={k: (lambda x, p, g=g: g(back(x), p @ A)) for k, g in sys.first_integrals.items()},
        chart_ok=chart_ok,
        to_chart=lambda u: m.base_map(sys.to_chart(u)),
        from_chart=lambda x: sys.from_chart(back(x)),
        chart_jac=chart_jac,
        sample_base=sample,
        reference=_mapped_reference(sys.reference, m),
        params={**sys.params, "map": m.spec()},
    )


def mapped_system(sys: LagrangianSystem, psi: ExactSymplectomorphism) -> LagrangianSystem:
    """The system of H o psi^{-1}, whose flow lines are the psi-images of those of H."""
    if psi.dimension != sys.dimension:
        raise InputError("map and system dimensions differ")
    if isinstance(psi, FiberTranslation):
        return _mapped_by_translation(sys, psi)
    if isinstance(psi, CotangentLift):
        return _mapped_by_lift(sys, psi)
    if isinstance(psi, Composition):
        return mapped_system(mapped_system(sys, psi.first), psi.second)
    raise InputError(f"unsupported map {type(psi).__name__}")


def tonelli_probe(sys: LagrangianSystem, samples: int = 200, seed: int = 0, threshold: float = 1e-6) -> float:
    """Smallest fiber-Hessian eigenvalue over ``samples`` random states; raises if <= threshold."""
    rng = np.random.default_rng(seed)
    x, v = sample_states(sys, rng, samples)
    worst = min(convexity_probe(sys, xi, vi) for xi, vi in zip(x, v))
    if not worst > threshold:
        raise DomainError(f"{sys.name}: mapped Lagrangian fails the convexity probe (min eigenvalue {worst:.3e})")
    return worst


# ---------------------------------------------------------------- checks

def apply(psi: ExactSymplectomorphism, seg: OrbitSegment, sys: Optional[LagrangianSystem] = None,
          verify: bool = False, cfg: MinimizeConfig = MinimizeConfig()) -> OrbitSegment:
    """Pointwise image of a segment, same times.

    Energy and first-integral logs carry over unchanged (they are the values
    of the mapped functions at the image points).  With ``sys`` the image is
    checked against the chart of the mapped system, and with ``verify`` its
    projection must satisfy the Euler-Lagrange equations of the mapped
    Lagrangian within el_grid_bound.
    """
    z = psi.forward(seg.phase())
    n = psi.dimension
    if sys is not None:
        msys = mapped_system(sys, psi)
        if not np.all(msys.in_chart(z[:, :n])):
            raise ChartExitError("image segment leaves the chart")
        if verify and len(seg) >= 3:
            path = path_from_segment(OrbitSegment(seg.times, z[:, :n], z[:, n:], seg.energy_log))
            res = el_residual(msys, path)
            if res > el_grid_bound(path, cfg):
                raise NumericalError(f"image is not a flow line: el_residual {res:.3e}")
    return OrbitSegment(seg.times.copy(), z[:, :n], z[:, n:], seg.energy_log.copy(),
                        {k: v.copy() for k, v in seg.integral_logs.items()}, seg.drift, seg.drift_exceeded)


def apply_preorbit(psi: ExactSymplectomorphism, y: PreOrbit) -> PreOrbit:
    return PreOrbit.from_segments([apply(psi, s) for s in y.segments])


def action_identity_residual(sys: LagrangianSystem, psi: ExactSymplectomorphism, seg: OrbitSegment,
                             k: float, require_closed: bool = True, closed_tol: float = 1e-8) -> float:
    """|A_{L+k}(gamma) - A_{L'+k}(gamma')| for gamma the projection of ``seg``.

    L' is the Lagrangian of the mapped system and gamma' the projection of
    the image segment; both actions use the trapezoid path quadrature on the
    segment's time grid.  For a closed segment the residual is quadrature
    error; for an open one it equals |S(end) - S(start)| up to that error.
    """
    z = seg.phase()
    if require_closed and np.max(np.abs(z[-1] - z[0])) > closed_tol:
        raise InputError("segment is not closed; pass require_closed=False for open segments")
    if len(seg) < 3:
        raise InputError("segment needs at least 3 samples")
    if not np.allclose(np.diff(seg.times), seg.duration / (len(seg) - 1), rtol=1e-9, atol=1e-12):
        raise InputError("segment must be sampled on a uniform grid")
    msys = mapped_system(sys, psi)
    img = apply(psi, seg)
    a = path_action(sys, path_from_segment(seg), k)
    b = path_action(msys, path_from_segment(img), k)
    return abs(a - b)


def cu_invariance_report(sys: LagrangianSystem, psi: ExactSymplectomorphism, bracket: Tuple[float, float],
                         tol: float, cfg: MinimizeConfig = MinimizeConfig(),
                         T_grid: Sequence[float] = DEFAULT_T_GRID,
                         original: Optional[CriticalValueEstimate] = None):
    """(estimate for H, estimate for H o psi^{-1}); the mapped system must pass the convexity probe.

    A precomputed ``original`` estimate may be passed to avoid recomputation.
    """
    msys = mapped_system(sys, psi)
    tonelli_probe(msys)
    est0 = original if original is not None else estimate_cu(sys, bracket[0], bracket[1], tol, T_grid, cfg)
    est1 = estimate_cu(msys, bracket[0], bracket[1], tol, T_grid, cfg)
    return est0, est1


def barrier_transport_check(sys: LagrangianSystem, psi: ExactSymplectomorphism, X: CotangentState, k: float,
                            fcfg: FamilyConfig = FamilyConfig()):
    """(B_H(psi X, psi X), B_{H o psi}(X, X), S(X0) - S(X1)) on one family and its image.

    The family is generated for H o psi at X; its psi-image is a family of
    pre-orbits of H at psi X, and both values are tail minima over the same
    members.
    """
    h_psi = mapped_system(sys, psi.inverse_map())
    fam = phase_barrier_family(h_psi, X, X, k, fcfg)
    images = [preorbit_action(sys, apply_preorbit(psi, y), k) if y is not None else math.inf
              for y in fam.preorbits]
    b_original = fam.tail_value(images)
    s_corr = psi.S(X) - psi.S(X)
    return b_original, fam.value, float(s_corr)


def lipschitz_estimate(psi: ExactSymplectomorphism, z: np.ndarray, step: float = 1e-6) -> float:
    """Largest spectral norm of the finite-difference Jacobian of psi at the given states."""
    z = np.atleast_2d(np.asarray(z, float))
    d = z.shape[1]
    best = 0.0
    for zi in z:
        J = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            J[:, j] = (psi.forward(zi + e) - psi.forward(zi - e)) / (2 * step)
        best = max(best, float(np.linalg.norm(J, 2)))
    return best
