"""Discretize-then-optimize Tonelli minimizers.

Paths live on a uniform time grid.  The discrete Lagrangian of a cell is the
trapezoid value h/2 [L(x_i, v_i) + L(x_{i+1}, v_i)] with the forward
difference v_i = (x_{i+1} - x_i)/h, so the discrete Euler-Lagrange equations
mirror the continuous ones to second order.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import spsolve

from .core import InputError, LagrangianSystem, OptimizationError, energy_array

__all__ = [
    "DiscretePath",
    "MinimizeConfig",
    "MinimizeResult",
    "path_action",
    "discrete_action",
    "path_energy",
    "discrete_momenta",
    "minimize_fixed_endpoints",
    "minimize_closed_loop",
    "finite_time_potential",
    "el_grid_bound",
    "path_from_segment",
]


@dataclass(frozen=True)
class DiscretePath:
    nodes: np.ndarray
    duration: float
    closed: bool = False

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 2 or len(nodes) < 3:
            raise InputError("a path needs at least 3 nodes (m >= 2)")
        if not self.duration > 0:
            raise InputError("path duration must be positive")
        if self.closed:
            nodes[-1] = nodes[0]
        object.__setattr__(self, "nodes", nodes)

    @property
    def m(self) -> int:
        return len(self.nodes) - 1

    @property
    def h(self) -> float:
        return self.duration / self.m

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration, self.m + 1)

    def velocities(self) -> np.ndarray:
        """Forward-difference velocity of each cell, shape (m, n)."""
        return np.diff(self.nodes, axis=0) / self.h

    def resample(self, m: int) -> "DiscretePath":
        """Linear interpolation onto m cells (closed paths stay closed)."""
        t_old = self.times
        t_new = np.linspace(0.0, self.duration, m + 1)
        nodes = np.stack([np.interp(t_new, t_old, c) for c in self.nodes.T], axis=1)
        return DiscretePath(nodes, self.duration, self.closed)


@dataclass(frozen=True)
class MinimizeConfig:
    nodes_per_unit_time: int = 16
    min_nodes: int = 64
    max_nodes: int = 2048
    starts: int = 6
    grad_tol: float = 1e-6
    max_iters: int = 30000
    seed: int = 0
    threads: int = 1
    el_grid_constant: float = 50.0
    continuation_period: float = 60.0

    def __post_init__(self):
        for name in ("nodes_per_unit_time", "min_nodes", "max_nodes", "starts", "max_iters", "threads"):
            if getattr(self, name) <= 0:
                raise InputError(f"MinimizeConfig.{name} must be positive")
        if not self.continuation_period > 0:
            raise InputError("MinimizeConfig.continuation_period must be positive")
        if not self.grad_tol > 0:
            raise InputError("MinimizeConfig.grad_tol must be positive")
        if self.seed < 0:
            raise InputError("MinimizeConfig.seed must be nonnegative")

    def nodes_for(self, T: float) -> int:
        return int(min(self.max_nodes, max(self.min_nodes, math.ceil(self.nodes_per_unit_time * T))))


@dataclass
class MinimizeResult:
    path: DiscretePath
    action: float
    energy: float
    grad_norm: float
    iterations: int
    start_index: int
    converged: bool
    degenerate: bool = False
    starts: List[dict] = field(default_factory=list)

    def record(self) -> dict:
        return {
            "action": self.action,
            "energy": self.energy,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "start_index": self.start_index,
            "converged": self.converged,
            "degenerate": self.degenerate,
        }


# ---------------------------------------------------------------- discrete action

def _cell_terms(sys, x, h):
    xa, xb = x[:-1], x[1:]
    v = (xb - xa) / h
    La = sys.lagrangian(xa, v)
    Lb = sys.lagrangian(xb, v)
    return xa, xb, v, La, Lb


def discrete_action(sys: LagrangianSystem, x: np.ndarray, h: float, grad: bool = False):
    """Trapezoid discrete action of nodes ``x`` (m+1, n); optionally its gradient."""
    xa, xb, v, La, Lb = _cell_terms(sys, x, h)
    S = 0.5 * h * float(np.sum(La + Lb))
    if not grad:
        return S
    Pa, Pb = sys.dLdv(xa, v), sys.dLdv(xb, v)
    A = 0.5 * (Pa + Pb)
    g = np.zeros_like(x)
    g[:-1] += 0.5 * h * sys.dLdx(xa, v) - A
    g[1:] += 0.5 * h * sys.dLdx(xb, v) + A
    return S, g


def discrete_momenta(sys: LagrangianSystem, path: DiscretePath):
    """Discrete Legendre momenta at the two ends: (-dS/dx_0, dS/dx_m)."""
    x = path.nodes
    h = path.h
    v0 = (x[1] - x[0]) / h
    vm = (x[-1] - x[-2]) / h
    p0 = 0.5 * (sys.dLdv(x[0], v0) + sys.dLdv(x[1], v0)) - 0.5 * h * sys.dLdx(x[0], v0)
    pm = 0.5 * (sys.dLdv(x[-2], vm) + sys.dLdv(x[-1], vm)) + 0.5 * h * sys.dLdx(x[-1], vm)
    return np.asarray(p0, float), np.asarray(pm, float)


def path_action(sys: LagrangianSystem, path: DiscretePath, k: float = 0.0) -> float:
    """Discrete A_{L+k} of a path."""
    return discrete_action(sys, path.nodes, path.h) + k * path.duration


def path_energy(sys: LagrangianSystem, path: DiscretePath) -> float:
    """Time average of the energy, with the same trapezoid weights as the action."""
    x = path.nodes
    v = path.velocities()
    E = 0.5 * (energy_array(sys, x[:-1], v) + energy_array(sys, x[1:], v))
    return float(np.mean(E))


def path_from_segment(seg, closed=False) -> DiscretePath:
    """Configuration-space projection of a uniformly sampled orbit segment."""
    nodes = np.array(seg.bases, float)
    return DiscretePath(nodes, seg.duration, closed)


def el_grid_bound(path: DiscretePath, cfg: MinimizeConfig) -> float:
    """Documented bound on el_residual for a converged minimizer.

    The discrete gradient is h times the discrete EL residual, and the two
    residual stencils differ by O(h^2):  bound = grad_tol / h + C h^2.
    """
    h = path.h
    return cfg.grad_tol / h + cfg.el_grid_constant * h * h


# ---------------------------------------------------------------- optimizer

_LBFGS_CAP = 2000
_NEWTON_CAP = 300
# largest Newton move of a single coordinate, in optimizer units
_MAX_STEP = np.inf


def _rng(cfg: MinimizeConfig, tag, index: int) -> np.random.Generator:
    key = [cfg.seed, index] + [int(b) for b in np.frombuffer(np.asarray(tag, float).tobytes(), np.uint32)]
    return np.random.default_rng(np.random.SeedSequence(key))


@lru_cache(maxsize=16)
def _preconditioner(size: int, periodic: bool, delta: float):
    """Symmetric P = (K + delta)^(-1/2) and its inverse for the second-difference K.

    Optimizing over w with u = P w turns the stiff discrete kinetic term into a
    well-conditioned one; K is periodic for loops and Dirichlet otherwise.
    """
    K = 2.0 * np.eye(size) - np.eye(size, k=1) - np.eye(size, k=-1)
    if periodic:
        K[0, -1] = K[-1, 0] = -1.0
    lam, V = np.linalg.eigh(K)
    lam = np.maximum(lam, 0.0)
    return (V * (1.0 / np.sqrt(lam + delta))) @ V.T, (V * np.sqrt(lam + delta)) @ V.T


def _pull_back(g, jac):
    """Chain rule for dS/du; ``jac`` is diagonal (..., n) or full (..., n, n)."""
    if jac.ndim == g.ndim + 1:
        return np.einsum("...ij,...i->...j", jac, g)
    return g * jac


class _Problem:
    """Discrete action as a function of the free nodes in optimizer coordinates.

    ``fixed`` is (x0, x1) for endpoint problems, None for closed loops.
    """

    def __init__(self, sys, h, m, fixed):
        self.sys, self.h, self.m = sys, h, m
        self.n = sys.dimension
        self.periodic = fixed is None
        self.size = m if self.periodic else m - 1
        if not self.periodic:
            self.ua, self.ub = sys.from_chart(fixed[0]), sys.from_chart(fixed[1])

    def assemble(self, u):
        if self.periodic:
            return np.concatenate([u, u[:1]])
        return np.concatenate([self.ua[None], u, self.ub[None]])

    def value_grad(self, u):
        """(S, dS/du) with u of shape (size, n)."""
        full = self.assemble(u)
        with np.errstate(all="ignore"):
            x = self.sys.to_chart(full)
            S, g = discrete_action(self.sys, x, self.h, grad=True)
        if not np.isfinite(S) or not np.all(np.isfinite(g)):
            return np.inf, None
        g = _pull_back(g, self.sys.chart_jac(full))
        if self.periodic:
            g[0] += g[-1]
            return float(S), g[:-1]
        return float(S), g[1:-1]

    def _colors(self):
        size = self.size
        if not self.periodic or size % 3 == 0:
            return np.arange(size) % 3
        r = size % 3
        c = np.arange(size) % 3
        c[size - r:] = 3 + np.arange(r)
        return c

    def hessian(self, u, eps=1e-5):
        """Sparse block-tridiagonal Hessian by colored central differences of the gradient."""
        size, n = self.size, self.n
        colors = self._colors()
        idx = np.arange(size)
        rows, cols, vals = [], [], []
        for c in np.unique(colors):
            members = idx[colors == c]
            for d in range(n):
                step = eps * (1.0 + np.abs(u[members, d]))
                up, um = u.copy(), u.copy()
                up[members, d] += step
                um[members, d] -= step
                _, gp = self.value_grad(up)
                _, gm = self.value_grad(um)
                if gp is None or gm is None:
                    return None
                for off in (-1, 0, 1):
                    nb = members + off
                    if self.periodic:
                        nb = nb % size
                        keep = np.ones(len(members), bool)
                    else:
                        keep = (nb >= 0) & (nb < size)
                    src, nbk, st = members[keep], nb[keep], step[keep]
                    block = (gp[nbk] - gm[nbk]) / (2.0 * st[:, None])
                    rows.append((nbk[:, None] * n + np.arange(n)[None, :]).ravel())
                    cols.append(np.repeat(src * n + d, n))
                    vals.append(block.ravel())
        N = size * n
        Hm = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
        )
        Hm.sum_duplicates()
        return 0.5 * (Hm + Hm.T)


def _lbfgs_stage(prob, u0, cfg, maxiter):
    size, n = prob.size, prob.n
    P, Pinv = _preconditioner(size, prob.periodic, float(min(1.0, prob.h * prob.h)))

    def fun(w):
        S, g = prob.value_grad(P @ w.reshape(size, n))
        if g is None:
            return np.inf, np.zeros_like(w)
        return S, (P @ g).ravel()

    res = minimize(
        fun, (Pinv @ u0).ravel(), jac=True, method="L-BFGS-B",
        options={"maxiter": maxiter, "maxfun": 2 * maxiter, "gtol": cfg.grad_tol,
                 "ftol": 1e-15, "maxcor": 20},
    )
    return P @ res.x.reshape(size, n), int(res.nit)


def _newton_stage(prob, u, tol, max_steps):
    """Levenberg-damped Newton with a sparse Hessian; returns (u, steps)."""
    S, g = prob.value_grad(u)
    if g is None:
        return u, 0
    mu = 1e-8
    steps = 0
    for steps in range(1, max_steps + 1):
        gnorm = np.max(np.abs(g))
        if gnorm < tol:
            return u, steps - 1
        H = prob.hessian(u)
        if H is None:
            break
        scale = max(1e-12, float(np.max(np.abs(H.diagonal()))))
        I = sparse.identity(H.shape[0], format="csc")
        accepted = False
        for _ in range(40):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    d = spsolve((H + mu * scale * I).tocsc(), -g.ravel())
            except RuntimeError:
                d = None
            if d is not None and np.all(np.isfinite(d)):
                big = float(np.max(np.abs(d)))
                if big > _MAX_STEP:
                    d *= _MAX_STEP / big
            if d is not None and np.all(np.isfinite(d)) and float(d @ g.ravel()) < 0:
                un = u + d.reshape(u.shape)
                Sn, gn = prob.value_grad(un)
                if gn is not None and (
                    Sn <= S + 1e-4 * float(d @ g.ravel())
                    or (Sn <= S + 1e-12 * max(1.0, abs(S)) and np.max(np.abs(gn)) < gnorm)
                ):
                    u, S, g = un, Sn, gn
                    mu = max(1e-12, mu / 4.0)
                    accepted = True
                    break
            mu *= 8.0
        if not accepted:
            break
    return u, steps


def _solve(sys, u0, h, m, fixed, cfg):
    """Damped Newton, with a preconditioned L-BFGS rescue if Newton stalls.

    Returns (free nodes in optimizer coordinates, action, gradient max-norm, iterations).
    """
    prob = _Problem(sys, h, m, fixed)
    u, it = _newton_stage(prob, u0, cfg.grad_tol, min(cfg.max_iters, _NEWTON_CAP))
    S, g = prob.value_grad(u)
    if g is None or np.max(np.abs(g)) >= cfg.grad_tol:
        if g is None:
            u = u0
        u, it2 = _lbfgs_stage(prob, u, cfg, min(cfg.max_iters, _LBFGS_CAP))
        u, it3 = _newton_stage(prob, u, cfg.grad_tol, min(cfg.max_iters, _NEWTON_CAP))
        it += it2 + it3
        S, g = prob.value_grad(u)
    if g is None:
        return u, np.inf, np.inf, it
    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    return u, float(S), gnorm, it


def _stretch(nodes, m_new):
    """Reparametrize a node sequence onto m_new cells of the same unit interval."""
    t_old = np.linspace(0.0, 1.0, len(nodes))
    t_new = np.linspace(0.0, 1.0, m_new + 1)
    return np.stack([np.interp(t_new, t_old, c) for c in nodes.T], axis=1)


def _periods(T, cfg):
    """Continuation ladder T/2^r, ..., T/2, T with the first rung <= continuation_period."""
    r = 0
    while T / 2 ** r > cfg.continuation_period:
        r += 1
    return [T / 2 ** (r - i) for i in range(r + 1)]


def _continued(sys, T, cfg, fixed, init):
    """Solve along the period ladder, stretching each rung's minimizer to the next.

    ``init(m, T0)`` gives the full initial node array (m+1, n) in optimizer
    coordinates on the first rung.
    """
    u_full = None
    iters = 0
    for Tj in _periods(T, cfg):
        m = cfg.nodes_for(Tj)
        u_full = init(m, Tj) if u_full is None else _stretch(u_full, m)
        free = u_full[:-1] if fixed is None else u_full[1:-1]
        u, S, g, it = _solve(sys, free, Tj / m, m, fixed, cfg)
        iters += it
        u_full = _Problem(sys, Tj / m, m, fixed).assemble(u)
        if not np.isfinite(S):
            break
    return sys.to_chart(u_full), S, g, iters


def _reduce(sys, T, closed, outcomes, cfg, k_report):
    ok = [o for o in outcomes if o["grad_norm"] < cfg.grad_tol and np.isfinite(o["action"])]
    if not ok:
        raise OptimizationError(
            f"{sys.name}: no start converged (T={T})",
            [{k: v for k, v in o.items() if k != "nodes"} for o in outcomes],
        )
    best = min(ok, key=lambda o: (o["action"], o["grad_norm"], o["index"]))
    path = DiscretePath(best["nodes"], T, closed)
    spread = float(np.max(sys.chart_metric(path.nodes, path.nodes.mean(axis=0))))
    return MinimizeResult(
        path=path,
        action=path_action(sys, path, k_report),
        energy=path_energy(sys, path),
        grad_norm=best["grad_norm"],
        iterations=best["iterations"],
        start_index=best["index"],
        converged=True,
        degenerate=bool(closed and spread < 1e-6),
        starts=[{k: v for k, v in o.items() if k != "nodes"} for o in outcomes],
    )


def _map(fn, items, threads):
    threads = int(os.environ.get("MANE_LAB_THREADS", threads)) if threads == 1 else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _endpoint_init(sys, ua, ub, m, T, index, starts, rng):
    s = np.linspace(0.0, 1.0, m + 1)[:, None]
    u = (1 - s) * ua + s * ub
    if index == 0:
        return u
    # start i draws its bump size from the i-th stratum of a log range
    lo, hi = math.log(0.1), math.log(max(1.0, T / 2.0))
    frac = (index - 1 + rng.uniform()) / max(1, starts - 1)
    scale = math.exp(lo + frac * (hi - lo))
    modes = rng.integers(1, 4)
    bump = np.zeros_like(u)
    for j in range(1, modes + 1):
        bump += rng.normal(size=sys.dimension)[None, :] * np.sin(j * math.pi * s) / j
    return u + scale * bump / max(1e-12, np.max(np.abs(bump)))


def _loop_init(sys, m, T, index, rng):
    n = sys.dimension
    if sys.sample_base is not None:
        center = sys.from_chart(sys.sample_base(rng, 1)[0])
    else:
        center = rng.uniform(-1, 1, n)
    r = math.exp(rng.uniform(math.log(0.1), math.log(max(0.5, T / (4 * math.pi)))))
    if n == 1:
        frame = np.ones((2, 1))
        frame[1] = 0.0
    else:
        q, _ = np.linalg.qr(rng.normal(size=(n, 2)))
        frame = q.T
    if index % 2 == 1:
        frame = frame[::-1]
    phi = 2 * math.pi * np.arange(m + 1) / m
    u = center + r * (np.cos(phi)[:, None] * frame[0] + np.sin(phi)[:, None] * frame[1])
    u[-1] = u[0]
    return u


def minimize_fixed_endpoints(sys: LagrangianSystem, x0, x1, T: float,
                             cfg: MinimizeConfig = MinimizeConfig(), k: float = 0.0) -> MinimizeResult:
    """Best local minimizer of A_L among paths x0 -> x1 in time T.

    Start 0 is the straight chart line; further starts add random sine bumps.
    Long durations are reached by continuation: each start is solved at
    T/2^r <= cfg.continuation_period and stretched up rung by rung.
    ``k`` only shifts the reported action.
    """
    if not T > 0:
        raise InputError("T must be positive")
    x0 = sys.check_point(x0)
    x1 = sys.check_point(x1)
    ua, ub = sys.from_chart(x0), sys.from_chart(x1)
    tag = np.concatenate([[T, 0.0], x0, x1])

    def run(i):
        rng = _rng(cfg, tag, i)
        x, S, g, it = _continued(
            sys, T, cfg, (x0, x1), lambda m, T0: _endpoint_init(sys, ua, ub, m, T0, i, cfg.starts, rng)
        )
        return {"index": i, "action": S, "grad_norm": g, "iterations": it, "nodes": x}

    return _reduce(sys, T, False, _map(run, range(cfg.starts), cfg.threads), cfg, k)


def minimize_closed_loop(sys: LagrangianSystem, T: float,
                         cfg: MinimizeConfig = MinimizeConfig(), k: float = 0.0) -> MinimizeResult:
    """Best local minimizer of A_L over closed loops of period T (free basepoint).

    Starts are circles of random centre, radius, plane and orientation, with
    the same period continuation as the endpoint problem.  The argmin does not
    depend on k; ``k`` only shifts the reported action.
    """
    if not T > 0:
        raise InputError("T must be positive")
    tag = np.array([T, 1.0])

    def run(i):
        rng = _rng(cfg, tag, i)
        x, S, g, it = _continued(sys, T, cfg, None, lambda m, T0: _loop_init(sys, m, T0, i, rng))
        return {"index": i, "action": S, "grad_norm": g, "iterations": it, "nodes": x}

    return _reduce(sys, T, True, _map(run, range(cfg.starts), cfg.threads), cfg, k)


def finite_time_potential(sys: LagrangianSystem, x0, x1, T: float,
                          cfg: MinimizeConfig = MinimizeConfig()) -> float:
    """Upper bound for h^T(x0, x1): the action of the best minimizer found."""
    return minimize_fixed_endpoints(sys, x0, x1, T, cfg).action
