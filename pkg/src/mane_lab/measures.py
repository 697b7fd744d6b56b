"""Finite atomic holonomic measures and the identities they satisfy.

A sample is a weighted cloud of tangent states.  Velocity rescaling is kept
as an exact rational factor so that successive rescalings compose exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .core import CotangentState, InputError, LagrangianSystem, TangentState, energy_array
from .flow import IntegratorConfig, OrbitSegment, integrate
from .systems import psl2r_covector
from .variational import DiscretePath

__all__ = [
    "HolonomicMeasureSample",
    "GraphWitness",
    "sample_from_path",
    "rescale_measure",
    "stationarity_residual",
    "horocycle_measure",
    "graph_union_witness",
    "HOROCYCLE_BASE",
    "mean_energy",
]

HOROCYCLE_BASE = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class HolonomicMeasureSample:
    """Atoms (bases[i], velocities[i]) with weights summing to one.

    ``velocities`` already includes ``scale``; ``raw_velocities`` does not.
    """

    bases: np.ndarray
    raw_velocities: np.ndarray
    weights: np.ndarray
    scale: Fraction = Fraction(1)
    source: Dict[str, Any] = field(default_factory=dict)
    orbit: Optional[OrbitSegment] = None

    def __post_init__(self):
        b = np.asarray(self.bases, float)
        v = np.asarray(self.raw_velocities, float)
        w = np.asarray(self.weights, float)
        if b.ndim != 2 or b.shape != v.shape or w.shape != (len(b),):
            raise InputError("atoms need matching (N, n) bases/velocities and (N,) weights")
        if len(w) == 0:
            raise InputError("a measure sample needs at least one atom")
        if not np.all(w > 0):
            raise InputError("atom weights must be positive")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise InputError(f"atom weights sum to {math.fsum(w)!r}, not 1")
        object.__setattr__(self, "bases", b)
        object.__setattr__(self, "raw_velocities", v)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)

    @property
    def velocities(self) -> np.ndarray:
        return self.raw_velocities * float(self.scale)

    @property
    def atoms(self) -> List[Tuple[TangentState, float]]:
        return [(TangentState(b, v), float(w)) for b, v, w in zip(self.bases, self.velocities, self.weights)]

    def integrate(self, fn) -> float:
        """Sum of w_i fn(x_i, v_i) for a vectorised fn(x, v)."""
        vals = np.asarray(fn(self.bases, self.velocities), float)
        return float(np.dot(self.weights, vals))


def sample_from_path(sys: LagrangianSystem, path: DiscretePath) -> HolonomicMeasureSample:
    """The measure uniformly distributed on a discrete path.

    Each cell contributes its two trapezoid states (x_i, v_i) and
    (x_{i+1}, v_i) with weight 1/(2m), so integrals of L reproduce
    path_action / T exactly.
    """
    x = path.nodes
    v = path.velocities()
    m = path.m
    bases = np.concatenate([x[:-1], x[1:]])
    vel = np.concatenate([v, v])
    w = np.full(2 * m, 1.0 / (2 * m))
    return HolonomicMeasureSample(
        bases, vel, w, source={"kind": "path", "duration": path.duration, "nodes": m + 1, "closed": path.closed}
    )


def rescale_measure(sample: HolonomicMeasureSample, lam: float) -> HolonomicMeasureSample:
    """mu_lambda: the push-forward under (x, v) -> (x, lam v); weights unchanged."""
    lam = float(lam)
    if not math.isfinite(lam):
        raise InputError("rescaling factor must be finite")
    src = dict(sample.source)
    src["rescaled_by"] = src.get("rescaled_by", []) + [lam]
    return HolonomicMeasureSample(
        sample.bases, sample.raw_velocities, sample.weights, sample.scale * Fraction(lam), src, sample.orbit
    )


def stationarity_residual(sys: LagrangianSystem, sample: HolonomicMeasureSample, step: float = 1e-4):
    """(F'(1) by centred differences, integral of E + L) for F(lam) = int L(x, lam v) dmu.

    The two agree for every sample; F'(1) = 0 additionally signals that the
    sample is stationary under rescaling, as a minimizing measure must be.
    """
    x, v, w = sample.bases, sample.velocities, sample.weights
    Fp = float(np.dot(w, sys.lagrangian(x, (1.0 + step) * v)))
    Fm = float(np.dot(w, sys.lagrangian(x, (1.0 - step) * v)))
    fd = (Fp - Fm) / (2.0 * step)
    identity = float(np.dot(w, np.sum(sys.dLdv(x, v) * v, axis=-1)))
    return fd, identity


def horocycle_measure(sys: LagrangianSystem, p_alpha: float, p_beta: float, length: float,
                      cfg: IntegratorConfig = IntegratorConfig()) -> HolonomicMeasureSample:
    """Orbit measure with constant left-invariant momenta (p_alpha, p_beta, 1/2).

    The orbit starts at the chart point (0, 1, 0); atoms are the integrator
    samples with trapezoid weights, so integrals are time averages.
    """
    if sys.name != "psl2r":
        raise InputError("horocycle_measure needs the psl2r system")
    if abs(p_alpha ** 2 + p_beta ** 2 - 0.25) > 1e-10:
        raise InputError("horocycle momenta must satisfy p_alpha^2 + p_beta^2 = 1/4")
    if not length > 0:
        raise InputError("length must be positive")
    p0 = psl2r_covector(HOROCYCLE_BASE, p_alpha, p_beta, 0.5)
    seg = integrate(sys, CotangentState(HOROCYCLE_BASE.copy(), p0), length, cfg)
    vel = sys.dHdp(seg.bases, seg.momenta)
    dt = np.diff(seg.times)
    w = np.zeros(len(seg))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    w /= math.fsum(w)
    return HolonomicMeasureSample(
        seg.bases, vel, w,
        source={"kind": "horocycle", "p_alpha": p_alpha, "p_beta": p_beta, "length": length},
        orbit=seg,
    )


class GraphWitness(NamedTuple):
    base: np.ndarray
    vA: np.ndarray
    vB: np.ndarray
    distance: float
    gap: float


def graph_union_witness(mA: HolonomicMeasureSample, mB: HolonomicMeasureSample,
                        tol: float) -> Optional[GraphWitness]:
    """Two atoms within ``tol`` in the base whose velocities differ by more than 10 tol.

    Atoms are bucketed into chart cubes of side ``tol``; cells of mA are
    scanned in lexicographic order, and the first witness found is returned.
    """
    if not tol > 0:
        raise InputError("tol must be positive")
    if mA.bases.shape[1] != mB.bases.shape[1]:
        raise InputError("samples come from systems of different dimension")
    n = mA.bases.shape[1]
    vA, vB = mA.velocities, mB.velocities
    cellsA = np.floor(mA.bases / tol).astype(np.int64)
    cellsB = np.floor(mB.bases / tol).astype(np.int64)
    bucketB: Dict[tuple, List[int]] = {}
    for j, c in enumerate(map(tuple, cellsB)):
        bucketB.setdefault(c, []).append(j)
    bucketA: Dict[tuple, List[int]] = {}
    for i, c in enumerate(map(tuple, cellsA)):
        bucketA.setdefault(c, []).append(i)
    offsets = list(itertools.product((-1, 0, 1), repeat=n))
    for cell in sorted(bucketA):
        ia = np.array(bucketA[cell])
        near = [j for off in offsets for j in bucketB.get(tuple(c + o for c, o in zip(cell, off)), ())]
        if not near:
            continue
        jb = np.array(sorted(near))
        d = np.linalg.norm(mA.bases[ia][:, None, :] - mB.bases[jb][None, :, :], axis=-1)
        gap = np.linalg.norm(vA[ia][:, None, :] - vB[jb][None, :, :], axis=-1)
        hit = np.argwhere((d < tol) & (gap > 10.0 * tol))
        if len(hit):
            a, b = hit[0]
            return GraphWitness(mA.bases[ia[a]].copy(), vA[ia[a]].copy(), vB[jb[b]].copy(),
                                float(d[a, b]), float(gap[a, b]))
    return None


def mean_energy(sys: LagrangianSystem, sample: HolonomicMeasureSample) -> float:
    return sample.integrate(lambda x, v: energy_array(sys, x, v))
