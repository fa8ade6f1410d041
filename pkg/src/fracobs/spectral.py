"""Dirichlet eigenbases of the Laplacian on the unit interval and unit square.

Provides the spatial side of the solver: domains, axis-aligned regions,
eigenmodes with their frequencies, pointwise evaluation of eigenfunctions
and their gradients, Gauss-Legendre quadrature over regions, and the
closed-form coupling integrals between eigenfunction partial derivatives
and eigenfunctions.

All basis functions use the orthonormal scaling: sqrt(2)*sin(i*pi*x) per
axis, so the 2D functions are 2*sin(i*pi*x)*sin(j*pi*y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InputError

__all__ = [
    "SpatialDomain",
    "Region",
    "EigenMode",
    "SpatialQuadrature",
    "eigenpairs",
    "eigenvalue_groups",
    "eval_eigfun",
    "eval_eigfun_grad",
    "eigenfunction",
    "eigenfunction_partial",
    "region_inner_product",
    "grad_coupling",
    "restricted_coupling",
]

PI2 = math.pi * math.pi


@dataclass(frozen=True)
class SpatialDomain:
    """The unit interval (n=1) or the unit square (n=2)."""

    dimension: int

    def __post_init__(self) -> None:
        if self.dimension not in (1, 2):
            raise InputError(f"dimension must be 1 or 2, got {self.dimension}")

    @classmethod
    def interval(cls) -> "SpatialDomain":
        return cls(1)

    @classmethod
    def square(cls) -> "SpatialDomain":
        return cls(2)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box contained in the closed unit domain."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(a) for a in self.lower)
        hi = tuple(float(b) for b in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise InputError("region bounds must both have length 1 or 2")
        for a, b in zip(lo, hi):
            if not (a < b):
                raise InputError(f"degenerate region axis [{a}, {b}]")
            if a < 0.0 or b > 1.0:
                raise InputError(f"region axis [{a}, {b}] leaves the unit domain")

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        out = 1.0
        for a, b in zip(self.lower, self.upper):
            out *= b - a
        return out

    @classmethod
    def full(cls, domain: SpatialDomain) -> "Region":
        n = domain.dimension
        return cls((0.0,) * n, (1.0,) * n)


@dataclass(frozen=True)
class EigenMode:
    """One Dirichlet-Laplacian mode: index tuple and eigenvalue of -A."""

    index: tuple[int, ...]
    lam: float

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.index)
        object.__setattr__(self, "index", idx)
        if len(idx) not in (1, 2) or any(i < 1 for i in idx):
            raise InputError(f"mode index must be positive integers, got {idx}")
        if not self.lam > 0.0:
            raise InputError(f"eigenvalue must be positive, got {self.lam}")

    @property
    def dimension(self) -> int:
        return len(self.index)

    @property
    def freq_sq(self) -> int:
        """Integer sum of squared indices; lam = freq_sq * pi^2 exactly."""
        return sum(i * i for i in self.index)

    @classmethod
    def from_index(cls, index: Sequence[int]) -> "EigenMode":
        idx = tuple(int(i) for i in index)
        return cls(idx, sum(i * i for i in idx) * PI2)


def eigenpairs(domain: SpatialDomain, count: int) -> list[EigenMode]:
    """The `count` modes of smallest eigenvalue.

    Sorted ascending by eigenvalue; equal eigenvalues (possible only on
    the square) are ordered lexicographically by index, so M=4 on the
    square yields (1,1),(1,2),(2,1),(2,2).
    """
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    if domain.dimension == 1:
        return [EigenMode.from_index((i,)) for i in range(1, count + 1)]
    # every one of the `count` smallest modes has indices <= count + 1,
    # since the column (1,1)..(1,count) already supplies `count` modes
    top = count + 1
    idx = [(i, j) for i in range(1, top + 1) for j in range(1, top + 1)]
    idx.sort(key=lambda ij: (ij[0] * ij[0] + ij[1] * ij[1], ij))
    return [EigenMode.from_index(ij) for ij in idx[:count]]


def eigenvalue_groups(modes: Sequence[EigenMode]) -> list[list[int]]:
    """Positions of `modes` grouped by equal eigenvalue, ascending.

    Grouping compares the integer sums of squared indices, so ties are
    exact rather than float-fuzzy.
    """
    buckets: dict[int, list[int]] = {}
    for pos, m in enumerate(modes):
        buckets.setdefault(m.freq_sq, []).append(pos)
    return [buckets[k] for k in sorted(buckets)]


def _check_point(point: Sequence[float], n: int) -> np.ndarray:
    p = np.atleast_1d(np.asarray(point, dtype=float))
    if p.shape != (n,):
        raise InputError(f"expected a point with {n} coordinates, got {p.shape}")
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise DomainError(f"point {tuple(p)} lies outside the closed unit domain")
    return p


def eval_eigfun(mode: EigenMode, point: Sequence[float]) -> float:
    p = _check_point(point, mode.dimension)
    out = 1.0
    for i, x in zip(mode.index, p):
        out *= math.sqrt(2.0) * math.sin(i * math.pi * x)
    return out


def eval_eigfun_grad(mode: EigenMode, point: Sequence[float]) -> np.ndarray:
    p = _check_point(point, mode.dimension)
    sin_parts = [math.sqrt(2.0) * math.sin(i * math.pi * x) for i, x in zip(mode.index, p)]
    cos_parts = [
        math.sqrt(2.0) * i * math.pi * math.cos(i * math.pi * x)
        for i, x in zip(mode.index, p)
    ]
    grad = np.empty(mode.dimension)
    for d in range(mode.dimension):
        g = cos_parts[d]
        for other in range(mode.dimension):
            if other != d:
                g *= sin_parts[other]
        grad[d] = g
    return grad


def eigenfunction(mode: EigenMode) -> Callable[..., np.ndarray]:
    """Vectorized eigenfunction taking one coordinate array per axis."""
    if mode.dimension == 1:
        (i,) = mode.index
        return lambda x: math.sqrt(2.0) * np.sin(i * math.pi * np.asarray(x))
    i, j = mode.index
    return lambda x, y: 2.0 * np.sin(i * math.pi * np.asarray(x)) * np.sin(
        j * math.pi * np.asarray(y)
    )


def eigenfunction_partial(mode: EigenMode, axis: int) -> Callable[..., np.ndarray]:
    """Vectorized partial derivative of the eigenfunction along `axis` (0-based)."""
    if not 0 <= axis < mode.dimension:
        raise InputError(f"axis {axis} out of range for dimension {mode.dimension}")
    if mode.dimension == 1:
        (i,) = mode.index
        w = i * math.pi
        return lambda x: math.sqrt(2.0) * w * np.cos(w * np.asarray(x))
    i, j = mode.index
    wi, wj = i * math.pi, j * math.pi
    if axis == 0:
        return lambda x, y: 2.0 * wi * np.cos(wi * np.asarray(x)) * np.sin(
            wj * np.asarray(y)
        )
    return lambda x, y: 2.0 * wj * np.sin(wi * np.asarray(x)) * np.cos(
        wj * np.asarray(y)
    )


@dataclass(frozen=True)
class SpatialQuadrature:
    """Tensor Gauss-Legendre rule over a region, one node set per axis.

    Exact per axis for polynomials of degree 2*order - 1; for the
    trigonometric integrands here the error decays spectrally once the
    order passes roughly the mode frequency times the axis length.
    """

    region: Region
    order: int
    nodes: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]

    @classmethod
    def for_region(cls, region: Region, order: int = 32) -> "SpatialQuadrature":
        if order < 1:
            raise InputError(f"order must be >= 1, got {order}")
        ref_x, ref_w = np.polynomial.legendre.leggauss(order)
        nodes = []
        weights = []
        for a, b in zip(region.lower, region.upper):
            half = 0.5 * (b - a)
            nodes.append(a + half * (ref_x + 1.0))
            weights.append(half * ref_w)
        return cls(region, order, tuple(nodes), tuple(weights))


def region_inner_product(
    f: Callable[..., np.ndarray],
    g: Callable[..., np.ndarray],
    region: Region,
    quad: SpatialQuadrature | None = None,
) -> float:
    """Gauss-Legendre approximation of the L2 pairing of f and g over the region.

    Fields are callables taking one coordinate array per axis and
    broadcasting; eigenfunction() and eigenfunction_partial() produce
    conforming callables.
    """
    if quad is None:
        quad = SpatialQuadrature.for_region(region)
    elif quad.region != region:
        raise InputError("quadrature was built for a different region")
    if region.dimension == 1:
        x = quad.nodes[0]
        fv = np.asarray(f(x), dtype=float)
        gv = np.asarray(g(x), dtype=float)
        return float(np.sum(quad.weights[0] * fv * gv))
    xg, yg = np.meshgrid(quad.nodes[0], quad.nodes[1], indexing="ij")
    fv = np.asarray(f(xg, yg), dtype=float)
    gv = np.asarray(g(xg, yg), dtype=float)
    w2 = np.outer(quad.weights[0], quad.weights[1])
    return float(np.sum(w2 * fv * gv))


def restricted_coupling(
    region: Region, modes: Sequence[EigenMode], order: int = 48
) -> np.ndarray:
    """Couplings int_region phi_q * d_d phi_k for the flattened vector basis.

    Row i encodes the pair (q, d) as i = n*(q-1) + d with d running over
    axes first (0-based); columns run over modes k. Over the full domain
    this reproduces the closed-form grad_coupling up to sign.
    """
    n = region.dimension
    quad = SpatialQuadrature.for_region(region, order)
    if n == 1:
        x = quad.nodes[0]
        w = quad.weights[0]
        vals = np.array([eigenfunction(m)(x) for m in modes])
        dvals = np.array([eigenfunction_partial(m, 0)(x) for m in modes])
        return (vals * w) @ dvals.T
    xg, yg = np.meshgrid(quad.nodes[0], quad.nodes[1], indexing="ij")
    w2 = (np.outer(quad.weights[0], quad.weights[1])).ravel()
    vals = np.array([eigenfunction(m)(xg, yg).ravel() for m in modes])
    out = np.empty((n * len(modes), len(modes)))
    for d in range(n):
        dvals = np.array([eigenfunction_partial(m, d)(xg, yg).ravel() for m in modes])
        out[d::n, :] = (vals * w2) @ dvals.T
    return out


def _coupling_1d(q: int, k: int) -> float:
    # <d/dx phi_q, phi_k> on (0,1) with orthonormal sine modes:
    # 4qk/(k^2 - q^2) when q+k is odd, else 0 (including q=k)
    if (q + k) % 2 == 0:
        return 0.0
    return 4.0 * q * k / float(k * k - q * q)


def grad_coupling(q: EigenMode, axis: int, k: EigenMode) -> float:
    """Closed-form <d_axis phi_q, phi_k> over the full domain (axis 0-based)."""
    if q.dimension != k.dimension:
        raise InputError("modes live on different domains")
    if not 0 <= axis < q.dimension:
        raise InputError(f"axis {axis} out of range for dimension {q.dimension}")
    if q.dimension == 1:
        return _coupling_1d(q.index[0], k.index[0])
    other = 1 - axis
    if q.index[other] != k.index[other]:
        return 0.0
    return _coupling_1d(q.index[axis], k.index[axis])
