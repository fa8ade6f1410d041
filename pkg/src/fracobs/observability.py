"""Observability diagnostics for the gradient of the state.

Three questions are answered at a finite truncation M:

* do the sensors see every eigenvalue group of the gradient (the
  strategic test, a rank condition per group of equal eigenvalues),
* is the Gram of the restricted observation map positive definite,
* and the worked two-dimensional example where a gradient is invisible
  from the whole domain yet visible from a subregion.

Rank decisions are singular-value decisions with a relative tolerance;
anything within a factor 10 of the cut is reported as inconclusive
rather than silently rounded to a verdict.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import eigh, svdvals

from .errors import DomainError, InputError
from .fraccalc import TimeGrid, ml_product_matrix, mlf_values
from .spectral import (
    EigenMode,
    Region,
    SpatialDomain,
    SpatialQuadrature,
    eigenfunction_partial,
    eigenpairs,
    eigenvalue_groups,
    eval_eigfun_grad,
    region_inner_product,
    restricted_coupling,
)
from .system import Sensor, output_matrix

__all__ = [
    "StrategicReport",
    "GramDiagnostic",
    "strategic_blocks",
    "test_gradient_strategic",
    "gram_Halpha",
    "counterexample_check",
]

GRAY_ZONE_FACTOR = 10.0


@dataclass(frozen=True)
class StrategicReport:
    """Outcome of the per-group rank test.

    group_svals holds, for each eigenvalue group, the decision singular
    value of the stacked block: the (n*r_j)-th largest one, which is zero
    whenever the stack has fewer than n*r_j rows. offending lists 1-based
    group indices that failed (for non_strategic) or sat inside the gray
    zone (for inconclusive).
    """

    verdict: str
    group_lams: tuple[float, ...]
    group_sizes: tuple[int, ...]
    group_svals: tuple[float, ...]
    offending: tuple[int, ...]
    tolerance: float

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "r", "smallest_singular_value"])
            for j, (r, s) in enumerate(zip(self.group_sizes, self.group_svals), 1):
                writer.writerow([j, r, f"{s:.17g}"])


@dataclass(frozen=True)
class GramDiagnostic:
    """Spectrum summary of the truncated observability Gram."""

    matrix: np.ndarray
    eigenvalues: np.ndarray
    smallest_eigenvalue: float
    largest_eigenvalue: float
    positive_definite: bool

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eigenvalue"])
            for i, ev in enumerate(self.eigenvalues, 1):
                writer.writerow([i, f"{ev:.17g}"])


def _sensor_dimension(sensors: Sequence[Sensor]) -> int:
    dims = set()
    for s in sensors:
        dims.add(len(s.location) if s.kind == "pointwise" else s.support.dimension)
    if len(dims) != 1:
        raise InputError(f"sensors mix domain dimensions {sorted(dims)}")
    return dims.pop()


def strategic_blocks(
    sensors: Sequence[Sensor],
    modes: Sequence[EigenMode],
    axis: int,
    order: int = 32,
) -> list[np.ndarray]:
    """Per-eigenvalue-group matrices of sensed gradient components.

    Group j yields a (p, r_j) matrix whose (i, k) entry is the axis-th
    partial of group member k seen by sensor i: the value at the sensor
    location, or the weighted integral over its support.
    """
    if not sensors:
        raise InputError("at least one sensor is required")
    p = len(sensors)
    full = np.empty((p, len(modes)))
    quads = {}
    for i, s in enumerate(sensors):
        if s.kind == "pointwise":
            for k, m in enumerate(modes):
                full[i, k] = eval_eigfun_grad(m, s.location)[axis]
        else:
            quad = quads.get(id(s))
            if quad is None:
                quad = SpatialQuadrature.for_region(s.support, order)
                quads[id(s)] = quad
            for k, m in enumerate(modes):
                full[i, k] = region_inner_product(
                    eigenfunction_partial(m, axis), s.weight, s.support, quad
                )
    return [full[:, g] for g in eigenvalue_groups(modes)]


def test_gradient_strategic(
    sensors: Sequence[Sensor],
    M: int,
    tolerance: float = 1e-10,
    modes: Sequence[EigenMode] | None = None,
    order: int = 32,
) -> StrategicReport:
    """Rank test of the stacked per-group blocks [B_j^1 ... B_j^n].

    The sensors see the gradient of every state at truncation M exactly
    when each stacked block has trivial kernel, i.e. rank n*r_j. Groups
    whose decision singular value lands within GRAY_ZONE_FACTOR of the
    cut produce an inconclusive verdict instead of a guess.
    """
    if not sensors:
        raise InputError("at least one sensor is required")
    if tolerance <= 0.0:
        raise InputError("tolerance must be positive")
    n = _sensor_dimension(sensors)
    if modes is None:
        if M < 1:
            raise InputError(f"M must be >= 1, got {M}")
        modes = eigenpairs(SpatialDomain(n), M)
    per_axis = [strategic_blocks(sensors, modes, d, order) for d in range(n)]
    groups = eigenvalue_groups(modes)
    p = len(sensors)

    # the cut is relative to the largest singular value across all groups;
    # a per-group scale would make a singleton group always look full rank
    stacks = [
        np.hstack([per_axis[d][gi] for d in range(n)]) for gi in range(len(groups))
    ]
    spectra = [svdvals(s) for s in stacks]
    scale = max((float(s[0]) for s in spectra if s.size), default=0.0)
    cut = tolerance * scale

    lams: list[float] = []
    sizes: list[int] = []
    svals: list[float] = []
    failed: list[int] = []
    gray: list[int] = []
    for j, g in enumerate(groups, 1):
        nr = n * len(g)
        lams.append(modes[g[0]].lam)
        sizes.append(len(g))
        if p < nr:
            svals.append(0.0)
            failed.append(j)
            continue
        smin = float(spectra[j - 1][nr - 1])
        svals.append(smin)
        if scale == 0.0 or smin <= cut:
            failed.append(j)
        elif smin <= GRAY_ZONE_FACTOR * cut:
            gray.append(j)

    if failed:
        verdict, offending = "non_strategic", failed
    elif gray:
        verdict, offending = "inconclusive", gray
    else:
        verdict, offending = "strategic", []
    return StrategicReport(
        verdict, tuple(lams), tuple(sizes), tuple(svals), tuple(offending), tolerance
    )


def gram_Halpha(
    omega: Region,
    sensors: Sequence[Sensor],
    M: int,
    alpha: float,
    grid: TimeGrid,
    spatial_order: int = 48,
    time_panels: int = 96,
    time_order: int = 16,
) -> GramDiagnostic:
    """Gram of the restricted gradient-observation map on nM basis fields.

    Entry (i, j) is the time integral over [0, horizon] of the product of
    sensed outputs generated by the i-th and j-th restricted basis fields;
    assembled spectrally as A (T .* P'P) A' where A couples restricted
    fields to modes, T holds decay-product integrals, and P holds the
    sensor functionals.
    """
    if M < 1:
        raise InputError(f"M must be >= 1, got {M}")
    modes = eigenpairs(SpatialDomain(omega.dimension), M)
    A = restricted_coupling(omega, modes, spatial_order)
    if sensors:
        P = output_matrix(sensors, modes)
    else:
        P = np.zeros((0, M))
    lams = np.array([m.lam for m in modes])
    Tm = ml_product_matrix(lams, alpha, grid.horizon, time_panels, time_order)
    G = A @ (Tm * (P.T @ P)) @ A.T
    evals = eigh(G, eigvals_only=True)
    ev_min, ev_max = float(evals[0]), float(evals[-1])
    pd = ev_min > 1e-10 * ev_max and ev_max > 0.0
    return GramDiagnostic(G, evals, ev_min, ev_max, pd)


def counterexample_check(
    samples: Sequence[float], depth: int = 40
) -> tuple[np.ndarray, np.ndarray]:
    """The worked example of a gradient invisible globally, visible locally.

    On the unit square with order 1/2 dynamics, the line sensor
    D = {1/2} x (0,1) with weight sin(2 pi y2) observes nothing of a
    particular gradient field over the whole domain, yet observes
    -(sqrt(2)/(24 pi)) E_{1/2}(-5 pi^2 sqrt(t)) of its restriction to
    omega = (0,1) x (1/8, 5/8). Returns (global, restricted) output
    values at the requested times, each a sum over depth x depth modes
    with quadrature-evaluated coefficient factors.
    """
    t = np.atleast_1d(np.asarray(samples, dtype=float))
    if t.size == 0:
        raise InputError("at least one time sample is required")
    if np.any(t < 0.0) or np.any(t > 2.0):
        raise DomainError("time samples must lie in [0, 2]")
    if depth < 4:
        raise InputError("depth must cover at least the surviving mode")

    ref_x, ref_w = np.polynomial.legendre.leggauss(96)

    def pairings(weight_freq: int, a: float, b: float) -> np.ndarray:
        half = 0.5 * (b - a)
        y = a + half * (ref_x + 1.0)
        w = half * ref_w
        j = np.arange(1, depth + 1)
        return (w * np.sin(weight_freq * math.pi * y)) @ np.sin(
            math.pi * np.outer(y, j)
        )

    f1 = pairings(1, 0.0, 1.0)  # ~ delta_{i,1}/2
    f4 = pairings(2, 0.0, 1.0)  # ~ delta_{j,2}/2
    f2_global = pairings(4, 0.0, 1.0)  # ~ delta_{j,4}/2
    f2_window = pairings(4, 0.125, 0.625)
    s3 = np.sin(np.arange(1, depth + 1) * math.pi / 2.0)

    row = f1 * s3
    col_global = f2_global * f4
    col_window = f2_window * f4
    coef_global = np.outer(row, col_global)
    coef_window = np.outer(row, col_window)

    ii, jj = np.meshgrid(np.arange(1, depth + 1), np.arange(1, depth + 1), indexing="ij")
    lams = ((ii * ii + jj * jj) * math.pi**2).ravel()
    out_global = np.empty(t.size)
    out_window = np.empty(t.size)
    for a, tv in enumerate(t):
        decay = mlf_values(0.5, -lams * math.sqrt(tv))
        out_global[a] = float(coef_global.ravel() @ decay)
        out_window[a] = float(coef_window.ravel() @ decay)
    return out_global, out_window
