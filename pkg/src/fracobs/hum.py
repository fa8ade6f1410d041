"""Reconstruction of the initial gradient from sensor records.

The sought object is expanded over the vector basis of eigenfunction
components, phi_q along axis d, flattened as i = n*(q-1) + d. The normal
equations use the Gram of the sensed evolution of those basis fields,

    Lambda = B (T .* P'P) B',

with B the divergence couplings <div* basis_i, phi_k> (closed form over
the full domain), T the decay-product integrals int E_k E_l dt, and P the
sensor functionals. The right-hand side pairs the same evolutions against
the data after applying the time-fractional derivative to it, which is
what makes noiseless in-span data reproduce Lambda times the true
coefficients exactly.

Solves are eigendecomposition-based with selectable regularization, and
the top-level driver escalates the truncation (and, late in the loop, the
regularization) until the output residual passes the requested threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh

from .errors import ConvergenceError, InputError, SolvabilityError
from .fraccalc import (
    SampledFunction,
    TimeGrid,
    caputo_values,
    gauss_panels,
    graded_panel_edges,
    ml_product_matrix,
    mlf_values,
)
from .spectral import (
    EigenMode,
    Region,
    SpatialDomain,
    SpatialQuadrature,
    eigenfunction,
    eigenpairs,
    grad_coupling,
    restricted_coupling,
)
from .system import (
    FractionalDiffusion,
    MeasurementRecord,
    ModalState,
    Sensor,
    generate_measurements,
    output_matrix,
)

__all__ = [
    "Regularization",
    "HumProblem",
    "GradientField",
    "ReconstructionResult",
    "vector_basis_field",
    "ml_product_integral",
    "assemble_gram",
    "assemble_rhs",
    "assemble_rhs_from_state",
    "solve_reconstruction",
    "residual_against",
    "reconstruct",
    "omega_error",
]

_REG_KINDS = ("none", "tikhonov", "truncated_svd", "spectral_tikhonov")


@dataclass(frozen=True)
class Regularization:
    """Solve policy for the normal equations.

    tikhonov shifts by an absolute mu (None picks 1e-10 * trace / size at
    solve time); truncated_svd drops eigenvalues below rcond times the
    largest; spectral_tikhonov shifts row (q, d) by mu * ev_max *
    (lam_q / lam_M)^2, damping the weakly sensed high modes harder.
    """

    kind: str = "tikhonov"
    value: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in _REG_KINDS:
            raise InputError(f"unknown regularization {self.kind!r}")
        if self.kind == "none" and self.value is not None:
            raise InputError("regularization 'none' takes no value")
        if self.kind in ("truncated_svd", "spectral_tikhonov") and self.value is None:
            raise InputError(f"regularization {self.kind!r} requires a value")
        if self.value is not None and not self.value > 0.0:
            raise InputError(f"regularization value must be positive, got {self.value}")

    @classmethod
    def none(cls) -> "Regularization":
        return cls("none")

    @classmethod
    def tikhonov(cls, mu: float | None = None) -> "Regularization":
        return cls("tikhonov", mu)

    @classmethod
    def truncated_svd(cls, rcond: float) -> "Regularization":
        return cls("truncated_svd", rcond)

    @classmethod
    def spectral_tikhonov(cls, mu: float) -> "Regularization":
        return cls("spectral_tikhonov", mu)


@dataclass(frozen=True)
class HumProblem:
    """Everything a reconstruction needs besides the record itself."""

    mode_count: int
    omega: Region
    sensors: tuple[Sensor, ...]
    alpha: float
    horizon: float
    regularization: Regularization = Regularization.tikhonov()
    epsilon: float = 1e-6
    time_panels: int = 96
    time_order: int = 16
    moment_panels: int = 64
    moment_order: int = 8
    escalation_step: int = 4
    max_iterations: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if self.mode_count < 1:
            raise InputError(f"mode_count must be >= 1, got {self.mode_count}")
        if not 0.0 < self.alpha <= 1.0:
            raise InputError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.horizon > 0.0:
            raise InputError(f"horizon must be positive, got {self.horizon}")
        if not self.epsilon > 0.0:
            raise InputError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iterations < 1 or self.escalation_step < 0:
            raise InputError("bad escalation policy")

    @property
    def dimension(self) -> int:
        return self.omega.dimension

    def basis(self, count: int | None = None) -> tuple[EigenMode, ...]:
        m = self.mode_count if count is None else count
        return tuple(eigenpairs(SpatialDomain(self.dimension), m))


@dataclass(frozen=True)
class GradientField:
    """Vector field spanned by eigenfunction components.

    Component d (0-based) is sum_q coefficients[n*(q-1)+d] * phi_q; the
    1-based pair (q, d) maps to flat index n*(q-1)+d as in the assembly.
    """

    coefficients: np.ndarray
    modes: tuple[EigenMode, ...]

    def __post_init__(self) -> None:
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        modes = tuple(self.modes)
        object.__setattr__(self, "coefficients", c)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise InputError("at least one mode is required")
        n = modes[0].dimension
        if c.shape != (n * len(modes),):
            raise InputError(
                f"expected {n * len(modes)} coefficients, got {c.shape}"
            )

    @property
    def dimension(self) -> int:
        return self.modes[0].dimension

    @property
    def mode_count(self) -> int:
        return len(self.modes)

    def component(self, axis: int) -> Callable[..., np.ndarray]:
        n = self.dimension
        if not 0 <= axis < n:
            raise InputError(f"axis {axis} out of range for dimension {n}")
        weights = self.coefficients[axis::n]
        funcs = [eigenfunction(m) for m in self.modes]

        def field(*coords: np.ndarray) -> np.ndarray:
            out = weights[0] * funcs[0](*coords)
            for w, f in zip(weights[1:], funcs[1:]):
                out = out + w * f(*coords)
            return out

        return field


@dataclass(frozen=True)
class ReconstructionResult:
    field: GradientField
    residual: float
    gram_condition: float
    iterations: int
    error_vs_truth: float | None
    residual_history: tuple[float, ...]

    def write_csv(
        self,
        path: str,
        truth: Sequence[Callable[..., np.ndarray]] | None = None,
        samples: int = 201,
    ) -> None:
        """Reporting table over the full domain plus a summary footer."""
        n = self.field.dimension
        truth_fns = _truth_components(truth, n) if truth is not None else None
        cols: list[np.ndarray] = []
        if n == 1:
            x = np.linspace(0.0, 1.0, samples)
            cols.append(x)
            pts = (x,)
            header = ["x"]
        else:
            ax = np.linspace(0.0, 1.0, samples)
            xg, yg = np.meshgrid(ax, ax, indexing="ij")
            cols.extend([xg.ravel(), yg.ravel()])
            pts = (xg.ravel(), yg.ravel())
            header = ["x", "y"]
        for d in range(n):
            if truth_fns is None:
                cols.append(np.full(cols[0].size, np.nan))
            else:
                cols.append(np.asarray(truth_fns[d](*pts), dtype=float))
            cols.append(np.asarray(self.field.component(d)(*pts), dtype=float))
            header.extend([f"d{d + 1}_true", f"d{d + 1}_rec"])
        summary = {
            "residual": self.residual,
            "error_vs_truth": self.error_vs_truth,
            "gram_condition": self.gram_condition,
            "iterations": self.iterations,
        }
        with open(path, "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
            fh.write("# " + json.dumps(summary) + "\n")


def vector_basis_field(i: int, M: int, n: int) -> GradientField:
    """The i-th (1-based) flattened basis field, i = n*(q-1) + d."""
    if not 1 <= i <= n * M:
        raise InputError(f"index {i} outside 1..{n * M}")
    modes = eigenpairs(SpatialDomain(n), M)
    coeffs = np.zeros(n * M)
    coeffs[i - 1] = 1.0
    return GradientField(coeffs, tuple(modes))


def ml_product_integral(
    lam_k: float,
    lam_l: float,
    alpha: float,
    horizon: float,
    panels: int = 96,
    order: int = 16,
) -> float:
    """int_0^T E_alpha(-lam_k t^alpha) E_alpha(-lam_l t^alpha) dt."""
    if lam_k <= 0.0 or lam_l <= 0.0:
        raise InputError("eigenvalues must be positive")
    m = ml_product_matrix([lam_k], alpha, horizon, panels, order, lams_col=[lam_l])
    return float(m[0, 0])


_TM_CACHE: dict[tuple, np.ndarray] = {}


def _tm(
    lams: np.ndarray,
    alpha: float,
    horizon: float,
    panels: int,
    order: int,
    lams_col: np.ndarray | None = None,
) -> np.ndarray:
    key = (
        alpha,
        horizon,
        panels,
        order,
        tuple(float(v) for v in lams),
        None if lams_col is None else tuple(float(v) for v in lams_col),
    )
    out = _TM_CACHE.get(key)
    if out is None:
        out = ml_product_matrix(lams, alpha, horizon, panels, order, lams_col=lams_col)
        _TM_CACHE[key] = out
    return out


_DECAY_CACHE: dict[tuple, np.ndarray] = {}


def _decay_table(alpha: float, lams: np.ndarray, times: np.ndarray) -> np.ndarray:
    """E_alpha(-lam t^alpha) over times x lams, cached.

    A sensor sweep re-assembles against the same time grid for every
    location; caching amortizes the Mittag-Leffler evaluations, which
    dominate its cost at fractional alpha.
    """
    key = (alpha, tuple(float(v) for v in lams), times.tobytes())
    out = _DECAY_CACHE.get(key)
    if out is None:
        out = mlf_values(alpha, -np.outer(times**alpha, lams).ravel()).reshape(
            times.size, lams.size
        )
        _DECAY_CACHE[key] = out
    return out


def _divergence_coupling(modes: Sequence[EigenMode]) -> np.ndarray:
    """B[i, k] = <div* basis_i, phi_k> = -grad_coupling(q_i, d_i, k)."""
    n = modes[0].dimension
    B = np.empty((n * len(modes), len(modes)))
    for qi, q in enumerate(modes):
        for d in range(n):
            for ki, k in enumerate(modes):
                B[n * qi + d, ki] = -grad_coupling(q, d, k)
    return B


def _output_or_empty(sensors: Sequence[Sensor], modes: Sequence[EigenMode]) -> np.ndarray:
    if not sensors:
        return np.zeros((0, len(modes)))
    return output_matrix(sensors, modes)


def assemble_gram(problem: HumProblem, restricted: bool = False) -> np.ndarray:
    """The Gram Lambda = B (T .* P'P) B', size nM x nM.

    With restricted=True the couplings are integrated over omega instead
    of the whole domain; the default follows the global assembly and
    leaves omega to the error metric.
    """
    modes = problem.basis()
    B = (
        restricted_coupling(problem.omega, modes)
        if restricted
        else _divergence_coupling(modes)
    )
    P = _output_or_empty(problem.sensors, modes)
    lams = np.array([m.lam for m in modes])
    Tm = _tm(lams, problem.alpha, problem.horizon, problem.time_panels, problem.time_order)
    return B @ (Tm * (P.T @ P)) @ B.T


def _moment_nodes(problem: HumProblem, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Gauss points on panels whose edges include every record node.

    The data enters through piecewise operations between its samples, so
    aligning panel edges with the sample nodes keeps each Gauss point
    inside a single data cell; the graded edges resolve the layer at 0.
    """
    edges = np.union1d(
        graded_panel_edges(problem.horizon, problem.moment_panels, 1e-16), grid.nodes
    )
    keep = np.concatenate([[True], np.diff(edges) > 1e-15 * problem.horizon])
    return gauss_panels(edges[keep], problem.moment_order)


def assemble_rhs(problem: HumProblem, record: MeasurementRecord) -> np.ndarray:
    """Data-side vector pairing the record with each sensed basis evolution.

    The record is first pushed through the time-fractional derivative
    (sign flipped), then integrated against each mode's decay profile;
    at alpha = 1 the derivative is shifted onto the profile by parts so
    the sampled data is never differenced.
    """
    if record.channel_count != len(problem.sensors):
        raise InputError(
            f"record has {record.channel_count} channels for {len(problem.sensors)} sensors"
        )
    if abs(record.grid.horizon - problem.horizon) > 1e-9 * problem.horizon:
        raise InputError(
            f"record horizon {record.grid.horizon} != problem horizon {problem.horizon}"
        )
    modes = problem.basis()
    M = len(modes)
    lams = np.array([m.lam for m in modes])
    B = _divergence_coupling(modes)
    P = _output_or_empty(problem.sensors, modes)
    tq, wq = _moment_nodes(problem, record.grid)
    decay = _decay_table(problem.alpha, lams, tq)
    moments = np.empty((M, record.channel_count))
    for ch in range(record.channel_count):
        z = record.samples[:, ch]
        if problem.alpha == 1.0:
            zq = np.interp(tq, record.grid.nodes, z)
            tail = decay.T @ (wq * zq)
            moments[:, ch] = z[0] - z[-1] * np.exp(-lams * problem.horizon) - lams * tail
        else:
            sf = SampledFunction(record.grid, z)
            zeta = -caputo_values(sf, problem.alpha, tq, first_cell_power=True)
            moments[:, ch] = decay.T @ (wq * zeta)
    return B @ np.einsum("ck,kc->k", P, moments)


def assemble_rhs_from_state(
    problem: HumProblem, state: ModalState, depth: int | None = None
) -> np.ndarray:
    """Exact data-side vector for a known modal initial state.

    Bypasses sampling entirely: the record generated by `state` enters
    through closed modal algebra, with the cross decay-product integrals
    computed on the quadrature panels. `depth` truncates the state
    expansion (defaults to its full length).
    """
    modes = problem.basis()
    M = len(modes)
    lams = np.array([m.lam for m in modes])
    depth = len(state) if depth is None else depth
    if depth < 1 or depth > len(state):
        raise InputError(f"depth {depth} outside 1..{len(state)}")
    deep_modes = eigenpairs(SpatialDomain(problem.dimension), depth)
    deep_lams = np.array([m.lam for m in deep_modes])
    B = _divergence_coupling(modes)
    P = _output_or_empty(problem.sensors, modes)
    Pd = _output_or_empty(problem.sensors, deep_modes)
    Tm = _tm(
        deep_lams,
        problem.alpha,
        problem.horizon,
        problem.time_panels,
        problem.time_order,
        lams_col=lams,
    )
    weighted = deep_lams * state.coefficients[:depth]
    moments = np.einsum("cl,l,lk->kc", Pd, weighted, Tm)
    return B @ np.einsum("ck,kc->k", P, moments)


def solve_reconstruction(
    problem: HumProblem, gram: np.ndarray, rhs: np.ndarray
) -> np.ndarray:
    """Solve Lambda c = rhs under the problem's regularization."""
    gram = np.asarray(gram, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1] or gram.shape[0] != rhs.size:
        raise InputError("gram/rhs shapes do not match")
    scale = np.max(np.abs(gram))
    if scale > 0.0 and np.max(np.abs(gram - gram.T)) > 1e-8 * scale:
        raise InputError("gram matrix is not symmetric")

    reg = problem.regularization
    size = gram.shape[0]
    if reg.kind == "spectral_tikhonov":
        n = problem.dimension
        if size % n:
            raise InputError("gram size is not a multiple of the dimension")
        modes = problem.basis(size // n)
        lams = np.repeat([m.lam for m in modes], n)
        ev_max = float(eigh(gram, eigvals_only=True)[-1])
        shift = reg.value * max(ev_max, 0.0) * (lams / lams[-1]) ** 2
        return np.linalg.solve(gram + np.diag(shift), rhs)

    evals, vecs = eigh(gram)
    ev_min, ev_max = float(evals[0]), float(evals[-1])
    if reg.kind == "none":
        if ev_min <= 1e-10 * ev_max or ev_max <= 0.0:
            raise SolvabilityError(
                f"gram not positive definite (smallest eigenvalue {ev_min:.3e})",
                smallest_eigenvalue=ev_min,
            )
        return vecs @ ((vecs.T @ rhs) / evals)
    if reg.kind == "tikhonov":
        mu = reg.value
        if mu is None:
            mu = max(1e-10 * np.trace(gram) / size, 1e-300)
        return vecs @ ((vecs.T @ rhs) / (evals + mu))
    # truncated_svd
    keep = evals > reg.value * max(ev_max, 0.0)
    if not np.any(keep):
        return np.zeros(size)
    proj = vecs[:, keep].T @ rhs
    return vecs[:, keep] @ (proj / evals[keep])


def _forward_residual(
    problem: HumProblem,
    record: MeasurementRecord,
    modes: Sequence[EigenMode],
    coeffs: np.ndarray,
) -> float:
    """L2(0,T) misfit of the candidate's forward output against the record.

    The candidate initial state is the potential of the solved gradient:
    u_k = (B' c)_k / lam_k.
    """
    lams = np.array([m.lam for m in modes])
    B = _divergence_coupling(modes)
    state = (B.T @ coeffs) / lams
    P = _output_or_empty(problem.sensors, modes)
    decay = _decay_table(problem.alpha, lams, record.grid.nodes)
    predicted = (decay * state) @ P.T
    diff = record.samples - predicted
    return math.sqrt(float(np.sum(record.grid.weights[:, None] * diff * diff)))


def residual_against(
    problem: HumProblem, record: MeasurementRecord, field: GradientField
) -> float:
    """Forward misfit of a solved field against a record, without iterating."""
    modes = problem.basis(field.mode_count)
    return _forward_residual(problem, record, modes, field.coefficients)


def _record_from_state(problem: HumProblem, state: ModalState) -> MeasurementRecord:
    sysn = FractionalDiffusion.create(
        problem.alpha, SpatialDomain(problem.dimension), problem.horizon, len(state)
    )
    grid = TimeGrid.uniform(problem.horizon, 513)
    return generate_measurements(sysn, state, problem.sensors, grid)


def reconstruct(
    problem: HumProblem,
    record: MeasurementRecord | ModalState,
    truth: Sequence[Callable[..., np.ndarray]] | GradientField | None = None,
) -> ReconstructionResult:
    """Escalating solve loop: grow the truncation until the residual passes.

    The source is either a sampled record (data route: the fractional
    derivative is applied to the samples) or a modal initial state
    standing for its noiseless record (exact route: the pairing is done
    in closed modal algebra, and the residual is taken against the
    state's own sampled output).

    Iteration i uses mode_count + escalation_step*(i-1) modes; from the
    third iteration a regularization of 'none' is relaxed to the default
    shift, and a singular unregularized solve counts as an infinite
    residual rather than a failure. Raises ConvergenceError (carrying the
    best iterate and the residual history) when the cap is reached with
    the residual still above epsilon.
    """
    state = record if isinstance(record, ModalState) else None
    if state is not None:
        record = _record_from_state(problem, state)
    history: list[float] = []
    best: ReconstructionResult | None = None
    for it in range(1, problem.max_iterations + 1):
        M_i = problem.mode_count + problem.escalation_step * (it - 1)
        reg_i = problem.regularization
        if it >= 3 and reg_i.kind == "none":
            reg_i = Regularization.tikhonov()
        prob_i = replace(problem, mode_count=M_i, regularization=reg_i)
        gram = assemble_gram(prob_i)
        rhs = (
            assemble_rhs_from_state(prob_i, state)
            if state is not None
            else assemble_rhs(prob_i, record)
        )
        try:
            coeffs = solve_reconstruction(prob_i, gram, rhs)
        except SolvabilityError:
            history.append(float("inf"))
            continue
        modes = prob_i.basis()
        residual = _forward_residual(prob_i, record, modes, coeffs)
        history.append(residual)
        evals = eigh(gram, eigvals_only=True)
        cond = float(evals[-1] / evals[0]) if evals[0] > 0.0 else float("inf")
        field = GradientField(coeffs, modes)
        err = omega_error(field, truth, problem.omega) if truth is not None else None
        candidate = ReconstructionResult(
            field, residual, cond, it, err, tuple(history)
        )
        if best is None or residual < best.residual:
            best = candidate
        if residual <= problem.epsilon:
            return candidate
    raise ConvergenceError(
        f"residual {history[-1]:.3e} above epsilon {problem.epsilon:.3e} "
        f"after {problem.max_iterations} iterations",
        best=best,
        residual_history=tuple(history),
    )


def _truth_components(
    truth: Sequence[Callable[..., np.ndarray]] | GradientField | Callable[..., np.ndarray],
    n: int,
) -> tuple[Callable[..., np.ndarray], ...]:
    if isinstance(truth, GradientField):
        if truth.dimension != n:
            raise InputError("truth field has the wrong dimension")
        return tuple(truth.component(d) for d in range(n))
    if callable(truth):
        truth = (truth,)
    fns = tuple(truth)
    if len(fns) != n:
        raise InputError(f"expected {n} truth components, got {len(fns)}")
    return fns


def omega_error(
    field: GradientField,
    truth: Sequence[Callable[..., np.ndarray]] | GradientField | Callable[..., np.ndarray],
    omega: Region,
    order: int = 96,
) -> float:
    """Squared L2(omega)^n distance between the field and the truth."""
    n = field.dimension
    if omega.dimension != n:
        raise InputError("omega dimension does not match the field")
    fns = _truth_components(truth, n)
    quad = SpatialQuadrature.for_region(omega, order)
    total = 0.0
    if n == 1:
        x = quad.nodes[0]
        w = quad.weights[0]
        diff = field.component(0)(x) - np.asarray(fns[0](x), dtype=float)
        return float(np.sum(w * diff * diff))
    xg, yg = np.meshgrid(quad.nodes[0], quad.nodes[1], indexing="ij")
    w2 = np.outer(quad.weights[0], quad.weights[1])
    for d in range(n):
        diff = field.component(d)(xg, yg) - np.asarray(fns[d](xg, yg), dtype=float)
        total += float(np.sum(w2 * diff * diff))
    return total
