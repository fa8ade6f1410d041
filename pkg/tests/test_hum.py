import json
import math

import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.linalg import eigh
from scipy.special import erfcx

from fracobs.errors import ConvergenceError, InputError, SolvabilityError
from fracobs.fraccalc import TimeGrid, graded_panel_edges
from fracobs.hum import (
    GradientField,
    HumProblem,
    Regularization,
    assemble_gram,
    assemble_rhs,
    assemble_rhs_from_state,
    ml_product_integral,
    omega_error,
    reconstruct,
    solve_reconstruction,
    vector_basis_field,
)
from fracobs.spectral import Region, SpatialDomain, grad_coupling
from fracobs.system import (
    FractionalDiffusion,
    ModalState,
    Sensor,
    generate_measurements,
    output_matrix,
)

PI2 = math.pi**2
FULL = Region((0.0,), (1.0,))


def coupling_matrix(modes):
    n = modes[0].dimension
    B = np.empty((n * len(modes), len(modes)))
    for qi, q in enumerate(modes):
        for d in range(n):
            for ki, k in enumerate(modes):
                B[n * qi + d, ki] = -grad_coupling(q, d, k)
    return B


def in_span_state(problem, coeffs):
    """Initial state whose gradient has exactly the given basis coefficients."""
    modes = problem.basis()
    lams = np.array([m.lam for m in modes])
    return ModalState((coupling_matrix(modes).T @ coeffs) / lams)


def test_regularization_validation():
    with pytest.raises(InputError):
        Regularization("ridge")
    with pytest.raises(InputError):
        Regularization("none", 0.1)
    with pytest.raises(InputError):
        Regularization("truncated_svd")
    with pytest.raises(InputError):
        Regularization("spectral_tikhonov")
    with pytest.raises(InputError):
        Regularization.tikhonov(-1e-6)
    assert Regularization.tikhonov().value is None


def test_problem_validation():
    sensors = (Sensor.pointwise((0.3,)),)
    with pytest.raises(InputError):
        HumProblem(0, FULL, sensors, 0.5, 1.0)
    with pytest.raises(InputError):
        HumProblem(3, FULL, sensors, 1.2, 1.0)
    with pytest.raises(InputError):
        HumProblem(3, FULL, sensors, 0.5, 0.0)
    with pytest.raises(InputError):
        HumProblem(3, FULL, sensors, 0.5, 1.0, epsilon=0.0)
    with pytest.raises(InputError):
        HumProblem(3, FULL, sensors, 0.5, 1.0, max_iterations=0)


def test_vector_basis_field_index_map():
    # g(q, d) = n(q-1) + d, checked through the unit slots it produces
    f = vector_basis_field(1, 2, 2)
    assert f.coefficients[0] == 1.0 and np.sum(np.abs(f.coefficients)) == 1.0
    f = vector_basis_field(4, 2, 2)
    assert f.coefficients[3] == 1.0
    for k in range(1, 4):
        assert vector_basis_field(k, 3, 1).coefficients[k - 1] == 1.0
    with pytest.raises(InputError):
        vector_basis_field(0, 2, 2)
    with pytest.raises(InputError):
        vector_basis_field(5, 2, 2)


def test_vector_basis_field_components():
    f = vector_basis_field(1, 2, 2)  # mode (1,1), first slot
    x = np.array([0.5])
    y = np.array([0.5])
    assert f.component(0)(x, y)[0] == pytest.approx(2.0, rel=1e-14)
    assert f.component(1)(x, y)[0] == 0.0
    with pytest.raises(InputError):
        f.component(2)


def test_gradient_field_validation():
    modes = HumProblem(2, FULL, (), 1.0, 1.0).basis()
    with pytest.raises(InputError):
        GradientField(np.zeros(3), modes)
    with pytest.raises(InputError):
        GradientField(np.zeros(2), ())


def test_ml_product_integral_alpha_one_closed_form():
    # int_0^1 exp(-2 pi^2 t) dt
    want = (1.0 - math.exp(-2.0 * PI2)) / (2.0 * PI2)
    assert want == pytest.approx(0.05066059168563722, rel=1e-15)
    got = ml_product_integral(PI2, PI2, 1.0, 1.0)
    assert got == pytest.approx(want, rel=1e-12)


def test_ml_product_integral_half_alpha_vs_trapezoid_oracle():
    # E_{1/2}(-x) = erfcx(x); substituting t = s^2 removes the sqrt(t)
    # kink at the origin, without which a trapezoid rule stalls near
    # 3.5e-7 regardless of the node count.
    s = np.linspace(0.0, 1.0, 100001)
    oracle = np.trapezoid(erfcx(PI2 * s) * erfcx(4.0 * PI2 * s) * 2.0 * s, s)
    assert oracle == pytest.approx(0.004878557671845788, abs=5e-10)
    got = ml_product_integral(PI2, 4.0 * PI2, 0.5, 1.0)
    assert got == pytest.approx(oracle, abs=1e-8)


def test_ml_product_integral_positivity_and_validation():
    for alpha in (0.3, 0.5, 0.84, 1.0):
        assert ml_product_integral(4.0 * PI2, 4.0 * PI2, alpha, 2.0) > 0.0
    with pytest.raises(InputError):
        ml_product_integral(0.0, PI2, 0.5, 1.0)


def test_assemble_gram_degenerate_cases():
    no_sensors = HumProblem(3, FULL, (), 0.5, 1.0)
    assert np.all(assemble_gram(no_sensors) == 0.0)
    # a single mode cannot couple to itself through the gradient
    single = HumProblem(1, FULL, (Sensor.pointwise((0.2,)),), 0.5, 1.0)
    assert assemble_gram(single) == pytest.approx(np.zeros((1, 1)))


def test_assemble_gram_matches_time_sampled_gram():
    problem = HumProblem(3, FULL, (Sensor.pointwise((0.2,)),), 1.0, 1.0)
    G = assemble_gram(problem)
    modes = problem.basis()
    lams = np.array([m.lam for m in modes])
    B = coupling_matrix(modes)
    P = output_matrix(problem.sensors, modes)
    t = np.linspace(0.0, 1.0, 500001)
    decay = np.exp(-np.outer(t, lams))
    signals = decay @ (B * P[0]).T
    brute = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            brute[i, j] = np.trapezoid(signals[:, i] * signals[:, j], t)
    assert np.max(np.abs(G - brute)) <= 1e-8
    assert np.max(np.abs(G - G.T)) <= 1e-14 * np.max(np.abs(G))


def test_assemble_gram_symmetry_and_psd():
    box = Region((0.1, 0.2), (0.6, 0.9))
    weight = lambda x, y: np.cos(math.sqrt(3.0) * math.pi * x) * np.sin(
        math.sqrt(2.0) * math.pi * y
    )
    configs = [
        HumProblem(5, FULL, (Sensor.pointwise((0.31,)),), 0.5, 1.5),
        HumProblem(
            4,
            Region((0.0,), (0.4,)),
            (Sensor.zonal(Region((0.9,), (1.0,)), lambda y: np.ones_like(y)),),
            1.0,
            2.0,
        ),
        HumProblem(3, Region((0.0, 0.0), (1.0, 1.0)), (Sensor.zonal(box, weight),), 0.84, 1.0),
    ]
    for problem in configs:
        G = assemble_gram(problem)
        scale = np.max(np.abs(G))
        assert np.max(np.abs(G - G.T)) <= 1e-12 * scale
        ev = eigh(G, eigvals_only=True)
        assert ev[0] >= -1e-10 * ev[-1]


def test_gram_coercivity_surrogate():
    # even truncation, else the odd/even coupling split makes B singular
    # for every sensor and the comparison says nothing about sensing
    strategic = HumProblem(4, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    ev = eigh(assemble_gram(strategic), eigvals_only=True)
    assert ev[0] > 1e-5 * ev[-1]
    # b = 0.5 misses every even mode and the gram loses rank
    blind = HumProblem(4, FULL, (Sensor.pointwise((0.5,)),), 1.0, 1.0)
    ev = eigh(assemble_gram(blind), eigvals_only=True)
    assert abs(ev[0]) <= 1e-12 * ev[-1]


def test_restricted_assembly_mode():
    problem = HumProblem(4, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    G = assemble_gram(problem)
    assert np.max(np.abs(assemble_gram(problem, restricted=True) - G)) <= 1e-12
    sub = HumProblem(4, Region((0.0,), (0.25,)), problem.sensors, 1.0, 1.0)
    G_sub = assemble_gram(sub, restricted=True)
    assert np.max(np.abs(G_sub - G)) > 0.1
    assert np.max(np.abs(G_sub - G_sub.T)) <= 1e-12 * np.max(np.abs(G_sub))
    ev = eigh(G_sub, eigvals_only=True)
    assert ev[0] >= -1e-10 * ev[-1]


def test_assemble_rhs_zero_record():
    problem = HumProblem(3, FULL, (Sensor.pointwise((0.3,)),), 0.5, 1.0)
    sysn = FractionalDiffusion.create(0.5, SpatialDomain.interval(), 1.0, 3)
    record = generate_measurements(
        sysn, ModalState(np.zeros(3)), problem.sensors, TimeGrid.uniform(1.0, 33)
    )
    assert np.all(assemble_rhs(problem, record) == 0.0)


def test_assemble_rhs_validation():
    problem = HumProblem(3, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    sysn = FractionalDiffusion.create(1.0, SpatialDomain.interval(), 1.0, 3)
    two = (Sensor.pointwise((0.3,)), Sensor.pointwise((0.7,)))
    record = generate_measurements(sysn, ModalState(np.zeros(3)), two, TimeGrid.uniform(1.0, 17))
    with pytest.raises(InputError):
        assemble_rhs(problem, record)
    short = FractionalDiffusion.create(1.0, SpatialDomain.interval(), 0.5, 3)
    record = generate_measurements(
        short, ModalState(np.zeros(3)), problem.sensors, TimeGrid.uniform(0.5, 17)
    )
    with pytest.raises(InputError):
        assemble_rhs(problem, record)


def test_rhs_exactness_alpha_one():
    problem = HumProblem(4, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    coeffs = np.random.default_rng(7).standard_normal(4)
    state = in_span_state(problem, coeffs)
    want = assemble_gram(problem) @ coeffs
    scale = np.max(np.abs(want))
    # closed modal route is exact to roundoff
    assert np.max(np.abs(assemble_rhs_from_state(problem, state) - want)) <= 1e-12 * scale
    # sampled route carries the interpolation error of the record
    sysn = FractionalDiffusion.create(1.0, SpatialDomain.interval(), 1.0, 4)
    record = generate_measurements(sysn, state, problem.sensors, TimeGrid.uniform(1.0, 2001))
    assert np.max(np.abs(assemble_rhs(problem, record) - want)) <= 5e-4 * scale


def test_rhs_exactness_fractional():
    problem = HumProblem(4, FULL, (Sensor.pointwise((0.3,)),), 0.5, 1.0)
    coeffs = np.random.default_rng(11).standard_normal(4)
    state = in_span_state(problem, coeffs)
    want = assemble_gram(problem) @ coeffs
    scale = np.max(np.abs(want))
    assert np.max(np.abs(assemble_rhs_from_state(problem, state) - want)) <= 1e-12 * scale
    # at alpha = 0.5 mode k has lost most of its amplitude by
    # t ~ lam_k^{-2}, far inside the first uniform cell; only a record
    # graded toward 0 retains that transient. Measured: 2.8e-5 graded
    # against 5.1e-2 uniform at the same node count.
    sysn = FractionalDiffusion.create(0.5, SpatialDomain.interval(), 1.0, 4)
    nodes = np.union1d(graded_panel_edges(1.0, 384, 1e-12), np.linspace(0.0, 1.0, 129))
    record = generate_measurements(sysn, state, problem.sensors, TimeGrid.from_nodes(nodes))
    assert np.max(np.abs(assemble_rhs(problem, record) - want)) <= 2e-4 * scale
    uniform = generate_measurements(
        sysn, state, problem.sensors, TimeGrid.uniform(1.0, nodes.size)
    )
    assert np.max(np.abs(assemble_rhs(problem, uniform) - want)) > 1e-2 * scale


def test_rhs_single_mode_dense_oracle():
    problem = HumProblem(3, FULL, (Sensor.pointwise((0.2,)),), 1.0, 1.0)
    rhs = assemble_rhs_from_state(problem, ModalState([0.0, 1.0, 0.0]))
    modes = problem.basis()
    lams = np.array([m.lam for m in modes])
    B = coupling_matrix(modes)
    P = output_matrix(problem.sensors, modes)
    t = np.linspace(0.0, 1.0, 1000001)
    zeta = lams[1] * np.exp(-lams[1] * t) * P[0, 1]
    decay = np.exp(-np.outer(t, lams))
    brute = np.array(
        [np.trapezoid(zeta * (decay @ (B[i] * P[0])), t) for i in range(3)]
    )
    assert np.max(np.abs(rhs - brute)) <= 1e-8


def test_solve_trivial_examples():
    problem = HumProblem(
        2, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0, Regularization.tikhonov(1e-3)
    )
    gram = np.eye(2)
    assert np.all(solve_reconstruction(problem, gram, np.zeros(2)) == 0.0)
    got = solve_reconstruction(problem, gram, np.array([1.0, 0.0]))
    assert got == pytest.approx(np.array([1.0 / (1.0 + 1e-3), 0.0]), rel=1e-14)


def test_solve_validation():
    problem = HumProblem(2, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    with pytest.raises(InputError):
        solve_reconstruction(problem, np.eye(3), np.zeros(2))
    skew = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(InputError):
        solve_reconstruction(problem, skew, np.zeros(2))


def test_solve_none_raises_on_singular_gram():
    problem = HumProblem(
        4, FULL, (Sensor.pointwise((0.5,)),), 1.0, 1.0, Regularization.none()
    )
    gram = assemble_gram(problem)
    with pytest.raises(SolvabilityError) as err:
        solve_reconstruction(problem, gram, np.ones(4))
    assert err.value.smallest_eigenvalue is not None
    assert abs(err.value.smallest_eigenvalue) <= 1e-10 * eigh(gram, eigvals_only=True)[-1]


def test_solve_truncated_svd_reproduces_range():
    problem = HumProblem(
        4, FULL, (Sensor.pointwise((0.5,)),), 1.0, 1.0, Regularization.truncated_svd(1e-12)
    )
    gram = assemble_gram(problem)
    rhs = gram @ np.random.default_rng(3).standard_normal(4)
    got = solve_reconstruction(problem, gram, rhs)
    assert np.max(np.abs(gram @ got - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_solve_spectral_tikhonov():
    sensors = (Sensor.pointwise((0.3,)),)
    pd = HumProblem(4, FULL, sensors, 1.0, 1.0, Regularization.none())
    gram = assemble_gram(pd)
    rhs = gram @ np.random.default_rng(5).standard_normal(4)
    exact = solve_reconstruction(pd, gram, rhs)
    tiny = HumProblem(4, FULL, sensors, 1.0, 1.0, Regularization.spectral_tikhonov(1e-14))
    assert np.max(np.abs(solve_reconstruction(tiny, gram, rhs) - exact)) <= 1e-8
    # the shift it applies is mu * ev_max * (lam_q / lam_M)^2 per row
    mu = 1e-3
    shifted = HumProblem(4, FULL, sensors, 1.0, 1.0, Regularization.spectral_tikhonov(mu))
    got = solve_reconstruction(shifted, gram, rhs)
    lams = np.array([m.lam for m in pd.basis()])
    shift = mu * eigh(gram, eigvals_only=True)[-1] * (lams / lams[-1]) ** 2
    assert np.max(np.abs(gram @ got + shift * got - rhs)) <= 1e-12


def test_tikhonov_consistency_monotone():
    problem = HumProblem(4, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    coeffs = np.random.default_rng(7).standard_normal(4)
    gram = assemble_gram(problem)
    rhs = assemble_rhs_from_state(problem, in_span_state(problem, coeffs))
    errors = []
    for mu in (1e-6, 1e-9, 1e-12):
        reg = HumProblem(
            4, FULL, problem.sensors, 1.0, 1.0, Regularization.tikhonov(mu)
        )
        errors.append(np.linalg.norm(solve_reconstruction(reg, gram, rhs) - coeffs))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] <= 1e-7


def test_k_norm_identity():
    # c' Lambda c is the output energy of the evolution seeded by the
    # candidate's potential
    problem = HumProblem(4, FULL, (Sensor.pointwise((0.3,)),), 1.0, 1.0)
    coeffs = np.random.default_rng(9).standard_normal(4)
    quad_form = float(coeffs @ assemble_gram(problem) @ coeffs)
    modes = problem.basis()
    lams = np.array([m.lam for m in modes])
    B = coupling_matrix(modes)
    P = output_matrix(problem.sensors, modes)
    t = np.linspace(0.0, 1.0, 400001)
    signal = np.exp(-np.outer(t, lams)) @ ((B.T @ coeffs) * P[0])
    brute = simpson(signal * signal, x=t)
    assert quad_form == pytest.approx(brute, abs=1e-8)


def test_reconstruct_noiseless_in_span_one_iteration():
    problem = HumProblem(
        6,
        Region((0.2,), (0.8,)),
        (Sensor.pointwise((0.3,)),),
        1.0,
        1.0,
        regularization=Regularization.none(),
        epsilon=1e-6,
    )
    coeffs = np.random.default_rng(7).standard_normal(6)
    truth = GradientField(coeffs, problem.basis())
    result = reconstruct(problem, in_span_state(problem, coeffs), truth=truth)
    assert result.iterations == 1
    assert result.residual <= 1e-6
    assert result.error_vs_truth <= 1e-10
    assert np.max(np.abs(result.field.coefficients - coeffs)) <= 1e-7


def test_reconstruct_zero_record():
    sensors = (Sensor.pointwise((0.3,)),)
    sysn = FractionalDiffusion.create(1.0, SpatialDomain.interval(), 1.0, 6)
    record = generate_measurements(
        sysn, ModalState(np.zeros(6)), sensors, TimeGrid.uniform(1.0, 101)
    )
    result = reconstruct(HumProblem(6, FULL, sensors, 1.0, 1.0), record)
    assert result.iterations == 1
    assert result.residual == 0.0
    assert np.all(result.field.coefficients == 0.0)


def test_reconstruct_escalates_until_span_is_reached():
    problem = HumProblem(
        2,
        FULL,
        (Sensor.pointwise((0.3,)),),
        1.0,
        1.0,
        regularization=Regularization.none(),
        epsilon=1e-6,
        escalation_step=2,
        max_iterations=5,
    )
    wide = HumProblem(6, FULL, problem.sensors, 1.0, 1.0)
    coeffs = np.random.default_rng(7).standard_normal(6)
    result = reconstruct(problem, in_span_state(wide, coeffs))
    assert result.iterations == 3
    assert result.field.mode_count == 6
    assert result.residual <= 1e-6
    assert result.residual_history[0] > result.residual_history[-1]


def test_reconstruct_convergence_error_carries_best():
    sensors = (Sensor.pointwise((0.3,)),)
    wide = HumProblem(6, FULL, sensors, 1.0, 1.0)
    coeffs = np.random.default_rng(7).standard_normal(6)
    sysn = FractionalDiffusion.create(1.0, SpatialDomain.interval(), 1.0, 6)
    record = generate_measurements(
        sysn, in_span_state(wide, coeffs), sensors, TimeGrid.uniform(1.0, 65)
    )
    problem = HumProblem(
        2, FULL, sensors, 1.0, 1.0, epsilon=1e-13, escalation_step=0, max_iterations=2
    )
    with pytest.raises(ConvergenceError) as err:
        reconstruct(problem, record)
    assert err.value.best is not None
    assert len(err.value.residual_history) == 2
    assert err.value.best.residual == min(err.value.residual_history)


def test_reconstruct_data_route_residual():
    # the output residual can be small while the coefficient error is
    # not; an ill-conditioned gram hides error in weakly sensed modes
    sensors = (Sensor.pointwise((0.3,)),)
    problem = HumProblem(6, FULL, sensors, 1.0, 1.0, epsilon=1e-3, max_iterations=1)
    coeffs = np.random.default_rng(7).standard_normal(6)
    sysn = FractionalDiffusion.create(1.0, SpatialDomain.interval(), 1.0, 6)
    record = generate_measurements(
        sysn, in_span_state(problem, coeffs), sensors, TimeGrid.uniform(1.0, 2049)
    )
    result = reconstruct(problem, record)
    assert result.iterations == 1
    assert result.residual <= 1e-4
    assert result.gram_condition > 1e3


def test_omega_error_zero_for_matching_truth():
    coeffs = np.random.default_rng(2).standard_normal(4)
    field = GradientField(coeffs, HumProblem(4, FULL, (), 1.0, 1.0).basis())
    omega = Region((0.2,), (0.7,))
    assert omega_error(field, field, omega) <= 1e-14
    assert omega_error(field, field.component(0), omega) <= 1e-14


def test_omega_error_zero_field_against_known_profile():
    # int_{0.35}^{0.65} (2y(1-y)(1-2y))^2 dy, adaptive quadrature
    field = GradientField(np.zeros(4), HumProblem(4, FULL, (), 1.0, 1.0).basis())
    g = lambda y: 2.0 * y * (1.0 - y) * (1.0 - 2.0 * y)
    got = omega_error(field, g, Region((0.35,), (0.65,)))
    assert got == pytest.approx(0.002014810714285715, rel=1e-10)


def test_omega_error_validation():
    field = GradientField(np.zeros(4), HumProblem(4, FULL, (), 1.0, 1.0).basis())
    with pytest.raises(InputError):
        omega_error(field, field, Region((0.0, 0.0), (1.0, 1.0)))
    with pytest.raises(InputError):
        omega_error(field, (lambda x: x, lambda x: x), Region((0.0,), (1.0,)))


def test_write_csv_report(tmp_path):
    coeffs = np.random.default_rng(4).standard_normal(3)
    modes = HumProblem(3, FULL, (), 1.0, 1.0).basis()
    field = GradientField(coeffs, modes)
    result_path = tmp_path / "field.csv"
    from fracobs.hum import ReconstructionResult

    result = ReconstructionResult(field, 1e-7, 42.0, 2, 3e-9, (1e-3, 1e-7))
    result.write_csv(str(result_path), truth=field.component(0), samples=11)
    lines = result_path.read_text().splitlines()
    assert lines[0] == "x,d1_true,d1_rec"
    assert len(lines) == 13
    summary = json.loads(lines[-1][2:])
    assert summary["iterations"] == 2
    assert summary["residual"] == pytest.approx(1e-7)
    row = [float(v) for v in lines[5].split(",")]
    assert row[1] == pytest.approx(row[2], abs=1e-12)

    bare_path = tmp_path / "bare.csv"
    result.write_csv(str(bare_path), samples=5)
    first = bare_path.read_text().splitlines()[1].split(",")
    assert math.isnan(float(first[1]))
