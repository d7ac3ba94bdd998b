import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_compensator, random_generator, random_stable_plant
from moments.core import (
    JordanStructure,
    OperatorConstruction,
    closed_loop_moment,
    compensator_virtual_moment,
    decompose_closed_loop,
    k_moment,
    k_moment_derivative_oracle,
    normal_rank,
    open_loop_moment,
    partitioned_closed_loop_check,
    transfer_apply,
    transfer_matrix,
    transfer_range_diagnostics,
)
from moments.systems import Plant, SignalGenerator, interconnect, zero_compensator
from utils.errors import DefectiveGenerator, DimensionMismatch, PoleAtPoint, SpectraOverlap
from utils.linalg import Spectrum, spectra_disjoint


def test_scalar_open_loop_moment(scalar_plant, integrator_generator):
    result = open_loop_moment(scalar_plant, integrator_generator)
    assert_allclose(result.moment.value, [[1.0]])
    assert_allclose(result.Pi, [[1.0]])


def test_feedthrough_of_disturbance_adds_to_moment(integrator_generator):
    plant = Plant.from_matrices([[-1.0]], [[1.0]], [[1.0]], [[1.0]], Q=[[2.0]])
    assert_allclose(open_loop_moment(plant, integrator_generator).moment.value, [[3.0]])


def test_generator_dimension_mismatch(scalar_plant):
    with pytest.raises(DimensionMismatch):
        open_loop_moment(scalar_plant, SignalGenerator([[0.0]], [[1.0], [1.0]]))


def test_disconnected_compensator_leaves_moment_unchanged(scalar_plant, integrator_generator):
    closed = closed_loop_moment(scalar_plant, integrator_generator, zero_compensator(scalar_plant))
    assert_allclose(closed.M_cl.value, [[1.0]])
    assert_allclose(closed.M_c.value, [[0.0]])


def test_closed_loop_overlap_rejected(scalar_plant, integrator_generator):
    # integrating compensator puts an eigenvalue of A_cl at the generator mode
    comp = zero_compensator(scalar_plant, F=[[0.0]])
    with pytest.raises(SpectraOverlap):
        closed_loop_moment(scalar_plant, integrator_generator, comp)


def test_decomposition_identity_over_random_triples():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 200:
        n, m, p, q = (int(v) for v in rng.integers(1, 5, size=4))
        nu, rho = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        plant = random_stable_plant(rng, n, m, p, q, with_d=bool(rng.integers(2)))
        gen = random_generator(rng, nu, q)
        comp = random_compensator(rng, rho, m, p)
        loop = interconnect(plant, comp)
        if not spectra_disjoint(loop.A_cl, gen.S).disjoint:
            continue
        decomposition = decompose_closed_loop(plant, gen, comp)
        scale = 1.0 + np.linalg.norm(decomposition.M_cl)
        assert decomposition.defect <= 1e-8 * scale
        op = transfer_matrix(plant, gen.S)
        induced = op.apply(decomposition.M_c)
        M_open = open_loop_moment(plant, gen).moment.value
        assert np.linalg.norm(decomposition.M_cl - M_open - induced) <= 1e-8 * scale
        checked += 1


def test_partitioned_equations_and_virtual_moment(rng):
    plant = random_stable_plant(rng, 3, 2, 2, 2, with_d=True)
    gen = random_generator(rng, 3, 2)
    comp = random_compensator(rng, 2, 2, 2)
    closed = closed_loop_moment(plant, gen, comp)
    residuals = partitioned_closed_loop_check(plant, gen, comp, closed.Pi_x, closed.Pi_xi)
    assert residuals.plant_block <= 1e-10
    assert residuals.compensator_block <= 1e-10
    virtual = compensator_virtual_moment(comp, gen.S, closed.M_cl.value)
    assert_allclose(virtual, closed.M_c.value, atol=1e-9)


def test_k_moment_zero_is_transfer_value(rng):
    plant = random_stable_plant(rng, 4, 2, 3, 1, with_d=True)
    s = 0.3 + 1.2j
    assert_allclose(k_moment(plant, s, 0).value, plant.transfer(s), atol=1e-12)


def test_k_moments_match_derivatives():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(1, 6))
        plant = random_stable_plant(rng, n, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 1, with_d=True)
        s_star = complex(rng.uniform(-0.2, 0.5), rng.uniform(-3.0, 3.0))
        for k in range(4):
            closed_form = k_moment(plant, s_star, k).value
            oracle = k_moment_derivative_oracle(plant, s_star, k)
            assert np.linalg.norm(closed_form - oracle) <= 1e-6 * (1.0 + np.linalg.norm(closed_form))


def test_k_moment_at_pole(scalar_plant):
    with pytest.raises(PoleAtPoint):
        k_moment(scalar_plant, -1.0, 0)


def test_negative_k_rejected(scalar_plant):
    with pytest.raises(DimensionMismatch):
        k_moment(scalar_plant, 0.0, -1)


def test_transfer_operator_of_diagonal_generator(rng):
    plant = random_stable_plant(rng, 4, 2, 3, 1, with_d=True)
    s = np.array([0.0, 0.5, 1.5])
    S = np.diag(s)
    M_in = rng.normal(size=(2, 3))
    result = transfer_apply(plant, S, M_in)
    for j, s_j in enumerate(s):
        assert_allclose(result[:, j], plant.transfer(s_j).real @ M_in[:, j], atol=1e-10)


def test_operator_constructions_agree_diagonalizable(rng):
    plant = random_stable_plant(rng, 4, 2, 2, 1, with_d=True)
    S = np.array([[0.0, 2.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 0.7]])
    T = np.eye(3) + 0.2 * rng.normal(size=(3, 3))
    S = np.linalg.solve(T, S @ T)
    stacked = transfer_matrix(plant, S, OperatorConstruction.BASIS_PROBE)
    jordan = transfer_matrix(plant, S, OperatorConstruction.JORDAN_EXPLICIT)
    assert np.max(np.abs(stacked.matrix_form - jordan.matrix_form)) <= 1e-8


def test_operator_constructions_agree_on_jordan_block(rng):
    plant = random_stable_plant(rng, 3, 2, 2, 1, with_d=True)
    S = np.array([[0.0, 1.0], [0.0, 0.0]])
    structure = JordanStructure(eigenvalues=[0.0], block_sizes=[2])
    stacked = transfer_matrix(plant, S)
    jordan = transfer_matrix(plant, S, OperatorConstruction.JORDAN_EXPLICIT, jordan=structure)
    assert np.max(np.abs(stacked.matrix_form - jordan.matrix_form)) <= 1e-8

    eta0 = k_moment(plant, 0.0, 0).value.real
    eta1 = k_moment(plant, 0.0, 1).value.real
    M = rng.normal(size=(2, 2))
    assert_allclose(stacked.apply(M), eta0 @ M + eta1 @ M @ (-S), atol=1e-10)


def test_defective_generator_needs_declared_structure(scalar_plant):
    with pytest.raises(DefectiveGenerator):
        transfer_matrix(scalar_plant, [[0.0, 1.0], [0.0, 0.0]], OperatorConstruction.JORDAN_EXPLICIT)


def test_wrong_jordan_declaration(scalar_plant):
    structure = JordanStructure(eigenvalues=[0.5], block_sizes=[2])
    with pytest.raises(DefectiveGenerator):
        transfer_matrix(scalar_plant, [[0.0, 1.0], [0.0, 0.0]], OperatorConstruction.JORDAN_EXPLICIT,
                        jordan=structure)


def test_transmission_zero_flagged(zero_plant, integrator_generator):
    op = transfer_matrix(zero_plant, integrator_generator.S)
    assert_allclose(op.matrix_form, [[0.0]], atol=1e-12)
    diagnostics = transfer_range_diagnostics(op, Spectrum.from_matrix(integrator_generator.S), zero_plant)
    assert not diagnostics.surjective
    assert diagnostics.flagged == [0.0]


def test_himat_operator_is_surjective(himat):
    plant, gen = himat
    op = transfer_matrix(plant, gen.S)
    diagnostics = transfer_range_diagnostics(op, Spectrum.from_matrix(gen.S), plant)
    assert diagnostics.surjective
    assert diagnostics.flagged == []


def test_transfer_operator_is_linear(rng):
    plant = random_stable_plant(rng, 4, 2, 3, 1, with_d=True)
    S = random_generator(rng, 3, 1).S
    M1, M2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    alpha, beta = -1.4, 0.6
    assert_allclose(
        transfer_apply(plant, S, alpha * M1 + beta * M2),
        alpha * transfer_apply(plant, S, M1) + beta * transfer_apply(plant, S, M2),
        atol=1e-10,
    )


def test_k_moments_are_conjugate_symmetric(rng):
    plant = random_stable_plant(rng, 4, 2, 2, 1, with_d=True)
    s_star = 0.2 + 1.7j
    for k in range(4):
        assert_allclose(k_moment(plant, np.conj(s_star), k).value,
                        np.conj(k_moment(plant, s_star, k).value), atol=1e-12)


def test_rank_deficient_input_is_not_a_transmission_zero(integrator_generator):
    # B has rank 1, so W(s) has normal rank 1 and W(0) loses no rank
    plant = Plant.from_matrices(np.diag([-1.0, -2.0]), np.ones((2, 2)), np.eye(2), np.ones((2, 1)))
    assert normal_rank(plant) == 1
    op = transfer_matrix(plant, integrator_generator.S)
    diagnostics = transfer_range_diagnostics(op, Spectrum.from_matrix(integrator_generator.S), plant)
    assert not diagnostics.surjective
    assert diagnostics.eigenvalues[0].eta0_rank == 1
    assert diagnostics.flagged == []


def test_normal_rank_of_square_plant(rng):
    assert normal_rank(random_stable_plant(rng, 4, 2, 2, 1)) == 2
