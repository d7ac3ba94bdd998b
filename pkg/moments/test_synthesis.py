import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import random_compensator, random_generator, random_stable_plant
from moments.assignment import AssignmentProblem, solve_moment
from moments.core import closed_loop_moment, open_loop_moment
from moments.synthesis import (
    CanonicalCompensator,
    StabilizerWeights,
    assemble_compensator,
    build_augmented,
    canonicalize,
    closed_loop_spectrum,
    design_stabilizer,
    pbh_detectable,
    pbh_stabilizable,
    separation_spectra,
    spectra_match,
    spectrum_contains,
    stability_report,
    synthesize,
)
from moments.systems import Compensator, Plant, SignalGenerator
from utils.errors import NotAssignable, NotDetectable, NotMomentAssigning, NotStabilizable


def test_pbh_unstable_uncontrollable_mode():
    result = pbh_stabilizable([[1.0]], [[0.0]])
    assert not result.ok
    assert result.offending == [1.0]


def test_pbh_stable_mode_needs_no_input():
    assert pbh_stabilizable([[-1.0]], [[0.0]]).ok


def test_pbh_detectable_examples(rng):
    assert not pbh_detectable([[0.0]], [[1.0]]).ok
    A = rng.normal(size=(4, 4))
    assert pbh_detectable(np.eye(4), A).ok


def test_scalar_stability_report(scalar_plant, integrator_generator):
    report = stability_report(scalar_plant, integrator_generator)
    assert report.synthesizable
    assert report.offending_eigenvalues == []


def test_blocked_generator_mode_is_not_detectable(integrator_generator):
    plant = Plant.from_matrices([[-1.0]], [[1.0]], [[1.0]], [[0.0]])
    assert_allclose(open_loop_moment(plant, integrator_generator).moment.value, [[0.0]])
    report = stability_report(plant, integrator_generator)
    assert not report.moment_pair_detectable
    assert report.offending_for("detectable(M_open,S)") == [pytest.approx(0.0, abs=1e-12)]
    with pytest.raises(NotDetectable) as excinfo:
        synthesize(plant, integrator_generator, [[0.0]])
    assert excinfo.value.exit_code == 5
    assert "0" in str(excinfo.value)


def test_unstabilizable_plant_refused(integrator_generator):
    plant = Plant.from_matrices([[1.0, 0.0], [0.0, -1.0]], [[0.0], [1.0]], [[1.0, 1.0]], [[1.0], [1.0]])
    with pytest.raises(NotStabilizable):
        synthesize(plant, integrator_generator, [[0.0]])


def test_himat_stability_report(himat):
    plant, gen = himat
    assert stability_report(plant, gen).synthesizable


def test_scalar_augmented_system(scalar_plant, integrator_generator):
    aug = build_augmented(scalar_plant, integrator_generator, [[0.0]], [[-1.0]], [[1.0]])
    assert np.array_equal(aug.A_aug, [[-1.0, -1.0], [1.0, 0.0]])
    assert np.array_equal(aug.B_aug, [[1.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(aug.C_aug, [[1.0, 0.0]])


def test_zero_ga_makes_augmented_block_triangular(rng):
    plant = random_stable_plant(rng, 3, 2, 2, 1, with_d=True)
    gen = random_generator(rng, 2, 1)
    M_c = rng.normal(size=(2, 2))
    M_des = rng.normal(size=(2, 2))
    aug = build_augmented(plant, gen, M_des, M_c)
    assert np.array_equal(aug.A_aug[3:, :3], np.zeros((2, 3)))
    assert np.array_equal(aug.A_aug[3:, 3:], gen.S)
    assert np.array_equal(aug.B_aug[3:, :2], np.zeros((2, 2)))
    assert np.array_equal(aug.C_aug[:, 3:], -(M_des - plant.D @ M_c))


def test_scalar_design_stabilizer(scalar_plant, integrator_generator):
    aug = build_augmented(scalar_plant, integrator_generator, [[0.0]], [[-1.0]], [[1.0]])
    gains = design_stabilizer(aug)
    feedback, observer = separation_spectra(aug, gains)
    assert np.max(feedback.real) < 0
    assert np.max(observer.real) < 0


def test_decay_rate_moves_spectrum_left(scalar_plant, integrator_generator):
    aug = build_augmented(scalar_plant, integrator_generator, [[0.0]], [[-1.0]])
    gains = design_stabilizer(aug, StabilizerWeights(decay_rate=2.0))
    feedback, observer = separation_spectra(aug, gains)
    assert np.max(feedback.real) < -2.0
    assert np.max(observer.real) < -2.0


def test_flattening_structure(rng):
    nu, extra, m, p = 2, 3, 2, 1
    canonical = CanonicalCompensator(
        S=rng.normal(size=(nu, nu)), M_des=rng.normal(size=(p, nu)), M_c=rng.normal(size=(m, nu)),
        F_a=rng.normal(size=(nu, extra)), F_b=rng.normal(size=(extra, extra)), G_a=rng.normal(size=(nu, p)),
        G_b=rng.normal(size=(extra, p)), H_b=rng.normal(size=(m, extra)),
    )
    flat = canonical.flatten()
    assert canonical.rho == nu + extra
    assert np.array_equal(flat.F[:nu, :nu], canonical.S - canonical.G_a @ canonical.M_des)
    assert np.array_equal(flat.F[:nu, nu:], canonical.F_a)
    assert np.array_equal(flat.F[nu:, :nu], -canonical.G_b @ canonical.M_des)
    assert np.array_equal(flat.F[nu:, nu:], canonical.F_b)
    assert np.array_equal(flat.G, np.vstack([canonical.G_a, canonical.G_b]))
    assert np.array_equal(flat.H, np.hstack([canonical.M_c, canonical.H_b]))


def _check_synthesis(plant, gen, M_des, result):
    nu = gen.nu
    assert result.hurwitz
    assert result.compensator.rho == nu + plant.n + nu
    assert np.linalg.norm(result.closed_loop.M_cl.value - M_des) <= 1e-7 * (1.0 + np.linalg.norm(M_des))
    assert max(result.partition_error) <= 1e-8
    feedback, observer = separation_spectra(result.augmented, result.gains)
    assert spectra_match(result.spectrum, np.concatenate([feedback, observer]))


def test_himat_synthesis(himat):
    from config.himat import HIMAT_M_DES
    plant, gen = himat
    result = synthesize(plant, gen, HIMAT_M_DES, weights=StabilizerWeights(decay_rate=1.0))
    _check_synthesis(plant, gen, HIMAT_M_DES, result)
    assert np.max(result.spectrum.real) < -1.0


def test_random_synthesizable_instances_close_hurwitz():
    rng = np.random.default_rng(17)
    for _ in range(10):
        plant = random_stable_plant(rng, 3, 2, 2, 2, with_d=bool(rng.integers(2)))
        gen = random_generator(rng, 3, 2)
        if not stability_report(plant, gen).synthesizable:
            continue
        M_des = rng.normal(size=(2, 3))
        G_a = 0.1 * rng.normal(size=(3, 2))
        result = synthesize(plant, gen, M_des, G_a=G_a)
        _check_synthesis(plant, gen, M_des, result)


def test_augmented_pbh_agrees_with_plant_conditions():
    rng = np.random.default_rng(23)
    for _ in range(10):
        plant = random_stable_plant(rng, 3, 2, 2, 1)
        gen = random_generator(rng, 2, 1)
        M_des = rng.normal(size=(2, 2))
        solution = solve_moment(AssignmentProblem(plant, gen, M_des))
        aug = build_augmented(plant, gen, M_des, solution.M_c.value, rng.normal(size=(2, 2)))
        report = stability_report(plant, gen)
        assert pbh_stabilizable(aug.A_aug, aug.B_aug).ok == report.plant_stabilizable
        assert pbh_detectable(aug.C_aug, aug.A_aug).ok == (report.plant_detectable and report.moment_pair_detectable)


def test_transmission_zero_on_generator_breaks_augmented_detectability(zero_plant, integrator_generator):
    # Q cancels the open-loop moment so M_open = 0 at the zero
    plant = Plant(zero_plant.A, zero_plant.B, zero_plant.C, zero_plant.D, zero_plant.P, [[1.0]])
    report = stability_report(plant, integrator_generator)
    assert report.plant_stabilizable and report.plant_detectable
    assert not report.moment_pair_detectable
    aug = build_augmented(plant, integrator_generator, [[0.0]], [[0.0]], [[0.7]])
    assert pbh_stabilizable(aug.A_aug, aug.B_aug).ok
    detect = pbh_detectable(aug.C_aug, aug.A_aug)
    assert not detect.ok
    assert detect.offending == [pytest.approx(0.0, abs=1e-12)]


def test_unassignable_target_falls_back_to_least_squares_moment(zero_plant, integrator_generator):
    # W(0) = 0 blocks every change of the moment, so M_open = -1 is the closest assignable target
    result = synthesize(zero_plant, integrator_generator, [[1.0]])
    assert not result.assignment.exact
    assert_allclose(result.target, [[-1.0]], atol=1e-12)
    assert_allclose(result.closed_loop.M_cl.value, [[-1.0]], atol=1e-8)
    assert_allclose(result.canonical.M_des, [[-1.0]], atol=1e-12)
    assert result.hurwitz


def test_require_exact_refuses_unassignable_target(zero_plant, integrator_generator):
    with pytest.raises(NotAssignable) as excinfo:
        synthesize(zero_plant, integrator_generator, [[1.0]], require_exact=True)
    assert excinfo.value.exit_code == 4


def test_assemble_partitions_gain(scalar_plant, integrator_generator):
    aug = build_augmented(scalar_plant, integrator_generator, [[0.0]], [[-1.0]])
    gains = design_stabilizer(aug)
    assembled = assemble_compensator(aug, gains.K, gains.L_obs)
    assert np.array_equal(assembled.canonical.H_b, -gains.K[:1])
    assert np.array_equal(assembled.canonical.F_a, -gains.K[1:])
    assert np.array_equal(assembled.canonical.G_b, gains.L_obs)
    assert assembled.flat.rho == 1 + 2


def test_canonicalize_assembled_compensator(himat):
    from config.himat import HIMAT_M_DES
    plant, gen = himat
    result = synthesize(plant, gen, HIMAT_M_DES, weights=StabilizerWeights(decay_rate=1.0))
    canonical = canonicalize(plant, gen, result.compensator, HIMAT_M_DES)
    flat = canonical.flatten()
    assert canonical.rho == result.compensator.rho
    closed = closed_loop_moment(plant, gen, flat)
    assert np.linalg.norm(closed.M_cl.value - HIMAT_M_DES) <= 1e-7
    assert spectra_match(closed_loop_spectrum(plant, flat), result.spectrum)


def test_canonicalize_full_rank_static_case(scalar_plant, integrator_generator):
    # rho = nu with an invertible Pi_xi leaves no stabilizing block
    comp = Compensator([[-2.0]], [[1.0]], [[-3.0]])
    closed = closed_loop_moment(scalar_plant, integrator_generator, comp)
    canonical = canonicalize(scalar_plant, integrator_generator, comp, closed.M_cl.value)
    assert canonical.rho == 1
    assert canonical.F_b.shape == (0, 0)
    flat = canonical.flatten()
    assert spectra_match(closed_loop_spectrum(scalar_plant, flat), closed_loop_spectrum(scalar_plant, comp))
    assert_allclose(closed_loop_moment(scalar_plant, integrator_generator, flat).M_cl.value,
                    closed.M_cl.value, atol=1e-10)


def test_canonicalize_regulation_compensator():
    rng = np.random.default_rng(29)
    plant = random_stable_plant(rng, 3, 1, 1, 1)
    gen = SignalGenerator([[0.0]], [[1.0]])
    result = synthesize(plant, gen, [[0.0]])
    canonical = canonicalize(plant, gen, result.compensator, [[0.0]])
    closed = closed_loop_moment(plant, gen, canonical.flatten())
    assert np.linalg.norm(closed.M_cl.value) <= 1e-7


def compensator_transfer(comp, s):
    return comp.H @ np.linalg.solve(s * np.eye(comp.rho) - comp.F, comp.G)


def test_canonicalize_rank_deficient_moment_map(rng, caplog):
    # rho = 1 < nu = 2 forces rank Pi_xi = 1, so the right inverse of Pi_bar is a pseudoinverse
    for _ in range(5):
        plant = random_stable_plant(rng, 3, 1, 1, 1)
        gen = random_generator(rng, 2, 1)
        comp = random_compensator(rng, 1, 1, 1)
        M_cl = closed_loop_moment(plant, gen, comp).M_cl.value
        caplog.clear()
        canonical = canonicalize(plant, gen, comp, M_cl)

        assert canonical.moment_rank == 1
        assert canonical.redundant_states == 1
        assert canonical.rho == (comp.rho - 1) + gen.nu
        assert "non-minimal" in caplog.text
        flat = canonical.flatten()
        assert_allclose(closed_loop_moment(plant, gen, flat).M_cl.value, M_cl, atol=1e-9)
        for s in (2.0 + 1.0j, -0.5 + 4.0j, 6.0j):
            assert_allclose(compensator_transfer(flat, s), compensator_transfer(comp, s), atol=1e-9)
        assert spectrum_contains(closed_loop_spectrum(plant, flat), closed_loop_spectrum(plant, comp))


def test_full_rank_canonical_form_is_minimal(scalar_plant, integrator_generator):
    comp = Compensator([[-2.0]], [[1.0]], [[-3.0]])
    closed = closed_loop_moment(scalar_plant, integrator_generator, comp)
    canonical = canonicalize(scalar_plant, integrator_generator, comp, closed.M_cl.value)
    assert canonical.moment_rank == 1
    assert canonical.redundant_states == 0
    assert canonical.padded(-np.eye(1)).moment_rank == 1


def test_canonicalize_rejects_wrong_target(scalar_plant, integrator_generator):
    comp = Compensator([[-2.0]], [[1.0]], [[-3.0]])
    with pytest.raises(NotMomentAssigning):
        canonicalize(scalar_plant, integrator_generator, comp, [[5.0]])


def test_padding_keeps_the_moment(himat):
    from config.himat import HIMAT_M_DES
    plant, gen = himat
    result = synthesize(plant, gen, HIMAT_M_DES, weights=StabilizerWeights(decay_rate=1.0))
    padded = result.canonical.padded(-np.eye(2))
    assert padded.rho == result.canonical.rho + 2
    closed = closed_loop_moment(plant, gen, padded.flatten())
    assert np.linalg.norm(closed.M_cl.value - HIMAT_M_DES) <= 1e-7
