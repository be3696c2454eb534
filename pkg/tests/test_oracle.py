# tests/test_oracle.py
import numpy as np
import pytest

from app.models.arrays import DisorderInstance, FieldPath
from app.models.models import ModelParams, TimeGrid
from app.service.errors import IndefiniteCouplingError, RefusalRateError
from app.service.oracle import (
    coupling_matrix,
    fk_nbody_estimate,
    quenched_average,
    riccati_solve,
    sample_disorder,
    solve_riccati_system,
)
from app.service.pde import cole_hopf, solve_psi_backward

from tests.conftest import QUADRATIC

TARGET_COST = 0.75 + 0.25 * np.exp(-2.0)


def decoupled(N: int) -> DisorderInstance:
    return DisorderInstance(N=N, couplings=np.zeros((N, N)))


class TestSampleDisorder:
    def test_zero_coupling(self, rng):
        instance = sample_disorder(5, 0.0, rng)
        assert np.all(instance.couplings == 0.0)

    def test_symmetric_zero_diagonal(self, rng):
        instance = sample_disorder(7, 0.8, rng)
        np.testing.assert_array_equal(instance.couplings, instance.couplings.T)
        assert np.all(np.diag(instance.couplings) == 0.0)

    def test_variance_scales_with_N(self, rng):
        N = 1000
        instance = sample_disorder(N, 1.0, rng)
        upper = instance.couplings[np.triu_indices(N, k=1)]
        assert upper.var() == pytest.approx(1.0 / N, rel=0.05)

    def test_negative_J(self, rng):
        with pytest.raises(ValueError):
            sample_disorder(4, -1.0, rng)


class TestRiccatiSolve:
    def test_stationary_solution(self, quadratic_params, tg):
        solution = riccati_solve(decoupled(1), quadratic_params, tg)
        assert solution.cost == pytest.approx(0.5, abs=1e-10)
        np.testing.assert_allclose(solution.P[:, 0, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(solution.q, 0.0, atol=1e-12)

    def test_target_terminal_cost(self, target_params, tg):
        solution = riccati_solve(decoupled(1), target_params, tg)
        assert solution.cost == pytest.approx(TARGET_COST, abs=1e-6)
        np.testing.assert_allclose(solution.q[:, 0], -np.exp(tg.nodes - tg.t_f), atol=1e-8)

    def test_terminal_conditions(self, target_params, tg):
        solution = riccati_solve(decoupled(3), target_params, tg)
        np.testing.assert_array_equal(solution.P[-1], np.eye(3))
        np.testing.assert_array_equal(solution.q[-1], -np.ones(3))
        assert solution.r[-1] == pytest.approx(1.5)

    def test_decoupled_cost_is_additive(self, target_params, tg):
        one = riccati_solve(decoupled(1), target_params, tg)
        many = riccati_solve(decoupled(6), target_params, tg)
        assert many.cost == pytest.approx(6.0 * one.cost, rel=1e-12)
        assert many.per_agent_cost == pytest.approx(one.cost, rel=1e-12)

    def test_symmetry_preserved(self, target_params, tg, rng):
        params = target_params.model_copy(update={"J": 0.2})
        solution = riccati_solve(sample_disorder(16, 0.2, rng), params, tg)
        asym = np.abs(solution.P - np.transpose(solution.P, (0, 2, 1))).max()
        assert asym <= 1e-12

    def test_indefinite_coupling_refused(self, quadratic_params, tg):
        couplings = np.array([[0.0, 2.0], [2.0, 0.0]])
        with pytest.raises(IndefiniteCouplingError):
            riccati_solve(DisorderInstance(N=2, couplings=couplings), quadratic_params, tg)

    def test_quartic_rejected(self, default_params, tg):
        with pytest.raises(ValueError):
            riccati_solve(decoupled(2), default_params, tg)

    def test_matches_one_dimensional_pde(self, target_params, fine_sg):
        tg = TimeGrid(t_f=1.0, M=256)
        pde = cole_hopf(solve_psi_backward(target_params, FieldPath.zeros(tg), fine_sg, tg)).at_origin()
        riccati = riccati_solve(decoupled(4), target_params, tg).per_agent_cost
        assert riccati == pytest.approx(pde, abs=1e-4)

    def test_general_quadratic_terms(self, tg):
        params = ModelParams(J=0.0, nu_coeffs=(0.3, 0.0, 0.5), phi_coeffs=(0.2, 0.0, 0.5))
        solution = riccati_solve(decoupled(1), params, tg)
        assert solution.cost == pytest.approx(0.5 + 0.3 + 0.2, abs=1e-10)

    def test_monotone_in_A(self, tg, rng):
        N = 4
        P_T, q_T = np.eye(N), -np.ones(N)
        for _ in range(5):
            G = rng.standard_normal((N, N))
            A = G @ G.T + 0.5 * np.eye(N)
            H = rng.standard_normal((N, N))
            increment = 0.1 * H @ H.T
            low = solve_riccati_system(A, np.zeros(N), 0.0, P_T, q_T, N / 2, tg)
            high = solve_riccati_system(A + increment, np.zeros(N), 0.0, P_T, q_T, N / 2, tg)
            assert high.cost >= low.cost - 1e-12


class TestFkNbodyEstimate:
    def test_free_walker_is_exactly_zero(self, tg, rng):
        params = ModelParams(J=0.0, nu_coeffs=(), phi_coeffs=())
        estimate = fk_nbody_estimate(decoupled(3), params, 1000, rng, tg)
        assert estimate.value == 0.0
        assert estimate.stderr == 0.0

    def test_quadratic_single_agent(self, quadratic_params, rng):
        tg = TimeGrid(t_f=1.0, M=128)
        estimate = fk_nbody_estimate(decoupled(1), quadratic_params, 20_000, rng, tg)
        assert abs(estimate.value - 0.5) <= 3.0 * estimate.stderr + 2e-3
        assert estimate.bias_corrected is not None

    @pytest.mark.slow
    def test_matches_riccati_across_instances(self, rng):
        tg = TimeGrid(t_f=1.0, M=256)
        params = ModelParams(J=0.2, nu_coeffs=(0.0, 0.0, 0.5))
        n_instances = 50
        hits = 0
        for child in rng.spawn(n_instances):
            instance = sample_disorder(8, params.J, child)
            exact = riccati_solve(instance, params, tg).per_agent_cost
            estimate = fk_nbody_estimate(instance, params, 20_000, child, tg)
            hits += abs(estimate.value - exact) <= 3.0 * estimate.stderr
        assert hits >= 0.95 * n_instances

    def test_too_few_paths(self, quadratic_params, tg, rng):
        with pytest.raises(ValueError):
            fk_nbody_estimate(decoupled(1), quadratic_params, 500, rng, tg)


class TestQuenchedAverage:
    def test_zero_coupling_has_no_disorder_error(self, tg, rng):
        params = ModelParams(J=0.0, **QUADRATIC)
        estimate = quenched_average(params, 8, 4, "riccati", 1000, rng, tg)
        assert estimate.stderr == 0.0
        assert estimate.value == pytest.approx(0.5, abs=1e-10)
        assert len(estimate.instances) == 4
        assert estimate.refused == 0
        assert all(inst.bias_corrected == inst.cost for inst in estimate.instances)

    def test_riccati_requires_quadratic_model(self, default_params, tg, rng):
        with pytest.raises(ValueError):
            quenched_average(default_params, 8, 4, "riccati", 1000, rng, tg)

    def test_minimum_instances(self, quadratic_params, tg, rng):
        with pytest.raises(ValueError):
            quenched_average(quadratic_params, 8, 3, "riccati", 1000, rng, tg)

    def test_refusal_rate(self, tg, rng):
        params = ModelParams(J=2.0, **QUADRATIC)
        with pytest.raises(RefusalRateError):
            quenched_average(params, 32, 5, "riccati", 1000, rng, tg)

    def test_same_seed_same_instances(self, tg):
        params = ModelParams(J=0.2, **QUADRATIC)
        first = quenched_average(params, 8, 4, "riccati", 1000, np.random.default_rng(3), tg)
        second = quenched_average(params, 8, 4, "riccati", 1000, np.random.default_rng(3), tg)
        assert [i.cost for i in first.instances] == [i.cost for i in second.instances]

    def test_feynman_kac_mode(self, rng):
        tg = TimeGrid(t_f=0.25, M=16)
        params = ModelParams(J=0.2)
        estimate = quenched_average(params, 4, 4, "feynman-kac", 2000, rng, tg)
        assert np.isfinite(estimate.value)
        assert all(inst.stderr > 0.0 for inst in estimate.instances)
        assert all(np.isfinite(inst.bias_corrected) for inst in estimate.instances)
        assert estimate.bias_corrected == pytest.approx(
            np.mean([inst.bias_corrected for inst in estimate.instances])
        )

    def test_coupling_matrix(self, quadratic_params):
        instance = DisorderInstance(N=2, couplings=np.array([[0.0, 0.3], [0.3, 0.0]]))
        np.testing.assert_allclose(coupling_matrix(instance, quadratic_params), [[1.0, 0.3], [0.3, 1.0]])
