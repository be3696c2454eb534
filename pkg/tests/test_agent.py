# tests/test_agent.py
import numpy as np
import pytest

from app.cache.cache import cache
from app.models.arrays import FieldPath, HSampleResult
from app.models.models import TimeGrid
from app.service.agent import (
    agent_observables,
    population_average,
    simulate_controlled_paths,
    single_agent_pipeline,
)
from app.service.errors import WeightCollapseError
from app.service.pde import cole_hopf, density_moment, solve_psi_backward


def sample(log_weight: float, m, C) -> HSampleResult:
    return HSampleResult(
        weight=float(np.exp(log_weight)), log_weight=log_weight, m=np.asarray(m), C=np.asarray(C)
    )


class TestSingleAgentPipeline:
    def test_cached_by_field(self, default_params, sg, tg):
        zero = FieldPath.zeros(tg)
        first = single_agent_pipeline(default_params, zero, sg, tg)
        second = single_agent_pipeline(default_params, FieldPath.zeros(tg), sg, tg)
        assert first is second
        assert cache.hits == 1
        other = single_agent_pipeline(default_params, FieldPath(tg, np.full(tg.size, 0.1)), sg, tg)
        assert other is not first
        assert len(cache) == 2

    def test_cost_matches_backward_solve(self, default_params, sg, tg):
        zero = FieldPath.zeros(tg)
        pipeline = single_agent_pipeline(default_params, zero, sg, tg)
        expected = cole_hopf(solve_psi_backward(default_params, zero, sg, tg)).at_origin()
        assert pipeline.cost.at_origin() == pytest.approx(expected, rel=1e-14)
        assert pipeline.m[0] == pytest.approx(0.0, abs=1e-12)
        assert pipeline.mass_error < 1e-8

    def test_controlled_paths_start_at_origin(self, default_params, sg, tg, rng):
        pipeline = single_agent_pipeline(default_params, FieldPath.zeros(tg), sg, tg)
        paths = simulate_controlled_paths(pipeline, 600, rng)
        assert paths.shape == (600, tg.size)
        assert np.all(paths[:, 0] == 0.0)


class TestAgentObservables:
    def test_zero_coupling(self, default_params, sg, tg, rng):
        zero = FieldPath.zeros(tg)
        result = agent_observables(default_params, zero, zero, sg, tg, 2000, rng)
        pipeline = single_agent_pipeline(default_params, zero, sg, tg)
        assert result.log_weight == -pipeline.cost.at_origin()
        assert result.weight == pytest.approx(pipeline.psi.at_origin(), rel=1e-12)
        np.testing.assert_array_equal(result.C, result.C.T)
        assert result.C[0, 0] == 0.0
        assert result.mass_error < 1e-8

    def test_second_moment_dominates_mean(self, default_params, sg, tg, rng):
        zero = FieldPath.zeros(tg)
        result = agent_observables(default_params, zero, zero, sg, tg, 4000, rng)
        slack = 5.0 * result.C_stderr
        assert np.all(np.diag(result.C) >= result.m**2 - slack)

    def test_particles_agree_with_density_mean(self, default_params, sg, tg, rng):
        zero = FieldPath.zeros(tg)
        result = agent_observables(default_params, zero, zero, sg, tg, 4000, rng)
        assert result.mean_gap_sigmas < 5.0

    def test_symmetric_quadratic_model(self, quadratic_params, sg, tg, rng):
        zero = FieldPath.zeros(tg)
        result = agent_observables(quadratic_params, zero, zero, sg, tg, 4000, rng)
        np.testing.assert_allclose(result.m, 0.0, atol=1e-10)
        assert np.all(np.diag(result.C) <= tg.nodes + 3.0 * result.C_stderr)

    def test_second_moment_matches_density(self, default_params, sg, rng):
        tg = TimeGrid(t_f=1.0, M=128)
        zero = FieldPath.zeros(tg)
        result = agent_observables(default_params, zero, zero, sg, tg, 20_000, rng)
        density = single_agent_pipeline(default_params, zero, sg, tg).density
        for i in (32, 64, 96, 128):
            fp_moment = density_moment(density, i, 2)
            assert abs(result.C[i, i] - fp_moment) <= 3.0 * result.C_stderr[i]

    def test_opposite_fields_cancel(self, default_params, sg, tg, rng):
        params = default_params.model_copy(update={"J": 0.5})
        h = FieldPath(tg, np.full(tg.size, 0.2))
        H = FieldPath(tg, np.full(tg.size, -0.2))
        coupled = agent_observables(params, h, H, sg, tg, 500, rng)
        free = agent_observables(default_params, FieldPath.zeros(tg), FieldPath.zeros(tg), sg, tg, 500, rng)
        assert coupled.log_weight == free.log_weight

    def test_too_few_paths(self, default_params, sg, tg, rng):
        zero = FieldPath.zeros(tg)
        with pytest.raises(ValueError):
            agent_observables(default_params, zero, zero, sg, tg, 100, rng)


class TestPopulationAverage:
    def test_equal_weights_give_plain_mean(self):
        samples = [
            sample(-0.7, [0.0, 1.0], [[0.0, 0.0], [0.0, 2.0]]),
            sample(-0.7, [0.0, 3.0], [[0.0, 0.0], [0.0, 4.0]]),
        ]
        result = population_average(samples)
        np.testing.assert_allclose(result.m, [0.0, 2.0])
        np.testing.assert_allclose(result.C, [[0.0, 0.0], [0.0, 3.0]])
        assert result.ess == pytest.approx(2.0)
        assert result.log_N_h == pytest.approx(-0.7)

    def test_weighted_mean(self):
        samples = [
            sample(np.log(1.0), [0.0, 1.0], np.zeros((2, 2))),
            sample(np.log(3.0), [0.0, 5.0], np.zeros((2, 2))),
        ]
        result = population_average(samples)
        assert result.m[1] == pytest.approx(4.0)
        assert result.N_h == pytest.approx(2.0)
        assert result.ess == pytest.approx(16.0 / 10.0)
        assert result.size == 2

    def test_single_sample(self):
        result = population_average([sample(-1.0, [0.0, 0.5], np.eye(2))])
        assert result.ess == pytest.approx(1.0)
        assert result.log_N_h == pytest.approx(-1.0)
        np.testing.assert_allclose(result.m, [0.0, 0.5])

    def test_tiny_weights_do_not_underflow(self):
        samples = [sample(-2000.0, [0.0, 1.0], np.eye(2)), sample(-2001.0, [0.0, 2.0], np.eye(2))]
        result = population_average(samples)
        assert np.isfinite(result.log_N_h)
        assert 1.0 < result.m[1] < 1.5

    def test_all_weights_zero(self):
        samples = [sample(-np.inf, [0.0, 1.0], np.eye(2)), sample(-np.inf, [0.0, 2.0], np.eye(2))]
        with pytest.raises(WeightCollapseError):
            population_average(samples)

    def test_empty(self):
        with pytest.raises(ValueError):
            population_average([])

    def test_weighted_average_stays_within_samples(self, rng):
        samples = []
        for _ in range(6):
            m = np.concatenate([[0.0], rng.normal(size=3)])
            G = rng.standard_normal((4, 4))
            samples.append(sample(rng.normal(scale=2.0), m, G @ G.T))
        result = population_average(samples)
        ms = np.stack([s.m for s in samples])
        Cs = np.stack([s.C for s in samples])
        assert np.all(ms.min(axis=0) - 1e-12 <= result.m)
        assert np.all(result.m <= ms.max(axis=0) + 1e-12)
        assert np.all(Cs.min(axis=0) - 1e-12 <= result.C)
        assert np.all(result.C <= Cs.max(axis=0) + 1e-12)
        assert 1.0 <= result.ess <= len(samples)
