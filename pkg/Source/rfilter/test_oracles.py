import math
import unittest

import numpy as np

from .models import (
    TEST_FUNCTIONS, correlated_2obs, correlated_linear, example_s1, example_sensor, uncorrelated_1d,
)
from .oracles import (
    ParticleEnsemble, example_closed_form, logger as oracles_logger, particle_filter_estimate,
    simulate_observation, uncorrelated_robust_formula,
)
from .robust_filter import evaluate_theta
from .rough_path import EnhancedPath, brownian_rough_path, lift_piecewise_linear, refine, spiral_path
from .rough_sde import FilterModel, UniformBox, build_filter_system, solve_rough_sde
from .sampling import draw_inputs


def example_f(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def still_path(n: int = 16) -> EnhancedPath:
    times = np.linspace(0.0, 1.0, n + 1)
    return lift_piecewise_linear(times, np.zeros((n + 1, 2)))


class TestExampleClosedForm(unittest.TestCase):

    def test_still_observation(self):
        sech2 = 1 - math.tanh(1) ** 2
        exponent = -math.tanh(1) ** 2 - sech2
        expected = math.tanh(1) / (1 + math.exp(-exponent))
        self.assertAlmostEqual(example_closed_form(example_f, example_sensor, still_path()), expected, places=8)

    def test_literal_form_drops_bracket(self):
        exponent = -math.tanh(1) ** 2
        expected = math.tanh(1) / (1 + math.exp(-exponent))
        found = example_closed_form(example_f, example_sensor, still_path(), bracket_correction=False)
        self.assertAlmostEqual(found, expected, places=12)

    def test_analytic_derivative(self):
        path = spiral_path(256)
        derivative = lambda x: np.repeat((1 - np.tanh(x) ** 2)[:, None], 2, axis=1)
        a = example_closed_form(example_f, example_sensor, path)
        b = example_closed_form(example_f, example_sensor, path, sensor_derivative=derivative)
        self.assertAlmostEqual(a, b, places=8)

    def test_constant_function(self):
        one = lambda x: np.ones_like(x)
        self.assertAlmostEqual(example_closed_form(one, example_sensor, spiral_path(64)), 1.0, places=14)

    def test_dimension(self):
        path = lift_piecewise_linear([0.0, 1.0], [[0.0], [1.0]])
        with self.assertRaises(ValueError):
            example_closed_form(example_f, example_sensor, path)

    def test_matches_rough_solution(self):
        driver = spiral_path(256)
        system = build_filter_system(example_s1())
        path = solve_rough_sde(system, driver, np.zeros((256, 1)), [1.0, 0.0, 0.0, 0.0], "splitting")
        x, weight = path.final[0], math.exp(path.final[-1])
        theta = math.tanh(x) * weight / (weight + 1)
        self.assertAlmostEqual(x, math.exp(driver.values[-1].sum()), places=8)
        closed = example_closed_form(example_f, example_sensor, refine(driver, 16))
        self.assertAlmostEqual(theta, closed, delta=1e-2)

    def test_matches_monte_carlo(self):
        driver = spiral_path(256)
        estimate = evaluate_theta(example_s1(), driver, TEST_FUNCTIONS["tanh"], 1000, 0, "splitting")
        closed = example_closed_form(example_f, example_sensor, refine(driver, 16))
        self.assertLess(abs(estimate.theta - closed), 4 * estimate.theta_stderr)

    def test_decomposition_matches_closed_form(self):
        driver = spiral_path(64)
        system = build_filter_system(example_s1())
        path = solve_rough_sde(system, driver, np.zeros((64, 1)), [1.0, 0.0, 0.0, 0.0], "decomposition",
                               step=1e-2)
        x, weight = path.final[0], math.exp(path.final[-1])
        theta = math.tanh(x) * weight / (weight + 1)
        self.assertAlmostEqual(x, math.exp(driver.values[-1].sum()), places=6)
        closed = example_closed_form(example_f, example_sensor, refine(driver, 16))
        self.assertAlmostEqual(theta, closed, delta=3e-2)

    def test_decomposition_monte_carlo(self):
        driver = spiral_path(32)
        estimate = evaluate_theta(example_s1(), driver, TEST_FUNCTIONS["tanh"], 400, 0, "decomposition",
                                  step=1e-2)
        closed = example_closed_form(example_f, example_sensor, refine(driver, 32))
        self.assertLess(abs(estimate.theta - closed), 4 * estimate.theta_stderr + 3e-2)


class TestUncorrelatedRobustFormula(unittest.TestCase):

    def setUp(self):
        self.model = uncorrelated_1d()
        self.system = build_filter_system(self.model)

    def test_matches_splitting_scheme(self):
        driver = brownian_rough_path(32, 1, np.random.default_rng(4))
        s0, dB = draw_inputs(self.system.initial, driver.times, 1, 8, range(20))
        path = solve_rough_sde(self.system, driver, dB, s0, "splitting")
        log_weights, x = uncorrelated_robust_formula(self.model, driver, dB, s0[:, :1])
        np.testing.assert_allclose(path.log_weight[:, -1], log_weights, atol=1e-10)
        np.testing.assert_array_equal(path.signal[:, -1], x)

    def test_decomposition_converges(self):
        fine = brownian_rough_path(32, 1, np.random.default_rng(5))
        s0, dB = draw_inputs(self.system.initial, fine.times, 1, 9, range(50))
        gaps = []
        for factor in (4, 1):
            driver = fine.coarsen(factor) if factor > 1 else fine
            increments = dB.reshape(dB.shape[0], -1, factor, 1).sum(axis=2)
            path = solve_rough_sde(self.system, driver, increments, s0, "decomposition")
            log_weights, _ = uncorrelated_robust_formula(self.model, driver, increments, s0[:, :1])
            gaps.append(float(np.mean(np.abs(path.log_weight[:, -1] - log_weights))))
        self.assertLess(gaps[1], gaps[0])
        self.assertLess(gaps[1], 5e-2)

    def test_rejects_correlated_model(self):
        driver = brownian_rough_path(4, 1, np.random.default_rng(6))
        with self.assertRaises(ValueError):
            uncorrelated_robust_formula(correlated_linear(), driver, np.zeros((4, 1)), [0.0])

    def test_rejects_observation_dependent_sensor(self):
        model = FilterModel(
            1, 1, 1,
            drift=lambda z: -z[:, :1],
            diffusion=lambda z: np.ones((z.shape[0], 1, 1)),
            sensor=lambda z: np.tanh(z[:, :1] + z[:, 1:]),
            initial=UniformBox([-1.0], [1.0]))
        driver = brownian_rough_path(4, 1, np.random.default_rng(7))
        with self.assertRaises(ValueError):
            uncorrelated_robust_formula(model, driver, np.zeros((4, 1)), [0.0])


def loud_model() -> FilterModel:
    return FilterModel.from_ito(
        1, 1, 1,
        ito_drift=lambda z: -z[:, :1],
        diffusion=lambda z: np.full((z.shape[0], 1, 1), 0.1),
        sensor=lambda z: 20 * np.tanh(z[:, :1]),
        initial=UniformBox([-1.0], [1.0]),
        sensor_bound=20.0)


class TestParticleFilter(unittest.TestCase):

    def test_ensemble_weights(self):
        ensemble = ParticleEnsemble(np.zeros((4, 1)), np.zeros(4), np.zeros(1), 0)
        np.testing.assert_array_equal(ensemble.normalized_weights(), [0.25] * 4)
        self.assertEqual(ensemble.ess(), 4.0)
        skewed = ParticleEnsemble(np.zeros((4, 1)), np.array([0.0, -50.0, -50.0, -50.0]), np.zeros(1), 0)
        self.assertAlmostEqual(skewed.ess(), 1.0, places=12)

    def test_estimate(self):
        ensemble = ParticleEnsemble(
            np.array([[0.0], [1.0]]), np.log([1.0, 3.0]), np.zeros(1), 0)
        theta, _ = ensemble.estimate(TEST_FUNCTIONS["tanh"])
        self.assertAlmostEqual(theta, 0.75 * math.tanh(1.0), places=14)

    def test_constant_function(self):
        observation = brownian_rough_path(64, 1, np.random.default_rng(1))
        estimate = particle_filter_estimate(correlated_linear(), observation, TEST_FUNCTIONS["one"], 100, 0)
        self.assertEqual(estimate.theta, 1.0)
        self.assertEqual(estimate.stderr, 0.0)
        self.assertFalse(estimate.degenerate)

    def test_degenerate_weights_flagged(self):
        times = np.linspace(0.0, 1.0, 65)
        observation = lift_piecewise_linear(times, 20 * times[:, None])
        with self.assertLogs(oracles_logger, "WARNING"):
            estimate = particle_filter_estimate(loud_model(), observation, TEST_FUNCTIONS["tanh"], 200, 0)
        self.assertTrue(estimate.degenerate)
        self.assertLess(estimate.ess, 10)

    def test_workers_do_not_change_results(self):
        observation = brownian_rough_path(32, 1, np.random.default_rng(2))
        f = TEST_FUNCTIONS["tanh"]
        single = particle_filter_estimate(correlated_linear(), observation, f, 600, 3, workers=1)
        pooled = particle_filter_estimate(correlated_linear(), observation, f, 600, 3, workers=4)
        self.assertEqual(single.to_dict(), pooled.to_dict())

    def test_agrees_with_robust_filter(self):
        model = correlated_linear()
        times, _, y = simulate_observation(model, n_steps=1 << 10, seed=12)
        observation = lift_piecewise_linear(times, y)
        f = TEST_FUNCTIONS["tanh"]
        particles = particle_filter_estimate(model, observation, f, 2000, 1)
        robust = evaluate_theta(model, observation.coarsen(8), f, 1000, 2, "splitting")
        combined = math.hypot(particles.stderr, robust.theta_stderr)
        self.assertLess(abs(particles.theta - robust.theta), 4 * combined)

    def test_decomposition_agrees_with_particles(self):
        model = correlated_linear()
        times, _, y = simulate_observation(model, n_steps=1 << 10, seed=12)
        observation = lift_piecewise_linear(times, y)
        f = TEST_FUNCTIONS["tanh"]
        particles = particle_filter_estimate(model, observation, f, 2000, 1)
        robust = evaluate_theta(model, observation.coarsen(32), f, 200, 2, "decomposition", step=1 / 32)
        combined = math.hypot(particles.stderr, robust.theta_stderr)
        self.assertLess(abs(particles.theta - robust.theta), 4 * combined)

    def test_planar_correlated_model_over_records(self):
        model = correlated_2obs()
        f = TEST_FUNCTIONS["tanh"]
        agreed = 0
        for seed in range(4):
            times, _, y = simulate_observation(model, n_steps=1 << 10, seed=20 + seed)
            observation = lift_piecewise_linear(times, y)
            particles = particle_filter_estimate(model, observation, f, 1000, seed)
            robust = evaluate_theta(model, observation.coarsen(8), f, 400, seed)
            combined = math.hypot(particles.stderr, robust.theta_stderr)
            agreed += abs(particles.theta - robust.theta) < 3 * combined
        self.assertGreaterEqual(agreed, 3)


class TestSimulateObservation(unittest.TestCase):

    def test_shapes_and_determinism(self):
        a = simulate_observation(correlated_linear(), 2.0, 128, seed=5)
        b = simulate_observation(correlated_linear(), 2.0, 128, seed=5)
        times, x, y = a
        self.assertEqual(times[-1], 2.0)
        self.assertEqual(x.shape, (129, 1))
        self.assertEqual(y.shape, (129, 1))
        np.testing.assert_array_equal(y[0], [0.0])
        for first, second in zip(a, b):
            np.testing.assert_array_equal(first, second)

    def test_blind_observation_is_brownian(self):
        model = FilterModel(
            1, 1, 1,
            drift=lambda z: -z[:, :1],
            diffusion=lambda z: np.ones((z.shape[0], 1, 1)),
            sensor=lambda z: np.zeros((z.shape[0], 1)),
            initial=UniformBox([-1.0], [1.0]))
        _, _, y = simulate_observation(model, n_steps=1 << 14, seed=3)
        variance = float(np.var(np.diff(y[:, 0])) * (1 << 14))
        self.assertAlmostEqual(variance, 1.0, delta=0.1)

    def test_example_signal_follows_observation(self):
        for seed in range(4):
            _, x, y = simulate_observation(example_s1(), n_steps=1 << 14, seed=seed)
            expected = x[0, 0] * np.exp(y.sum(axis=1))
            np.testing.assert_allclose(x[:, 0], expected, rtol=0.1, atol=1e-12)
