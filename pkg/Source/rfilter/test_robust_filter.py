import math
import unittest

import numpy as np

from .expressions import model_from_spec
from .models import TEST_FUNCTIONS, correlated_2obs, correlated_linear
from .notifier import ProgressEvent, ProgressNotifier
from .robust_filter import (
    TestFunction, WeightOverflowError, continuity_probe, estimate_from_samples,
    evaluate_theta, ratio_estimate, sample_weights,
)
from .rough_path import EnhancedPath, brownian_rough_path, dilate, lift_piecewise_linear, shift_area
from .rough_sde import FilterModel, UniformBox


def blind_model(correlated: bool = True) -> FilterModel:
    """ Linear signal seen through a zero sensor. """
    return FilterModel.from_ito(
        1, 1, 1,
        ito_drift=lambda z: -z[:, :1],
        diffusion=lambda z: np.full((z.shape[0], 1, 1), 0.4),
        sensor=lambda z: np.zeros((z.shape[0], 1)),
        initial=UniformBox([-1.0], [1.0]),
        correlation=(lambda z: np.full((z.shape[0], 1, 1), 0.6)) if correlated else None)


def uncorrelated_2obs() -> FilterModel:
    """ correlated_2obs with Z ≡ 0. """
    return FilterModel.from_ito(
        2, 2, 2,
        ito_drift=lambda z: -z[:, :2],
        diffusion=lambda z: np.broadcast_to(0.3 * np.eye(2), (z.shape[0], 2, 2)).copy(),
        sensor=lambda z: np.tanh(z[:, :2]),
        initial=UniformBox([-0.5, -0.5], [0.5, 0.5]),
        sensor_bound=math.sqrt(2.0))


def flat_sensor_model(level: float) -> FilterModel:
    """ A still signal at 0.5 seen through the constant sensor `level`. """
    return model_from_spec({
        "name": "flat", "signal_dim": 1, "obs_dim": 1, "noise_dim": 1,
        "drift": ["0"], "diffusion": [["0"]], "sensor": [str(level)],
        "initial": {"point": [0.5]}, "sensor_bound": level})


def straight_path(end: float, n: int = 16) -> EnhancedPath:
    times = np.linspace(0.0, 1.0, n + 1)
    return lift_piecewise_linear(times, end * times[:, None])


class TestWeightRange(unittest.TestCase):

    def test_large_weights_keep_theta(self):
        # I = 38 Y_1 - 722 = 708.9, so the sum of 600 weights exceeds double range
        driver = straight_path((708.9 + 722.0) / 38.0)
        estimate = evaluate_theta(flat_sensor_model(38.0), driver, TEST_FUNCTIONS["tanh"], 600, 0)
        self.assertAlmostEqual(estimate.theta, math.tanh(0.5), places=12)
        self.assertAlmostEqual(estimate.theta_stderr, 0.0, places=12)
        self.assertTrue(math.isfinite(estimate.g1_mean))
        self.assertAlmostEqual(math.log(estimate.g1_mean), 708.9, places=6)
        self.assertAlmostEqual(estimate.gf_mean / estimate.g1_mean, math.tanh(0.5), places=12)

    def test_small_weights_keep_theta(self):
        # I = -800 underflows every weight
        estimate = evaluate_theta(flat_sensor_model(40.0), straight_path(0.0), TEST_FUNCTIONS["tanh"], 64, 0)
        self.assertAlmostEqual(estimate.theta, math.tanh(0.5), places=12)
        self.assertAlmostEqual(estimate.theta_stderr, 0.0, places=12)
        self.assertEqual(estimate.g1_mean, 0.0)
        self.assertEqual(estimate.gf_mean, 0.0)

    def test_shift_keeps_ratio(self):
        rng = np.random.default_rng(3)
        values = rng.uniform(-1.0, 1.0, 200)
        log_weights = rng.normal(size=200)
        base = estimate_from_samples(values, log_weights, 0, straight_path(0.0), "splitting")
        for offset in (700.0, -900.0):
            moved = estimate_from_samples(values, log_weights + offset, 0, straight_path(0.0), "splitting")
            self.assertAlmostEqual(moved.theta, base.theta, places=10)
            self.assertAlmostEqual(moved.theta_stderr, base.theta_stderr, places=10)

    def test_unrepresentable_normaliser(self):
        with self.assertRaises(WeightOverflowError):
            estimate_from_samples(np.zeros(3), np.array([709.5, 709.5, 709.5]) + 1.0, 0,
                                  straight_path(0.0), "splitting")
        with self.assertRaises(WeightOverflowError):
            estimate_from_samples(np.zeros(2), np.array([np.inf, 0.0]), 0, straight_path(0.0), "splitting")


class TestRatioEstimate(unittest.TestCase):

    def test_known_values(self):
        theta, stderr = ratio_estimate(np.array([1.0, 2.0, 3.0, 4.0]), np.ones(4))
        self.assertEqual(theta, 2.5)
        self.assertAlmostEqual(stderr, math.sqrt(5 / 3) / 2, places=14)

    def test_scale_invariant(self):
        rng = np.random.default_rng(0)
        weights = rng.lognormal(size=100)
        values = rng.uniform(-1, 1, 100) * weights
        theta, stderr = ratio_estimate(values, weights)
        scaled = ratio_estimate(values * 7.5, weights * 7.5)
        self.assertAlmostEqual(scaled[0], theta, places=13)
        self.assertAlmostEqual(scaled[1], stderr, places=13)

    def test_needs_two_samples(self):
        with self.assertRaises(ValueError):
            ratio_estimate(np.ones(1), np.ones(1))


class TestTestFunction(unittest.TestCase):

    def test_bound_violation(self):
        f = TestFunction("big", lambda z: np.full(z.shape[0], 2.0), 1.0, 0.0)
        with self.assertRaises(ValueError):
            f(np.zeros((3, 2)))

    def test_shape_check(self):
        f = TestFunction("flat", lambda z: np.zeros((z.shape[0], 2)), 1.0, 0.0)
        with self.assertRaises(ValueError):
            f(np.zeros((3, 2)))

    def test_catalog(self):
        z = np.array([[0.5, 3.0], [-1.0, 0.0]])
        np.testing.assert_array_equal(TEST_FUNCTIONS["one"](z), [1.0, 1.0])
        np.testing.assert_allclose(TEST_FUNCTIONS["tanh"](z), np.tanh([0.5, -1.0]))


class TestEvaluateTheta(unittest.TestCase):

    def setUp(self):
        self.driver = brownian_rough_path(8, 1, np.random.default_rng(11))

    def test_constant_function_has_unit_theta(self):
        estimate = evaluate_theta(
            correlated_linear(), self.driver, TEST_FUNCTIONS["one"], 64, seed=3)
        self.assertEqual(estimate.theta, 1.0)
        self.assertAlmostEqual(estimate.theta_stderr, 0.0, places=12)
        self.assertEqual(estimate.n_samples, 64)
        self.assertEqual(estimate.steps, 8)

    def test_zero_sensor_is_plain_monte_carlo(self):
        f = TEST_FUNCTIONS["tanh"]
        for scheme in ("decomposition", "splitting"):
            values, log_weights = sample_weights(
                blind_model(), self.driver, f, 64, 5, scheme)
            np.testing.assert_allclose(log_weights, 0.0, atol=1e-12)
            estimate = evaluate_theta(blind_model(), self.driver, f, 64, 5, scheme)
            self.assertAlmostEqual(estimate.theta, float(values.mean()), places=10)
            self.assertAlmostEqual(estimate.g1_mean, 1.0, places=10)

    def test_workers_do_not_change_results(self):
        model = correlated_linear()
        f = TEST_FUNCTIONS["sin"]
        single = evaluate_theta(model, self.driver, f, 600, 9, "splitting", workers=1)
        pooled = evaluate_theta(model, self.driver, f, 600, 9, "splitting", workers=4)
        self.assertEqual(single.to_dict(), pooled.to_dict())

    def test_stderr_halves_with_four_times_the_samples(self):
        model = correlated_linear()
        f = TEST_FUNCTIONS["tanh"]
        small = evaluate_theta(model, self.driver, f, 400, 6)
        large = evaluate_theta(model, self.driver, f, 1600, 6)
        self.assertAlmostEqual(large.theta_stderr / small.theta_stderr, 0.5, delta=0.125)

    def test_seed_changes_results(self):
        model = correlated_linear()
        f = TEST_FUNCTIONS["tanh"]
        a = evaluate_theta(model, self.driver, f, 32, 1, "splitting")
        b = evaluate_theta(model, self.driver, f, 32, 2, "splitting")
        self.assertNotEqual(a.theta, b.theta)

    def test_progress_events(self):
        notifier = ProgressNotifier()
        events: list[ProgressEvent] = []
        with notifier.bind(events.append):
            evaluate_theta(correlated_linear(), self.driver, TEST_FUNCTIONS["tanh"],
                           300, 0, "splitting", progress=notifier)
        self.assertEqual(events[-1], ProgressEvent("theta", 300, 300))

    def test_needs_two_samples(self):
        with self.assertRaises(ValueError):
            evaluate_theta(correlated_linear(), self.driver, TEST_FUNCTIONS["tanh"], 1, 0)

    def test_weight_overflow(self):
        with self.assertRaises(WeightOverflowError):
            estimate_from_samples(np.zeros(2), np.array([800.0, 0.0]), 0, self.driver, "splitting")

    def test_estimate_fields(self):
        estimate = estimate_from_samples(
            np.array([1.0, 0.0]), np.log([1.0, 3.0]), 4, self.driver, "splitting")
        self.assertAlmostEqual(estimate.theta, 0.25, places=15)
        self.assertAlmostEqual(estimate.g1_mean, 2.0, places=15)
        self.assertAlmostEqual(estimate.gf_mean, 0.5, places=15)
        self.assertEqual(estimate.to_dict()["seed"], 4)


class TestContinuityProbe(unittest.TestCase):

    def setUp(self):
        self.driver = brownian_rough_path(8, 2, np.random.default_rng(21))
        self.model = correlated_2obs()
        self.f = TEST_FUNCTIONS["tanh"]

    def test_rows(self):
        perturbations = [dilate(self.driver, 1.2), self.driver, dilate(self.driver, 1.05)]
        rows = continuity_probe(
            self.model, self.driver, self.f, perturbations, 32, 0,
            labels=["far", "same", "near"], scheme="splitting")
        self.assertEqual([row.label for row in rows], ["same", "near", "far"])
        self.assertEqual(rows[0].distance, 0.0)
        self.assertEqual(rows[0].delta_theta, 0.0)
        self.assertEqual(rows[0].ratio, 0.0)
        self.assertGreater(rows[2].distance, rows[1].distance)

    def test_ratio_stays_bounded_as_perturbation_shrinks(self):
        deltas = (1e-1, 1e-2, 1e-3)
        rows = continuity_probe(
            self.model, self.driver, self.f, [dilate(self.driver, 1 + d) for d in deltas], 200, 4)
        ratios = [row.ratio for row in rows]
        self.assertTrue(all(ratio > 0 for ratio in ratios))
        self.assertLess(max(ratios) / min(ratios), 10.0)

    def test_radius_check(self):
        with self.assertRaises(ValueError):
            continuity_probe(self.model, self.driver, self.f, [self.driver], 8, 0,
                             radius=1e-3, scheme="splitting")

    def test_label_count(self):
        with self.assertRaises(ValueError):
            continuity_probe(self.model, self.driver, self.f, [self.driver], 8, 0,
                             labels=["a", "b"], scheme="splitting")

    def test_area_moves_correlated_filter_only(self):
        shifted = shift_area(self.driver, 0, 1, 2.0)
        base = evaluate_theta(self.model, self.driver, self.f, 512, 2, "splitting")
        moved = evaluate_theta(self.model, shifted, self.f, 512, 2, "splitting")
        self.assertGreater(abs(moved.theta - base.theta), 3 * base.theta_stderr)

        plain = uncorrelated_2obs()
        base = evaluate_theta(plain, self.driver, self.f, 128, 2, "splitting")
        moved = evaluate_theta(plain, shifted, self.f, 128, 2, "splitting")
        self.assertAlmostEqual(moved.theta, base.theta, places=9)
