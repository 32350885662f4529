"""
Independent references for the robust filter: the closed form of the
two-atom exponential example, the classical robust weight of uncorrelated
models, and a weighted particle filter under the reference measure.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit

from .notifier import ProgressNotifier
from .robust_filter import TestFunction, ratio_estimate
from .rough_path import EnhancedPath
from .rough_sde import FilterModel
from .sampling import PARTICLE_DOMAIN, RECORD_DOMAIN, draw_inputs, run_chunks, sample_stream


logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
ScalarMap = Callable[[FloatArray], FloatArray]

MIN_ESS = 10.0
DEFAULT_SIMULATION_STEPS = 1 << 14


def _derivative(func: ScalarMap, x: FloatArray) -> FloatArray:
    h = 1e-5 * (1.0 + np.abs(x))
    return (func(x + h) - func(x - h)) / (2 * h[..., None])


def example_closed_form(
    f: ScalarMap,
    sensor: ScalarMap,
    path: EnhancedPath,
    sensor_derivative: ScalarMap | None = None,
    bracket_correction: bool = True
) -> float:
    """
    θ for the model X = X₀ exp(Y¹ + Y²), X₀ ∈ {0, 1} with equal
    probability and h(0) = 0, at the end of a finely sampled smooth
    observation path:

        θ = f(X_t) / (1 + exp(-J)) + f(0) / (1 + exp(J)),
        J = Σ_k ∫ h^k(X) ∘ dY^k - ½ ∫ |h(X)|² dr - ½ Σ_k ∫ X h^k'(X) dr,

    integrals by the trapezoidal rule. `f` maps (n,) -> (n,), `sensor`
    (n,) -> (n, 2). Without `bracket_correction` the last term is dropped,
    which is the literal dY integral of a smooth path.
    """
    if path.dim != 2:
        raise ValueError(f"the example needs a 2-dimensional observation, got {path.dim}")
    x = np.exp(path.values.sum(axis=1))
    h = sensor(x)
    dt = np.diff(path.times)
    dy = np.diff(path.values, axis=0)
    stratonovich = float(np.sum(0.5 * (h[:-1] + h[1:]) * dy))
    energy = np.sum(h * h, axis=1)
    penalty = float(np.sum(0.5 * (energy[:-1] + energy[1:]) * dt))
    exponent = stratonovich - 0.5 * penalty
    if bracket_correction:
        slope = sensor_derivative(x) if sensor_derivative else _derivative(sensor, x)
        bracket = x * np.sum(slope, axis=1)
        exponent -= 0.5 * float(np.sum(0.5 * (bracket[:-1] + bracket[1:]) * dt))
    top, bottom = float(f(x[-1:])[0]), float(f(np.zeros(1))[0])
    return top * float(expit(exponent)) + bottom * float(expit(-exponent))


def _sensor_ignores_observation(model: FilterModel) -> bool:
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, (8, model.signal_dim))
    z1 = np.concatenate([x, rng.uniform(-2, 2, (8, model.obs_dim))], axis=1)
    z2 = np.concatenate([x, rng.uniform(-2, 2, (8, model.obs_dim))], axis=1)
    return bool(np.array_equal(model.sensor(z1), model.sensor(z2)))


def uncorrelated_robust_formula(
    model: FilterModel,
    driver: EnhancedPath,
    brownian: ArrayLike,
    x0: ArrayLike
) -> tuple[FloatArray, FloatArray]:
    """
    The classical robust log-weight of an uncorrelated model along the
    observation path y, by summation by parts,

        I = Σ_k h^k(X_t) y^k_t - Σ_i y_i · (h(X_{i+1}) - h(X_i)) - ½ Σ_i |h(X_i)|² Δt,

    with X by Euler-Maruyama on the given increments. Returns the
    log-weights (m,) and the final signals (m, dX).
    """
    if model.correlation is not None:
        raise ValueError("the robust formula only applies to uncorrelated models")
    if not _sensor_ignores_observation(model):
        raise ValueError("the robust formula needs a sensor h(x) independent of the observation")
    dB = np.asarray(brownian, dtype=float)
    x = np.asarray(x0, dtype=float)
    if dB.ndim == 2:
        dB, x = dB[None], x[None]
    y = driver.values
    dt = np.diff(driver.times)

    def sensor(x: FloatArray, i: int) -> FloatArray:
        return model.sensor(np.concatenate([x, np.broadcast_to(y[i], (x.shape[0], y.shape[1]))], axis=1))

    h = sensor(x, 0)
    penalty = np.zeros(x.shape[0])
    parts = np.zeros(x.shape[0])
    for i in range(driver.steps):
        z = np.concatenate([x, np.broadcast_to(y[i], (x.shape[0], y.shape[1]))], axis=1)
        penalty += np.sum(h * h, axis=1) * dt[i]
        x = x + model.drift(z) * dt[i] + np.einsum('mij,mj->mi', model.diffusion(z), dB[:, i])
        h_next = sensor(x, i + 1)
        parts += (h_next - h) @ y[i]
        h = h_next
    log_weights = h @ y[-1] - parts - 0.5 * penalty
    return log_weights, x


def simulate_observation(
    model: FilterModel,
    horizon: float = 1.0,
    n_steps: int = DEFAULT_SIMULATION_STEPS,
    seed: int = 0
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """
    A joint record (times, X, Y) under the original measure by Euler-Maruyama:

        dX = (l̄₀ + Z h) dt + Z dW + L dB,    dY = h dt + dW.
    """
    rng = sample_stream(seed, 0, RECORD_DOMAIN)
    times = np.linspace(0.0, horizon, n_steps + 1)
    dt = horizon / n_steps
    x = np.empty((n_steps + 1, model.signal_dim))
    y = np.zeros((n_steps + 1, model.obs_dim))
    x[0] = model.initial.sample(rng)
    dW = rng.standard_normal((n_steps, model.obs_dim)) * math.sqrt(dt)
    dB = rng.standard_normal((n_steps, model.noise_dim)) * math.sqrt(dt)
    for i in range(n_steps):
        z = np.concatenate([x[i], y[i]])[None]
        drift = model.signal_drift_under_p(z)[0]
        x[i + 1] = (x[i] + drift * dt + model.correlation_at(z)[0] @ dW[i]
                    + model.diffusion(z)[0] @ dB[i])
        y[i + 1] = y[i] + model.sensor(z)[0] * dt + dW[i]
    return times, x, y


@dataclass(frozen=True)
class ParticleEnsemble:
    """
    Final particle signals with their log-weights and the final observation.
    """
    signals: FloatArray
    log_weights: FloatArray
    observation: FloatArray
    seed: int

    @property
    def n_particles(self) -> int:
        return self.signals.shape[0]

    def _shifted_weights(self) -> FloatArray:
        return np.exp(self.log_weights - np.max(self.log_weights))

    def normalized_weights(self) -> FloatArray:
        weights = self._shifted_weights()
        return weights / weights.sum()

    def ess(self) -> float:
        """ Effective sample size (Σw)² / Σw². """
        weights = self._shifted_weights()
        return float(weights.sum() ** 2 / np.sum(weights * weights))

    def points(self) -> FloatArray:
        observation = np.broadcast_to(self.observation, (self.n_particles, self.observation.shape[0]))
        return np.concatenate([self.signals, observation], axis=1)

    def estimate(self, f: TestFunction) -> tuple[float, float]:
        """ Weighted mean of f and its delta-method standard error. """
        weights = self._shifted_weights()
        return ratio_estimate(f(self.points()) * weights, weights)


@dataclass(frozen=True)
class ParticleEstimate:
    theta: float
    stderr: float
    ess: float
    n_particles: int
    seed: int
    degenerate: bool

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def run_particles(
    model: FilterModel,
    observation: EnhancedPath,
    n_particles: int,
    seed: int,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> ParticleEnsemble:
    """
    Propagates particles with the reference-measure dynamics
    dX = l̄₀ dt + Z dY + L dB and accumulates the Itô log-likelihood
    h · ΔY - ½ |h|² Δt along the observed increments. No resampling.
    """
    y = observation.values
    dy = np.diff(y, axis=0)
    dt = np.diff(observation.times)

    def work(indices: range) -> tuple[FloatArray, FloatArray]:
        x, dB = draw_inputs(
            model.initial, observation.times, model.noise_dim, seed, indices, PARTICLE_DOMAIN)
        log_weights = np.zeros(x.shape[0])
        for i in range(observation.steps):
            z = np.concatenate([x, np.broadcast_to(y[i], (x.shape[0], y.shape[1]))], axis=1)
            h = model.sensor(z)
            log_weights += h @ dy[i] - 0.5 * np.sum(h * h, axis=1) * dt[i]
            x = (x + model.ito_drift(z) * dt[i]
                 + np.einsum('mik,k->mi', model.correlation_at(z), dy[i])
                 + np.einsum('mij,mj->mi', model.diffusion(z), dB[:, i]))
        return x, log_weights

    chunks = run_chunks(n_particles, work, workers, progress, "particles")
    return ParticleEnsemble(
        np.concatenate([c[0] for c in chunks]),
        np.concatenate([c[1] for c in chunks]),
        np.array(y[-1]), seed)


def particle_filter_estimate(
    model: FilterModel,
    observation: EnhancedPath,
    f: TestFunction,
    n_particles: int,
    seed: int,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> ParticleEstimate:
    """
    Weighted particle estimate of the filter of f at the end of the
    observation. An effective sample size below 10 is logged and flagged.
    """
    ensemble = run_particles(model, observation, n_particles, seed, workers, progress)
    theta, stderr = ensemble.estimate(f)
    ess = ensemble.ess()
    degenerate = ess < MIN_ESS
    if degenerate:
        logger.warning("particle weights degenerate: ESS %.3g of %d", ess, n_particles)
    return ParticleEstimate(theta, stderr, ess, n_particles, seed, degenerate)
