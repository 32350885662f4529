"""
Monte Carlo evaluation of the robust filter

    θ(ρ) = g^f(ρ) / g¹(ρ),    g^f(ρ) = Ē[ f(X^ρ_t, Y^ρ_t) exp(I^ρ_t) ],

over the auxiliary Brownian motion, for an enhanced observation path ρ.
"""
import logging
import math
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from .notifier import ProgressNotifier
from .rough_path import EnhancedPath, geodesic_interpolate, holder_distance, holder_seminorms
from .rough_sde import (
    DEFAULT_SCHEME, DEFAULT_STEP, FilterModel, Scheme, build_filter_system, solve_rough_sde,
)
from .sampling import draw_inputs, run_chunks


logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

LOG_FLOAT_MAX = math.log(sys.float_info.max)


class WeightOverflowError(OverflowError):
    """ exp(I) beyond double range: the sensor is not bounded enough. """


@dataclass(frozen=True)
class TestFunction:
    """
    A bounded Lipschitz function of the stacked point (x, y).
    """
    __test__ = False

    name: str
    func: Callable[[FloatArray], FloatArray]
    bound: float
    lipschitz: float

    def __call__(self, z: FloatArray) -> FloatArray:
        values = np.asarray(self.func(z), dtype=float)
        if values.shape != (z.shape[0],):
            raise ValueError(f"test function '{self.name}' returned shape {values.shape}")
        if np.any(np.abs(values) > self.bound * (1 + 1e-12)):
            raise ValueError(f"test function '{self.name}' exceeds its declared bound {self.bound}")
        return values


@dataclass(frozen=True)
class ThetaEstimate:
    gf_mean: float
    gf_stderr: float
    g1_mean: float
    g1_stderr: float
    theta: float
    theta_stderr: float
    n_samples: int
    seed: int
    steps: int
    horizon: float
    scheme: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def ratio_estimate(numerators: FloatArray, denominators: FloatArray) -> tuple[float, float]:
    """
    Ratio of means and its delta-method standard error, the standard
    deviation of (F - θ W) / mean(W) over √n.
    """
    n = numerators.shape[0]
    if n < 2:
        raise ValueError(f"need at least two samples, got {n}")
    mean_w = float(np.mean(denominators))
    theta = float(np.mean(numerators)) / mean_w
    residual = (numerators - theta * denominators) / mean_w
    return theta, float(np.std(residual, ddof=1)) / math.sqrt(n)


def _stderr(values: FloatArray) -> float:
    return float(np.std(values, ddof=1)) / math.sqrt(values.shape[0])


def sample_weights(
    model: FilterModel,
    driver: EnhancedPath,
    f: TestFunction,
    n_samples: int,
    seed: int,
    scheme: Scheme = DEFAULT_SCHEME,
    workers: int = 1,
    progress: ProgressNotifier | None = None,
    step: float = DEFAULT_STEP
) -> tuple[FloatArray, FloatArray]:
    """
    Per-sample f(X_t, Y_t) and I_t, in sample order.
    """
    system = build_filter_system(model)

    def work(indices: range) -> tuple[FloatArray, FloatArray]:
        s0, dB = draw_inputs(system.initial, driver.times, system.noise_dim, seed, indices)
        final = solve_rough_sde(system, driver, dB, s0, scheme, step).final
        return f(final[:, :-1]), final[:, -1]

    chunks = run_chunks(n_samples, work, workers, progress, "theta")
    values = np.concatenate([c[0] for c in chunks])
    log_weights = np.concatenate([c[1] for c in chunks])
    return values, log_weights


def _rescale(log_scale: float, value: float) -> float:
    """ exp(log_scale) · value, raising where the product leaves double range. """
    if value == 0.0:
        return 0.0
    exponent = log_scale + math.log(abs(value))
    if exponent > LOG_FLOAT_MAX:
        raise WeightOverflowError(f"log-weight scale {exponent:.6g} exceeds log(max float) = {LOG_FLOAT_MAX:.6g}")
    return math.copysign(math.exp(exponent), value)


def estimate_from_samples(
    values: FloatArray,
    log_weights: FloatArray,
    seed: int,
    driver: EnhancedPath,
    scheme: str
) -> ThetaEstimate:
    """
    θ and its standard error from weights exp(I - max I); g^f and g¹ are
    scaled back by exp(max I) and underflow to zero when out of range.
    """
    shift = float(np.max(log_weights))
    if not math.isfinite(shift):
        raise WeightOverflowError(f"log-weight {shift} is not finite")
    n = values.shape[0]
    weights = np.exp(log_weights - shift)
    weighted = values * weights
    theta, theta_stderr = ratio_estimate(weighted, weights)
    log_g1 = float(logsumexp(log_weights)) - math.log(n)
    if log_g1 > LOG_FLOAT_MAX:
        raise WeightOverflowError(f"log g¹ = {log_g1:.6g} exceeds log(max float) = {LOG_FLOAT_MAX:.6g}")
    return ThetaEstimate(
        gf_mean=_rescale(shift, float(np.mean(weighted))), gf_stderr=_rescale(shift, _stderr(weighted)),
        g1_mean=math.exp(log_g1), g1_stderr=_rescale(shift, _stderr(weights)),
        theta=theta, theta_stderr=theta_stderr,
        n_samples=n, seed=seed,
        steps=driver.steps, horizon=driver.horizon, scheme=scheme)


def evaluate_theta(
    model: FilterModel,
    driver: EnhancedPath,
    f: TestFunction,
    n_samples: int,
    seed: int,
    scheme: Scheme = DEFAULT_SCHEME,
    workers: int = 1,
    progress: ProgressNotifier | None = None,
    step: float = DEFAULT_STEP
) -> ThetaEstimate:
    """
    Estimates g^f, g¹ and θ along `driver` from `n_samples` draws of the
    auxiliary noise and initial signal. Reproducible for a given seed
    regardless of `workers`.
    """
    if n_samples < 2:
        raise ValueError(f"n_samples must be at least 2, got {n_samples}")
    values, log_weights = sample_weights(
        model, driver, f, n_samples, seed, scheme, workers, progress, step)
    estimate = estimate_from_samples(values, log_weights, seed, driver, scheme)
    logger.info("theta = %.6g ± %.2g (%d samples)", estimate.theta, estimate.theta_stderr, n_samples)
    return estimate


@dataclass(frozen=True)
class ContinuityRow:
    label: str
    distance: float
    delta_theta: float
    ratio: float
    theta: float
    theta_stderr: float


def _common_grid(p1: EnhancedPath, p2: EnhancedPath) -> tuple[EnhancedPath, EnhancedPath]:
    if np.array_equal(p1.times, p2.times):
        return p1, p2
    return geodesic_interpolate(p1, p2.times), geodesic_interpolate(p2, p1.times)


def continuity_probe(
    model: FilterModel,
    driver: EnhancedPath,
    f: TestFunction,
    perturbations: Sequence[EnhancedPath],
    n_samples: int,
    seed: int,
    labels: Sequence[str] | None = None,
    radius: float | None = None,
    scheme: Scheme = DEFAULT_SCHEME,
    workers: int = 1,
    progress: ProgressNotifier | None = None,
    step: float = DEFAULT_STEP
) -> list[ContinuityRow]:
    """
    θ along `driver` and along each perturbed driver on common draws, with
    the rough path distance to `driver`; rows sorted by distance.
    """
    labels = list(labels) if labels is not None else [str(k) for k in range(len(perturbations))]
    if len(labels) != len(perturbations):
        raise ValueError("need one label per perturbation")
    if radius is not None:
        for candidate in (driver, *perturbations):
            found = holder_seminorms(candidate).radius
            if found > radius:
                raise ValueError(f"driver radius {found:.6g} exceeds the declared radius {radius}")
    base = evaluate_theta(model, driver, f, n_samples, seed, scheme, workers, progress, step)
    rows = []
    for label, other in zip(labels, perturbations):
        estimate = evaluate_theta(model, other, f, n_samples, seed, scheme, workers, progress, step)
        distance = holder_distance(*_common_grid(driver, other))
        delta = abs(estimate.theta - base.theta)
        ratio = delta / distance if distance > 0 else 0.0
        rows.append(ContinuityRow(label, distance, delta, ratio, estimate.theta, estimate.theta_stderr))
    return sorted(rows, key=lambda row: row.distance)
