"""
SDEs with rough drift,

    dS = a(S) dt + b(S) dB + c(S) dρ,

solved by flow decomposition S = φ(t, S̃), where φ is the flow of c along ρ
and S̃ solves a classical SDE with transformed coefficients. The filtering
system stacks signal, observation and log-likelihood into one such SDE.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .flow import (
    FlowField, TransformedCoefficients, VectorFields,
    flow_segment, flow_with_jacobian,
)
from .notifier import ProgressNotifier
from .rough_path import EnhancedPath, GridMismatchError
from .sampling import draw_inputs, run_chunks


logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Coefficient = Callable[[FloatArray], FloatArray]
Scheme = Literal["decomposition", "splitting"]
SCHEMES: tuple[Scheme, ...] = ("decomposition", "splitting")
DEFAULT_SCHEME: Scheme = "splitting"

DEFAULT_STEP = 1e-3
DEFAULT_MAX_INCREMENT = 1e-2


# Initial laws
# ------------

class InitialLaw(ABC):
    """
    A law with bounded support for the initial state.
    """
    @property
    @abstractmethod
    def dim(self) -> int: ...

    @property
    @abstractmethod
    def bound(self) -> float:
        """ Sup of |s| over the support. """

    @abstractmethod
    def sample(self, rng: np.random.Generator) -> FloatArray: ...

    @abstractmethod
    def atoms(self) -> tuple[FloatArray, FloatArray] | None:
        """ Support points and probabilities of a discrete law, else None. """


@dataclass(frozen=True, eq=False)
class PointMass(InitialLaw):
    point: FloatArray

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.array(self.point, dtype=float)))

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    @property
    def bound(self) -> float:
        return float(np.linalg.norm(self.point))

    def sample(self, rng: np.random.Generator) -> FloatArray:
        return self.point.copy()

    def atoms(self) -> tuple[FloatArray, FloatArray]:
        return self.point[None, :], np.ones(1)


@dataclass(frozen=True, eq=False)
class DiscreteLaw(InitialLaw):
    points: FloatArray
    probabilities: FloatArray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.array(self.probabilities, dtype=float)
        if weights.shape != (points.shape[0],) or np.any(weights < 0):
            raise ValueError("need one nonnegative probability per support point")
        if not math.isclose(float(weights.sum()), 1.0, rel_tol=1e-12):
            raise ValueError(f"probabilities sum to {weights.sum()}, not 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "probabilities", weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def bound(self) -> float:
        return float(np.max(np.linalg.norm(self.points, axis=1)))

    def sample(self, rng: np.random.Generator) -> FloatArray:
        index = int(np.searchsorted(np.cumsum(self.probabilities), rng.random(), side='right'))
        return self.points[min(index, self.points.shape[0] - 1)].copy()

    def atoms(self) -> tuple[FloatArray, FloatArray]:
        return self.points, self.probabilities


@dataclass(frozen=True, eq=False)
class UniformBox(InitialLaw):
    low: FloatArray
    high: FloatArray

    def __post_init__(self):
        low = np.atleast_1d(np.array(self.low, dtype=float))
        high = np.atleast_1d(np.array(self.high, dtype=float))
        if low.shape != high.shape or np.any(high < low):
            raise ValueError(f"invalid box [{low}, {high}]")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self) -> int:
        return self.low.shape[0]

    @property
    def bound(self) -> float:
        return float(np.linalg.norm(np.maximum(np.abs(self.low), np.abs(self.high))))

    def sample(self, rng: np.random.Generator) -> FloatArray:
        return self.low + (self.high - self.low) * rng.random(self.dim)

    def atoms(self) -> None:
        return None


@dataclass(frozen=True, eq=False)
class EmbeddedLaw(InitialLaw):
    """ `base` in the leading coordinates of a longer, zero-padded vector. """
    base: InitialLaw
    total_dim: int

    @property
    def dim(self) -> int:
        return self.total_dim

    @property
    def bound(self) -> float:
        return self.base.bound

    def sample(self, rng: np.random.Generator) -> FloatArray:
        out = np.zeros(self.total_dim)
        out[:self.base.dim] = self.base.sample(rng)
        return out

    def atoms(self) -> tuple[FloatArray, FloatArray] | None:
        base = self.base.atoms()
        if base is None:
            return None
        points, weights = base
        padded = np.zeros((points.shape[0], self.total_dim))
        padded[:, :self.base.dim] = points
        return padded, weights


# Systems and solutions
# ---------------------

@dataclass(frozen=True, eq=False)
class RoughDriftSystem:
    """
    Coefficients (a, b, c) and initial law of an SDE with rough drift.
    `drift` maps (m, dS) -> (m, dS), `diffusion` (m, dS) -> (m, dS, dB).
    `layout` records (dX, dY) for the stacked filtering system.
    """
    drift: Coefficient
    diffusion: Coefficient
    rough: VectorFields
    initial: InitialLaw
    noise_dim: int
    layout: tuple[int, int] | None = None

    def __post_init__(self):
        if self.initial.dim != self.rough.state_dim:
            raise ValueError(
                f"initial law has dimension {self.initial.dim}, state has {self.rough.state_dim}")

    @property
    def state_dim(self) -> int:
        return self.rough.state_dim

    @property
    def driver_dim(self) -> int:
        return self.rough.driver_dim


@dataclass(frozen=True)
class SamplePath:
    """
    Solutions on a grid: `states` is (steps + 1, dS) for one sample or
    (m, steps + 1, dS) for a batch.
    """
    times: FloatArray
    states: FloatArray
    layout: tuple[int, int] | None = None

    def _split(self) -> tuple[int, int]:
        if self.layout is None:
            raise AttributeError("not a filtering solution")
        return self.layout

    @property
    def signal(self) -> FloatArray:
        d_x, _ = self._split()
        return self.states[..., :d_x]

    @property
    def observation(self) -> FloatArray:
        d_x, d_y = self._split()
        return self.states[..., d_x:d_x + d_y]

    @property
    def log_weight(self) -> FloatArray:
        self._split()
        return self.states[..., -1]

    @property
    def final(self) -> FloatArray:
        return self.states[..., -1, :]


def _check_inputs(
    system: RoughDriftSystem,
    driver: EnhancedPath,
    brownian: FloatArray,
    s0: FloatArray
) -> None:
    if driver.dim != system.driver_dim:
        raise GridMismatchError(f"system expects a {system.driver_dim}-dimensional driver, got {driver.dim}")
    if brownian.shape[1:] != (driver.steps, system.noise_dim):
        raise GridMismatchError(
            f"Brownian increments of shape {brownian.shape[1:]} do not match "
            f"{driver.steps} steps of {system.noise_dim} noises")
    if s0.shape != (brownian.shape[0], system.state_dim):
        raise ValueError(f"initial states of shape {s0.shape} do not match the batch")


def _as_samples(brownian: ArrayLike, s0: ArrayLike) -> tuple[FloatArray, FloatArray, bool]:
    dB = np.asarray(brownian, dtype=float)
    start = np.asarray(s0, dtype=float)
    single = dB.ndim == 2
    if single:
        dB, start = dB[None], start[None]
    return dB, start, single


def euler_maruyama(
    drift: Coefficient,
    diffusion: Coefficient,
    times: FloatArray,
    brownian: ArrayLike,
    s0: ArrayLike
) -> FloatArray:
    """
    Plain Euler-Maruyama for dS = a dt + b dB; returns (m, steps + 1, dS)
    (or (steps + 1, dS) for a single sample).
    """
    dB, s, single = _as_samples(brownian, s0)
    dt = np.diff(times)
    states = np.empty((s.shape[0], dt.shape[0] + 1, s.shape[1]))
    states[:, 0] = s
    for i in range(dt.shape[0]):
        s = s + drift(s) * dt[i] + np.einsum('mij,mj->mi', diffusion(s), dB[:, i])
        states[:, i + 1] = s
    return states[0] if single else states


def solve_rough_sde(
    system: RoughDriftSystem,
    driver: EnhancedPath,
    brownian: ArrayLike,
    s0: ArrayLike,
    scheme: Scheme = DEFAULT_SCHEME,
    step: float = DEFAULT_STEP,
    max_increment: float = DEFAULT_MAX_INCREMENT
) -> SamplePath:
    """
    Solves the system along `driver` for Brownian increments on the driver's
    grid, batched over samples.

    `decomposition` runs Euler-Maruyama on S̃ with the transformed
    coefficients and maps every grid value through φ(t_i, ·); its cost grows
    quadratically with the grid, so it serves as the reference route.
    `splitting`, the default, alternates an Euler-Maruyama step for (a, b)
    with the flow of c across the segment, at linear cost. Both converge to
    the same solution as the grid is refined.
    """
    dB, s, single = _as_samples(brownian, s0)
    _check_inputs(system, driver, dB, s)
    field = FlowField(driver, system.rough, step, max_increment)
    times = driver.times
    dt = np.diff(times)
    states = np.empty((s.shape[0], driver.size, system.state_dim))
    states[:, 0] = s

    if scheme == "decomposition":
        coefficients = TransformedCoefficients(field, system.drift, system.diffusion)
        image, jacobian = flow_with_jacobian(field, 0.0, s)
        for i in range(driver.steps):
            a_tilde, b_tilde = coefficients.at_image(float(times[i]), image, jacobian)
            s = s + a_tilde * dt[i] + np.einsum('mij,mj->mi', b_tilde, dB[:, i])
            image, jacobian = flow_with_jacobian(field, float(times[i + 1]), s)
            states[:, i + 1] = image
    elif scheme == "splitting":
        for i in range(driver.steps):
            s = s + system.drift(s) * dt[i] + np.einsum('mij,mj->mi', system.diffusion(s), dB[:, i])
            s, _ = flow_segment(field, i, s)
            states[:, i + 1] = s
    else:
        raise ValueError(f"unknown scheme '{scheme}', expected one of {SCHEMES}")
    return SamplePath(times, states[0] if single else states, system.layout)


def solve_classical_sde(
    system: RoughDriftSystem,
    driver: EnhancedPath,
    brownian: ArrayLike,
    s0: ArrayLike
) -> SamplePath:
    """
    Euler scheme treating the driver's increments as a drift,
    S += a Δt + b ΔB + c(S) Δρ. Only meaningful for smooth drivers.
    """
    dB, s, single = _as_samples(brownian, s0)
    _check_inputs(system, driver, dB, s)
    delta, _ = driver.segment_increments
    dt = np.diff(driver.times)
    states = np.empty((s.shape[0], driver.size, system.state_dim))
    states[:, 0] = s
    for i in range(driver.steps):
        s = (s + system.drift(s) * dt[i]
             + np.einsum('mij,mj->mi', system.diffusion(s), dB[:, i])
             + np.einsum('mik,k->mi', system.rough(s), delta[i]))
        states[:, i + 1] = s
    return SamplePath(driver.times, states[0] if single else states, system.layout)


# Filtering model
# ---------------

def stratonovich_drift_correction(
    ito_drift: Coefficient,
    correlation: Coefficient | None,
    signal_dim: int,
    obs_dim: int
) -> Coefficient:
    """
    The Stratonovich drift L₀ = l̄₀ - ½ Σ_k D_k Z_k of an Itô signal drift
    l̄₀, where D_k differentiates along (Z_k, e_k) in (x, y) space.
    """
    if correlation is None:
        return ito_drift
    return lambda z: ito_drift(z) - 0.5 * correlation_drift(correlation, z, signal_dim, obs_dim)


def _stacked_direction(correlation: Coefficient | None, signal_dim: int, obs_dim: int) -> Coefficient:
    def direction(z: FloatArray) -> FloatArray:
        u = np.zeros((z.shape[0], signal_dim + obs_dim, obs_dim))
        if correlation is not None:
            u[:, :signal_dim] = correlation(z)
        u[:, signal_dim:] = np.eye(obs_dim)
        return u
    return direction


def _column_derivatives(
    func: Coefficient,
    correlation: Coefficient | None,
    z: FloatArray,
    signal_dim: int,
    obs_dim: int
) -> FloatArray:
    """
    For func: (m, dX+dY) -> (m, ..., dY), the derivative of column k along
    (Z_k, e_k), stacked as (m, ..., dY).
    """
    m = z.shape[0]
    h = 1e-5 * (1.0 + np.linalg.norm(z, axis=1))
    u = _stacked_direction(correlation, signal_dim, obs_dim)(z)
    shifts = np.transpose(u, (2, 0, 1)) * h[None, :, None]
    points = np.concatenate([z[None] + shifts, z[None] - shifts]).reshape(2 * obs_dim * m, -1)
    values = func(points)
    values = values.reshape(2, obs_dim, m, *values.shape[1:])
    slopes = (values[0] - values[1]) / (2 * h.reshape(1, m, *([1] * (values.ndim - 3))))
    # slopes[k, m, ..., j]: derivative of column j along direction k; keep j = k.
    k = np.arange(obs_dim)
    return np.moveaxis(slopes[k, :, ..., k], 0, -1)


def correlation_drift(
    correlation: Coefficient,
    z: FloatArray,
    signal_dim: int,
    obs_dim: int
) -> FloatArray:
    """ Σ_k D_k Z_k at z, shape (m, dX). """
    return _column_derivatives(correlation, correlation, z, signal_dim, obs_dim).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class FilterModel:
    """
    Signal X in R^dX and observation Y in R^dY,

        dX = L₀(X, Y) dt + Σ_k Z_k(X, Y) ∘ dY^k + Σ_j L_j(X, Y) dB^j,
        dY = h(X, Y) dt + dW,

    coefficients taking stacked (m, dX + dY) points. The B-integral is Itô,
    so a state-dependent L must carry its own correction in L₀. `correlation` (Z) may be
    None for uncorrelated noise. `sensor` (h) must be bounded by
    `sensor_bound`. `from_ito` records whether L₀ was derived from an Itô
    drift l̄₀.
    """
    signal_dim: int
    obs_dim: int
    noise_dim: int
    drift: Coefficient
    diffusion: Coefficient
    sensor: Coefficient
    initial: InitialLaw
    correlation: Coefficient | None = None
    sensor_bound: float = 1.0
    grade: float = 4.0
    derived_from_ito: bool = False
    name: str = "custom"
    _ito_drift: Coefficient | None = field(default=None, repr=False)

    def __post_init__(self):
        if min(self.signal_dim, self.obs_dim) < 1 or self.noise_dim < 0:
            raise ValueError(
                f"invalid dimensions dX={self.signal_dim}, dY={self.obs_dim}, dB={self.noise_dim}")
        if self.initial.dim != self.signal_dim:
            raise ValueError(
                f"initial law has dimension {self.initial.dim}, signal has {self.signal_dim}")
        point = np.zeros((1, self.signal_dim + self.obs_dim))
        expected = {
            "drift": (self.drift, (1, self.signal_dim)),
            "diffusion": (self.diffusion, (1, self.signal_dim, self.noise_dim)),
            "sensor": (self.sensor, (1, self.obs_dim)),
        }
        if self.correlation is not None:
            expected["correlation"] = (self.correlation, (1, self.signal_dim, self.obs_dim))
        for name, (func, shape) in expected.items():
            got = np.shape(func(point))
            if got != shape:
                raise ValueError(f"{name} returns shape {got}, expected {shape}")

    @classmethod
    def from_ito(cls,
        signal_dim: int,
        obs_dim: int,
        noise_dim: int,
        ito_drift: Coefficient,
        diffusion: Coefficient,
        sensor: Coefficient,
        initial: InitialLaw,
        correlation: Coefficient | None = None,
        **kwargs
    ) -> 'FilterModel':
        """
        Builds the model from the Itô drift l̄₀ of dX = l̄₀ dt + Z dY + L dB
        (the signal's dynamics under the reference measure).

        `diffusion` is taken as is; use coefficients L independent of the
        state or pass the Stratonovich form.
        """
        drift = stratonovich_drift_correction(ito_drift, correlation, signal_dim, obs_dim)
        return cls(signal_dim, obs_dim, noise_dim, drift, diffusion, sensor, initial,
                   correlation, derived_from_ito=True, _ito_drift=ito_drift, **kwargs)

    @property
    def stacked_dim(self) -> int:
        return self.signal_dim + self.obs_dim

    def ito_drift(self, z: FloatArray) -> FloatArray:
        """ l̄₀ = L₀ + ½ Σ_k D_k Z_k. """
        if self._ito_drift is not None:
            return self._ito_drift(z)
        if self.correlation is None:
            return self.drift(z)
        return self.drift(z) + 0.5 * correlation_drift(self.correlation, z, self.signal_dim, self.obs_dim)

    def correlation_at(self, z: FloatArray) -> FloatArray:
        if self.correlation is None:
            return np.zeros((z.shape[0], self.signal_dim, self.obs_dim))
        return self.correlation(z)

    def signal_drift_under_p(self, z: FloatArray) -> FloatArray:
        """ l₀ = l̄₀ + Σ_k Z_k h^k, the Itô drift of X under the original measure. """
        return self.ito_drift(z) + np.einsum('mik,mk->mi', self.correlation_at(z), self.sensor(z))

    def sensor_drift(self, z: FloatArray) -> FloatArray:
        """ Σ_k D_k h^k along (Z_k, e_k), shape (m,). """
        return _column_derivatives(
            self.sensor, self.correlation, z, self.signal_dim, self.obs_dim).sum(axis=-1)


def build_filter_system(model: FilterModel) -> RoughDriftSystem:
    """
    The stacked system for S = (X, Y, I): rough columns (Z_k, e_k, h^k),
    drift (L₀, 0, -½ Σ_k D_k h^k - ½ |h|²), diffusion (L, 0, 0).

    Exp(I_t) is then the likelihood of the observation along the driver.
    """
    d_x, d_y = model.signal_dim, model.obs_dim
    d_s = d_x + d_y + 1

    def rough(s: FloatArray) -> FloatArray:
        z = s[:, :-1]
        c = np.zeros((s.shape[0], d_s, d_y))
        c[:, :d_x] = model.correlation_at(z)
        c[:, d_x:d_x + d_y] = np.eye(d_y)
        c[:, -1] = model.sensor(z)
        return c

    def drift(s: FloatArray) -> FloatArray:
        z = s[:, :-1]
        a = np.zeros((s.shape[0], d_s))
        a[:, :d_x] = model.drift(z)
        h = model.sensor(z)
        a[:, -1] = -0.5 * model.sensor_drift(z) - 0.5 * np.sum(h * h, axis=1)
        return a

    def diffusion(s: FloatArray) -> FloatArray:
        b = np.zeros((s.shape[0], d_s, model.noise_dim))
        b[:, :d_x] = model.diffusion(s[:, :-1])
        return b

    return RoughDriftSystem(
        drift, diffusion, VectorFields(rough, d_s, d_y, model.grade),
        EmbeddedLaw(model.initial, d_s), model.noise_dim, (d_x, d_y))


# Monte Carlo diagnostics
# -----------------------

def _solve_chunk(
    system: RoughDriftSystem,
    driver: EnhancedPath,
    seed: int,
    indices: range,
    scheme: Scheme
) -> SamplePath:
    s0, dB = draw_inputs(system.initial, driver.times, system.noise_dim, seed, indices)
    return solve_rough_sde(system, driver, dB, s0, scheme)


def exponential_moment(
    system: RoughDriftSystem,
    driver: EnhancedPath,
    q: float,
    n_samples: int,
    seed: int,
    scheme: Scheme = DEFAULT_SCHEME,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> tuple[float, float]:
    """
    Monte Carlo mean and standard error of exp(q sup_t |S_t|).
    """
    def work(indices: range) -> FloatArray:
        path = _solve_chunk(system, driver, seed, indices, scheme)
        return np.exp(q * np.max(np.linalg.norm(path.states, axis=2), axis=1))

    values = np.concatenate(run_chunks(n_samples, work, workers, progress, "exponential moment"))
    if not np.all(np.isfinite(values)):
        raise OverflowError(f"exp({q} sup|S|) overflows double precision")
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_samples))


def solution_distance(
    system: RoughDriftSystem,
    driver1: EnhancedPath,
    driver2: EnhancedPath,
    n_samples: int,
    seed: int,
    scheme: Scheme = DEFAULT_SCHEME,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> float:
    """
    (E sup_t |S¹_t - S²_t|²)^½ for solutions along two drivers on a common
    grid, on common draws.
    """
    if not np.array_equal(driver1.times, driver2.times):
        raise GridMismatchError("drivers do not share a grid")

    def work(indices: range) -> FloatArray:
        path1 = _solve_chunk(system, driver1, seed, indices, scheme)
        path2 = _solve_chunk(system, driver2, seed, indices, scheme)
        return np.max(np.sum((path1.states - path2.states) ** 2, axis=2), axis=1)

    values = np.concatenate(run_chunks(n_samples, work, workers, progress, "solution distance"))
    return math.sqrt(float(values.mean()))
