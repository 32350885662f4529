"""
Builtin filter models and test functions.
"""
import math
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .config import ConfigError
from .expressions import model_from_spec
from .robust_filter import TestFunction
from .rough_sde import DiscreteLaw, FilterModel, UniformBox


FloatArray = NDArray[np.float64]


def _zeros(shape: tuple[int, ...]) -> Callable[[FloatArray], FloatArray]:
    return lambda z: np.zeros((z.shape[0], *shape))


def example_sensor(x: FloatArray) -> FloatArray:
    """ h(x) = (tanh x, tanh x) of the exponential example, (n,) -> (n, 2). """
    return np.repeat(np.tanh(x)[:, None], 2, axis=1)


def example_s1() -> FilterModel:
    """
    X = X₀ exp(Y¹ + Y²) with X₀ ∈ {0, 1} equally likely: dX = X ∘ dY¹ + X ∘ dY²,
    h = (tanh X, tanh X). Its filter has a closed form.
    """
    return FilterModel(
        signal_dim=1, obs_dim=2, noise_dim=1,
        drift=_zeros((1,)),
        diffusion=_zeros((1, 1)),
        sensor=lambda z: example_sensor(z[:, 0]),
        initial=DiscreteLaw([[0.0], [1.0]], [0.5, 0.5]),
        correlation=lambda z: np.repeat(z[:, :1, None], 2, axis=2),
        sensor_bound=math.sqrt(2.0),
        name="example_s1")


def uncorrelated_1d() -> FilterModel:
    """
    Ornstein-Uhlenbeck signal dX = -X dt + ½ dB observed through h = tanh X,
    with independent noises.
    """
    return FilterModel.from_ito(
        1, 1, 1,
        ito_drift=lambda z: -z[:, :1],
        diffusion=lambda z: np.full((z.shape[0], 1, 1), 0.5),
        sensor=lambda z: np.tanh(z[:, :1]),
        initial=UniformBox([-1.0], [1.0]),
        name="uncorrelated_1d")


def correlated_linear() -> FilterModel:
    """
    dX = -X dt + 0.6 dY + 0.4 dB, h = tanh X.
    """
    return FilterModel.from_ito(
        1, 1, 1,
        ito_drift=lambda z: -z[:, :1],
        diffusion=lambda z: np.full((z.shape[0], 1, 1), 0.4),
        sensor=lambda z: np.tanh(z[:, :1]),
        initial=UniformBox([-1.0], [1.0]),
        correlation=lambda z: np.full((z.shape[0], 1, 1), 0.6),
        name="correlated_linear")


def _two_observation_correlation(z: FloatArray) -> FloatArray:
    z_cols = np.zeros((z.shape[0], 2, 2))
    z_cols[:, 1, 0] = 0.5
    z_cols[:, 0, 1] = 0.5 * z[:, 1]
    return z_cols


def correlated_2obs() -> FilterModel:
    """
    A planar signal correlated with both observation channels through the
    non-commuting columns Z₁ = (0, ½) and Z₂ = (½ x₂, 0):

        dX¹ = -X¹ dt + ½ X² dY² + 0.3 dB¹,
        dX² = -X² dt + ½ dY¹ + 0.3 dB²,
        h = (tanh X¹, tanh X²).

    Their bracket moves X¹, so the filter depends on the area of Y.
    """
    return FilterModel.from_ito(
        2, 2, 2,
        ito_drift=lambda z: -z[:, :2],
        diffusion=lambda z: np.broadcast_to(0.3 * np.eye(2), (z.shape[0], 2, 2)).copy(),
        sensor=lambda z: np.tanh(z[:, :2]),
        initial=UniformBox([-0.5, -0.5], [0.5, 0.5]),
        correlation=_two_observation_correlation,
        sensor_bound=math.sqrt(2.0),
        name="correlated_2obs")


MODELS: dict[str, Callable[[], FilterModel]] = {
    "example_s1": example_s1,
    "uncorrelated_1d": uncorrelated_1d,
    "correlated_linear": correlated_linear,
    "correlated_2obs": correlated_2obs,
}

TEST_FUNCTIONS: dict[str, TestFunction] = {
    "one": TestFunction("one", lambda z: np.ones(z.shape[0]), 1.0, 0.0),
    "zero": TestFunction("zero", lambda z: np.zeros(z.shape[0]), 0.0, 0.0),
    "tanh": TestFunction("tanh", lambda z: np.tanh(z[:, 0]), 1.0, 1.0),
    "sin": TestFunction("sin", lambda z: np.sin(z[:, 0]), 1.0, 1.0),
}


def load_model(reference: str) -> FilterModel:
    """
    A builtin by name, an inline JSON object, or a path to a JSON file.
    """
    if reference in MODELS:
        return MODELS[reference]()
    if reference.lstrip().startswith("{"):
        return model_from_spec(reference)
    path = Path(reference)
    if path.suffix == ".json":
        if not path.is_file():
            raise ConfigError(f"model file '{reference}' does not exist")
        return model_from_spec(path.read_text(encoding="utf-8"))
    raise ConfigError(f"unknown model '{reference}', expected one of {sorted(MODELS)} or inline JSON")


def load_test_function(name: str) -> TestFunction:
    try:
        return TEST_FUNCTIONS[name]
    except KeyError:
        raise ConfigError(f"unknown test function '{name}', expected one of {sorted(TEST_FUNCTIONS)}") from None

