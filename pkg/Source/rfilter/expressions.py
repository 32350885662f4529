"""
Inline filter models: coefficients written as arithmetic expressions over
the signal x1, x2, ... and the observation y1, y2, ..., for example

    {"signal_dim": 1, "obs_dim": 1, "noise_dim": 1,
     "drift": ["-x1"], "diffusion": [["0.5"]],
     "sensor": ["tanh(x1)"], "correlation": [["0.3"]],
     "initial": {"low": [-1], "high": [1]}}

`drift` is the Itô drift of the signal under the reference measure unless
`"ito": false`, in which case it is taken as the Stratonovich drift.
Boundedness of the sensor is declared with `sensor_bound`, never checked.
"""
import ast
import json
import math
import operator
import re
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .config import ConfigError
from .rough_sde import DiscreteLaw, FilterModel, InitialLaw, PointMass, UniformBox


FloatArray = NDArray[np.float64]
Compiled = Callable[[FloatArray], FloatArray]

FUNCTIONS: dict[str, Callable[[FloatArray], FloatArray]] = {
    "tanh": np.tanh,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "abs": np.abs,
}
CONSTANTS = {"pi": math.pi, "e": math.e}

_BINARY = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_VARIABLE = re.compile(r"([xy])([1-9]\d*)$")

_SPEC_KEYS = {
    "name", "signal_dim", "obs_dim", "noise_dim", "drift", "diffusion", "sensor",
    "correlation", "initial", "sensor_bound", "ito",
}


def _variable_column(name: str, signal_dim: int, obs_dim: int) -> int:
    match = _VARIABLE.match(name)
    if match is None:
        raise ConfigError(f"unknown name '{name}'")
    kind, index = match.group(1), int(match.group(2))
    limit = signal_dim if kind == "x" else obs_dim
    if index > limit:
        raise ConfigError(f"'{name}' is out of range, only {kind}1..{kind}{limit} exist")
    return index - 1 if kind == "x" else signal_dim + index - 1


def _check(node: ast.AST, signal_dim: int, obs_dim: int) -> None:
    match node:
        case ast.Expression(body=body):
            _check(body, signal_dim, obs_dim)
        case ast.BinOp(left=left, op=op, right=right) if type(op) in _BINARY:
            _check(left, signal_dim, obs_dim)
            _check(right, signal_dim, obs_dim)
        case ast.UnaryOp(op=op, operand=operand) if type(op) in _UNARY:
            _check(operand, signal_dim, obs_dim)
        case ast.Constant(value=value) if isinstance(value, (int, float)) and not isinstance(value, bool):
            pass
        case ast.Name(id=name) if name in CONSTANTS:
            pass
        case ast.Name(id=name):
            _variable_column(name, signal_dim, obs_dim)
        case ast.Call(func=ast.Name(id=name), args=[argument], keywords=[]) if name in FUNCTIONS:
            _check(argument, signal_dim, obs_dim)
        case _:
            raise ConfigError(f"unsupported expression element '{ast.dump(node)}'")


def _evaluate(node: ast.AST, z: FloatArray, signal_dim: int, obs_dim: int) -> FloatArray | float:
    match node:
        case ast.Expression(body=body):
            return _evaluate(body, z, signal_dim, obs_dim)
        case ast.BinOp(left=left, op=op, right=right):
            return _BINARY[type(op)](
                _evaluate(left, z, signal_dim, obs_dim), _evaluate(right, z, signal_dim, obs_dim))
        case ast.UnaryOp(op=op, operand=operand):
            return _UNARY[type(op)](_evaluate(operand, z, signal_dim, obs_dim))
        case ast.Constant(value=value):
            return float(value)
        case ast.Name(id=name) if name in CONSTANTS:
            return CONSTANTS[name]
        case ast.Name(id=name):
            return z[:, _variable_column(name, signal_dim, obs_dim)]
        case ast.Call(func=ast.Name(id=name), args=[argument]):
            return FUNCTIONS[name](_evaluate(argument, z, signal_dim, obs_dim))
    raise AssertionError(f"unchecked node {ast.dump(node)}")


def compile_expression(text: str, signal_dim: int, obs_dim: int) -> Compiled:
    """
    A vectorised function (m, dX + dY) -> (m,) for one expression.
    """
    if not isinstance(text, (str, int, float)) or isinstance(text, bool):
        raise ConfigError(f"expected an expression, got {text!r}")
    try:
        tree = ast.parse(str(text), mode="eval")
    except SyntaxError as error:
        raise ConfigError(f"cannot parse '{text}': {error.msg}") from None
    _check(tree, signal_dim, obs_dim)

    def evaluate(z: FloatArray) -> FloatArray:
        value = _evaluate(tree, z, signal_dim, obs_dim)
        return np.broadcast_to(np.asarray(value, dtype=float), (z.shape[0],))
    return evaluate


def compile_vector(texts: Sequence[str], length: int, signal_dim: int, obs_dim: int) -> Compiled:
    """ (m, dX + dY) -> (m, length). """
    if not isinstance(texts, (list, tuple)) or len(texts) != length:
        raise ConfigError(f"expected a list of {length} expressions, got {texts!r}")
    entries = [compile_expression(t, signal_dim, obs_dim) for t in texts]
    return lambda z: np.stack([e(z) for e in entries], axis=1)


def compile_matrix(
    rows: Sequence[Sequence[str]],
    shape: tuple[int, int],
    signal_dim: int,
    obs_dim: int
) -> Compiled:
    """ (m, dX + dY) -> (m, *shape). """
    if not isinstance(rows, (list, tuple)) or len(rows) != shape[0]:
        raise ConfigError(f"expected {shape[0]} rows of expressions, got {rows!r}")
    compiled = [compile_vector(row, shape[1], signal_dim, obs_dim) for row in rows]
    return lambda z: np.stack([row(z) for row in compiled], axis=1)


def _initial_law(spec: Any, signal_dim: int) -> InitialLaw:
    try:
        match spec:
            case {"point": point}:
                law = PointMass(point)
            case {"points": points, "probabilities": probabilities}:
                law = DiscreteLaw(points, probabilities)
            case {"low": low, "high": high}:
                law = UniformBox(low, high)
            case _:
                raise ConfigError(
                    f"initial law must give 'point', 'points' and 'probabilities', or 'low' and 'high', got {spec!r}")
    except (TypeError, ValueError) as error:
        if isinstance(error, ConfigError):
            raise
        raise ConfigError(f"invalid initial law: {error}") from None
    if law.dim != signal_dim:
        raise ConfigError(f"initial law has dimension {law.dim}, signal has {signal_dim}")
    return law


def model_from_spec(spec: Mapping[str, Any] | str) -> FilterModel:
    """
    Builds a filter model from a mapping or its JSON text.
    """
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as error:
            raise ConfigError(f"inline model is not valid JSON: {error}") from None
    if not isinstance(spec, Mapping):
        raise ConfigError("inline model must be a JSON object")
    unknown = sorted(set(spec) - _SPEC_KEYS)
    if unknown:
        raise ConfigError(f"unknown inline model keys {unknown}")
    try:
        d_x, d_y = int(spec["signal_dim"]), int(spec["obs_dim"])
        d_b = int(spec.get("noise_dim", 0))
        drift_text, sensor_text = spec["drift"], spec["sensor"]
        initial_spec = spec["initial"]
    except KeyError as error:
        raise ConfigError(f"inline model is missing {error}") from None
    if min(d_x, d_y) < 1 or d_b < 0:
        raise ConfigError(f"invalid dimensions dX={d_x}, dY={d_y}, dB={d_b}")

    drift = compile_vector(drift_text, d_x, d_x, d_y)
    sensor = compile_vector(sensor_text, d_y, d_x, d_y)
    if d_b:
        diffusion = compile_matrix(spec.get("diffusion", []), (d_x, d_b), d_x, d_y)
    else:
        diffusion = lambda z: np.zeros((z.shape[0], d_x, 0))
    correlation = None
    if spec.get("correlation") is not None:
        correlation = compile_matrix(spec["correlation"], (d_x, d_y), d_x, d_y)
    initial = _initial_law(initial_spec, d_x)
    options = {
        "sensor_bound": float(spec.get("sensor_bound", 1.0)),
        "name": str(spec.get("name", "inline")),
    }
    if spec.get("ito", True):
        return FilterModel.from_ito(
            d_x, d_y, d_b, drift, diffusion, sensor, initial, correlation, **options)
    return FilterModel(d_x, d_y, d_b, drift, diffusion, sensor, initial, correlation, **options)
