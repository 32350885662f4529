"""
Command line: `rfilter <command> [options]`.

    lift         lift a sampled observation to an enhanced path CSV
    theta        Monte Carlo estimate of the robust filter along a driver
    compare      theta against the closed form and the particle filter
    continuity   theta under dilations and area shifts of the driver
    convergence  theta on dyadic coarsenings of one driver
    simulate     an (X, Y) record under the original measure

JSON results embed the configuration. CSV results on stdout open with a
`# config:` comment line, and with `--out` a sidecar `<out>.meta.json`
records the configuration, version and creation time.
Failures print one JSON line on stderr and exit with 2 for configuration
errors, 1 otherwise.
"""
import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence, TextIO

import numpy as np
from numpy.typing import NDArray

from . import __version__
from .config import COMMANDS, DRIVER_SOURCES, ConfigError, ExperimentConfig
from .models import example_sensor, load_model, load_test_function
from .notifier import ProgressNotifier, log_progress
from .oracles import example_closed_form, particle_filter_estimate, simulate_observation
from .path_csv import COMMENT, format_number, read_path_csv, write_path_csv
from .robust_filter import TestFunction, continuity_probe, evaluate_theta
from .rough_path import (
    EnhancedPath, GridMismatchError, dilate, lift_piecewise_linear, refine, shift_area, spiral_path,
)
from .rough_sde import SCHEMES, FilterModel
from .sampling import resolve_seed


logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

RECORD_STEPS = 1 << 14
CLOSED_FORM_POINTS = 1 << 12
LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


# Observations
# ------------

@dataclass(frozen=True)
class Observation:
    """
    The driver on the experiment grid and, for simulated drivers, the fine
    lifted record it was cut from with the hidden signal.
    """
    driver: EnhancedPath
    record: EnhancedPath | None = None
    signal: FloatArray | None = None


def load_observation(config: ExperimentConfig, model: FilterModel, steps: int | None) -> Observation:
    """
    The driver for `config` with `steps` segments (csv drivers keep their
    own grid when `steps` is None).
    """
    match config.driver:
        case "csv":
            assert config.path
            path = read_path_csv(config.path, config.alpha)
            if path.dim != model.obs_dim:
                raise GridMismatchError(
                    f"{config.path} is {path.dim}-dimensional, model '{model.name}' observes {model.obs_dim}")
            if steps is None:
                return Observation(path)
            if path.steps % steps:
                raise GridMismatchError(f"{config.path} has {path.steps} steps, not a multiple of {steps}")
            return Observation(path.coarsen(path.steps // steps))
        case "spiral":
            if model.obs_dim != 2:
                raise ConfigError(f"the spiral driver is planar, model '{model.name}' observes {model.obs_dim}")
            return Observation(spiral_path(steps or config.grid, config.horizon, alpha=config.alpha))
        case "simulate":
            steps = steps or config.grid
            fine = max(RECORD_STEPS, steps)
            times, x, y = simulate_observation(model, config.horizon, fine, config.seed)
            record = lift_piecewise_linear(times, y, config.alpha)
            return Observation(record.coarsen(fine // steps), record, x)
    raise ConfigError(f"unknown driver source '{config.driver}'")


def _z_score(difference: float, stderr: float) -> float | None:
    return difference / stderr if stderr > 0 else None


def _signal_function(f: TestFunction, observation: FloatArray) -> Callable[[FloatArray], FloatArray]:
    def evaluate(x: FloatArray) -> FloatArray:
        y = np.broadcast_to(observation, (x.shape[0], observation.shape[0]))
        return f(np.column_stack([x, y]))
    return evaluate


# Commands
# --------

@dataclass(frozen=True)
class Table:
    header: list[str]
    rows: list[list[Any]]


Result = dict[str, Any] | Table | EnhancedPath | tuple[EnhancedPath, dict[str, FloatArray]]


def run_lift(config: ExperimentConfig, **_) -> Result:
    if not config.path:
        raise ConfigError("lift needs --path")
    return read_path_csv(config.path, config.alpha)


def run_theta(
    config: ExperimentConfig,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> Result:
    model = load_model(config.model)
    f = load_test_function(config.f)
    driver = load_observation(config, model, None if config.driver == "csv" else config.grid).driver
    estimate = evaluate_theta(
        model, driver, f, config.samples, config.seed, config.scheme, workers, progress, config.step)
    return {"config": config.to_dict(), "theta": estimate.to_dict()}


def run_compare(
    config: ExperimentConfig,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> Result:
    model = load_model(config.model)
    f = load_test_function(config.f)
    observation = load_observation(config, model, None if config.driver == "csv" else config.grid)
    driver = observation.driver
    estimate = evaluate_theta(
        model, driver, f, config.samples, config.seed, config.scheme, workers, progress, config.step)
    result: dict[str, Any] = {
        "config": config.to_dict(),
        "theta": estimate.to_dict(),
        "closed_form": None,
        "pf": None,
        "z_scores": {},
    }
    if config.model == "example_s1" and config.driver == "spiral":
        fine = refine(driver, max(1, CLOSED_FORM_POINTS // driver.steps))
        closed = example_closed_form(_signal_function(f, driver.values[-1]), example_sensor, fine)
        result["closed_form"] = closed
        result["z_scores"]["closed_form"] = _z_score(estimate.theta - closed, estimate.theta_stderr)
    if observation.record is not None:
        pf = particle_filter_estimate(
            model, observation.record, f, config.particles, config.seed, workers, progress)
        result["pf"] = pf.to_dict()
        result["z_scores"]["pf"] = _z_score(
            estimate.theta - pf.theta, math.hypot(estimate.theta_stderr, pf.stderr))
        assert observation.signal is not None
        result["signal_final"] = observation.signal[-1].tolist()
    return result


def run_continuity(
    config: ExperimentConfig,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> Result:
    model = load_model(config.model)
    f = load_test_function(config.f)
    driver = load_observation(config, model, None if config.driver == "csv" else config.grid).driver
    perturbations, labels = [], []
    for delta in config.deltas:
        perturbations.append(dilate(driver, 1.0 + delta))
        labels.append(f"dilate {delta:g}")
        if driver.dim >= 2:
            perturbations.append(shift_area(driver, 0, 1, delta))
            labels.append(f"area {delta:g}")
    rows = continuity_probe(
        model, driver, f, perturbations, config.samples, config.seed, labels,
        scheme=config.scheme, workers=workers, progress=progress, step=config.step)
    return Table(
        ["label", "distance", "delta_theta", "ratio", "theta", "theta_stderr"],
        [[r.label, r.distance, r.delta_theta, r.ratio, r.theta, r.theta_stderr] for r in rows])


def run_convergence(
    config: ExperimentConfig,
    workers: int = 1,
    progress: ProgressNotifier | None = None
) -> Result:
    model = load_model(config.model)
    f = load_test_function(config.f)
    low, high = config.meshes
    finest = load_observation(config, model, 1 << high).driver
    estimates = []
    for exponent in range(low, high + 1):
        driver = finest.coarsen(1 << (high - exponent))
        estimates.append(evaluate_theta(
            model, driver, f, config.samples, config.seed, config.scheme, workers, progress, config.step))
    best = estimates[-1].theta
    return Table(
        ["mesh", "theta", "theta_stderr", "gap"],
        [[e.steps, e.theta, e.theta_stderr, abs(e.theta - best)] for e in estimates])


def run_simulate(config: ExperimentConfig, **_) -> Result:
    model = load_model(config.model)
    times, x, y = simulate_observation(model, config.horizon, config.grid, config.seed)
    path = lift_piecewise_linear(times, y, config.alpha)
    return path, {f"x{k + 1}": x[:, k] for k in range(model.signal_dim)}


COMMAND_RUNNERS: dict[str, Callable[..., Result]] = {
    "lift": run_lift,
    "theta": run_theta,
    "compare": run_compare,
    "continuity": run_continuity,
    "convergence": run_convergence,
    "simulate": run_simulate,
}


# Output
# ------

def _write_result(result: Result, stream: TextIO) -> None:
    match result:
        case dict():
            stream.write(json.dumps(result, sort_keys=True, indent=2, allow_nan=False) + "\n")
        case Table(header=header, rows=rows):
            writer = csv.writer(stream, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([x if isinstance(x, str) else format_number(x) for x in row])
        case EnhancedPath():
            write_path_csv(stream, result)
        case (EnhancedPath() as path, dict() as extra):
            write_path_csv(stream, path, extra)


def write_output(result: Result, config: ExperimentConfig) -> None:
    """
    Writes the result to `config.out` (plus its metadata sidecar) or stdout.
    CSV on stdout starts with a `# config:` comment line.
    """
    if config.out is None:
        if not isinstance(result, dict):
            echo = {"config": config.to_dict(), "version": __version__}
            sys.stdout.write(f"{COMMENT} config: {json.dumps(echo, sort_keys=True)}\n")
        _write_result(result, sys.stdout)
        return
    target = Path(config.out)
    with open(target, 'w', newline='', encoding='utf-8') as stream:
        _write_result(result, stream)
    meta = {
        "config": config.to_dict(),
        "created": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
    }
    sidecar = target.with_name(target.name + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding='utf-8')
    logger.info("wrote %s", target)


# Entry point
# -----------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="example_s1",
                        help="builtin model name, inline JSON object, or path to a .json model")
    common.add_argument("--path", help="observation CSV (t, y1..yd[, areas])")
    common.add_argument("--driver", choices=DRIVER_SOURCES,
                        help="driver source (default: csv with --path, else spiral)")
    common.add_argument("--alpha", type=float, default=ExperimentConfig.alpha)
    common.add_argument("--epsilon", type=float, default=ExperimentConfig.epsilon)
    common.add_argument("--grid", type=int, default=ExperimentConfig.grid,
                        help="number of driver segments (a power of two)")
    common.add_argument("--horizon", type=float, default=ExperimentConfig.horizon)
    common.add_argument("--samples", type=int, default=ExperimentConfig.samples)
    common.add_argument("--seed", type=int, help="random seed (default: $RFILTER_SEED or 0)")
    common.add_argument("--f", default=ExperimentConfig.f, help="test function: one, zero, tanh, sin")
    common.add_argument("--scheme", choices=SCHEMES, default=ExperimentConfig.scheme)
    common.add_argument("--step", type=float, default=ExperimentConfig.step,
                        help="internal flow step")
    common.add_argument("--particles", type=int, default=ExperimentConfig.particles)
    common.add_argument("--meshes", type=int, nargs=2, metavar=("LO", "HI"),
                        default=list(ExperimentConfig.meshes), help="dyadic mesh exponents")
    common.add_argument("--deltas", type=float, nargs="+", default=list(ExperimentConfig.deltas),
                        help="perturbation sizes")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="rfilter", description="Robust nonlinear filtering over rough path lifts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        commands.add_parser(command, parents=[common])
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    try:
        seed = resolve_seed(args.seed)
    except ValueError as error:
        raise ConfigError(str(error)) from None
    if args.workers < 1:
        raise ConfigError(f"workers must be at least 1, got {args.workers}")
    return ExperimentConfig(
        command=args.command, model=args.model,
        driver=args.driver or ("csv" if args.path else "spiral"), path=args.path,
        alpha=args.alpha, epsilon=args.epsilon, grid=args.grid, horizon=args.horizon,
        samples=args.samples, seed=seed, f=args.f, scheme=args.scheme, step=args.step,
        particles=args.particles, meshes=tuple(args.meshes), deltas=tuple(args.deltas),
        out=args.out)


def _report(error: BaseException) -> None:
    sys.stderr.write(json.dumps({"error": type(error).__name__, "message": str(error)}) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=LOG_LEVELS[min(args.verbose, len(LOG_LEVELS) - 1)],
        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    progress = ProgressNotifier()
    try:
        config = config_from_args(args)
        logger.info("%s: %s", config.command, json.dumps(config.to_dict(), sort_keys=True))
        with progress.bind(log_progress(logger)):
            result = COMMAND_RUNNERS[config.command](config, workers=args.workers, progress=progress)
        write_output(result, config)
    except ConfigError as error:
        _report(error)
        return 2
    except Exception as error:
        logger.debug("command failed", exc_info=True)
        _report(error)
        return 1
    return 0
