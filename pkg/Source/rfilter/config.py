"""
Experiment configuration shared by the command line and result files.
"""
from dataclasses import asdict, dataclass, fields
from typing import Any, Literal, Mapping, get_args

from .rough_path import DEFAULT_ALPHA, DEFAULT_EPSILON, check_alpha
from .rough_sde import DEFAULT_SCHEME, DEFAULT_STEP, SCHEMES


Command = Literal["lift", "theta", "compare", "continuity", "convergence", "simulate"]
DriverSource = Literal["csv", "simulate", "spiral"]

COMMANDS: tuple[Command, ...] = get_args(Command)
DRIVER_SOURCES: tuple[DriverSource, ...] = get_args(DriverSource)
MAX_MESH_EXPONENT = 20


class ConfigError(ValueError):
    """ An invalid experiment configuration or inline model. """


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything needed to rerun one experiment. `grid` is the number of
    driver segments and must be a power of two; `meshes` are the exponents
    of the coarsest and finest dyadic grids of a convergence sweep.
    """
    command: Command
    model: str = "example_s1"
    driver: DriverSource = "spiral"
    path: str | None = None
    alpha: float = DEFAULT_ALPHA
    epsilon: float = DEFAULT_EPSILON
    grid: int = 64
    horizon: float = 1.0
    samples: int = 1000
    seed: int = 0
    f: str = "tanh"
    scheme: str = DEFAULT_SCHEME
    step: float = DEFAULT_STEP
    particles: int = 1000
    meshes: tuple[int, int] = (6, 10)
    deltas: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "meshes", tuple(int(m) for m in self.meshes))
        object.__setattr__(self, "deltas", tuple(float(d) for d in self.deltas))
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command '{self.command}', expected one of {COMMANDS}")
        if self.driver not in DRIVER_SOURCES:
            raise ConfigError(f"unknown driver source '{self.driver}', expected one of {DRIVER_SOURCES}")
        if self.driver == "csv" and not self.path:
            raise ConfigError("a csv driver needs --path")
        if self.path and self.driver != "csv":
            raise ConfigError(f"--path is only read by the csv driver, not '{self.driver}'")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        if not self.model:
            raise ConfigError("model must not be empty")
        try:
            check_alpha(self.alpha, self.epsilon)
        except ValueError as error:
            raise ConfigError(str(error)) from None
        if self.grid < 1 or self.grid & (self.grid - 1):
            raise ConfigError(f"grid must be a power of two, got {self.grid}")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")
        if self.samples < 2:
            raise ConfigError(f"samples must be at least 2, got {self.samples}")
        if self.particles < 2:
            raise ConfigError(f"particles must be at least 2, got {self.particles}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if not self.step > 0:
            raise ConfigError(f"step must be positive, got {self.step}")
        if len(self.meshes) != 2 or not 1 <= self.meshes[0] <= self.meshes[1] <= MAX_MESH_EXPONENT:
            raise ConfigError(
                f"meshes must be exponents 1 <= lo <= hi <= {MAX_MESH_EXPONENT}, got {self.meshes}")
        if not self.deltas or any(not d > 0 for d in self.deltas):
            raise ConfigError(f"deltas must be positive, got {self.deltas}")

    def to_dict(self) -> dict[str, Any]:
        result = asdict(self)
        result["meshes"] = list(self.meshes)
        result["deltas"] = list(self.deltas)
        return result

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'ExperimentConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        if "command" not in data:
            raise ConfigError("configuration needs a command")
        return cls(**data)
