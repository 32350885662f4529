"""
Reproducible Monte Carlo plumbing.

Every sample owns a counter-based random stream keyed by (seed, sample
index), and work is cut into chunks whose boundaries depend only on the
sample count. Results are therefore identical for any number of workers.
"""
import logging
import os
from typing import Callable, Protocol, Sequence, TypeVar

import numpy as np
from numpy.typing import NDArray

from .lifetime import SamplePool, chunk_ranges
from .notifier import ProgressNotifier, ProgressReporter


logger = logging.getLogger(__name__)

SEED_VARIABLE = "RFILTER_SEED"
CHUNK_SIZE = 256

# Stream domains keep independent uses of one seed apart.
SAMPLE_DOMAIN = 0
PARTICLE_DOMAIN = 1
RECORD_DOMAIN = 2

_TResult = TypeVar("_TResult")


class SupportsSample(Protocol):
    @property
    def dim(self) -> int: ...

    def sample(self, rng: np.random.Generator) -> NDArray[np.float64]: ...


def resolve_seed(seed: int | None) -> int:
    """
    An explicit seed, else the `RFILTER_SEED` environment variable, else 0.
    """
    if seed is not None:
        return int(seed)
    text = os.environ.get(SEED_VARIABLE)
    if text is None or not text.strip():
        return 0
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"{SEED_VARIABLE} must be an integer, got '{text}'") from None


def sample_stream(seed: int, index: int, domain: int = SAMPLE_DOMAIN) -> np.random.Generator:
    """ The random stream of sample `index` under `seed`. """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, domain, index])))


def draw_inputs(
    law: SupportsSample,
    times: NDArray[np.float64],
    noise_dim: int,
    seed: int,
    indices: Sequence[int],
    domain: int = SAMPLE_DOMAIN
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Initial states (m, d) and Brownian increments (m, steps, noise_dim) for
    the given sample indices. Each stream draws its initial state first.
    """
    scale = np.sqrt(np.diff(times))[:, None]
    steps = scale.shape[0]
    starts = np.empty((len(indices), law.dim))
    increments = np.empty((len(indices), steps, noise_dim))
    for n, index in enumerate(indices):
        rng = sample_stream(seed, index, domain)
        starts[n] = law.sample(rng)
        increments[n] = rng.standard_normal((steps, noise_dim)) * scale
    return starts, increments


def run_chunks(
    n_samples: int,
    work: Callable[[range], _TResult],
    workers: int = 1,
    progress: ProgressNotifier | None = None,
    label: str = "samples"
) -> list[_TResult]:
    """
    Runs `work` over fixed chunks of `range(n_samples)` and returns the
    chunk results in chunk order.
    """
    chunks = chunk_ranges(n_samples, CHUNK_SIZE)
    reporter = ProgressReporter(progress, label, n_samples)
    logger.info("%s: %d samples in %d chunks on %d workers", label, n_samples, len(chunks), workers)
    with SamplePool(workers) as pool:
        return pool.map(work, chunks, on_result=lambda index, _: reporter.advance(len(chunks[index])))
