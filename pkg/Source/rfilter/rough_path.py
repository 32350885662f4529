"""
Level-2 (geometric, α-Hölder) rough paths sampled on finite grids.

A path is stored as its values and its from-origin Lévy areas at every grid
point. Increment areas between two grid points follow from Chen's relation,

    A[s,u] = A[0,u] - A[0,s] - ½ (Y[s] ⊗ ΔY - ΔY ⊗ Y[s]),    ΔY = Y[u] - Y[s],

so the from-origin representation is Chen consistent by construction.
"""
import math
from dataclasses import dataclass
from threading import Lock
from typing import Literal, Sequence

import iisignature
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import schur
from scipy.optimize import brentq

from .cached import cached


FloatArray = NDArray[np.float64]
SeminormMode = Literal["full", "dyadic"]

DEFAULT_ALPHA = 0.4
DEFAULT_EPSILON = 0.6


class PathError(ValueError):
    """ A malformed enhanced path or an invalid query against one. """


class GridMismatchError(ValueError):
    """ Two objects that must share a grid (or an exponent) do not. """


def check_alpha(alpha: float, epsilon: float = DEFAULT_EPSILON) -> float:
    """
    Checks that `alpha` lies in the admissible band (1/(2+ε), 1/2).
    """
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    low = 1 / (2 + epsilon)
    if not low < alpha < 0.5:
        raise ValueError(
            f"alpha must lie in ({low:.6g}, 0.5) for epsilon={epsilon}, got {alpha}")
    return alpha


def wedge(x: FloatArray, y: FloatArray) -> FloatArray:
    """
    Antisymmetrised outer product ½ (x ⊗ y - y ⊗ x), batched over leading axes.
    """
    outer = x[..., :, None] * y[..., None, :]
    return 0.5 * (outer - np.swapaxes(outer, -1, -2))


def area_norm(areas: FloatArray) -> FloatArray:
    """
    Euclidean norm of the strictly upper triangular entries of each
    antisymmetric matrix (so |A| = |a¹²| in two dimensions).
    """
    d = areas.shape[-1]
    if d < 2:
        return np.zeros(areas.shape[:-2])
    rows, cols = np.triu_indices(d, 1)
    return np.linalg.norm(areas[..., rows, cols], axis=-1)


@dataclass(frozen=True, eq=False)
class EnhancedPath:
    """
    A discretely sampled level-2 rough path over R^d.

    `times` is strictly increasing from 0, `values[i]` is the path at
    `times[i]` (starting at the origin) and `areas[i]` the antisymmetric Lévy
    area accumulated over [0, times[i]]. Arrays are copied and frozen on
    construction; areas are stored exactly antisymmetric.
    """
    times: FloatArray
    values: FloatArray
    areas: FloatArray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        areas = np.array(self.areas, dtype=float)
        if times.ndim != 1 or values.ndim != 2 or times.shape[0] != values.shape[0]:
            raise PathError(
                f"times {times.shape} and values {values.shape} do not describe one grid")
        n, d = values.shape
        if n < 2:
            raise PathError(f"a path needs at least two grid points, got {n}")
        if areas.shape != (n, d, d):
            raise PathError(f"areas must have shape {(n, d, d)}, got {areas.shape}")
        if times[0] != 0:
            raise PathError(f"times must start at 0, got {times[0]}")
        if np.any(np.diff(times) <= 0):
            raise PathError("times must be strictly increasing")
        if np.any(values[0] != 0):
            raise PathError(f"path must start at the origin, got {values[0]}")
        scale = max(1.0, float(np.max(np.abs(areas), initial=0.0)))
        skew = float(np.max(np.abs(areas + np.swapaxes(areas, 1, 2)), initial=0.0))
        if skew > 1e-12 * scale:
            raise PathError(f"areas are not antisymmetric (defect {skew:.3g})")
        areas = 0.5 * (areas - np.swapaxes(areas, 1, 2))
        if np.any(areas[0] != 0):
            raise PathError("areas must start at zero")
        if not 0 < self.alpha < 1:
            raise PathError(f"alpha must lie in (0, 1), got {self.alpha}")
        for array in (times, values, areas):
            array.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "areas", areas)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def size(self) -> int:
        """ Number of grid points. """
        return self.times.shape[0]

    @property
    def steps(self) -> int:
        """ Number of grid segments. """
        return self.size - 1

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def increments(self, lag: int) -> tuple[FloatArray, FloatArray]:
        """
        Level-1 and level-2 increments over every grid pair (i, i + lag).
        """
        if not 1 <= lag < self.size:
            raise ValueError(f"lag must lie in [1, {self.size - 1}], got {lag}")
        start = self.values[:-lag]
        delta = self.values[lag:] - start
        area = self.areas[lag:] - self.areas[:-lag] - wedge(start, delta)
        return delta, area

    def increment(self, s: int, u: int) -> tuple[FloatArray, FloatArray]:
        """
        Level-1 and level-2 increment between grid indices s <= u.
        """
        delta = self.values[u] - self.values[s]
        area = self.areas[u] - self.areas[s] - wedge(self.values[s], delta)
        return delta, area

    @cached
    def segment_increments(self) -> tuple[FloatArray, FloatArray]:
        """ Increments over consecutive grid points. """
        return self.increments(1)

    @cached
    def _geodesics(self) -> '_GeodesicTable':
        return _GeodesicTable(self)

    def geodesic(self, i: int) -> 'Geodesic':
        """
        The geodesic curve realising segment `i` (from `times[i]` to
        `times[i + 1]`), computed on first use.
        """
        return self._geodesics.get(i)

    def restrict(self, indices: Sequence[int] | NDArray[np.int_]) -> 'EnhancedPath':
        """
        Keeps only the given grid points; areas are retained, so the
        result carries the level-2 information of the finer sampling.
        """
        index = np.unique(np.asarray(indices, dtype=int))
        if index.size < 2 or index[0] != 0 or index[-1] >= self.size:
            raise PathError(f"indices must start at 0 and stay below {self.size}")
        return EnhancedPath(
            self.times[index], self.values[index], self.areas[index], self.alpha)

    def coarsen(self, factor: int) -> 'EnhancedPath':
        """
        Keeps every `factor`-th grid point (the last point must be kept).
        """
        if factor < 1 or self.steps % factor:
            raise PathError(f"cannot coarsen {self.steps} steps by a factor of {factor}")
        return self.restrict(np.arange(0, self.size, factor))

    def with_alpha(self, alpha: float) -> 'EnhancedPath':
        return EnhancedPath(self.times, self.values, self.areas, alpha)


@dataclass(frozen=True)
class HolderSeminorms:
    """
    Hölder seminorms of both levels of a sampled rough path.
    """
    level1: float
    level2: float
    alpha: float

    @property
    def radius(self) -> float:
        """ Homogeneous size max(level1, sqrt(level2)). """
        return max(self.level1, math.sqrt(self.level2))


def lift_piecewise_linear(
    times: ArrayLike,
    values: ArrayLike,
    alpha: float = DEFAULT_ALPHA
) -> EnhancedPath:
    """
    Lifts sampled values to the rough path of their piecewise-linear
    interpolant: the from-origin areas are the antisymmetric part of the
    level-2 signature of every prefix.
    """
    times = np.asarray(times, dtype=float)
    values = np.ascontiguousarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2 or values.shape[0] < 2:
        raise PathError(f"values must be an (n >= 2, d) array, got shape {values.shape}")
    d = values.shape[1]
    level2 = iisignature.sig(values, 2, 2)[:, d:].reshape(-1, d, d)
    areas = np.concatenate([np.zeros((1, d, d)), 0.5 * (level2 - np.swapaxes(level2, 1, 2))])
    return EnhancedPath(times, values, areas, alpha)


def _lags(size: int, mode: SeminormMode) -> list[int]:
    if mode == "full":
        return list(range(1, size))
    if mode == "dyadic":
        return [1 << k for k in range(int(math.log2(size - 1)) + 1) if (1 << k) < size]
    raise ValueError(f"unknown seminorm mode '{mode}'")


def holder_seminorms(path: EnhancedPath, mode: SeminormMode = "full") -> HolderSeminorms:
    """
    Level-1 and level-2 Hölder seminorms over grid pairs.

    `full` enumerates every pair (quadratic cost); `dyadic` only the pairs
    whose index distance is a power of two.
    """
    level1 = level2 = 0.0
    for lag in _lags(path.size, mode):
        delta, area = path.increments(lag)
        dt = path.times[lag:] - path.times[:-lag]
        level1 = max(level1, float(np.max(np.linalg.norm(delta, axis=1) / dt ** path.alpha)))
        level2 = max(level2, float(np.max(area_norm(area) / dt ** (2 * path.alpha))))
    return HolderSeminorms(level1, level2, path.alpha)


def holder_distance(
    p1: EnhancedPath,
    p2: EnhancedPath,
    mode: SeminormMode = "full"
) -> float:
    """
    Inhomogeneous α-Hölder rough path distance between two paths on a
    common grid: the larger of the level-1 and level-2 increment distances.
    """
    if p1.alpha != p2.alpha:
        raise GridMismatchError(f"alpha differs: {p1.alpha} vs {p2.alpha}")
    if p1.dim != p2.dim or not np.array_equal(p1.times, p2.times):
        raise GridMismatchError("paths do not share a grid; refine with geodesic_interpolate")
    alpha = p1.alpha
    distance = 0.0
    for lag in _lags(p1.size, mode):
        delta1, area1 = p1.increments(lag)
        delta2, area2 = p2.increments(lag)
        dt = p1.times[lag:] - p1.times[:-lag]
        level1 = np.linalg.norm(delta1 - delta2, axis=1) / dt ** alpha
        level2 = area_norm(area1 - area2) / dt ** (2 * alpha)
        distance = max(distance, float(np.max(level1)), float(np.max(level2)))
    return distance


# Geodesics
# ---------

def _rotation(theta: float) -> FloatArray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _rotation_integral(omega: float, s: float) -> FloatArray:
    """ ∫₀ˢ R(ω σ) dσ, stable as ω → 0. """
    theta = omega * s
    sine = s * float(np.sinc(theta / math.pi))
    versine = 0.5 * omega * s * s * float(np.sinc(theta / (2 * math.pi))) ** 2
    return np.array([[sine, -versine], [versine, sine]])


def _arc_area_ratio(omega: float) -> float:
    """
    Area between an arc of total turning ω and its chord, per squared
    chord length.
    """
    if abs(omega) < 1e-4:
        return omega / 12
    return (omega - math.sin(omega)) / (8 * math.sin(omega / 2) ** 2)


class _Chord:
    """ A straight piece. """
    def __init__(self, displacement: FloatArray):
        self.displacement = displacement
        self.length = float(np.linalg.norm(displacement))
        d = displacement.shape[0]
        self._no_area = np.zeros((d, d))

    def point(self, s: float) -> FloatArray:
        return s * self.displacement

    def velocity(self, s: float) -> FloatArray:
        return self.displacement

    def area(self, s: float) -> FloatArray:
        return self._no_area


class _Arc:
    """
    A constant-speed circular piece in the plane spanned by the orthonormal
    columns of `basis`, with planar velocity R(ω s) w.
    """
    def __init__(self, basis: FloatArray, w: FloatArray, omega: float):
        self.basis = basis
        self.w = w
        self.omega = omega
        self.speed = float(np.linalg.norm(w))
        self.length = self.speed
        p, q = basis[:, 0], basis[:, 1]
        self._plane = np.outer(p, q) - np.outer(q, p)

    def point(self, s: float) -> FloatArray:
        return self.basis @ (_rotation_integral(self.omega, s) @ self.w)

    def velocity(self, s: float) -> FloatArray:
        return self.basis @ (_rotation(self.omega * s) @ self.w)

    def area(self, s: float) -> FloatArray:
        theta = self.omega * s
        if abs(theta) < 1e-2:
            scaled = s * s * (theta / 12 - theta ** 3 / 240 + theta ** 5 / 10080)
        else:
            scaled = (theta - math.sin(theta)) / (2 * self.omega ** 2)
        return self.speed ** 2 * scaled * self._plane


_Piece = _Chord | _Arc


@dataclass(frozen=True)
class Geodesic:
    """
    A curve over parameter u ∈ [0, 1] realising a prescribed level-1 and
    level-2 increment, made of consecutive smooth pieces.
    """
    increment: FloatArray
    area: FloatArray
    pieces: tuple[_Piece, ...]
    spans: tuple[tuple[float, float], ...]

    def lift(self, u: float) -> tuple[FloatArray, FloatArray]:
        """
        Increment and area of the curve over [0, u].
        """
        d = self.increment.shape[0]
        value = np.zeros(d)
        area = np.zeros((d, d))
        for piece, (u0, u1) in zip(self.pieces, self.spans):
            if u <= u0:
                break
            s = 1.0 if u >= u1 else (u - u0) / (u1 - u0)
            delta = piece.point(s)
            area = area + piece.area(s) + wedge(value, delta)
            value = value + delta
        return value, area

    def portions(self, u: float) -> list[tuple[_Piece, float, float]]:
        """
        The pieces covering [0, u] as (piece, local end, share of u-range).
        """
        out: list[tuple[_Piece, float, float]] = []
        for piece, (u0, u1) in zip(self.pieces, self.spans):
            if u <= u0:
                break
            s = 1.0 if u >= u1 else (u - u0) / (u1 - u0)
            out.append((piece, s, (u1 - u0) * s))
        return out


def _planar_arc(basis: FloatArray, v2: FloatArray, level: float) -> _Arc | _Chord:
    chord = float(np.linalg.norm(v2))
    if chord == 0.0:
        if level == 0.0:
            return _Chord(np.zeros(basis.shape[0]))
        # A full circle enclosing |level|.
        omega = math.copysign(2 * math.pi, level)
        speed = math.sqrt(4 * math.pi * abs(level))
        return _Arc(basis, np.array([speed, 0.0]), omega)
    kappa = level / chord ** 2
    if kappa == 0.0:
        return _Chord(basis @ v2)
    top = 2 * math.pi * (1 - 1e-12)
    if abs(kappa) >= _arc_area_ratio(top):
        raise PathError(f"area {level:.3g} is too large to realise over a chord of {chord:.3g}")
    omega = brentq(lambda w: _arc_area_ratio(w) - abs(kappa), 0.0, top, xtol=1e-15)
    omega = math.copysign(float(omega), kappa)
    speed = chord * (0.5 * omega) / math.sin(0.5 * omega)
    w = speed * (_rotation(-0.5 * omega) @ (v2 / chord))
    return _Arc(basis, w, omega)


def geodesic_segment(increment: FloatArray, area: FloatArray) -> Geodesic:
    """
    Builds a curve from 0 with the given increment and area.

    When the area lives in a single 2-plane containing the increment (always
    so in two dimensions) this is the circular arc whose area against the
    chord is the required one. Otherwise the chord is followed by one full
    circle per plane of the real Schur decomposition of the area.
    """
    v = np.asarray(increment, dtype=float)
    a = np.asarray(area, dtype=float)
    d = v.shape[0]
    scale = 1.0 + float(np.dot(v, v))
    if d < 2 or float(np.max(np.abs(a), initial=0.0)) <= 1e-15 * scale:
        return Geodesic(v, a, (_Chord(v),), ((0.0, 1.0),))
    if d == 2:
        piece = _planar_arc(np.eye(2), v, float(a[0, 1]))
        return Geodesic(v, a, (piece,), ((0.0, 1.0),))

    blocks, basis = schur(a, output='real')
    planes: list[tuple[FloatArray, float]] = []
    j = 0
    while j < d - 1:
        if abs(blocks[j + 1, j]) > 1e-15 * scale:
            level = 0.5 * float(blocks[j, j + 1] - blocks[j + 1, j])
            planes.append((basis[:, j:j + 2], level))
            j += 2
        else:
            j += 1
    if len(planes) == 1:
        plane, level = planes[0]
        v2 = plane.T @ v
        if np.linalg.norm(v - plane @ v2) <= 1e-12 * math.sqrt(scale):
            return Geodesic(v, a, (_planar_arc(plane, v2, level),), ((0.0, 1.0),))

    pieces: list[_Piece] = []
    if np.any(v != 0):
        pieces.append(_Chord(v))
    pieces.extend(_planar_arc(plane, np.zeros(2), level) for plane, level in planes)
    width = 1.0 / len(pieces)
    spans = tuple((k * width, 1.0 if k == len(pieces) - 1 else (k + 1) * width)
                  for k in range(len(pieces)))
    return Geodesic(v, a, tuple(pieces), spans)


class _GeodesicTable:
    """ Lazily built segment geodesics of one path. """
    def __init__(self, path: EnhancedPath):
        self._delta, self._area = path.segment_increments
        self._items: dict[int, Geodesic] = {}
        self._lock = Lock()

    def get(self, i: int) -> Geodesic:
        with self._lock:
            if i not in self._items:
                self._items[i] = geodesic_segment(self._delta[i], self._area[i])
            return self._items[i]


def geodesic_interpolate(path: EnhancedPath, query_times: ArrayLike) -> EnhancedPath:
    """
    Refines `path` to the union of its grid and `query_times`, placing new
    points on the segment geodesics. Grid points of `path` are kept exactly.
    """
    query = np.atleast_1d(np.asarray(query_times, dtype=float))
    if np.any(query < 0) or np.any(query > path.horizon):
        raise PathError(f"query times must lie in [0, {path.horizon}]")
    times = np.union1d(path.times, query)
    if times.shape[0] == path.size:
        return path
    values = np.empty((times.shape[0], path.dim))
    areas = np.empty((times.shape[0], path.dim, path.dim))
    segment = np.searchsorted(path.times, times, side='right') - 1
    for n, (t, k) in enumerate(zip(times, segment)):
        if k >= path.steps or path.times[k] == t:
            k = min(k, path.steps)
            values[n] = path.values[k]
            areas[n] = path.areas[k]
            continue
        u = (t - path.times[k]) / (path.times[k + 1] - path.times[k])
        delta, area = path.geodesic(k).lift(u)
        values[n] = path.values[k] + delta
        areas[n] = path.areas[k] + area + wedge(path.values[k], delta)
    return EnhancedPath(times, values, areas, path.alpha)


def refine(path: EnhancedPath, factor: int) -> EnhancedPath:
    """
    Geodesic refinement splitting every segment into `factor` equal parts.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    fractions = np.arange(1, factor) / factor
    inner = (path.times[:-1, None] + np.diff(path.times)[:, None] * fractions).ravel()
    return geodesic_interpolate(path, inner)


# Sample paths and perturbations
# ------------------------------

def brownian_rough_path(
    n_steps: int,
    dim: int,
    rng: np.random.Generator,
    horizon: float = 1.0,
    refine: int = 16,
    alpha: float = DEFAULT_ALPHA
) -> EnhancedPath:
    """
    Enhanced Brownian motion on `n_steps` equal segments: simulated on a grid
    `refine` times finer, lifted piecewise-linearly, and restricted back.
    """
    fine = n_steps * refine
    step = horizon / fine
    delta = rng.standard_normal((fine, dim)) * math.sqrt(step)
    values = np.concatenate([np.zeros((1, dim)), np.cumsum(delta, axis=0)])
    times = np.linspace(0.0, horizon, fine + 1)
    return lift_piecewise_linear(times, values, alpha).coarsen(refine)


def spiral_path(
    n_steps: int,
    horizon: float = 1.0,
    radius: float = 0.5,
    turns: float = 1.0,
    alpha: float = DEFAULT_ALPHA
) -> EnhancedPath:
    """
    The smooth planar spiral y(s) = r s (cos 2πks - 1, sin 2πks), s = t/T,
    sampled on `n_steps` equal segments and lifted piecewise-linearly.
    """
    times = np.linspace(0.0, horizon, n_steps + 1)
    s = times / horizon
    phase = 2 * math.pi * turns * s
    values = radius * s[:, None] * np.stack([np.cos(phase) - 1.0, np.sin(phase)], axis=1)
    return lift_piecewise_linear(times, values, alpha)


def dilate(path: EnhancedPath, factor: float) -> EnhancedPath:
    """ Scales values by `factor` and areas by `factor`². """
    return EnhancedPath(path.times, path.values * factor, path.areas * factor ** 2, path.alpha)


def shift_area(
    path: EnhancedPath,
    i: int,
    j: int,
    delta: float,
    start: int = 1
) -> EnhancedPath:
    """
    Adds `delta` to area entry (i, j) (and -delta to (j, i)) from grid index
    `start` onward, leaving all values untouched: a pure level-2 perturbation.
    """
    if i == j:
        raise ValueError("a pure area perturbation needs two distinct directions")
    if not 1 <= start < path.size:
        raise ValueError(f"start must lie in [1, {path.size - 1}], got {start}")
    areas = np.array(path.areas)
    areas[start:, i, j] += delta
    areas[start:, j, i] -= delta
    return EnhancedPath(path.times, path.values, areas, path.alpha)
