"""
Flows of vector fields driven by an enhanced path, and the coefficient
transform that conjugates an SDE by such a flow.

The driver is consumed segment by segment through its geodesics, so the
rough flow is an ordinary flow along each segment curve. Each curve piece is
integrated with classical RK4 in its own parameter. The midpoint velocity of
every substep is corrected so the Simpson weights reproduce the exact
increment of the piece: constant fields then integrate the driver exactly.
"""
import logging
import math
from dataclasses import dataclass, field
from threading import Lock
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .rough_path import EnhancedPath, PathError


logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
FieldFunc = Callable[[FloatArray], FloatArray]
CoefficientFunc = Callable[[FloatArray], FloatArray]


class FlowError(ArithmeticError):
    """ A flow that cannot be integrated to the requested accuracy. """


def as_batch(x: ArrayLike, dim: int) -> tuple[FloatArray, bool]:
    """
    Views `x` as a batch of `dim`-vectors; the flag is True when `x`
    was a single vector.
    """
    array = np.asarray(x, dtype=float)
    single = array.ndim == 1
    batch = array[None, :] if single else array
    if batch.ndim != 2 or batch.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {array.shape}")
    return batch, single


class VectorFields:
    """
    The driver's vector fields c_1..c_dY on R^dS, as one batched map
    (m, dS) -> (m, dS, dY) whose column k is c_k.

    The smoothness `grade` is declared by the caller and not verified.
    Without an analytic `jacobian` ((m, dS) -> (m, dS, dY, dS)) derivatives
    are taken by central differences.
    """
    def __init__(self,
        func: FieldFunc,
        state_dim: int,
        driver_dim: int,
        grade: float = 4.0,
        jacobian: Callable[[FloatArray], FloatArray] | None = None,
        is_zero: bool = False
    ):
        self.func = func
        self.state_dim = state_dim
        self.driver_dim = driver_dim
        self.grade = grade
        self._jacobian = jacobian
        self.is_zero = is_zero

    @classmethod
    def zero(cls, state_dim: int, driver_dim: int) -> 'VectorFields':
        def func(z: FloatArray) -> FloatArray:
            return np.zeros((z.shape[0], state_dim, driver_dim))

        def jacobian(z: FloatArray) -> FloatArray:
            return np.zeros((z.shape[0], state_dim, driver_dim, state_dim))

        return cls(func, state_dim, driver_dim, math.inf, jacobian, is_zero=True)

    @classmethod
    def constant(cls, matrix: ArrayLike) -> 'VectorFields':
        """ Fields c_k(z) = matrix[:, k]. """
        columns = np.array(matrix, dtype=float)
        state_dim, driver_dim = columns.shape

        def func(z: FloatArray) -> FloatArray:
            return np.broadcast_to(columns, (z.shape[0], state_dim, driver_dim))

        def jacobian(z: FloatArray) -> FloatArray:
            return np.zeros((z.shape[0], state_dim, driver_dim, state_dim))

        return cls(func, state_dim, driver_dim, math.inf, jacobian)

    @classmethod
    def linear(cls, matrices: ArrayLike) -> 'VectorFields':
        """ Fields c_k(z) = matrices[k] @ z. """
        stack = np.array(matrices, dtype=float)
        driver_dim, state_dim, _ = stack.shape

        def func(z: FloatArray) -> FloatArray:
            return np.einsum('kij,mj->mik', stack, z)

        def jacobian(z: FloatArray) -> FloatArray:
            return np.broadcast_to(
                np.transpose(stack, (1, 0, 2)), (z.shape[0], state_dim, driver_dim, state_dim))

        return cls(func, state_dim, driver_dim, math.inf, jacobian)

    def __call__(self, z: FloatArray) -> FloatArray:
        return self.func(z)

    def jacobian(self, z: FloatArray) -> FloatArray:
        """ ∂c_ik/∂z_l as an (m, dS, dY, dS) array. """
        if self._jacobian is not None:
            return self._jacobian(z)
        m, d = z.shape
        h = 1e-6 * (1.0 + np.linalg.norm(z, axis=1))
        shifts = np.eye(d)[:, None, :] * h[None, :, None]
        points = np.concatenate([z[None] + shifts, z[None] - shifts]).reshape(2 * d * m, d)
        values = self.func(points).reshape(2, d, m, d, self.driver_dim)
        slopes = (values[0] - values[1]) / (2 * h[None, :, None, None])
        return np.transpose(slopes, (1, 2, 3, 0))


@dataclass(frozen=True)
class _Plan:
    """ RK4 substeps across part of a segment: sizes and stage velocities. """
    sizes: FloatArray
    start: FloatArray
    middle: FloatArray
    end: FloatArray

    def reversed(self) -> '_Plan':
        return _Plan(-self.sizes[::-1], self.end[::-1], self.middle[::-1], self.start[::-1])


@dataclass(frozen=True, eq=False)
class FlowField:
    """
    The flow φ(t, ·) of `fields` driven by `driver`.

    `step` bounds the time covered by one RK4 substep and `max_increment`
    the driver arc length it covers. A segment needing more than
    `max_substeps` substeps is a `FlowError`.
    """
    driver: EnhancedPath
    fields: VectorFields
    step: float = 1e-3
    max_increment: float = 1e-2
    max_substeps: int = 1_000_000
    _plans: dict[int, _Plan] = field(default_factory=dict, init=False, repr=False)
    _lock: Lock = field(default_factory=Lock, init=False, repr=False)

    def __post_init__(self):
        if self.fields.driver_dim != self.driver.dim:
            raise ValueError(
                f"fields expect a {self.fields.driver_dim}-dimensional driver, "
                f"got {self.driver.dim}")
        if self.step <= 0 or self.max_increment <= 0:
            raise ValueError("step and max_increment must be positive")

    @property
    def state_dim(self) -> int:
        return self.fields.state_dim

    def _build_plan(self, i: int, fraction: float) -> _Plan:
        duration = float(self.driver.times[i + 1] - self.driver.times[i])
        sizes, start, middle, end = [], [], [], []
        for piece, s_end, share in self.driver.geodesic(i).portions(fraction):
            n = max(1,
                math.ceil(share * duration / self.step),
                math.ceil(piece.length * s_end / self.max_increment))
            if n > self.max_substeps:
                raise FlowError(
                    f"segment {i} needs {n} substeps (limit {self.max_substeps}); "
                    f"driver too rough for max_increment={self.max_increment}")
            grid = np.linspace(0.0, s_end, n + 1)
            points = [piece.point(s) for s in grid]
            velocities = [piece.velocity(s) for s in grid]
            for a in range(n):
                h = grid[a + 1] - grid[a]
                delta = points[a + 1] - points[a]
                sizes.append(h)
                start.append(velocities[a])
                end.append(velocities[a + 1])
                middle.append((6 * delta / h - velocities[a] - velocities[a + 1]) / 4)
        if len(sizes) > 10_000:
            logger.debug("segment %d integrated with %d substeps", i, len(sizes))
        return _Plan(np.array(sizes), np.array(start), np.array(middle), np.array(end))

    def plan(self, i: int, fraction: float = 1.0) -> _Plan:
        """ Substeps across segment `i` up to `fraction` of its length. """
        if fraction < 1.0:
            return self._build_plan(i, fraction)
        with self._lock:
            if i not in self._plans:
                self._plans[i] = self._build_plan(i, 1.0)
            return self._plans[i]

    def locate(self, t: float) -> tuple[int, float]:
        """ Segment index and fraction of the segment covered at time `t`. """
        times = self.driver.times
        if not 0.0 <= t <= times[-1]:
            raise PathError(f"time {t} outside [0, {times[-1]}]")
        k = int(np.searchsorted(times, t, side='right')) - 1
        if k >= self.driver.steps:
            return self.driver.steps, 0.0
        return k, float((t - times[k]) / (times[k + 1] - times[k]))


def _run_plan(
    fields: VectorFields,
    plan: _Plan,
    z: FloatArray,
    jac: FloatArray | None
) -> tuple[FloatArray, FloatArray | None]:
    def rhs(y: FloatArray, v: FloatArray) -> FloatArray:
        return np.einsum('mik,k->mi', fields(y), v)

    def rhs_jac(y: FloatArray, j: FloatArray, v: FloatArray) -> tuple[FloatArray, FloatArray]:
        return (np.einsum('mik,k->mi', fields(y), v),
                np.einsum('mikl,k,mlj->mij', fields.jacobian(y), v, j))

    for h, v0, vm, v1 in zip(plan.sizes, plan.start, plan.middle, plan.end):
        if jac is None:
            k1 = rhs(z, v0)
            k2 = rhs(z + 0.5 * h * k1, vm)
            k3 = rhs(z + 0.5 * h * k2, vm)
            k4 = rhs(z + h * k3, v1)
            z = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            k1, j1 = rhs_jac(z, jac, v0)
            k2, j2 = rhs_jac(z + 0.5 * h * k1, jac + 0.5 * h * j1, vm)
            k3, j3 = rhs_jac(z + 0.5 * h * k2, jac + 0.5 * h * j2, vm)
            k4, j4 = rhs_jac(z + h * k3, jac + h * j3, v1)
            z = z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            jac = jac + (h / 6) * (j1 + 2 * j2 + 2 * j3 + j4)
    if not np.all(np.isfinite(z)):
        raise FlowError("flow left the representable range")
    return z, jac


def _forward(
    field: FlowField,
    t: float,
    z: FloatArray,
    jac: FloatArray | None
) -> tuple[FloatArray, FloatArray | None]:
    k, fraction = field.locate(t)
    for i in range(k):
        z, jac = _run_plan(field.fields, field.plan(i), z, jac)
    if fraction > 0.0:
        z, jac = _run_plan(field.fields, field.plan(k, fraction), z, jac)
    return z, jac


def _backward(
    field: FlowField,
    t: float,
    z: FloatArray,
    jac: FloatArray | None
) -> tuple[FloatArray, FloatArray | None]:
    k, fraction = field.locate(t)
    if fraction > 0.0:
        z, jac = _run_plan(field.fields, field.plan(k, fraction).reversed(), z, jac)
    for i in reversed(range(k)):
        z, jac = _run_plan(field.fields, field.plan(i).reversed(), z, jac)
    return z, jac


def _identity_stack(m: int, d: int) -> FloatArray:
    return np.broadcast_to(np.eye(d), (m, d, d)).copy()


def flow_forward(field: FlowField, t: float, x: ArrayLike) -> FloatArray:
    """
    φ(t, x) for a point or a batch of points.
    """
    z, single = as_batch(x, field.state_dim)
    if field.fields.is_zero:
        field.locate(t)
        return np.array(x, dtype=float)
    z, _ = _forward(field, t, z, None)
    return z[0] if single else z


def flow_inverse(field: FlowField, t: float, y: ArrayLike) -> FloatArray:
    """
    ψ(t, y) = φ(t, ·)⁻¹(y), by integrating the flow backward from `t`.
    """
    z, single = as_batch(y, field.state_dim)
    if field.fields.is_zero:
        field.locate(t)
        return np.array(y, dtype=float)
    z, _ = _backward(field, t, z, None)
    return z[0] if single else z


def flow_with_jacobian(field: FlowField, t: float, x: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """
    φ(t, x) and Dφ(t, x), integrated jointly with the variational equation.
    """
    z, single = as_batch(x, field.state_dim)
    m, d = z.shape
    if field.fields.is_zero:
        field.locate(t)
        z, jac = z.copy(), _identity_stack(m, d)
    else:
        z, jac = _forward(field, t, z, _identity_stack(m, d))
        assert jac is not None
    return (z[0], jac[0]) if single else (z, jac)


def flow_jacobian(field: FlowField, t: float, x: ArrayLike) -> FloatArray:
    """ Dφ(t, x). """
    return flow_with_jacobian(field, t, x)[1]


def inverse_with_jacobian(field: FlowField, t: float, y: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """ ψ(t, y) and Dψ(t, y), by backward variational integration. """
    z, single = as_batch(y, field.state_dim)
    m, d = z.shape
    if field.fields.is_zero:
        field.locate(t)
        z, jac = z.copy(), _identity_stack(m, d)
    else:
        z, jac = _backward(field, t, z, _identity_stack(m, d))
        assert jac is not None
    return (z[0], jac[0]) if single else (z, jac)


def inverse_jacobian(field: FlowField, t: float, y: ArrayLike) -> FloatArray:
    """ Dψ(t, y). """
    return inverse_with_jacobian(field, t, y)[1]


def inverse_hessian(field: FlowField, t: float, y: ArrayLike) -> FloatArray:
    """
    Second derivatives ∂_j ∂_k ψ_i(t, y) as an (m, dS, dS, dS) array
    indexed [m, i, j, k], by central differences of Dψ with step
    1e-4 (1 + |y|). All shifted points are integrated as one batch.
    """
    z, single = as_batch(y, field.state_dim)
    m, d = z.shape
    if field.fields.is_zero:
        hessian = np.zeros((m, d, d, d))
        return hessian[0] if single else hessian
    h = 1e-4 * (1.0 + np.linalg.norm(z, axis=1))
    shifts = np.eye(d)[:, None, :] * h[None, :, None]
    points = np.concatenate([z[None] + shifts, z[None] - shifts]).reshape(2 * d * m, d)
    _, jac = _backward(field, t, points, _identity_stack(2 * d * m, d))
    assert jac is not None
    jac = jac.reshape(2, d, m, d, d)
    # slopes[k, m, i, j] = ∂_k ∂_j ψ_i
    slopes = (jac[0] - jac[1]) / (2 * h[None, :, None, None])
    hessian = np.transpose(slopes, (1, 2, 3, 0))
    hessian = 0.5 * (hessian + np.swapaxes(hessian, 2, 3))
    return hessian[0] if single else hessian


def flow_second_derivatives(field: FlowField, t: float, x: ArrayLike) -> FloatArray:
    """
    Second derivatives of ψ(t, ·) at φ(t, x).
    """
    return inverse_hessian(field, t, flow_forward(field, t, x))


def flow_segment(
    field: FlowField,
    i: int,
    x: ArrayLike,
    jacobian: FloatArray | None = None
) -> tuple[FloatArray, FloatArray | None]:
    """
    Flows (a batch of) points across grid segment `i` only, optionally
    carrying a Jacobian along.
    """
    z, _ = as_batch(x, field.state_dim)
    if field.fields.is_zero:
        return z.copy(), jacobian
    if not 0 <= i < field.driver.steps:
        raise PathError(f"segment {i} outside [0, {field.driver.steps})")
    return _run_plan(field.fields, field.plan(i), z, jacobian)


@dataclass(frozen=True)
class CoefficientBounds:
    """
    Observed sup norms and spatial Lipschitz constants of transformed
    coefficients over a sample of (t, x).
    """
    sup_a: float
    sup_b: float
    lip_a: float
    lip_b: float


class TransformedCoefficients:
    """
    The drift and diffusion of S̃ = ψ(t, S) when dS = a dt + b dB + c(S) dρ:

        ã_i = Σ_k ∂_k ψ_i a_k + ½ Σ_jk ∂_jk ψ_i (b bᵀ)_jk,     b̃ = Dψ b,

    all evaluated at φ(t, x), with Dψ = (Dφ(t, x))⁻¹.
    """
    def __init__(self,
        field: FlowField,
        a: CoefficientFunc,
        b: CoefficientFunc,
        max_condition: float = 1e12
    ):
        self.field = field
        self.a = a
        self.b = b
        self.max_condition = max_condition

    def at_image(self,
        t: float,
        y: FloatArray,
        forward_jacobian: FloatArray
    ) -> tuple[FloatArray, FloatArray]:
        """
        ã and b̃ at the batch x whose images y = φ(t, x) and Jacobians
        Dφ(t, x) are already known.
        """
        b_y = self.b(y)
        if self.field.fields.is_zero:
            return self.a(y), b_y
        condition = np.linalg.cond(forward_jacobian)
        if not np.all(condition < self.max_condition):
            raise FlowError(f"flow Jacobian is singular (condition {np.max(condition):.3g})")
        inverse = np.linalg.inv(forward_jacobian)
        covariance = np.einsum('mjl,mkl->mjk', b_y, b_y)
        a_tilde = np.einsum('mik,mk->mi', inverse, self.a(y))
        if np.any(covariance):
            hessian = inverse_hessian(self.field, t, y)
            a_tilde = a_tilde + 0.5 * np.einsum('mijk,mjk->mi', hessian, covariance)
        b_tilde = np.einsum('mik,mkj->mij', inverse, b_y)
        return a_tilde, b_tilde

    def evaluate(self, t: float, x: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """ ã(t, x) and b̃(t, x) for a point or a batch. """
        z, single = as_batch(x, self.field.state_dim)
        y, jac = flow_with_jacobian(self.field, t, z)
        a_tilde, b_tilde = self.at_image(t, y, jac)
        return (a_tilde[0], b_tilde[0]) if single else (a_tilde, b_tilde)

    def a_tilde(self, t: float, x: ArrayLike) -> FloatArray:
        return self.evaluate(t, x)[0]

    def b_tilde(self, t: float, x: ArrayLike) -> FloatArray:
        return self.evaluate(t, x)[1]

    def observe_bounds(self, times: ArrayLike, points: ArrayLike) -> CoefficientBounds:
        """
        Sup norms over all (t, x) pairs and Lipschitz constants over all
        point pairs at each time.
        """
        x, _ = as_batch(points, self.field.state_dim)
        sup_a = sup_b = lip_a = lip_b = 0.0
        rows, cols = np.triu_indices(x.shape[0], 1)
        gaps = np.linalg.norm(x[rows] - x[cols], axis=1)
        for t in np.atleast_1d(np.asarray(times, dtype=float)):
            a_tilde, b_tilde = self.evaluate(float(t), x)
            sup_a = max(sup_a, float(np.max(np.linalg.norm(a_tilde, axis=1))))
            sup_b = max(sup_b, float(np.max(np.linalg.norm(b_tilde, axis=(1, 2)))))
            if rows.size:
                lip_a = max(lip_a, float(np.max(
                    np.linalg.norm(a_tilde[rows] - a_tilde[cols], axis=1) / gaps)))
                lip_b = max(lip_b, float(np.max(
                    np.linalg.norm(b_tilde[rows] - b_tilde[cols], axis=(1, 2)) / gaps)))
        return CoefficientBounds(sup_a, sup_b, lip_a, lip_b)


def transform_coefficients(
    field: FlowField,
    a: CoefficientFunc,
    b: CoefficientFunc
) -> TransformedCoefficients:
    return TransformedCoefficients(field, a, b)


def coefficient_distance(
    tc1: TransformedCoefficients,
    tc2: TransformedCoefficients,
    times: ArrayLike,
    points: ArrayLike
) -> tuple[float, float]:
    """
    Sampled sup |ã¹ - ã²| and sup |b̃¹ - b̃²| over all (t, x) pairs.
    """
    x, _ = as_batch(points, tc1.field.state_dim)
    dist_a = dist_b = 0.0
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        a1, b1 = tc1.evaluate(float(t), x)
        a2, b2 = tc2.evaluate(float(t), x)
        dist_a = max(dist_a, float(np.max(np.linalg.norm(a1 - a2, axis=1))))
        dist_b = max(dist_b, float(np.max(np.linalg.norm(b1 - b2, axis=(1, 2)))))
    return dist_a, dist_b
