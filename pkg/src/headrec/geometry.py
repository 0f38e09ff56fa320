"""Lorentz (hyperboloid) and Poincare ball primitives at unit curvature.

Points on the hyperboloid carry the time coordinate at index 0.  All functions
accept a single vector or a batch of vectors stacked along the leading axes;
the manifold coordinates always live on the last axis.
"""

from __future__ import annotations

import numpy as np

CURVATURE = 1.0
LORENTZ_TOL = 1e-6
DOMAIN_TOL = 1e-4
SMALL_NORM = 1e-12


class GeometryError(ValueError):
    """A point violates the manifold it is supposed to live on."""


def _check_curvature(k: float) -> None:
    if k != CURVATURE:
        raise ValueError(f"only curvature k=1 is supported, got {k}")


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def origin(dim: int) -> np.ndarray:
    """The hyperboloid origin (1, 0, ..., 0) for a d-dimensional space."""
    o = np.zeros(dim + 1)
    o[0] = 1.0
    return o


def lorentz_inner(x, y) -> np.ndarray:
    """Minkowski inner product -x0*y0 + sum_i x_i*y_i over the last axis."""
    x = _as_float(x)
    y = _as_float(y)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    return np.sum(x[..., 1:] * y[..., 1:], axis=-1) - x[..., 0] * y[..., 0]


def lorentz_constraint_error(x) -> np.ndarray:
    """|<x,x>_L + 1| for each point."""
    return np.abs(lorentz_inner(x, x) + CURVATURE)


def is_on_hyperboloid(x, tol: float = LORENTZ_TOL) -> bool:
    x = _as_float(x)
    return bool(np.all(lorentz_constraint_error(x) <= tol) and np.all(x[..., 0] > 0))


def _require_hyperboloid(x: np.ndarray, name: str) -> None:
    if not (np.all(lorentz_constraint_error(x) <= DOMAIN_TOL) and np.all(x[..., 0] > 0)):
        raise GeometryError(f"{name} is not on the unit hyperboloid")


def is_tangent_at_origin(v) -> bool:
    return bool(np.all(_as_float(v)[..., 0] == 0.0))


def lorentz_dist(x, y, k: float = CURVATURE) -> np.ndarray:
    """Geodesic distance on the hyperboloid, arcosh(-<x,y>_L) for k=1.

    Evaluated as 2 arsinh(||x - y||_L / 2), which equals the arcosh form on the
    manifold but avoids its cancellation when x and y are close and far from o.
    """
    _check_curvature(k)
    x = _as_float(x)
    y = _as_float(y)
    _require_hyperboloid(x, "x")
    _require_hyperboloid(y, "y")
    diff = x - y
    sq = np.maximum(lorentz_inner(diff, diff) / k, 0.0)
    return np.sqrt(k) * 2.0 * np.arcsinh(0.5 * np.sqrt(sq))


def exp_origin(v) -> np.ndarray:
    """Exponential map at the origin.

    ``v`` is either a tangent vector with a zero time coordinate (length d+1) or,
    for convenience, the bare spatial part of length d via :func:`lift`.
    """
    v = _as_float(v)
    if not is_tangent_at_origin(v):
        raise ValueError("tangent vectors at the origin must have v[0] == 0")
    return lift(v[..., 1:])


def lift(space) -> np.ndarray:
    """Map spatial tangent coordinates u (length d) to exp_o((0, u))."""
    u = _as_float(space)
    n = np.linalg.norm(u, axis=-1, keepdims=True)
    small = n < SMALL_NORM
    safe = np.where(small, 1.0, n)
    x0 = np.where(small, 1.0, np.cosh(n))
    rest = np.where(small, 0.0, np.sinh(n) * u / safe)
    return np.concatenate([x0, rest], axis=-1)


def log_origin(x) -> np.ndarray:
    """Logarithmic map at the origin, returning a tangent vector with zero time part."""
    x = _as_float(x)
    return np.concatenate([np.zeros_like(x[..., :1]), unlift(x)], axis=-1)


def unlift(x) -> np.ndarray:
    """Spatial part of log_o(x): arcosh(x0) * x_s / ||x_s||."""
    x = _as_float(x)
    space = x[..., 1:]
    sn = np.linalg.norm(space, axis=-1, keepdims=True)
    # arcsinh(||x_s||) equals arcosh(x0) on the manifold and stays accurate near o
    dist = np.arcsinh(sn)
    safe = np.where(sn < SMALL_NORM, 1.0, sn)
    return np.where(sn < SMALL_NORM, 0.0, dist * space / safe)


def poincare_dist(x, y, k: float = CURVATURE) -> np.ndarray:
    _check_curvature(k)
    x = _as_float(x)
    y = _as_float(y)
    nx = np.sum(x * x, axis=-1)
    ny = np.sum(y * y, axis=-1)
    if np.any(k * nx >= 1.0) or np.any(k * ny >= 1.0):
        raise GeometryError("point on or outside the Poincare ball boundary")
    diff = np.sum((x - y) ** 2, axis=-1)
    arg = 1.0 + 2.0 * k * diff / ((k - nx) * (k - ny))
    return np.sqrt(k) * np.arccosh(np.maximum(arg, 1.0))


def lorentz_to_poincare(x) -> np.ndarray:
    """Standard diffeomorphism p_i = x_i / (1 + x0)."""
    x = _as_float(x)
    return x[..., 1:] / (1.0 + x[..., :1])


def poincare_to_lorentz(p) -> np.ndarray:
    p = _as_float(p)
    sq = np.sum(p * p, axis=-1, keepdims=True)
    return np.concatenate([(1.0 + sq), 2.0 * p], axis=-1) / (1.0 - sq)


def tangent_norm_to_ball_radius(n) -> np.ndarray:
    """Poincare radius of exp_o(v) as a function of ||v||: tanh(||v||/2)."""
    return np.tanh(0.5 * _as_float(n))
