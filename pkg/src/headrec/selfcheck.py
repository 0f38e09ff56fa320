"""Numerical self-checks for the geometry helpers and the differentiation tape.

Both suites draw their own random fixtures, so they can run from the command
line without data.  Each returns a list of :class:`~headrec.evaluation.Check`.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from . import geometry as G
from .evaluation import Check

FD_STEP = 1e-6
FD_TOL = 1e-4


# -- geometry ------------------------------------------------------------------------

def random_tangent(rng, n: int, dim: int, max_norm: float = 10.0) -> np.ndarray:
    """Tangent vectors at the origin, directions uniform, norms uniform in [0, max_norm]."""
    d = rng.normal(size=(n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0.0, max_norm, size=(n, 1))
    return np.concatenate([np.zeros((n, 1)), r * d], axis=1)


def geometry_suite(seed: int = 0, n: int = 1000, dim: int = 5) -> list[Check]:
    rng = np.random.default_rng(seed)
    v = random_tangent(rng, n, dim)
    x = G.exp_origin(v)
    round_trip = float(np.max(np.abs(G.log_origin(x) - v)))
    o = G.origin(dim)
    dist_err = float(np.max(np.abs(G.lorentz_dist(o, x) - np.linalg.norm(v, axis=1))))

    # isometry on moderate radii where the ball coordinates keep enough precision
    a = G.exp_origin(random_tangent(rng, n, dim, 3.0))
    b = G.exp_origin(random_tangent(rng, n, dim, 3.0))
    dl = G.lorentz_dist(a, b)
    dp = G.poincare_dist(G.lorentz_to_poincare(a), G.lorentz_to_poincare(b))
    iso = float(np.max(np.abs(dl - dp)))
    back = float(np.max(np.abs(G.poincare_to_lorentz(G.lorentz_to_poincare(a)) - a)))
    return [
        Check("exp_log_round_trip", "geometry", round_trip < 1e-6, f"max_err={round_trip:.2e}"),
        Check("origin_distance", "geometry", dist_err < 1e-8, f"max_err={dist_err:.2e}"),
        Check("lorentz_poincare_isometry", "geometry", iso < 1e-6 and back < 1e-6,
              f"dist_err={iso:.2e} map_err={back:.2e}"),
    ]


# -- differentiation -----------------------------------------------------------------

def _away_from(x: np.ndarray, points, gap: float) -> np.ndarray:
    """Push entries that sit within ``gap`` of a kink point just outside it."""
    x = x.copy()
    for p in points:
        near = np.abs(x - p) < gap
        x[near] = p + np.where(x[near] >= p, gap, -gap)
    return x


def _distinct_max(rng, shape) -> np.ndarray:
    """Values whose per-column maximum over axis 1 is separated from the runner-up."""
    x = rng.normal(size=shape)
    idx = np.argmax(x, axis=1)
    np.put_along_axis(x, idx[:, None, :], np.take_along_axis(x, idx[:, None, :], 1) + 0.5, 1)
    return x


# name -> (builder, input sampler); the builder maps input Vars to an output Var
OP_CASES: dict[str, tuple[Callable, Callable]] = {
    "add": (lambda a, b: ad.add(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(1, 4))]),
    "sub": (lambda a, b: ad.sub(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(3, 1))]),
    "mul": (lambda a, b: ad.mul(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(1, 4))]),
    "div": (lambda a, b: ad.div(a, b),
            lambda r: [r.normal(size=(3, 4)), r.uniform(0.5, 2.0, (3, 1)) * r.choice([-1, 1], (3, 1))]),
    "matmul": (lambda a, b: ad.matmul(a, b), lambda r: [r.normal(size=(3, 4)), r.normal(size=(4, 2))]),
    "conv1d": (lambda x, w, b: ad.conv1d(x, w, b),
               lambda r: [r.normal(size=(2, 6, 3)), r.normal(size=(3, 3, 2)), r.normal(size=(2,))]),
    "maxpool_time": (lambda x: ad.maxpool_time(x), lambda r: [_distinct_max(r, (2, 5, 3))]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1),
               lambda r: [r.normal(size=(3, 2)), r.normal(size=(3, 4))]),
    "sum": (lambda x: ad.sum(x, axis=1, keepdims=True), lambda r: [r.normal(size=(3, 4))]),
    "mean": (lambda x: ad.mean(x, axis=0), lambda r: [r.normal(size=(3, 4))]),
    "tanh": (ad.tanh, lambda r: [r.normal(size=(3, 4))]),
    "sigmoid": (ad.sigmoid, lambda r: [2.0 * r.normal(size=(3, 4))]),
    "relu": (ad.relu, lambda r: [_away_from(r.normal(size=(3, 4)), [0.0], 1e-3)]),
    "maxzero": (ad.maxzero, lambda r: [_away_from(r.normal(size=(3, 4)), [0.0], 1e-3)]),
    "cosh": (ad.cosh, lambda r: [r.normal(size=(3, 4))]),
    "sinh": (ad.sinh, lambda r: [r.normal(size=(3, 4))]),
    "log": (ad.log, lambda r: [r.uniform(0.2, 3.0, (3, 4))]),
    "square": (ad.square, lambda r: [r.normal(size=(3, 4))]),
    "sqrt": (ad.sqrt, lambda r: [r.uniform(0.2, 3.0, (3, 4))]),
    "norm2": (lambda x: ad.norm2(x, axis=-1), lambda r: [r.normal(size=(3, 4))]),
    "scale": (lambda x: ad.scale(x, 2.5), lambda r: [r.normal(size=(3, 4))]),
    "clip": (lambda x: ad.clip(x, -0.5, 0.5),
             lambda r: [_away_from(r.normal(size=(3, 4)), [-0.5, 0.5], 1e-3)]),
    "arcosh": (ad.arcosh, lambda r: [r.uniform(1.1, 5.0, (3, 4))]),
    "grl": (ad.grl, lambda r: [r.normal(size=(3, 4))]),
    "identity": (ad.identity, lambda r: [r.normal(size=(3, 4))]),
    "gather": (lambda t: ad.gather(t, np.array([2, 0, 2, 1])), lambda r: [r.normal(size=(3, 4))]),
}


def _objective(build, arrays, weight):
    tape = ad.Tape()
    leaves = [tape.leaf(a) for a in arrays]
    out = build(*leaves)
    return tape, leaves, ad.sum(out * tape.const(weight))


def finite_difference_error(build, arrays, rng, step: float = FD_STEP,
                            sign: float = 1.0) -> float:
    """Relative error between tape gradients and central differences of
    sum(w * op(inputs)) for a random weight w.  ``sign`` flips the numeric side,
    which is how reversal edges are compared against their forward function."""
    tape0 = ad.Tape()
    w = rng.normal(size=build(*[tape0.const(a) for a in arrays]).shape)
    tape, leaves, obj = _objective(build, arrays, w)
    grads = tape.backward(obj)
    worst = 0.0
    for k, a in enumerate(arrays):
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            hi = [x.copy() for x in arrays]
            lo = [x.copy() for x in arrays]
            hi[k][idx] += step
            lo[k][idx] -= step
            f_hi = _objective(build, hi, w)[2].value
            f_lo = _objective(build, lo, w)[2].value
            num[idx] = (f_hi - f_lo) / (2 * step)
        num *= sign
        ana = grads[leaves[k]]
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-8)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst


def autodiff_suite(seed: int = 0, points: int = 100, tol: float = FD_TOL) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (build, sample) in OP_CASES.items():
        sign = -1.0 if name == "grl" else 1.0
        worst = max(finite_difference_error(build, sample(rng), rng, sign=sign)
                    for _ in range(points))
        out.append(Check(f"fd_{name}", "autodiff", worst < tol, f"max_rel_err={worst:.2e}"))
    out.append(grl_negation_check(rng))
    return out


def grl_negation_check(rng) -> Check:
    """Gradient through the reversal edge is the exact negation of the identity edge."""
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))
    res = []
    for op in (ad.grl, ad.identity):
        tape = ad.Tape()
        leaf = tape.leaf(x)
        y = op(leaf)
        fwd = y.value.copy()
        res.append((fwd, tape.backward(ad.sum(ad.tanh(y) * tape.const(w)))[leaf]))
    (f_grl, g_grl), (f_id, g_id) = res
    ok = bool(np.array_equal(f_grl, f_id) and np.array_equal(g_grl, -g_id))
    return Check("grl_negation", "autodiff", ok, f"exact_negation={ok}")
