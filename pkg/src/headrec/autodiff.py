"""A small eager reverse-mode differentiation tape over numpy arrays.

Only the operators the recommender needs are provided.  Every operator evaluates
its forward value immediately and appends a node to the tape; :meth:`Tape.backward`
walks the nodes once in reverse order.

Elementwise binary operators accept numpy broadcasting of one operand against the
other (bias rows, per-row scalars); the reverse pass sums gradients back to the
operand shape.  Nothing fancier is supported.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Sign applied to gradients crossing a gradient-reversal edge.  Tests flip this
# to inject a deliberate bug and confirm the theorem checks notice.
GRL_BACKWARD_SIGN = -1.0

ARCOSH_EPS = 1e-12


class TapeError(ValueError):
    """Shape mismatch, foreign variable, or a malformed backward request."""


class Node:
    __slots__ = ("kind", "inputs", "value", "vjp", "requires_grad", "is_leaf")

    def __init__(self, kind, inputs, value, vjp, requires_grad, is_leaf=False):
        self.kind = kind
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.is_leaf = is_leaf


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def kind(self) -> str:
        return self.tape.nodes[self.id].kind

    def __repr__(self):
        return f"Var(id={self.id}, kind={self.kind}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


class Gradients:
    """Result of a backward pass: leaf gradients keyed by variable."""

    def __init__(self, tape: "Tape", grads: dict):
        self._tape = tape
        self._grads = grads

    def __getitem__(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise TapeError("variable belongs to a different tape")
        g = self._grads.get(var.id)
        if g is None:
            return np.zeros_like(var.value)
        return g

    def __len__(self):
        return len(self._grads)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, name: str | None = None) -> Var:
        """A differentiable input."""
        arr = np.array(value, dtype=np.float64)
        self.nodes.append(Node(name or "leaf", (), arr, None, True, is_leaf=True))
        return Var(self, len(self.nodes) - 1)

    def const(self, value) -> Var:
        """A non-differentiable input."""
        arr = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node("const", (), arr, None, False))
        return Var(self, len(self.nodes) - 1)

    def _wrap(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise TapeError("cannot mix variables from different tapes")
            return x
        return self.const(x)

    def record(self, kind: str, inputs: Sequence, **attrs) -> Var:
        """Evaluate operator ``kind`` on ``inputs`` and append it to the tape."""
        try:
            forward = OPS[kind]
        except KeyError:
            raise TapeError(f"unknown operator {kind!r}") from None
        ins = tuple(self._wrap(v) for v in inputs)
        values = [v.value for v in ins]
        needs = tuple(self.nodes[v.id].requires_grad for v in ins)
        if kind == "conv1d":
            attrs["_needs"] = needs
        value, vjp = forward(*values, **attrs)
        requires = any(needs)
        self.nodes.append(Node(kind, tuple(v.id for v in ins), value, vjp, requires))
        return Var(self, len(self.nodes) - 1)

    def backward(self, root: Var) -> Gradients:
        if root.tape is not self:
            raise TapeError("root belongs to a different tape")
        if root.value.size != 1:
            raise TapeError(f"backward needs a scalar root, got shape {root.shape}")
        grads: list = [None] * (root.id + 1)
        grads[root.id] = np.ones_like(root.value)
        for nid in range(root.id, -1, -1):
            g = grads[nid]
            node = self.nodes[nid]
            if g is None or node.vjp is None or not node.requires_grad:
                continue
            in_grads = node.vjp(g)
            for iid, ig in zip(node.inputs, in_grads):
                if ig is None or not self.nodes[iid].requires_grad:
                    continue
                grads[iid] = ig if grads[iid] is None else grads[iid] + ig
            if not node.is_leaf:
                grads[nid] = None
        out = {}
        for nid, node in enumerate(self.nodes):
            if node.is_leaf:
                g = grads[nid] if nid < len(grads) else None
                out[nid] = np.zeros_like(node.value) if g is None else g
        return Gradients(self, out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TapeError(f"shape mismatch: {a.shape} vs {b.shape}") from None


# -- forward/vjp pairs ------------------------------------------------------------
# Each returns (value, vjp) where vjp maps the output gradient to a tuple of input
# gradients (None for inputs that never need one).


def _add(a, b):
    _broadcast_shape(a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub(a, b):
    _broadcast_shape(a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul(a, b):
    _broadcast_shape(a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _div(a, b):
    _broadcast_shape(a, b)
    out = a / b
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


def _matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise TapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b, lambda g: (g @ b.T, a.T @ g)


def _conv1d(x, w, b, _needs=(True, True, True)):
    # x: (batch, length, channels), w: (width, channels, filters), b: (filters,)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1] or b.shape != (w.shape[2],):
        raise TapeError(f"conv1d shape mismatch: x{x.shape} w{w.shape} b{b.shape}")
    width, chans, filters = w.shape
    batch, length, _ = x.shape
    if length < width:
        raise TapeError(f"sequence length {length} shorter than kernel width {width}")
    steps = length - width + 1
    # one product against all kernel taps, then sum the shifted tap outputs
    wcat = w.transpose(1, 0, 2).reshape(chans, width * filters)
    x2 = x.reshape(batch * length, chans)
    taps = (x2 @ wcat).reshape(batch, length, width, filters)
    out = taps[:, 0:steps, 0, :] + b
    for t in range(1, width):
        out = out + taps[:, t:t + steps, t, :]

    def vjp(g):
        z = np.zeros((batch, length, width, filters))
        for t in range(width):
            z[:, t:t + steps, t, :] = g
        z2 = z.reshape(batch * length, width * filters)
        gw = (x2.T @ z2).reshape(chans, width, filters).transpose(1, 0, 2)
        gb = g.sum(axis=(0, 1))
        gx = (z2 @ wcat.T).reshape(x.shape) if _needs[0] else None
        return gx, gw, gb

    return out, vjp


def _maxpool_time(x):
    if x.ndim != 3:
        raise TapeError(f"max-pool-over-time expects (batch, time, filters), got {x.shape}")
    # argmax returns the first maximum, so ties go to the lowest index
    idx = np.argmax(x, axis=1)[:, None, :]
    out = np.take_along_axis(x, idx, axis=1)[:, 0, :]

    def vjp(g):
        gx = np.zeros_like(x)
        np.put_along_axis(gx, idx, g[:, None, :], axis=1)
        return (gx,)

    return out, vjp


def _concat(*xs, axis=-1):
    try:
        out = np.concatenate(xs, axis=axis)
    except ValueError as exc:
        raise TapeError(f"concat shape mismatch: {[x.shape for x in xs]}") from exc
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return out, vjp


def _sum(x, axis=None, keepdims=False):
    out = np.sum(x, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return out, vjp


def _mean(x, axis=None, keepdims=False):
    out = np.mean(x, axis=axis, keepdims=keepdims)
    count = x.size // max(out.size, 1) if axis is not None else x.size

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return out, vjp


def _unary(fn, dfn):
    def op(x):
        out = fn(x)
        return out, lambda g: (g * dfn(x, out),)
    return op


def _sigmoid_fn(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _norm2(x, axis=-1, keepdims=True):
    out = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g * x / safe, 0.0),)

    return (out if keepdims else np.squeeze(out, axis=axis)), vjp


def _scale(x, c=1.0):
    return x / c, lambda g: (g / c,)


def _clip(x, lo=-np.inf, hi=np.inf):
    out = np.clip(x, lo, hi)
    return out, lambda g: (np.where((x >= lo) & (x <= hi), g, 0.0),)


def _arcosh(x):
    out = np.arccosh(np.maximum(x, 1.0))

    def vjp(g):
        denom = np.sqrt(np.maximum(x * x - 1.0, ARCOSH_EPS))
        return (np.where(x > 1.0, g / denom, 0.0),)

    return out, vjp


def _grl(x):
    return x.copy(), lambda g: (GRL_BACKWARD_SIGN * g,)


def _identity(x):
    return x.copy(), lambda g: (g,)


def _gather(table, idx=None):
    idx = np.asarray(idx, dtype=np.int64)
    out = table[idx]

    def vjp(g):
        gt = np.zeros_like(table)
        np.add.at(gt, idx, g)
        return (gt,)

    return out, vjp


OPS: dict[str, Callable] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
    "matmul": _matmul,
    "conv1d": _conv1d,
    "maxpool_time": _maxpool_time,
    "concat": _concat,
    "sum": _sum,
    "mean": _mean,
    "tanh": _unary(np.tanh, lambda x, y: 1.0 - y * y),
    "sigmoid": _unary(_sigmoid_fn, lambda x, y: y * (1.0 - y)),
    "relu": _unary(lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "maxzero": _unary(lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(np.float64)),
    "cosh": _unary(np.cosh, lambda x, y: np.sinh(x)),
    "sinh": _unary(np.sinh, lambda x, y: np.cosh(x)),
    "log": _unary(np.log, lambda x, y: 1.0 / x),
    "square": _unary(np.square, lambda x, y: 2.0 * x),
    "sqrt": _unary(np.sqrt, lambda x, y: 0.5 / y),
    "norm2": _norm2,
    "scale": _scale,
    "clip": _clip,
    "arcosh": _arcosh,
    "grl": _grl,
    "identity": _identity,
    "gather": _gather,
}


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TapeError("at least one operand must be a Var")


def add(a, b) -> Var:
    return _tape_of(a, b).record("add", [a, b])


def sub(a, b) -> Var:
    return _tape_of(a, b).record("sub", [a, b])


def mul(a, b) -> Var:
    return _tape_of(a, b).record("mul", [a, b])


def div(a, b) -> Var:
    return _tape_of(a, b).record("div", [a, b])


def matmul(a: Var, b: Var) -> Var:
    return _tape_of(a, b).record("matmul", [a, b])


def conv1d(x, w: Var, b: Var) -> Var:
    return _tape_of(x, w, b).record("conv1d", [x, w, b])


def maxpool_time(x: Var) -> Var:
    return x.tape.record("maxpool_time", [x])


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    return _tape_of(*xs).record("concat", list(xs), axis=axis)


def sum(x: Var, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    return x.tape.record("sum", [x], axis=axis, keepdims=keepdims)


def mean(x: Var, axis=None, keepdims: bool = False) -> Var:
    return x.tape.record("mean", [x], axis=axis, keepdims=keepdims)


def tanh(x: Var) -> Var:
    return x.tape.record("tanh", [x])


def sigmoid(x: Var) -> Var:
    return x.tape.record("sigmoid", [x])


def relu(x: Var) -> Var:
    return x.tape.record("relu", [x])


def maxzero(x: Var) -> Var:
    """max(x, 0); at exactly zero the subgradient is 0."""
    return x.tape.record("maxzero", [x])


def cosh(x: Var) -> Var:
    return x.tape.record("cosh", [x])


def sinh(x: Var) -> Var:
    return x.tape.record("sinh", [x])


def log(x: Var) -> Var:
    return x.tape.record("log", [x])


def square(x: Var) -> Var:
    return x.tape.record("square", [x])


def sqrt(x: Var) -> Var:
    return x.tape.record("sqrt", [x])


def norm2(x: Var, axis: int = -1, keepdims: bool = True) -> Var:
    return x.tape.record("norm2", [x], axis=axis, keepdims=keepdims)


def scale(x: Var, c: float) -> Var:
    """Divide by a fixed positive scalar."""
    return x.tape.record("scale", [x], c=float(c))


def clip(x: Var, lo: float = -np.inf, hi: float = np.inf) -> Var:
    return x.tape.record("clip", [x], lo=lo, hi=hi)


def arcosh(x: Var) -> Var:
    """Inverse hyperbolic cosine with the argument clamped to >= 1."""
    return x.tape.record("arcosh", [x])


def grl(x: Var) -> Var:
    """Gradient reversal: identity forward, negated gradient backward."""
    return x.tape.record("grl", [x])


def identity(x: Var) -> Var:
    return x.tape.record("identity", [x])


def gather(table: Var, idx) -> Var:
    """Rows ``table[idx]``; gradients scatter-add back into the table."""
    return table.tape.record("gather", [table], idx=idx)


def detach(x: Var) -> Var:
    return x.tape.const(x.value.copy())
