"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every primitive applied to its :class:`Var` leaves in
execution order, so the node list is already topologically sorted.  The
backward pass walks it once in reverse.

Primitives accept plain arrays as well; when none of the arguments is a
``Var`` the numpy result is returned directly, which lets model code run the
same forward function with or without recording.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives operands with incompatible shapes."""


class TapeStateError(RuntimeError):
    """Raised on misuse of the forward/backward protocol."""


class Var:
    __slots__ = ("value", "tape", "index", "name")
    __array_priority__ = 1000

    def __init__(self, value, tape: "Tape", index: int, name: str | None = None):
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(node={self.index}, shape={self.value.shape}, name={self.name!r})"

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

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


@dataclass
class _Node:
    op: str
    inputs: tuple  # Var or None (constant) per operand
    vjp: Callable | None  # cotangent -> tuple of input cotangents


@dataclass
class Gradients:
    inputs: list[np.ndarray]
    params: dict[str, np.ndarray] = field(default_factory=dict)


class Tape:
    """Wengert list for one forward/backward pass.

    Used directly (``tape.var`` + primitives + ``tape.gradient``) or wrapped
    around a function ``fn(params, *inputs)`` through :func:`forward` and
    :func:`backward`.
    """

    def __init__(self, fn=None, params=None, signature=None, name=None):
        self.fn = fn
        self.params = {k: np.asarray(v, dtype=float) for k, v in (params or {}).items()}
        self.signature = None if signature is None else [tuple(s) for s in signature]
        self.name = name
        self.nodes: list[_Node] = []
        self.values: list[np.ndarray] = []
        self._input_vars: list[Var] = []
        self._param_vars: dict[str, Var] = {}
        self._output: Var | None = None
        self._busy = False

    def reset(self):
        self.nodes.clear()
        self.values.clear()
        self._input_vars = []
        self._param_vars = {}
        self._output = None

    def var(self, value, name=None) -> Var:
        value = np.array(value, dtype=float)
        return self._push("leaf", (), value, None, name)

    def _push(self, op, inputs, value, vjp, name=None) -> Var:
        idx = len(self.nodes)
        self.nodes.append(_Node(op, inputs, vjp))
        self.values.append(value)
        return Var(value, self, idx, name)

    def gradient(self, output: Var, wrt: Sequence[Var], cotangent=None) -> list[np.ndarray]:
        if output.tape is not self:
            raise TapeStateError("output was not recorded on this tape")
        if cotangent is None:
            if output.value.size != 1:
                raise ShapeError(
                    f"node {output.index}: a cotangent is required for non-scalar output "
                    f"of shape {output.value.shape}"
                )
            cotangent = np.ones_like(output.value)
        cotangent = np.asarray(cotangent, dtype=float)
        if cotangent.shape != output.value.shape:
            raise ShapeError(
                f"node {output.index}: cotangent shape {cotangent.shape} does not match "
                f"output shape {output.value.shape}"
            )
        adj: dict[int, np.ndarray] = {output.index: cotangent}
        for idx in range(output.index, -1, -1):
            g = adj.pop(idx, None)
            if g is None:
                continue
            node = self.nodes[idx]
            if node.vjp is None:
                adj[idx] = g  # leaf: keep for lookup
                continue
            parts = node.vjp(g)
            for inp, part in zip(node.inputs, parts):
                if inp is None or part is None:
                    continue
                prev = adj.get(inp.index)
                adj[inp.index] = part if prev is None else prev + part
        return [adj.get(v.index, np.zeros_like(v.value)) for v in wrt]

    def run(self, *inputs) -> np.ndarray:
        return forward(self, inputs)

    def grad(self, cotangent=None) -> Gradients:
        return backward(self, cotangent)


def forward(tape: Tape, inputs) -> np.ndarray:
    """Evaluate ``tape.fn`` on ``inputs`` while recording the computation."""
    if tape.fn is None:
        raise TapeStateError("tape has no function to run")
    if tape._busy:
        raise TapeStateError("tape is already in use by another pass")
    arrays = [np.array(x, dtype=float) for x in inputs]
    if tape.signature is not None:
        if len(arrays) != len(tape.signature):
            raise ShapeError(f"expected {len(tape.signature)} inputs, got {len(arrays)}")
        for k, (a, s) in enumerate(zip(arrays, tape.signature)):
            if a.shape != s:
                raise ShapeError(f"input {k}: shape {a.shape} does not match declared {s}")
    tape._busy = True
    try:
        tape.reset()
        tape._param_vars = {k: tape.var(v, name=k) for k, v in tape.params.items()}
        tape._input_vars = [tape.var(a, name=f"input{k}") for k, a in enumerate(arrays)]
        out = tape.fn(tape._param_vars, *tape._input_vars)
        if not isinstance(out, Var):
            out = tape.var(out, name="constant-output")
        tape._output = out
        return out.value
    finally:
        tape._busy = False


def backward(tape: Tape, output_cotangent=None) -> Gradients:
    """Gradients of the last forward output w.r.t. every input and parameter."""
    if tape._output is None:
        raise TapeStateError("backward called before forward")
    wrt = list(tape._input_vars) + list(tape._param_vars.values())
    grads = tape.gradient(tape._output, wrt, output_cotangent)
    n_in = len(tape._input_vars)
    return Gradients(
        inputs=grads[:n_in],
        params=dict(zip(tape._param_vars.keys(), grads[n_in:])),
    )


def finite_diff_check(tape: Tape, point, step: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    Perturbs every coordinate of the (single) input ``point``; the tape output
    is reduced with a fixed random projection when it is not a scalar.
    """
    point = np.array(point, dtype=float)
    out = forward(tape, [point])
    proj = np.random.default_rng(0).standard_normal(np.shape(out)) if np.size(out) != 1 else None

    def scalar(x):
        val = forward(tape, [x])
        return float(np.sum(val * proj)) if proj is not None else float(np.sum(val))

    forward(tape, [point])
    cot = proj if proj is not None else np.ones_like(out)
    auto = backward(tape, cot).inputs[0]
    numeric = np.zeros_like(point)
    flat = point.reshape(-1)
    for k in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[k] += step
        minus[k] -= step
        numeric.reshape(-1)[k] = (scalar(plus.reshape(point.shape)) - scalar(minus.reshape(point.shape))) / (2 * step)
    return float(np.max(np.abs(auto - numeric) / (np.abs(numeric) + 1e-12)))


# --- primitive plumbing -----------------------------------------------------


def _tape_of(args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeStateError("operands belong to different tapes")
    return tape


def _val(a):
    return a.value if isinstance(a, Var) else np.asarray(a, dtype=float)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _apply(op: str, args: tuple, compute, make_vjp):
    """Evaluate a primitive and, when any operand is a Var, record it."""
    tape = _tape_of(args)
    vals = [_val(a) for a in args]
    try:
        out = compute(*vals)
    except ValueError as exc:
        where = f"node {len(tape.nodes)}" if tape is not None else "untaped op"
        shapes = ", ".join(str(v.shape) for v in vals)
        raise ShapeError(f"{where} ({op}): incompatible operand shapes {shapes}: {exc}") from None
    if tape is None:
        return out
    inputs = tuple(a if isinstance(a, Var) else None for a in args)
    return tape._push(op, inputs, out, make_vjp(out, *vals))


def _binary(op, compute, dfa, dfb):
    def prim(a, b):
        def make_vjp(out, va, vb):
            def vjp(g):
                return (
                    _unbroadcast(dfa(g, va, vb, out), va.shape),
                    _unbroadcast(dfb(g, va, vb, out), vb.shape),
                )

            return vjp

        return _apply(op, (a, b), compute, make_vjp)

    prim.__name__ = op
    return prim


add = _binary("add", np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)
sub = _binary("sub", np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)
mul = _binary("mul", np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)
div = _binary(
    "div", np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * a / (b * b)
)
maximum = _binary(
    "maximum",
    np.maximum,
    lambda g, a, b, o: g * (a >= b),
    lambda g, a, b, o: g * (a < b),
)


def _unary(op, compute, deriv):
    def prim(a):
        def make_vjp(out, va):
            return lambda g: (g * deriv(va, out),)

        return _apply(op, (a,), compute, make_vjp)

    prim.__name__ = op
    return prim


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


neg = _unary("neg", np.negative, lambda x, o: -1.0)
exp = _unary("exp", np.exp, lambda x, o: o)
log = _unary("log", np.log, lambda x, o: 1.0 / x)
sin = _unary("sin", np.sin, lambda x, o: np.cos(x))
cos = _unary("cos", np.cos, lambda x, o: -np.sin(x))
tanh = _unary("tanh", np.tanh, lambda x, o: 1.0 - o * o)
sigmoid = _unary("sigmoid", _sigmoid, lambda x, o: o * (1.0 - o))
relu = _unary("relu", lambda x: np.maximum(x, 0.0), lambda x, o: (x > 0).astype(float))
softplus = _unary("softplus", _softplus, lambda x, o: _sigmoid(x))
square = _unary("square", np.square, lambda x, o: 2.0 * x)
sqrt = _unary("sqrt", np.sqrt, lambda x, o: 0.5 / o)
abs_ = _unary("abs", np.abs, lambda x, o: np.sign(x))


def power(a, exponent: float):
    def make_vjp(out, va):
        return lambda g: (g * exponent * np.power(va, exponent - 1),)

    return _apply("pow", (a,), lambda x: np.power(x, exponent), make_vjp)


def _matmul_grad_left(g, x, y):
    """Cotangent for the left operand of x @ y (both at least 2-D)."""
    if g.ndim > 2 and y.ndim == 2:
        return (g.reshape(-1, g.shape[-1]) @ y.T).reshape(g.shape[:-1] + (y.shape[0],))
    return np.matmul(g, np.swapaxes(y, -1, -2))


def _matmul_grad_right(g, x, y):
    if x.ndim > 2 and y.ndim == 2:
        return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return np.matmul(np.swapaxes(x, -1, -2), g)


def matmul(a, b):
    def compute(x, y):
        if x.ndim == 0 or y.ndim == 0:
            raise ValueError("matmul requires at least 1-D operands")
        return np.matmul(x, y)

    need_a, need_b = isinstance(a, Var), isinstance(b, Var)

    def make_vjp(out, x, y):
        def vjp(g):
            x2 = x[None, :] if x.ndim == 1 else x
            y2 = y[:, None] if y.ndim == 1 else y
            g2 = g
            if x.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if y.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            gx = gy = None
            if need_a:
                gx = _matmul_grad_left(g2, x2, y2)
                if x.ndim == 1:
                    gx = np.squeeze(gx, -2)
                gx = _unbroadcast(gx, x.shape)
            if need_b:
                gy = _matmul_grad_right(g2, x2, y2)
                if y.ndim == 1:
                    gy = np.squeeze(gy, -1)
                gy = _unbroadcast(gy, y.shape)
            return gx, gy

        return vjp

    return _apply("matmul", (a, b), compute, make_vjp)


def sum_(a, axis=None, keepdims=False):
    def make_vjp(out, x):
        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape).copy(),)

        return vjp

    return _apply("sum", (a,), lambda x: np.sum(x, axis=axis, keepdims=keepdims), make_vjp)


def mean(a, axis=None, keepdims=False):
    x = _val(a)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(a, axis=None, keepdims=False):
    """Maximum; the cotangent goes to the first maximal entry."""

    def compute(x):
        return np.max(x, axis=axis, keepdims=keepdims)

    def make_vjp(out, x):
        def vjp(g):
            if axis is None:
                mask = np.zeros(x.size)
                mask[np.argmax(x)] = 1.0
                return (mask.reshape(x.shape) * g,)
            idx = np.expand_dims(np.argmax(x, axis=axis), axis)
            mask = np.zeros_like(x)
            np.put_along_axis(mask, idx, 1.0, axis=axis)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (mask * gg,)

        return vjp

    return _apply("max", (a,), compute, make_vjp)


def reshape(a, shape):
    def make_vjp(out, x):
        return lambda g: (g.reshape(x.shape),)

    return _apply("reshape", (a,), lambda x: np.reshape(x, shape), make_vjp)


def transpose(a, axes=None):
    def make_vjp(out, x):
        inv = None if axes is None else np.argsort(axes)
        return lambda g: (np.transpose(g, inv),)

    return _apply("transpose", (a,), lambda x: np.transpose(x, axes), make_vjp)


def swapaxes(a, ax1, ax2):
    def make_vjp(out, x):
        return lambda g: (np.swapaxes(g, ax1, ax2),)

    return _apply("swapaxes", (a,), lambda x: np.swapaxes(x, ax1, ax2), make_vjp)


def getitem(a, index):
    def make_vjp(out, x):
        def vjp(g):
            full = np.zeros_like(x)
            np.add.at(full, index, g)
            return (full,)

        return vjp

    return _apply("getitem", (a,), lambda x: x[index], make_vjp)


def concat(items: Sequence, axis: int = -1):
    tape = _tape_of(items)
    vals = [_val(a) for a in items]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        where = f"node {len(tape.nodes)}" if tape is not None else "untaped op"
        raise ShapeError(f"{where} (concat): {exc}") from None
    if tape is None:
        return out
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    inputs = tuple(a if isinstance(a, Var) else None for a in items)
    return tape._push("concat", inputs, out, vjp)


def stack(items: Sequence, axis: int = 0):
    expanded = [reshape(a, _val(a).shape[:axis] + (1,) + _val(a).shape[axis:]) if axis >= 0
                else expand_dims(a, axis) for a in items]
    return concat(expanded, axis=axis)


def expand_dims(a, axis):
    shape = list(_val(a).shape)
    ax = axis if axis >= 0 else len(shape) + 1 + axis
    shape.insert(ax, 1)
    return reshape(a, tuple(shape))


def where(mask, a, b):
    mask = np.asarray(mask, dtype=bool)

    def make_vjp(out, va, vb):
        return lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), va.shape),
            _unbroadcast(np.where(mask, 0.0, g), vb.shape),
        )

    return _apply("where", (a, b), lambda x, y: np.where(mask, x, y), make_vjp)


def value(a) -> np.ndarray:
    return _val(a)
