"""A small define-then-run reverse-mode differentiation engine.

A :class:`Tape` records a graph of array-valued nodes once; values are bound
to its parameter and constant roots on each :meth:`Tape.forward` call and
:meth:`Tape.backward` returns the adjoint of the output with respect to every
parameter root.  Node values are float64 numpy arrays and elementwise
operations follow numpy broadcasting.  Complex quantities are written out as
explicit real/imaginary pairs when the graph is built; there is no complex
node type.

>>> t = Tape()
>>> x = t.parameter("x")
>>> y = (x * sin(x)).sum()
>>> float(t.forward({"x": np.array([1.3])}, output=y))  # doctest: +ELLIPSIS
1.25...
>>> g = t.backward(y)["x"]
"""
from __future__ import annotations

from typing import Callable

import numpy as np


class GraphError(RuntimeError):
    """Misuse of a tape: unbound roots, backward before forward, shape clashes."""


class NumericDomainError(ArithmeticError):
    def __init__(self, op: str, msg: str):
        super().__init__(f"{op}: {msg}")
        self.op = op


PARAM, CONST, LITERAL, OP = "param", "const", "literal", "op"


class Node:
    __slots__ = ("tape", "index", "kind", "op", "inputs", "attrs", "name", "needs_grad")

    def __init__(self, tape, index, kind, op=None, inputs=(), attrs=None, name=None):
        self.tape = tape
        self.index = index
        self.kind = kind
        self.op = op
        self.inputs = tuple(inputs)
        self.attrs = attrs or {}
        self.name = name
        if kind == PARAM:
            self.needs_grad = True
        else:
            self.needs_grad = any(i.needs_grad for i in self.inputs)

    def __repr__(self):
        label = self.name or self.op or self.kind
        return f"<Node {self.index}:{label}>"

    @property
    def value(self) -> np.ndarray:
        return self.tape.value(self)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return sum_reduce(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean_reduce(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Ordered node storage with parameter and constant roots."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}
        self.consts: dict[str, Node] = {}
        self._values: list | None = None
        self._output: Node | None = None
        self._schedules: dict[int, list[Node]] = {}

    def _add(self, kind, op=None, inputs=(), attrs=None, name=None) -> Node:
        for i in inputs:
            if i.tape is not self:
                raise GraphError("cannot combine nodes from different tapes")
        node = Node(self, len(self.nodes), kind, op, inputs, attrs, name)
        self.nodes.append(node)
        self._values = None
        self._schedules.clear()
        return node

    def parameter(self, name: str) -> Node:
        if name in self.params or name in self.consts:
            raise GraphError(f"duplicate root name {name!r}")
        node = self._add(PARAM, name=name)
        self.params[name] = node
        return node

    def constant(self, name: str) -> Node:
        if name in self.params or name in self.consts:
            raise GraphError(f"duplicate root name {name!r}")
        node = self._add(CONST, name=name)
        self.consts[name] = node
        return node

    def literal(self, value) -> Node:
        return self._add(LITERAL, attrs={"value": np.asarray(value, dtype=np.float64)})

    def _lift(self, x) -> Node:
        return x if isinstance(x, Node) else self.literal(x)

    def _schedule(self, output: Node) -> list[Node]:
        # ancestors of output, in recording order
        sched = self._schedules.get(output.index)
        if sched is None:
            keep = np.zeros(output.index + 1, dtype=bool)
            keep[output.index] = True
            for node in reversed(self.nodes[:output.index + 1]):
                if keep[node.index]:
                    for i in node.inputs:
                        keep[i.index] = True
            sched = [n for n in self.nodes[:output.index + 1] if keep[n.index]]
            self._schedules[output.index] = sched
        return sched

    def forward(self, params: dict | None = None, consts: dict | None = None,
                output: Node | None = None) -> np.ndarray:
        """Evaluate every node in recording order; return the output's value."""
        params = params or {}
        consts = consts or {}
        if output is None:
            if not self.nodes:
                raise GraphError("empty tape")
            output = self.nodes[-1]
        values: list = [None] * len(self.nodes)
        for name, node in self.params.items():
            # bind unused parameters too so backward can report zero adjoints
            if name in params:
                values[node.index] = np.asarray(params[name], dtype=np.float64)
        for node in self._schedule(output):
            if node.kind == PARAM:
                if node.name not in params:
                    raise GraphError(f"unbound parameter {node.name!r}")
                values[node.index] = np.asarray(params[node.name], dtype=np.float64)
            elif node.kind == CONST:
                if node.name not in consts:
                    raise GraphError(f"unbound constant {node.name!r}")
                values[node.index] = np.asarray(consts[node.name], dtype=np.float64)
            elif node.kind == LITERAL:
                values[node.index] = node.attrs["value"]
            else:
                fwd = _OPS[node.op][0]
                values[node.index] = fwd([values[i.index] for i in node.inputs], node.attrs)
        self._values = values
        self._output = output
        return values[output.index]

    def value(self, node: Node) -> np.ndarray:
        if self._values is None or node.index >= len(self._values) or self._values[node.index] is None:
            raise GraphError(f"{node!r} has not been evaluated")
        return self._values[node.index]

    def backward(self, output: Node | None = None, seed=None) -> dict[str, np.ndarray]:
        """Adjoint of ``output`` w.r.t. every parameter root (zeros if unused)."""
        if self._values is None:
            raise GraphError("backward called before forward")
        output = output or self._output
        if output.index > self._output.index:
            raise GraphError("output was not evaluated by the last forward pass")
        vals = self._values
        out_val = vals[output.index]
        adj: list = [None] * (output.index + 1)
        adj[output.index] = np.ones_like(out_val) if seed is None else np.asarray(seed, dtype=np.float64)
        for node in reversed(self._schedule(output)):
            g = adj[node.index]
            if g is None or node.kind != OP or not node.needs_grad:
                continue
            vjp = _OPS[node.op][1]
            in_vals = [vals[i.index] for i in node.inputs]
            grads = vjp(g, in_vals, vals[node.index], node.attrs)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.needs_grad:
                    continue
                gi = _unbroadcast(gi, np.shape(vals[inp.index]))
                if adj[inp.index] is None:
                    adj[inp.index] = gi
                else:
                    adj[inp.index] = adj[inp.index] + gi
        out = {}
        for name, node in self.params.items():
            if node.index <= output.index and adj[node.index] is not None:
                out[name] = np.array(adj[node.index], dtype=np.float64)
            elif vals[node.index] is not None:
                out[name] = np.zeros_like(vals[node.index])
        return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


_OPS: dict[str, tuple[Callable, Callable]] = {}


def _register(name, fwd, vjp):
    _OPS[name] = (fwd, vjp)

    def build(*args, **attrs):
        tape = next(a.tape for a in args if isinstance(a, Node))
        inputs = [tape._lift(a) for a in args]
        return tape._add(OP, name, inputs, attrs)

    build.__name__ = name
    return build


def _div_fwd(v, _):
    a, b = v
    if np.any(b == 0):
        raise NumericDomainError("divide", "zero denominator")
    return a / b


def _log_fwd(v, _):
    if np.any(v[0] <= 0):
        raise NumericDomainError("natural_log", "non-positive argument")
    return np.log(v[0])


def _log1p_fwd(v, _):
    if np.any(v[0] <= -1):
        raise NumericDomainError("log1p", "argument <= -1")
    return np.log1p(v[0])


def _sqrt_fwd(v, _):
    if np.any(v[0] < 0):
        raise NumericDomainError("sqrt", "negative argument")
    return np.sqrt(v[0])


def _sqrt_vjp(g, v, out, _):
    if np.any(out == 0):
        raise NumericDomainError("sqrt", "derivative undefined at 0")
    return [g / (2.0 * out)]


def _sigmoid_fwd(v, _):
    x = v[0]
    # branch form: never exponentiates a large positive number
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sum_fwd(v, attrs):
    return np.sum(v[0], axis=attrs["axis"], keepdims=attrs["keepdims"])


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def _sum_vjp(g, v, out, attrs):
    return [_expand_reduced(g, v[0].shape, attrs["axis"], attrs["keepdims"]).copy()]


def _mean_fwd(v, attrs):
    return np.mean(v[0], axis=attrs["axis"], keepdims=attrs["keepdims"])


def _mean_vjp(g, v, out, attrs):
    x = v[0]
    axis = attrs["axis"]
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return [_expand_reduced(g, x.shape, axis, attrs["keepdims"]) / count]


def _matmul_vjp(g, v, out, _):
    a, b = v
    if a.ndim == 1 and b.ndim == 1:
        return [g * b, g * a]
    if b.ndim == 1:
        return [g[..., :, None] * b, (np.swapaxes(a, -1, -2) @ g[..., :, None])[..., 0]]
    if a.ndim == 1:
        return [(g[..., None, :] @ np.swapaxes(b, -1, -2))[..., 0, :], a[:, None] * g[..., None, :]]
    return [g @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ g]


def _getitem_vjp(g, v, out, attrs):
    full = np.zeros_like(v[0])
    np.add.at(full, attrs["index"], g)
    return [full]


def _clip_vjp(g, v, out, attrs):
    x = v[0]
    return [g * ((x >= attrs["lo"]) & (x <= attrs["hi"]))]


add = _register("add", lambda v, _: v[0] + v[1], lambda g, v, o, _: [g, g])
sub = _register("subtract", lambda v, _: v[0] - v[1], lambda g, v, o, _: [g, -g])
mul = _register("multiply", lambda v, _: v[0] * v[1], lambda g, v, o, _: [g * v[1], g * v[0]])
div = _register("divide", _div_fwd, lambda g, v, o, _: [g / v[1], -g * o / v[1]])
neg = _register("negate", lambda v, _: -v[0], lambda g, v, o, _: [-g])
sin = _register("sin", lambda v, _: np.sin(v[0]), lambda g, v, o, _: [g * np.cos(v[0])])
cos = _register("cos", lambda v, _: np.cos(v[0]), lambda g, v, o, _: [-g * np.sin(v[0])])
exp = _register("exp", lambda v, _: np.exp(v[0]), lambda g, v, o, _: [g * o])
log = _register("natural_log", _log_fwd, lambda g, v, o, _: [g / v[0]])
log1p = _register("log1p", _log1p_fwd, lambda g, v, o, _: [g / (1.0 + v[0])])
sqrt = _register("sqrt", _sqrt_fwd, _sqrt_vjp)
square = _register("square", lambda v, _: v[0] * v[0], lambda g, v, o, _: [2.0 * g * v[0]])
# subgradient at exactly 0 is 0
relu = _register("relu", lambda v, _: np.maximum(v[0], 0.0), lambda g, v, o, _: [g * (v[0] > 0)])
sigmoid = _register("sigmoid", _sigmoid_fwd, lambda g, v, o, _: [g * o * (1.0 - o)])
_sum = _register("sum_reduce", _sum_fwd, _sum_vjp)
_mean = _register("mean_reduce", _mean_fwd, _mean_vjp)
matmul = _register("matmul", lambda v, _: v[0] @ v[1], _matmul_vjp)
_reshape = _register("reshape", lambda v, a: v[0].reshape(a["shape"]),
                     lambda g, v, o, a: [g.reshape(v[0].shape)])
_getitem = _register("getitem", lambda v, a: v[0][a["index"]], _getitem_vjp)
_clip = _register("clip", lambda v, a: np.clip(v[0], a["lo"], a["hi"]), _clip_vjp)
_expand = _register("expand_dims", lambda v, a: np.expand_dims(v[0], a["axis"]),
                    lambda g, v, o, a: [np.squeeze(g, axis=a["axis"])])


def sum_reduce(x: Node, axis=None, keepdims=False) -> Node:
    return _sum(x, axis=axis, keepdims=keepdims)


def mean_reduce(x: Node, axis=None, keepdims=False) -> Node:
    return _mean(x, axis=axis, keepdims=keepdims)


def dot(a: Node, b: Node) -> Node:
    """Inner product over the last axis."""
    return sum_reduce(mul(a, b), axis=-1)


def matvec(A: Node, x: Node) -> Node:
    """``A @ x`` with ``A`` shaped (..., m, n) and ``x`` shaped (..., n)."""
    return sum_reduce(mul(A, expand_dims(x, -2)), axis=-1)


def reshape(x: Node, shape) -> Node:
    return _reshape(x, shape=(shape,) if np.isscalar(shape) else tuple(shape))


def expand_dims(x: Node, axis: int) -> Node:
    return _expand(x, axis=axis)


def getitem(x: Node, index) -> Node:
    return _getitem(x, index=index)


def clip(x: Node, lo: float, hi: float) -> Node:
    return _clip(x, lo=lo, hi=hi)


def grad_check(tape: Tape, output: Node, params: dict, consts: dict | None = None,
               step: float = 1e-6) -> float:
    """Max relative error between backward() and central differences.

    The relative error per entry is ``|analytic - numeric| / max(|analytic|,
    |numeric|, 1e-12)``.  No thresholding is applied.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    consts = consts or {}
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape.forward(params, consts, output)
    analytic = tape.backward(output)
    worst = 0.0
    for name, x in params.items():
        flat = x.reshape(-1)
        ga = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(np.sum(tape.forward(params, consts, output)))
            flat[i] = orig - step
            fm = float(np.sum(tape.forward(params, consts, output)))
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), 1e-12)
            worst = max(worst, err)
    tape.forward(params, consts, output)
    return worst
