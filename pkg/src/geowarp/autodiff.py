"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records array operations as they execute. Nodes are appended
in creation order, which is a topological order of the computation DAG, so
the backward sweep is a single pass over ``reversed(tape.nodes)`` visiting
each node exactly once. Values are float64 throughout.

The primitive set (add, mul, matmul, relu, exp, log, sqrt, square, sum,
mean, row gather, concat) is intentionally small: it is exactly what the
networks and losses in this package need. Broadcasting follows numpy rules
for the shapes that actually occur (bias rows, per-row gates, scalars);
gradients are summed back down to the parent shape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, ShapeError

Array = np.ndarray


def _as_value(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` over axes that numpy broadcasting expanded from `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("tape", "value", "parents", "vjps", "forward_fn", "grad", "needs_grad")

    def __init__(
        self,
        tape: "Tape",
        value: Array,
        parents: tuple["Node", ...] = (),
        vjps: tuple[Callable[[Array], Array], ...] = (),
        forward_fn: Callable[..., Array] | None = None,
        needs_grad: bool = False,
    ):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.vjps = vjps
        self.forward_fn = forward_fn
        self.grad: Array | None = None
        self.needs_grad = needs_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # Operator sugar; the other operand may be a plain array or scalar.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered operation record supporting replay and reverse sweeps."""

    def __init__(self):
        self.nodes: list[Node] = []

    def leaf(self, value, needs_grad: bool = True) -> Node:
        node = Node(self, _as_value(value), needs_grad=needs_grad)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self.leaf(value, needs_grad=False)

    def record(self, value, parents, vjps, forward_fn) -> Node:
        node = Node(
            self,
            _as_value(value),
            parents=tuple(parents),
            vjps=tuple(vjps),
            forward_fn=forward_fn,
            needs_grad=any(p.needs_grad for p in parents),
        )
        self.nodes.append(node)
        return node

    def replay_max_error(self) -> float:
        """Recompute every interior node from its parents; return the max
        absolute deviation from the recorded values (0.0 for an exact replay).
        """
        worst = 0.0
        for node in self.nodes:
            if node.forward_fn is None:
                continue
            redone = node.forward_fn(*(p.value for p in node.parents))
            worst = max(worst, float(np.max(np.abs(redone - node.value), initial=0.0)))
        return worst

    def backward(self, root: Node, seed: Array | None = None) -> None:
        """Reverse sweep accumulating gradients into ``node.grad``.

        ``root`` must be scalar unless ``seed`` supplies the output adjoint.
        Grads from any previous sweep on this tape are cleared first.
        """
        if seed is None:
            if root.value.shape != ():
                raise ContractError(
                    f"backward root must be scalar, got shape {root.value.shape}"
                )
            seed = np.ones(())
        else:
            seed = _as_value(seed)
            if seed.shape != root.value.shape:
                raise ShapeError(
                    f"seed shape {seed.shape} != root shape {root.value.shape}"
                )
        for node in self.nodes:
            node.grad = None
        root.grad = seed
        for node in reversed(self.nodes):
            if node.grad is None or not node.parents:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                if not parent.needs_grad:
                    continue
                g = vjp(node.grad)
                parent.grad = g if parent.grad is None else parent.grad + g


def _binary_operands(a, b) -> tuple[Tape, Node, Node]:
    if isinstance(a, Node):
        tape = a.tape
    elif isinstance(b, Node):
        tape = b.tape
    else:
        raise ContractError("at least one operand must be a Node")
    a = a if isinstance(a, Node) else tape.constant(a)
    b = b if isinstance(b, Node) else tape.constant(b)
    return tape, a, b


def add(a, b) -> Node:
    tape, a, b = _binary_operands(a, b)
    return tape.record(
        a.value + b.value,
        (a, b),
        (
            lambda g, sa=a.value.shape: _unbroadcast(g, sa),
            lambda g, sb=b.value.shape: _unbroadcast(g, sb),
        ),
        lambda x, y: x + y,
    )


def sub(a, b) -> Node:
    tape, a, b = _binary_operands(a, b)
    return tape.record(
        a.value - b.value,
        (a, b),
        (
            lambda g, sa=a.value.shape: _unbroadcast(g, sa),
            lambda g, sb=b.value.shape: -_unbroadcast(g, sb),
        ),
        lambda x, y: x - y,
    )


def neg(a: Node) -> Node:
    return a.tape.record(-a.value, (a,), (lambda g: -g,), lambda x: -x)


def mul(a, b) -> Node:
    tape, a, b = _binary_operands(a, b)
    return tape.record(
        a.value * b.value,
        (a, b),
        (
            lambda g, bv=b.value, sa=a.value.shape: _unbroadcast(g * bv, sa),
            lambda g, av=a.value, sb=b.value.shape: _unbroadcast(g * av, sb),
        ),
        lambda x, y: x * y,
    )


def div(a, b) -> Node:
    tape, a, b = _binary_operands(a, b)
    return tape.record(
        a.value / b.value,
        (a, b),
        (
            lambda g, bv=b.value, sa=a.value.shape: _unbroadcast(g / bv, sa),
            lambda g, av=a.value, bv=b.value, sb=b.value.shape: _unbroadcast(
                -g * av / (bv * bv), sb
            ),
        ),
        lambda x, y: x / y,
    )


def matmul(a, b) -> Node:
    tape, a, b = _binary_operands(a, b)
    av, bv = a.value, b.value
    if av.ndim == 2 and bv.ndim == 2:
        vjps = (
            lambda g, bv=bv: g @ bv.T,
            lambda g, av=av: av.T @ g,
        )
    elif av.ndim == 1 and bv.ndim == 2:
        vjps = (
            lambda g, bv=bv: bv @ g,
            lambda g, av=av: np.outer(av, g),
        )
    elif av.ndim == 2 and bv.ndim == 1:
        vjps = (
            lambda g, bv=bv: np.outer(g, bv),
            lambda g, av=av: av.T @ g,
        )
    else:
        raise ShapeError(f"matmul supports 1-D/2-D operands, got {av.ndim}-D @ {bv.ndim}-D")
    return tape.record(av @ bv, (a, b), vjps, lambda x, y: x @ y)


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.tape.record(
        np.where(mask, a.value, 0.0),
        (a,),
        (lambda g, m=mask: g * m,),
        lambda x: np.where(x > 0, x, 0.0),
    )


def exp(a: Node) -> Node:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), (lambda g, o=out: g * o,), np.exp)


def log(a: Node) -> Node:
    return a.tape.record(np.log(a.value), (a,), (lambda g, x=a.value: g / x,), np.log)


def sqrt(a: Node) -> Node:
    out = np.sqrt(a.value)
    return a.tape.record(out, (a,), (lambda g, o=out: g * (0.5 / o),), np.sqrt)


def square(a: Node) -> Node:
    return a.tape.record(
        a.value * a.value,
        (a,),
        (lambda g, x=a.value: g * (2.0 * x),),
        lambda x: x * x,
    )


def _expand_reduced(g: Array, in_shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if axis is None:
        return np.broadcast_to(g, in_shape).copy()
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, in_shape).copy()


def sum_(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    shape = a.value.shape
    return a.tape.record(
        a.value.sum(axis=axis, keepdims=keepdims),
        (a,),
        (lambda g: _expand_reduced(g, shape, axis, keepdims),),
        lambda x: x.sum(axis=axis, keepdims=keepdims),
    )


def mean(a: Node, axis: int | None = None, keepdims: bool = False) -> Node:
    shape = a.value.shape
    count = a.value.size if axis is None else shape[axis]
    return a.tape.record(
        a.value.mean(axis=axis, keepdims=keepdims),
        (a,),
        (lambda g: _expand_reduced(g, shape, axis, keepdims) / count,),
        lambda x: x.mean(axis=axis, keepdims=keepdims),
    )


def take_rows(a: Node, idx) -> Node:
    """Gather rows ``a[idx]``; the backward pass scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.value.shape

    def vjp(g, idx=idx, shape=shape):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return a.tape.record(a.value[idx], (a,), (vjp,), lambda x: x[idx])


def concat(parts: Sequence[Node], axis: int = -1) -> Node:
    tape = next(p.tape for p in parts if isinstance(p, Node))
    parts = [p if isinstance(p, Node) else tape.constant(p) for p in parts]
    values = [p.value for p in parts]
    ndim = values[0].ndim
    ax = axis if axis >= 0 else ndim + axis
    sizes = [v.shape[ax] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(k: int):
        def vjp(g):
            sl = [slice(None)] * ndim
            sl[ax] = slice(offsets[k], offsets[k + 1])
            return g[tuple(sl)]

        return vjp

    return tape.record(
        np.concatenate(values, axis=ax),
        tuple(parts),
        tuple(make_vjp(k) for k in range(len(parts))),
        lambda *xs: np.concatenate(xs, axis=ax),
    )


def gradient(scalar_fn: Callable, params: Sequence[Array]) -> list[Array]:
    """Exact reverse-mode gradients of ``scalar_fn`` w.r.t. ``params``.

    ``scalar_fn`` receives one leaf Node per parameter and must return a
    scalar Node built from tape primitives.
    """
    tape = Tape()
    leaves = [tape.leaf(p) for p in params]
    out = scalar_fn(*leaves)
    if not isinstance(out, Node) or out.value.shape != ():
        raise ContractError("scalar_fn must return a scalar Node")
    tape.backward(out)
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        for leaf in leaves
    ]


def jacobian(vector_fn: Callable, x: Array) -> Array:
    """Jacobian matrix of a vector-valued taped function at ``x``.

    Row ``i`` is the gradient of output component ``i``; computed with one
    reverse sweep per output on a single recorded tape.
    """
    x = _as_value(x)
    if x.ndim != 1:
        raise ShapeError(f"jacobian input must be 1-D, got shape {x.shape}")
    tape = Tape()
    leaf = tape.leaf(x)
    out = vector_fn(leaf)
    if not isinstance(out, Node) or out.value.ndim != 1:
        raise ContractError("vector_fn must return a 1-D Node")
    m = out.value.shape[0]
    jac = np.empty((m, x.shape[0]))
    seed = np.zeros(m)
    for i in range(m):
        seed[:] = 0.0
        seed[i] = 1.0
        tape.backward(out, seed=seed)
        jac[i] = leaf.grad if leaf.grad is not None else 0.0
    return jac
