"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only the operations the network needs are provided. Every op accepts plain
arrays as well as :class:`Var`; when no input requires a gradient the op
returns a plain ``ndarray`` and records nothing, so the same forward code
serves training and inference.
"""

import numpy as np

from . import kernels


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self._name!r}" if self._name else ""
        return f"Var{label}(shape={self.value.shape})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return mul(self, reciprocal(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tracked(*xs):
    return any(isinstance(x, Var) and x.requires_grad for x in xs)


def _node(out_value, parents):
    """``parents`` is a sequence of ``(input, vjp)``; untracked inputs are skipped."""
    v = Var(out_value, requires_grad=True)
    v._parents = tuple((p, fn) for p, fn in parents if isinstance(p, Var) and p.requires_grad)
    return v


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    if not _tracked(a, b):
        return out
    return _node(out, [(a, lambda g: _unbroadcast(g, av.shape)), (b, lambda g: _unbroadcast(g, bv.shape))])


def neg(a):
    av = value(a)
    if not _tracked(a):
        return -av
    return _node(-av, [(a, lambda g: -g)])


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    if not _tracked(a, b):
        return out
    return _node(
        out,
        [(a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape))],
    )


def reciprocal(a):
    av = value(a)
    out = 1.0 / av
    if not _tracked(a):
        return out
    return _node(out, [(a, lambda g: -g * out * out)])


def square(a):
    av = value(a)
    if not _tracked(a):
        return av * av
    return _node(av * av, [(a, lambda g: 2.0 * g * av)])


def sqrt(a):
    av = value(a)
    out = np.sqrt(av)
    if not _tracked(a):
        return out
    return _node(out, [(a, lambda g: 0.5 * g / out)])


def silu(a):
    av = value(a)
    sig = 1.0 / (1.0 + np.exp(-av))
    out = av * sig
    if not _tracked(a):
        return out
    return _node(out, [(a, lambda g: g * (sig * (1.0 + av * (1.0 - sig))))])


# ---------------------------------------------------------------------------
# Shape and reductions
# ---------------------------------------------------------------------------


def reshape(a, shape):
    av = value(a)
    out = av.reshape(shape)
    if not _tracked(a):
        return out
    return _node(out, [(a, lambda g: g.reshape(av.shape))])


def getitem(a, idx):
    av = value(a)
    out = av[idx]
    if not _tracked(a):
        return out

    def vjp(g):
        full = np.zeros_like(av)
        np.add.at(full, idx, g)
        return full

    return _node(out, [(a, vjp)])


def sum_(a, axis=None, keepdims=False):
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    if not _tracked(a):
        return out

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, [(a, vjp)])


def mean(a, axis=None, keepdims=False):
    n = value(a).size if axis is None else np.prod([value(a).shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def concat(xs, axis=-1):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if not _tracked(*xs):
        return out
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents = []
    for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
        parents.append((x, lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis)))
    return _node(out, parents)


# ---------------------------------------------------------------------------
# Linear algebra and indexing
# ---------------------------------------------------------------------------


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if not _tracked(a, b):
        return out

    def vjp_a(g):
        if bv.ndim == 1:
            return _unbroadcast(np.multiply.outer(g, bv), av.shape)
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def vjp_b(g):
        if bv.ndim == 1:
            return np.tensordot(g, av, axes=(tuple(range(g.ndim)), tuple(range(av.ndim - 1))))
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _node(out, [(a, vjp_a), (b, vjp_b)])


def einsum(subscripts, *operands):
    """Explicit-output einsum. Every input index must also appear in the output
    or in another operand (no implicit reduction of a lone index)."""
    ins, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = ins.split(",")
    vals = [value(x) for x in operands]
    out = np.einsum(subscripts, *vals, optimize=True)
    if not _tracked(*operands):
        return out
    parents = []
    for k, x in enumerate(operands):
        if not (isinstance(x, Var) and x.requires_grad):
            continue
        others = [s for n, s in enumerate(in_subs) if n != k]
        other_vals = [v for n, v in enumerate(vals) if n != k]
        avail = set(out_sub).union(*others) if others else set(out_sub)
        if not set(in_subs[k]) <= avail:
            raise ValueError(f"einsum operand {k} has an index summed only within itself")
        spec = ",".join([out_sub] + others) + "->" + in_subs[k]
        parents.append((x, lambda g, spec=spec, ov=other_vals: np.einsum(spec, g, *ov, optimize=True)))
    return _node(out, parents)


def take(a, index):
    """Rows of ``a`` selected by integer ``index`` (axis 0)."""
    av = value(a)
    index = np.asarray(index, dtype=np.int64)
    out = av[index]
    if not _tracked(a):
        return out
    return _node(out, [(a, lambda g: kernels.scatter_add(g, index, av.shape[0]))])


def scatter_add(a, index, n):
    """Sum rows of ``a`` into ``n`` buckets (adjoint of :func:`take`)."""
    av = value(a)
    index = np.asarray(index, dtype=np.int64)
    out = kernels.scatter_add(av, index, n)
    if not _tracked(a):
        return out
    return _node(out, [(a, lambda g: g[index])])


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(root, seed=None):
    """Accumulate ``d root / d leaf`` into ``leaf.grad`` for every tracked leaf."""
    if not isinstance(root, Var) or not root.requires_grad:
        raise ValueError("root does not depend on any tracked variable")
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, _ in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, vjp in node._parents:
            contrib = vjp(g)
            prev = grads.get(id(p))
            grads[id(p)] = contrib if prev is None else prev + contrib
