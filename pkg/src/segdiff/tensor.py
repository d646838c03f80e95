"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is a define-by-run tape: every op that touches a gradient-requiring
tensor records its parents and a backward closure on the result. ``backward``
on a scalar walks the tape once in reverse topological order. Saved
activations live in the closures; there is no graph optimization.
"""

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled():
    return _grad_enabled


class Tensor:
    """N-dimensional float64 array, optionally tracked on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # Operator sugar; scalars are promoted.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def backward(self):
        """Populate ``grad`` on every gradient-requiring tensor reachable from self.

        Only defined for scalar tensors (loss values).
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar tensor, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            gy = node.grad
            if gy is None:
                continue
            for parent, g in zip(node._parents, node._backward(gy)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g)
                else:
                    parent.grad += g


def _toposort(root):
    order = []
    seen = set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Build an op result, recording on the tape only when it matters."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda gy: (_unbroadcast(gy, a.shape), _unbroadcast(gy, b.shape)),
    )


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda gy: (_unbroadcast(gy, a.shape), _unbroadcast(-gy, b.shape)),
    )


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda gy: (_unbroadcast(gy * b.data, a.shape), _unbroadcast(gy * a.data, b.shape)),
    )


def mul_scalar(a, s):
    s = float(s)
    return _make(a.data * s, (a,), lambda gy: (gy * s,))


def pow_scalar(a, p):
    """Elementwise a**p for real p; inputs must stay in the domain of x**(p-1)."""
    p = float(p)
    return _make(a.data**p, (a,), lambda gy: (gy * p * a.data ** (p - 1.0),))


def matmul(a, b):
    """Batched matrix product with numpy broadcasting on leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(gy):
        ga = gy @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ gy
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda gy: (gy.reshape(a.shape),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _make(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda gy: (np.ascontiguousarray(gy.transpose(inv)),),
    )


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(gy):
        return tuple(np.ascontiguousarray(g) for g in np.split(gy, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def sum_all(a):
    return _make(np.array(a.data.sum()), (a,), lambda gy: (np.broadcast_to(gy, a.shape),))


def mean_all(a):
    n = a.size
    return _make(np.array(a.data.mean()), (a,), lambda gy: (np.broadcast_to(gy / n, a.shape),))


def sigmoid(a):
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _make(y, (a,), lambda gy: (gy * y * (1.0 - y),))


def silu(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    y = a.data * s
    return _make(y, (a,), lambda gy: (gy * (s + y * (1.0 - s)),))


def leaky_relu(a, slope=0.01):
    mask = a.data > 0
    scale = np.where(mask, 1.0, slope)
    return _make(a.data * scale, (a,), lambda gy: (gy * scale,))


def softmax_last(a):
    """Softmax over the last axis, numerically stabilized."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(gy):
        dot = (gy * y).sum(axis=-1, keepdims=True)
        return (y * (gy - dot),)

    return _make(y, (a,), backward)


def embedding_lookup(table, index):
    """Row lookup: table[T, D] indexed by an int or an int array."""
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx >= table.shape[0]):
        raise IndexError(f"embedding index out of range [0, {table.shape[0]})")

    def backward(gy):
        g = np.zeros_like(table.data)
        np.add.at(g, idx, gy)
        return (g,)

    return _make(table.data[idx], (table,), backward)


def mse_loss(a, b):
    """Mean of squared differences over all elements."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mse_loss shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size

    def backward(gy):
        g = gy * 2.0 * diff / n
        return g, -g

    return _make(np.array((diff * diff).mean()), (a, b), backward)
