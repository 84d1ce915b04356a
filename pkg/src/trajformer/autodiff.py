"""Dense float64 tensors with reverse-mode differentiation.

Just enough machinery for an encoder/decoder transformer: matrix product,
elementwise arithmetic, softmax, layer normalization, affine maps, slicing
and concatenation. Every operation records its inputs on the output tensor,
so the computation graph is the web of parent references; ``backward`` walks
it once in reverse topological order and returns the gradient of a scalar
seed with respect to every recorded node.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop.

    Tensors are treated as immutable values once built. Leaf tensors
    (parameters, constants) have no parents; op results carry a ``_vjp``
    closure mapping the output gradient to per-parent gradients.
    """

    __slots__ = ("data", "parents", "op", "_vjp")

    def __init__(self, data, parents=(), op="leaf", vjp=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.parents = tuple(parents)
        self.op = op
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    def item(self):
        return float(self.data)

    # operator sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _broadcast_ok(a_shape, b_shape):
    # only row-wise bias broadcast is supported: (n, d) op (d,)
    return len(a_shape) == 2 and len(b_shape) == 1 and a_shape[1] == b_shape[0]


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        vjp = lambda g: (g, g)
    elif _broadcast_ok(a.shape, b.shape):
        vjp = lambda g: (g, g.sum(axis=0))
    else:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return Tensor(a.data + b.data, (a, b), "add", vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        vjp = lambda g: (g, -g)
    elif _broadcast_ok(a.shape, b.shape):
        vjp = lambda g: (g, -g.sum(axis=0))
    else:
        raise ValueError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return Tensor(a.data - b.data, (a, b), "sub", vjp)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    vjp = lambda g: (g * b.data, g * a.data)
    return Tensor(a.data * b.data, (a, b), "mul", vjp)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return Tensor(a.data * s, (a,), "scale", lambda g: (g * s,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    vjp = lambda g: (g @ b.data.T, a.data.T @ g)
    return Tensor(a.data @ b.data, (a, b), "matmul", vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.T, (a,), "transpose", lambda g: (g.T,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor(a.data * mask, (a,), "relu", lambda g: (g * mask,))


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction for stability.

    Entries of -inf are allowed (masked-out attention scores) and produce
    exact zeros; a slice that is entirely -inf is the caller's error.
    """
    a = as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {a.shape}")
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor(y, (a,), "softmax", vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} "
            f"do not match last axis of {x.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        dgain = (g * xhat).reshape(-1, d).sum(axis=0)
        dbias = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return Tensor(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", vjp)


def affine(x, w, b) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine: incompatible shapes {x.shape} and {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine: bias shape {b.shape} does not match {w.shape}")
    vjp = lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0))
    return Tensor(x.data @ w.data + b.data, (x, w, b), "affine", vjp)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise ValueError(f"slice_cols: bad range [{start}:{stop}] for shape {a.shape}")

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return Tensor(a.data[:, start:stop].copy(), (a,), "slice_cols", vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat: need at least one tensor")
    if axis not in (0, 1):
        raise ValueError(f"concat: axis must be 0 or 1, got {axis}")
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), "concat", vjp)


def tsum(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data.sum(), (a,), "sum", lambda g: (np.full_like(a.data, float(g)),))


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return Tensor(a.data.mean(), (a,), "mean", lambda g: (np.full_like(a.data, float(g) / n),))


def dropout(a, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return Tensor(a.data * keep, (a,), "dropout", lambda g: (g * keep,))


def _topo_order(seed: Tensor):
    """Iterative post-order DFS; recursion would overflow on long decode tapes."""
    order = []
    visited = set()
    stack = [(seed, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(seed: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradient of a scalar ``seed`` w.r.t. every node in its graph.

    Returns a mapping from each recorded tensor (keyed by identity) to
    d(seed)/d(tensor) with the tensor's shape.
    """
    if seed.data.size != 1:
        raise ValueError(f"backward: seed must be scalar, got shape {seed.shape}")
    grads: dict[Tensor, np.ndarray] = {seed: np.ones_like(seed.data)}
    for node in reversed(_topo_order(seed)):
        g = grads.get(node)
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node.parents, node._vjp(g)):
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
    return grads
