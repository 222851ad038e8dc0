"""Minimal reverse-mode autodiff over float64 numpy arrays.

A dynamic tape: every op builds a Tensor node holding its value, its parent
nodes and a closure that routes an upstream gradient to the parents. The op
set is deliberately small (affine maps, relu, concatenation, a few reduction
ops) because that is all the model compositions here need. Everything is
double precision and the graph walk is deterministic, so repeated runs with
the same seeds reproduce results bit for bit.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "constant",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalars",
    "matmul",
    "affine",
    "relu",
    "block_affine",
    "concat_cols",
    "col_slice",
    "mse_rows",
    "mse_flat",
    "quad_rows",
]


class Tensor:
    """One node in the tape. `value` is a float64 ndarray, `grad` accumulates
    the gradient of whatever scalar `backward` was called on."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, value, requires_grad=False, parents=(), grad_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; keeps loss-assembly code readable.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf."""

    __slots__ = ("name",)

    def __init__(self, value, name=""):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def constant(value):
    return Tensor(value, requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def _accumulate(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


def _unbroadcast(g, shape):
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(value, parents, grad_fn):
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, parents=parents if req else (),
                  grad_fn=grad_fn if req else None)


def backward(root, seed=None):
    """Accumulate d(root)/d(node) into node.grad for every node that
    requires grad. `seed` defaults to ones, so a scalar root gets 1.0;
    passing an explicit seed lets a non-scalar root act as a boundary
    (split-learning style second-stage backprop)."""
    if seed is None:
        seed = np.ones_like(root.value)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != root.value.shape:
            raise ValueError(
                f"seed shape {seed.shape} does not match root {root.value.shape}")

    # Iterative post-order topological sort; recursion would overflow on
    # long rollout chains.
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    _accumulate(root, seed)
    for node in reversed(topo):
        if node._grad_fn is not None and node.grad is not None:
            node._grad_fn(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value + b.value

    def grad_fn(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, _unbroadcast(g, b.value.shape))

    return _node(out_val, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value - b.value

    def grad_fn(g):
        _accumulate(a, _unbroadcast(g, a.value.shape))
        _accumulate(b, -_unbroadcast(g, b.value.shape))

    return _node(out_val, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_val = a.value * b.value

    def grad_fn(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return _node(out_val, (a, b), grad_fn)


def scale(a, s):
    a = _as_tensor(a)
    s = float(s)

    def grad_fn(g):
        _accumulate(a, g * s)

    return _node(a.value * s, (a,), grad_fn)


def add_scalars(terms):
    """Sum of scalar tensors. Used to combine weighted loss terms."""
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out_val = a.value @ b.value

    def grad_fn(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return _node(out_val, (a, b), grad_fn)


def affine(x, w, b):
    """x @ w.T + b for x (n, d_in), w (d_out, d_in), b (d_out,)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    out_val = x.value @ w.value.T + b.value

    def grad_fn(g):
        _accumulate(x, g @ w.value)
        _accumulate(w, g.T @ x.value)
        _accumulate(b, g.sum(axis=0))

    return _node(out_val, (x, w, b), grad_fn)


def relu(x):
    x = _as_tensor(x)
    mask = x.value > 0.0
    out_val = np.where(mask, x.value, 0.0)

    def grad_fn(g):
        _accumulate(x, g * mask)

    return _node(out_val, (x,), grad_fn)


def block_affine(a, b, k, split):
    """a @ K1.T + b @ K2.T where k = [K1 | K2] is column-split at `split`.

    This is the linear evolution step of the latent models: one matrix
    parameter k of shape (d_out, split + q) acting on a (n, split) and
    b (n, q) jointly."""
    a, b, k = _as_tensor(a), _as_tensor(b), _as_tensor(k)
    k1 = k.value[:, :split]
    k2 = k.value[:, split:]
    out_val = a.value @ k1.T + b.value @ k2.T

    def grad_fn(g):
        _accumulate(a, g @ k1)
        _accumulate(b, g @ k2)
        _accumulate(k, np.concatenate([g.T @ a.value, g.T @ b.value], axis=1))

    return _node(out_val, (a, b, k), grad_fn)


def concat_cols(parts):
    """Concatenate (n, k_i) tensors along axis 1."""
    parts = [_as_tensor(p) for p in parts]
    out_val = np.concatenate([p.value for p in parts], axis=1)
    widths = [p.value.shape[1] for p in parts]

    def grad_fn(g):
        off = 0
        for p, k in zip(parts, widths):
            _accumulate(p, g[:, off:off + k])
            off += k

    return _node(out_val, tuple(parts), grad_fn)


def col_slice(x, start, stop):
    x = _as_tensor(x)
    out_val = x.value[:, start:stop]

    def grad_fn(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        _accumulate(x, full)

    return _node(out_val, (x,), grad_fn)


# ---------------------------------------------------------------------------
# reductions used by the losses
# ---------------------------------------------------------------------------

def mse_rows(a, b):
    """Mean over rows of the squared euclidean row difference:
    (1/n) sum_i ||a_i - b_i||^2. Returns a scalar tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    diff = a.value - b.value
    n = diff.shape[0]
    out_val = np.array((diff * diff).sum() / n)

    def grad_fn(g):
        c = 2.0 * float(g) / n
        _accumulate(a, c * diff)
        _accumulate(b, -c * diff)

    return _node(out_val, (a, b), grad_fn)


def mse_flat(a, b):
    """Mean squared difference of two (n,) vectors."""
    a, b = _as_tensor(a), _as_tensor(b)
    diff = a.value - b.value
    n = diff.shape[0]
    out_val = np.array((diff * diff).sum() / n)

    def grad_fn(g):
        c = 2.0 * float(g) / n
        _accumulate(a, c * diff)
        _accumulate(b, -c * diff)

    return _node(out_val, (a, b), grad_fn)


def quad_rows(x, q):
    """Row-wise quadratic form x_i^T q x_i for x (n, d), q (d, d) -> (n,)."""
    x, q = _as_tensor(x), _as_tensor(q)
    xq = x.value @ q.value
    out_val = (xq * x.value).sum(axis=1)

    def grad_fn(g):
        gcol = g[:, None]
        _accumulate(x, gcol * (x.value @ (q.value + q.value.T)))
        _accumulate(q, x.value.T @ (x.value * gcol))

    return _node(out_val, (x, q), grad_fn)
