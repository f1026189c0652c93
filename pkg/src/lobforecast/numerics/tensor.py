"""Dense float64 tensors with a dynamic reverse-mode graph.

Each operation on tensors that require gradients records a node holding its
parents and a closure mapping the output gradient to parent gradients.
``backward`` walks the recorded nodes once in reverse topological order,
accumulates ``grad`` on leaves and then frees the graph.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from .. import kernels
from ..errors import DoubleBackward, IndexOutOfRange, NonScalarLoss, ShapeMismatch

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _frozen(values):
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "node_id",
                 "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, np.ndarray) and data.dtype == np.float64 and not data.flags.writeable:
            self.data = data
        else:
            self.data = _frozen(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = "leaf"
        self.node_id = next(_ids)
        self._parents = ()
        self._backward = None
        self._consumed = False

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def assign(self, values):
        """Replace a leaf's values (used by optimizers between steps)."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.data.shape:
            raise ShapeMismatch(f"assign shape {values.shape} != {self.data.shape}")
        self.data = _frozen(values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, backward_fn, op):
    # op outputs are fresh arrays or views; freezing them in place is safe
    data = np.asarray(data, dtype=np.float64)
    data.setflags(write=False)
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{opname}: cannot broadcast {a.shape} with {b.shape}") from exc


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _record(out, (a, b), bw, "div")


def scale(a, c):
    c = float(c)

    def bw(g):
        return (g * c,)

    return _record(a.data * c, (a,), bw, "scale")


def relu(x):
    """Elementwise max(0, x); the subgradient at exactly 0 is 0."""
    mask = x.data > 0.0

    def bw(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def sin(x):
    def bw(g):
        return (g * np.cos(x.data),)

    return _record(np.sin(x.data), (x,), bw, "sin")


# --------------------------------------------------------------------------
# reductions and shape ops
# --------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise ShapeMismatch(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def sum_(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _record(out, (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape),)

    return _record(out, (x,), bw, "mean")


def reshape(x, shape):
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}") from exc

    def bw(g):
        return (g.reshape(x.shape),)

    return _record(out, (x,), bw, "reshape")


def transpose(x, axes=None):
    """Permute axes; with ``axes=None`` swap the last two."""
    if axes is None:
        if x.ndim < 2:
            raise ShapeMismatch("transpose needs rank >= 2")
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeMismatch(f"bad permutation {axes} for rank {x.ndim}")
    inv = np.argsort([a % x.ndim for a in axes])

    def bw(g):
        return (g.transpose(inv),)

    return _record(x.data.transpose(axes), (x,), bw, "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {exc}") from exc
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def bw(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
            for i in range(len(tensors))
        )

    return _record(out, tensors, bw, "concat")


def take(x, indices, axis=0):
    """Gather slices of ``x`` along ``axis``; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % x.ndim
    n = x.shape[ax]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise IndexOutOfRange(f"index out of range for axis of length {n}")
    idx = np.where(idx < 0, idx + n, idx)
    out = np.take(x.data, idx, axis=ax)

    def bw(g):
        if idx.ndim == 1:
            moved = np.moveaxis(g, ax, 0)
            acc = kernels.scatter_add_rows(n, idx, moved)
            return (np.moveaxis(acc, 0, ax),)
        flat_idx = idx.reshape(-1)
        gm = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
        gm = gm.reshape((flat_idx.size,) + gm.shape[idx.ndim:])
        acc = kernels.scatter_add_rows(n, flat_idx, gm)
        return (np.moveaxis(acc, 0, ax),)

    return _record(out, (x,), bw, "take")


def gather_rows(table, indices):
    """Embedding lookup: rows of a 2-D table."""
    if table.ndim != 2:
        raise ShapeMismatch("gather_rows expects a 2-D table")
    return take(table, indices, axis=0)


# --------------------------------------------------------------------------
# linear algebra and fused ops
# --------------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeMismatch(f"matmul batch extents differ: {a.shape} x {b.shape}") from exc

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight matrix: fold the batch axes into one product
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(a.data @ b.data, (a, b), bw, "matmul")


def softmax(x, axis=-1):
    ax = axis % x.ndim
    if ax == x.ndim - 1:
        y = kernels.softmax_rows(x.data)
    else:
        y = np.moveaxis(kernels.softmax_rows(np.moveaxis(x.data, ax, -1)), -1, ax)

    def bw(g):
        if ax == x.ndim - 1:
            return (kernels.softmax_rows_grad(y, g),)
        gm = kernels.softmax_rows_grad(np.moveaxis(y, ax, -1), np.moveaxis(g, ax, -1))
        return (np.moveaxis(gm, -1, ax),)

    return _record(y, (x,), bw, "softmax")


def layer_norm(x, gain, offset, eps=1e-5):
    """Normalize over the trailing axis, then apply ``gain`` and ``offset``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data
    def bw(g):
        gx_hat = g * gain.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape)
        goff = _unbroadcast(g, offset.shape)
        return gx, ggain, goff

    return _record(out, (x, gain, offset), bw, "layer_norm")


def cumprod(x, axis=-1):
    """Cumulative product along ``axis``.

    The backward pass avoids dividing by factors, so zero factors are fine:
    with prefix products P and output gradient g, the gradient of factor j
    is P[j-1] * R[j] where R[j] = g[j] + f[j+1] * R[j+1].
    """
    ax = axis % x.ndim
    f = np.moveaxis(x.data, ax, 0)
    out = np.cumprod(f, axis=0)

    def bw(g):
        gm = np.moveaxis(g, ax, 0)
        n = f.shape[0]
        r = np.empty_like(gm)
        r[n - 1] = gm[n - 1]
        for j in range(n - 2, -1, -1):
            r[j] = gm[j] + f[j + 1] * r[j + 1]
        grad = np.empty_like(gm)
        grad[0] = r[0]
        if n > 1:
            grad[1:] = out[:-1] * r[1:]
        return (np.moveaxis(grad, 0, ax),)

    return _record(np.moveaxis(out, 0, ax), (x,), bw, "cumprod")


# --------------------------------------------------------------------------
# graph traversal
# --------------------------------------------------------------------------

class Graph:
    """Recorded operations reachable from one output, in topological order.

    ``nodes`` holds ``(op, input_ids, output_id)`` triples; every node's
    inputs appear before it.
    """

    def __init__(self, output):
        self.tensors = _topo_order(output)
        self.nodes = [
            (t.op, tuple(p.node_id for p in t._parents), t.node_id)
            for t in self.tensors if not t.is_leaf
        ]

    def __len__(self):
        return len(self.nodes)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``grad`` on every leaf that requires it, then free the graph."""
    if loss._consumed:
        raise DoubleBackward("backward already ran on this graph")
    if loss.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        loss._consumed = True
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = np.array(g, dtype=np.float64) if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
    for node in order:
        if not node.is_leaf:
            node._parents = ()
            node._backward = None
            node.requires_grad = False
    loss._consumed = True


# --------------------------------------------------------------------------
# verification oracle
# --------------------------------------------------------------------------

def grad_check(f, x, eps=1e-6):
    """Largest relative error between backward and central differences.

    ``f`` maps the tensor(s) in ``x`` to a scalar Tensor. The relative
    error of each component is |a - n| / max(1e-8, |a| + |n|).
    """
    params = [x] if isinstance(x, Tensor) else list(x)
    for p in params:
        p.grad = None
    loss = f(x)
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    with no_grad():
        for p, a in zip(params, analytic):
            base = p.data.copy()
            flat = base.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                p.assign(base)
                fp = f(x).item()
                flat[i] = orig - eps
                p.assign(base)
                fm = f(x).item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                ana = a.reshape(-1)[i]
                err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
                worst = max(worst, err)
            p.assign(base)
    for p in params:
        p.grad = None
    return worst
