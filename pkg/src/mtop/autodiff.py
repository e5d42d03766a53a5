"""Reverse-mode automatic differentiation over dense numpy tensors.

Graphs are built define-by-run: every operation eagerly computes its value
and records a backward closure, so each training batch gets a fresh DAG.
Values are float32 by default; `grad_check` promotes to float64 internally
because a central difference with step 1e-4 drowns in float32 rounding noise.
"""

from __future__ import annotations

import math
import threading

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that builds ops without graph links (inference mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


_LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(ValueError):
    """The graph violates a structural precondition (e.g. non-scalar root)."""


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff.

    `data` is a numpy array, `grad` is filled in by `backward`, `op` names
    the operation that produced this node ("leaf" for inputs/parameters).
    Results require gradients iff any parent does; backward closures skip
    parents that do not, so frozen subtrees cost nothing.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=DEFAULT_DTYPE):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, parents, op, backward):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = _grad_enabled() and any(p.requires_grad for p in parents)
        out.op = op
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def backward(self):
        backward(self)


def _accumulate(t, g):
    # never mutate in place: stored grads may alias arrays owned elsewhere
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Reduce gradient `g` back down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _as_const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def add(a, b):
    b = _as_const(b, a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.data.shape))

    return Tensor._from_op(data, (a, b), "add", backward_fn)


def mul(a, b):
    b = _as_const(b, a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply: cannot broadcast shapes {a.shape} and {b.shape}") from None

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(data, (a, b), "multiply", backward_fn)


def matmul(a, b):
    if a.data.ndim < 1 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.data.shape))

    return Tensor._from_op(data, (a, b), "matmul", backward_fn)


def linear(x, w, b):
    """x @ w + b with a fused backward; w is (k, n), b is (n,)."""
    k = x.data.shape[-1]
    if w.data.shape[0] != k or b.data.shape != (w.data.shape[1],):
        raise ShapeError(
            f"linear: input {x.shape} incompatible with kernel {w.shape}, bias {b.shape}"
        )
    data = x.data @ w.data + b.data

    def backward_fn(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data.T)
        g2 = g.reshape(-1, g.shape[-1])
        if w.requires_grad:
            _accumulate(w, x.data.reshape(-1, k).T @ g2)
        if b.requires_grad:
            _accumulate(b, g2.sum(axis=0))

    return Tensor._from_op(data, (x, w, b), "linear", backward_fn)


def tanh(x):
    data = np.tanh(x.data)

    def backward_fn(g):
        _accumulate(x, g * (1.0 - data * data))

    return Tensor._from_op(data, (x,), "tanh", backward_fn)


def gelu(x):
    """Gaussian error linear unit (tanh approximation)."""
    v = x.data
    v2 = v * v
    inner = v2 * _GELU_A
    inner += 1.0
    inner *= v
    inner *= _GELU_C
    t = np.tanh(inner)
    half_1pt = 0.5 * (1.0 + t)
    data = v * half_1pt

    def backward_fn(g):
        d_inner = v2 * (3.0 * _GELU_A)
        d_inner += 1.0
        d_inner *= _GELU_C
        local = 1.0 - t * t
        local *= 0.5 * v
        local *= d_inner
        local += half_1pt
        local *= g
        _accumulate(x, local)

    return Tensor._from_op(data, (x,), "gelu", backward_fn)


def softmax(x):
    """Softmax over the last axis, computed with max subtraction."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accumulate(x, (g - dot) * data)

    return Tensor._from_op(data, (x,), "softmax", backward_fn)


def layer_norm(x, gamma, beta, eps=_LN_EPS):
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer-normalize: input {x.shape} needs scale/shift of shape ({d},), "
            f"got {gamma.shape} and {beta.shape}"
        )
    inv_d = 1.0 / d
    mu = x.data.sum(axis=-1, keepdims=True) * inv_d
    xc = x.data - mu
    var = (xc * xc).sum(axis=-1, keepdims=True) * inv_d
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward_fn(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.sum(axis=-1, keepdims=True) * inv_d
            m2 = (gx * xhat).sum(axis=-1, keepdims=True) * inv_d
            _accumulate(x, (gx - m1 - xhat * m2) * inv)

    return Tensor._from_op(data, (x, gamma, beta), "layer-normalize", backward_fn)


def embedding(table, ids):
    """Row lookup into `table` by an integer numpy array `ids`."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"embedding-lookup: id out of range for table with {table.data.shape[0]} rows"
        )
    data = table.data[ids]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, g.shape[-1]))
        _accumulate(table, gt)

    return Tensor._from_op(data, (table,), "embedding-lookup", backward_fn)


def mean(x, axis):
    """Arithmetic mean over one axis."""
    n = x.data.shape[axis]
    data = x.data.mean(axis=axis)

    def backward_fn(g):
        _accumulate(x, np.broadcast_to(np.expand_dims(g / n, axis), x.data.shape))

    return Tensor._from_op(data, (x,), "mean-over-rows", backward_fn)


def concat(tensors, axis):
    tensors = tuple(tensors)
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ShapeError(
                f"concatenate: rank mismatch {tensors[0].shape} vs {t.shape}"
            )
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward_fn(g):
        offset = 0
        sl = [slice(None)] * g.ndim
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                sl[axis] = slice(offset, offset + size)
                _accumulate(t, g[tuple(sl)])
            offset += size

    return Tensor._from_op(data, tensors, "concatenate", backward_fn)


def index(x, key):
    """Basic (slice/int) indexing; advanced indexing is not supported."""
    data = x.data[key]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[key] = g
        _accumulate(x, gx)

    return Tensor._from_op(data, (x,), "slice", backward_fn)


def reshape(x, shape):
    data = x.data.reshape(shape)

    def backward_fn(g):
        _accumulate(x, g.reshape(x.data.shape))

    return Tensor._from_op(data, (x,), "reshape", backward_fn)


def transpose(x, axes):
    data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        _accumulate(x, g.transpose(inverse))

    return Tensor._from_op(data, (x,), "transpose", backward_fn)


def expand_batch(x, n):
    """Broadcast a new leading batch axis of size n."""
    data = np.broadcast_to(x.data, (n,) + x.data.shape)

    def backward_fn(g):
        _accumulate(x, g.sum(axis=0))

    return Tensor._from_op(data, (x,), "expand-batch", backward_fn)


def split_heads(x, num_heads, scale=None):
    """(B, L, d) -> (B, heads, L, d // heads), optionally scaled."""
    b, l, d = x.data.shape
    hd = d // num_heads
    data = x.data.reshape(b, l, num_heads, hd).transpose(0, 2, 1, 3)
    if scale is not None:
        data = data * scale

    def backward_fn(g):
        if scale is not None:
            g = g * scale
        _accumulate(x, g.transpose(0, 2, 1, 3).reshape(b, l, d))

    return Tensor._from_op(data, (x,), "split-heads", backward_fn)


def merge_heads(x):
    """(B, heads, L, hd) -> (B, L, heads * hd)."""
    b, h, l, hd = x.data.shape
    data = np.ascontiguousarray(x.data.transpose(0, 2, 1, 3)).reshape(b, l, h * hd)

    def backward_fn(g):
        _accumulate(x, g.reshape(b, l, h, hd).transpose(0, 2, 1, 3))

    return Tensor._from_op(data, (x,), "merge-heads", backward_fn)


def stop_gradient(x):
    """Forward identity that blocks all gradient flow into `x`.

    The output shares the input's storage (bit-equal forward) but is a graph
    leaf, so backward contributes exactly zero to every ancestor of `x`.
    """
    out = Tensor.__new__(Tensor)
    out.data = x.data
    out.grad = None
    out.requires_grad = False
    out.op = "stop-gradient"
    out._parents = ()
    out._backward = None
    return out


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer `labels` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.data.shape[0],):
        raise ShapeError(
            f"cross-entropy-loss: logits {logits.shape} incompatible with labels {labels.shape}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= logits.data.shape[1]):
        raise ShapeError(
            f"cross-entropy-loss: label out of range for {logits.data.shape[1]} classes"
        )
    n = logits.data.shape[0]
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    data = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.data.dtype)

    def backward_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        _accumulate(logits, p * (g / n))

    return Tensor._from_op(data, (logits,), "cross-entropy-loss", backward_fn)


class Parameter:
    """A uniquely named tensor with a trainable flag and a freeze group.

    Frozen parameters neither request gradients nor receive optimizer
    updates; toggling `trainable` keeps the flag and the tensor's
    `requires_grad` in sync.
    """

    __slots__ = ("name", "tensor", "group")

    def __init__(self, name, data, trainable=True, group="task"):
        self.name = name
        self.tensor = Tensor(data, requires_grad=trainable)
        self.group = group

    @property
    def trainable(self):
        return self.tensor.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.tensor.requires_grad = bool(flag)

    @property
    def data(self):
        return self.tensor.data

    def __repr__(self):
        return (f"Parameter({self.name!r}, shape={self.tensor.data.shape}, "
                f"trainable={self.trainable}, group={self.group!r})")


class ParameterStore:
    """Ordered registry of Parameters with unique names and group freezing."""

    def __init__(self):
        self._params = {}

    def register(self, name, data, trainable=True, group="task"):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, data, trainable=trainable, group=group)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def named(self):
        return list(self._params.items())

    def group(self, group):
        return [p for p in self if p.group == group]

    def trainable(self):
        return [p for p in self if p.trainable]

    def set_group_trainable(self, group, flag):
        for p in self.group(group):
            p.trainable = flag

    def trainable_scalar_count(self):
        return sum(p.data.size for p in self.trainable())

    def zero_grads(self):
        for p in self:
            p.tensor.grad = None


def iter_graph(root):
    """Yield every node reachable from `root` through parent links."""
    seen = {id(root)}
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        for p in node._parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append(p)


def backward(root):
    """Backpropagate from a scalar root, accumulating into `.grad` fields.

    Parameters not reachable from the root keep `grad is None`, which callers
    must treat as an exact zero gradient.
    """
    if root.data.size != 1:
        raise GraphError(f"backward requires a scalar root, got shape {root.data.shape}")
    if not root.requires_grad:
        return

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def grad_check(build, params, step=1e-4, denom_floor=1e-8):
    """Compare analytic gradients against central finite differences.

    `build` maps a dict of named Tensors to a scalar loss Tensor and is
    invoked repeatedly; `params` is a dict of named numpy arrays. Everything
    runs in float64 so the difference quotient is limited by truncation
    error rather than rounding. Graphs containing a stop-gradient node are
    rejected: finite differences cannot observe detachment, which is tested
    by exact-zero assertions instead.

    Returns a dict mapping each parameter name to its max relative error,
    with the relative error denominator floored at `denom_floor`.
    """
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def run(requires_grad):
        tensors = {k: Tensor(v, requires_grad=requires_grad, dtype=np.float64)
                   for k, v in arrays.items()}
        return tensors, build(tensors)

    tensors, root = run(True)
    if root.data.size != 1:
        raise GraphError(f"grad_check requires a scalar root, got shape {root.data.shape}")
    for node in iter_graph(root):
        if node.op == "stop-gradient":
            raise GraphError(
                "grad_check rejects graphs containing stop-gradient: finite "
                "differences cannot respect detachment; assert exact zeros instead"
            )
    backward(root)

    report = {}
    for name, t in tensors.items():
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        base = arrays[name]
        fd = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + step
            hi = float(run(False)[1].data)
            base[idx] = orig - step
            lo = float(run(False)[1].data)
            base[idx] = orig
            fd[idx] = (hi - lo) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), denom_floor)
        report[name] = float(np.max(np.abs(analytic - fd) / denom)) if base.size else 0.0
    return report
