"""Dense float64 tensors with reverse-mode differentiation.

Every value is a row-major numpy float64 array, and every operation
returns a new Tensor that remembers its inputs and a vector-Jacobian
closure, so a scalar root can be differentiated with :func:`backward`.
The primitive set is deliberately small (matmul, transpose, elementwise
arithmetic, relu, exp, log, axis reductions, L2 row normalisation,
softmax, layer norm, concat/narrow/reshape); all scores and losses in
this package are compositions of it.

Stability rules: softmax subtracts the per-slice maximum, L2 norms are
clamped below at 1e-12, and layer norm carries 1e-5 inside the square
root, so forward passes over finite inputs stay finite.

A graph and its tensors belong to one logical thread during forward and
backward; distinct graphs over read-only shared Parameters may run
concurrently as long as gradient accumulation is serialised externally.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

_grad_enabled = True


def grad_enabled() -> bool:
    return _grad_enabled


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy-backed value plus its place in the differentiation graph.

    ``parents`` and ``vjp`` are populated only while gradients are
    enabled and some input requires them; otherwise the tensor is a
    constant leaf.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() requires a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """The underlying array; treat it as read-only."""
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise UsageError("tensor division is only supported by python scalars")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def amax(self, axis, keepdims=False):
        return amax(self, axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


class Parameter(Tensor):
    """A named trainable tensor; ``grad`` is filled by :func:`backward`."""

    __slots__ = ("name",)

    def __init__(self, name: str, value):
        super().__init__(value, requires_grad=True)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.vjp = vjp
    else:
        out.requires_grad = False
        out.parents = ()
        out.vjp = None
    return out


def _check_axis(t: Tensor, axis: int) -> int:
    nd = t.data.ndim
    if not isinstance(axis, int) or not (-nd <= axis < nd):
        raise UsageError(f"axis {axis} out of range for rank-{nd} tensor")
    return axis % nd


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node(data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node(data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _node(data, (a, b), vjp, "mul")


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def vjp(g):
        return (g * s,)

    return _node(a.data * s, (a,), vjp, "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _node(a.data * mask, (a,), vjp, "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _node(out, (a,), vjp, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g / a.data,)

    return _node(np.log(a.data), (a,), vjp, "log")


# -- linear algebra ----------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError(
            f"matmul expects rank-2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise UsageError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(data, (a, b), vjp, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        return (g.T,)

    return _node(a.data.T, (a,), vjp, "transpose")


# -- reductions --------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = None if axis is None else _check_axis(a, axis)
    data = a.data.sum(axis=ax, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        gg = g
        if ax is not None and not keepdims:
            gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, shape),)

    return _node(np.asarray(data), (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = None if axis is None else _check_axis(a, axis)
    count = a.data.size if ax is None else a.data.shape[ax]
    data = a.data.mean(axis=ax, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        gg = g
        if ax is not None and not keepdims:
            gg = np.expand_dims(gg, ax)
        return (np.broadcast_to(gg, shape) / count,)

    return _node(np.asarray(data), (a,), vjp, "mean")


def omean(a) -> Tensor:
    """Mean of all elements with exactly-rounded summation (math.fsum).

    The result does not depend on element order, which makes reductions
    over maxima bitwise permutation-invariant.
    """
    a = as_tensor(a)
    flat = a.data.reshape(-1)
    n = flat.size
    data = np.asarray(math.fsum(flat) / n)
    shape = a.data.shape

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return _node(data, (a,), vjp, "omean")


def amax(a, axis, keepdims=False) -> Tensor:
    """Max along ``axis``; the gradient is routed entirely to the first
    maximal index in storage order."""
    a = as_tensor(a)
    ax = _check_axis(a, axis)
    data = a.data.max(axis=ax, keepdims=keepdims)
    idx = np.expand_dims(a.data.argmax(axis=ax), ax)
    shape = a.data.shape

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, ax)
        out = np.zeros(shape)
        np.put_along_axis(out, idx, gg, axis=ax)
        return (out,)

    return _node(np.asarray(data), (a,), vjp, "amax")


# -- normalisations ----------------------------------------------------


def softmax(a, axis: int) -> Tensor:
    """Softmax along ``axis``, computed with max subtraction."""
    a = as_tensor(a)
    ax = _check_axis(a, axis)
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=ax, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=ax, keepdims=True)
        return (y * (g - dot),)

    return _node(y, (a,), vjp, "softmax")


L2_EPS = 1e-12


def l2_normalize(a) -> Tensor:
    """Normalise along the last axis; denominators are clamped below at
    1e-12, so all-zero rows map to zero."""
    a = as_tensor(a)
    x = a.data
    norms = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    denom = np.maximum(norms, L2_EPS)
    y = x / denom
    unclamped = norms > L2_EPS

    def vjp(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return ((g - unclamped * y * proj) / denom,)

    return _node(y, (a,), vjp, "l2_normalize")


LAYER_NORM_EPS = 1e-5


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Zero-mean unit-variance normalisation of the last axis (no affine)."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _node(y, (a,), vjp, "layer_norm")


# -- shape surgery -----------------------------------------------------


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise UsageError("concat of an empty sequence")
    ax = _check_axis(ts[0], axis)
    data = np.concatenate([t.data for t in ts], axis=ax)
    split_points = np.cumsum([t.data.shape[ax] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, split_points, axis=ax))

    return _node(data, tuple(ts), vjp, "concat")


def narrow(a, axis: int, start: int, size: int) -> Tensor:
    """A contiguous slice of ``size`` entries along ``axis``."""
    a = as_tensor(a)
    ax = _check_axis(a, axis)
    if start < 0 or size < 1 or start + size > a.data.shape[ax]:
        raise UsageError(
            f"narrow range [{start}, {start + size}) invalid for axis {axis} of shape {a.data.shape}"
        )
    index = tuple(slice(None) if d != ax else slice(start, start + size) for d in range(a.data.ndim))
    shape = a.data.shape

    def vjp(g):
        out = np.zeros(shape)
        out[index] = g
        return (out,)

    return _node(a.data[index].copy(), (a,), vjp, "narrow")


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _node(a.data.reshape(shape), (a,), vjp, "reshape")


# -- differentiation ---------------------------------------------------


def backward(root: Tensor) -> None:
    """Reverse-mode sweep from a scalar root.

    Visits every reachable node exactly once in reverse topological order
    and accumulates (sums) gradients into the ``grad`` of each reachable
    leaf with ``requires_grad``. Repeated calls keep accumulating; clear
    with ``Parameter.zero_grad``.
    """
    if root.data.size != 1:
        raise UsageError(f"backward requires a scalar root, got shape {root.data.shape}")
    if not root.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.vjp is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad_check(f: Callable[[], Tensor], params: Iterable[Parameter], eps: float = 1e-5) -> float:
    """Compare analytic gradients of the scalar ``f()`` against central
    finite differences.

    Returns the maximum over all parameter components of
    ``|analytic - fd| / max(1, |fd|)``. ``f`` must be deterministic.
    """
    if eps <= 0:
        raise UsageError("grad_check needs eps > 0")
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise UsageError("grad_check objective must return a scalar tensor")
    if not np.isfinite(out.data).all():
        raise DataError("grad_check objective returned a non-finite value")
    backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            aflat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                if not (math.isfinite(hi) and math.isfinite(lo)):
                    raise DataError("grad_check objective returned a non-finite value")
                fd = (hi - lo) / (2.0 * eps)
                err = abs(aflat[i] - fd) / max(1.0, abs(fd))
                if err > worst:
                    worst = err
    return worst
