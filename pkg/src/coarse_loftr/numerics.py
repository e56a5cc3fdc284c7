"""Dense arrays with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array.  Every differentiable operation
executed while gradient recording is on (see :func:`no_grad`) appends a node
to the implicit tape: the output remembers its inputs, a closure computing
the vector-Jacobian product, and a monotonically increasing sequence number.
:func:`backward` replays the reachable part of that record in exact reverse
execution order and then discards it.

Only ``float32`` and ``float64`` are supported.  Gradient checks and training
use ``float64``; inference may use ``float32``.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "tensor",
    "zeros",
    "ones",
    "no_grad",
    "is_grad_enabled",
    "finite_checks",
    "backward",
    "tape_order",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "bmm",
    "conv2d",
    "elu",
    "relu",
    "exp",
    "log",
    "clamp",
    "softmax",
    "log_softmax",
    "layer_norm",
    "group_norm",
    "sum",
    "mean",
    "reshape",
    "transpose",
    "concat",
    "take",
]

_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
_seq = itertools.count()


class _State(threading.local):
    def __init__(self) -> None:
        self.grad_enabled = True
        self.check_finite = True


_state = _State()


@contextlib.contextmanager
def no_grad():
    """Run the enclosed block without recording anything on the tape."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def is_grad_enabled() -> bool:
    return _state.grad_enabled


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Toggle the eager NaN/Inf check performed after every forward op.

    The check is on by default; benchmarks switch it off.
    """
    prev = _state.check_finite
    _state.check_finite = enabled
    try:
        yield
    finally:
        _state.check_finite = prev


def _as_array(data, dtype=None) -> np.ndarray:
    if isinstance(data, Tensor):
        data = data.data
    if dtype is None:
        arr = np.asarray(data)
        if arr.dtype not in _DTYPES:
            arr = arr.astype(np.float64)
    else:
        dtype = np.dtype(dtype)
        if dtype not in _DTYPES:
            raise ContractError(f"unsupported dtype {dtype}; use float32 or float64")
        arr = np.asarray(data, dtype=dtype)
    return arr


class Tensor:
    """An n-dimensional float array that can take part in differentiation.

    Leaf tensors created with ``requires_grad=True`` own a zero-initialised
    ``grad`` array of the same shape; :func:`backward` adds into it.  Tensors
    produced by operations carry their tape node until backward runs.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp", "_seq", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._seq = -1

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"item() needs a single element, got shape {self.shape}")

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4, threshold=20)}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operator sugar ------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, dim=None, keepdims: bool = False):
        return sum(self, dim, keepdims)

    def mean(self, dim=None, keepdims: bool = False):
        return mean(self, dim, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def zeros(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def _record(op: str, out: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    if _state.check_finite and not np.isfinite(out).all():
        raise NumericError(f"{op} produced non-finite values")
    result = Tensor.__new__(Tensor)
    result.data = out
    result.name = None
    result.grad = None
    need = _state.grad_enabled and any(p.requires_grad for p in parents)
    result.requires_grad = need
    if need:
        result._parents = tuple(parents)
        result._vjp = vjp
        result._seq = next(_seq)
    else:
        result._parents = ()
        result._vjp = None
        result._seq = -1
    return result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# tape traversal


def tape_order(loss: Tensor) -> list[Tensor]:
    """Tape nodes reachable from ``loss`` in the order backward visits them."""
    nodes, seen, stack = [], set(), [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or t._vjp is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    The recorded nodes are released afterwards, so calling backward twice on
    the same graph is an error.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._vjp is None:
        raise ContractError("loss has no recorded operations (empty tape or already consumed)")
    nodes = tape_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in nodes:
        g = pending.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._vjp is None:
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                np.add(parent.grad, pg, out=parent.grad, casting="unsafe")
            else:
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
    for node in nodes:
        node._parents = ()
        node._vjp = None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _record(
        "mul", ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = _wrap(a, b if isinstance(b, Tensor) else None), _wrap(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _record("div", out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _record("log", out, (a,), lambda g: (g / ad,))


def elu(a: Tensor) -> Tensor:
    """x for x > 0, exp(x) - 1 otherwise."""
    ad = a.data
    neg = np.minimum(ad, 0.0)
    # branch-free: np.where on a random sign mask is several times slower
    out = np.maximum(ad, 0.0) + np.expm1(neg)
    return _record("elu", out, (a,), lambda g: (g * np.exp(neg),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _record("relu", a.data * mask, (a,), lambda g: (g * mask,))


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    out = np.clip(a.data, lo, hi)
    mask = out == a.data
    return _record("clamp", out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axes(dim, ndim: int) -> tuple[int, ...]:
    if dim is None:
        return tuple(range(ndim))
    if isinstance(dim, int):
        dim = (dim,)
    return tuple(d % ndim for d in dim)


def sum(a: Tensor, dim=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(dim, a.ndim)
    shape = a.shape
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", np.asarray(out), (a,), vjp)


def mean(a: Tensor, dim=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(dim, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return div(sum(a, axes, keepdims), float(count))


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} into {tuple(shape)}") from None
    return _record("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _record("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record("concat", out, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(a: Tensor, index) -> Tensor:
    """Differentiable ``a[index]`` for basic and integer-array indexing."""
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    out = a.data[index]
    shape, dtype = a.shape, a.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return _record("take", np.array(out, copy=True), (a,), vjp)


# ---------------------------------------------------------------------------
# products


def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast like ``numpy.matmul``."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        if a.shape[-1] == 1:
            # outer products: einsum's loop beats matmul's per-matrix dispatch, same values
            out = np.einsum("...ik,...kj->...ij", a.data, b.data)
        else:
            out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _record("matmul", out, (a, b), vjp)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of ``[B, m, k]`` and ``[B, k, n]``."""
    if a.ndim != 3 or b.ndim != 3:
        raise DimensionError(f"bmm expects rank-3 operands, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"bmm: batch extents differ, {a.shape} vs {b.shape}")
    return matmul(a, b)


def _conv_out(n: int, k: int, stride: int, pad: int) -> int:
    span = n + 2 * pad - k
    if span < 0:
        raise DimensionError(f"conv2d: kernel extent {k} exceeds padded input extent {n}+2*{pad}")
    return span // stride + 1


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x[b, c_in, h, w]`` with ``w[c_out, c_in, kh, kw]``."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: incompatible input {x.shape} and weight {w.shape}")
    cout, cin, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise DimensionError(f"conv2d: stride must be 1 or 2, got {stride}")
    b, _, h, wd = x.shape
    oh, ow = _conv_out(h, kh, stride, pad), _conv_out(wd, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((b, cin, kh, kw, oh, ow), dtype=np.result_type(x.dtype, w.dtype))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    cols = cols.reshape(b, cin * kh * kw, oh * ow)
    w2 = w.data.reshape(cout, -1)
    out = np.matmul(w2, cols).reshape(b, cout, oh, ow)
    xshape, pshape = x.shape, xp.shape

    def vjp(g):
        g = g.reshape(b, cout, oh * ow)
        gw = g[0] @ cols[0].T
        for k in range(1, b):
            gw += g[k] @ cols[k].T
        gw = gw.reshape(w.shape)
        gcols = np.matmul(w2.T, g).reshape(b, cin, kh, kw, oh, ow)
        gxp = np.zeros(pshape, dtype=gcols.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, pad : pad + xshape[2], pad : pad + xshape[3]] if pad else gxp
        return gx, gw

    return _record("conv2d", out, (x, w), vjp)


# ---------------------------------------------------------------------------
# normalisation and softmax


def softmax(a: Tensor, dim: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=dim, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=dim, keepdims=True)
    return _record("softmax", out, (a,), lambda g: (out * (g - (g * out).sum(axis=dim, keepdims=True)),))


def log_softmax(a: Tensor, dim: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=dim, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=dim, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _record("log_softmax", out, (a,), lambda g: (g - p * g.sum(axis=dim, keepdims=True),))


def _normalize_last(xd: np.ndarray, eps: float):
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    return xc * inv, inv


def _normalize_last_vjp(gh: np.ndarray, xhat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    return inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs input {x.shape}")
    xhat, inv = _normalize_last(x.data, eps)
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def vjp(g):
        return _normalize_last_vjp(g * gd, xhat, inv), (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _record("layer_norm", xhat * gd + beta.data, (x, gamma, beta), vjp)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample group normalisation of ``x[b, c, h, w]``."""
    b, c, h, w = x.shape
    if c % groups:
        raise DimensionError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: affine shapes {gamma.shape}/{beta.shape} vs {c} channels")
    xhat, inv = _normalize_last(x.data.reshape(b, groups, -1), eps)
    xhat = xhat.reshape(x.shape)
    gd = gamma.data.reshape(1, c, 1, 1)

    def vjp(g):
        gh = (g * gd).reshape(b, groups, -1)
        gx = _normalize_last_vjp(gh, xhat.reshape(b, groups, -1), inv).reshape(x.shape)
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _record("group_norm", xhat * gd + beta.data.reshape(1, c, 1, 1), (x, gamma, beta), vjp)


def stack_data(tensors: Iterable[Tensor]) -> np.ndarray:
    """Stack raw arrays of several tensors (no tape participation)."""
    return np.stack([t.data for t in tensors])
