"""Minimal reverse-mode automatic differentiation over dense numpy tensors.

Forward ops build an implicit DAG on a global :class:`GradientTape`;
``backward`` replays the recorded nodes in reverse creation order (a valid
topological order, since inputs always exist before the ops that consume
them).  Everything runs single-threaded and deterministically: gradient
contributions are accumulated in recording order.

The training default is float32.  Gradient checks re-run the same graph
with float64 inputs; ops preserve the dtype of their inputs throughout.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

DEFAULT_DTYPE = np.float32

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ShapeError(ValueError):
    """Operands with incompatible shapes; names the op and both shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes))


class NumericError(ArithmeticError):
    """An op produced NaN/Inf, which is an error state for forward values."""


# Global switches.  Finite checks keep the "all values finite" invariant
# honest; no_grad() turns off recording for evaluation-only passes.
_finite_checks = True
_grad_enabled = True


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = bool(enabled)


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense n-dimensional array of reals participating in the gradient tape.

    ``data`` is always a numpy array; ``requires_grad`` marks leaves whose
    gradient the caller wants.  Interior nodes keep references to their
    parents and a backward closure.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data  # keep float32/float64 as given (64-bit check mode)
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        """A constant view of this tensor's values, cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, op={self._op})"

    # Operator sugar; python numbers stay raw scalars (numpy keeps the
    # array dtype for those), tensors go through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_const_like(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class GradientTape:
    """Ordered record of op outputs, in creation order."""

    nodes: list = field(default_factory=list)

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()


_TAPE = GradientTape()


def active_tape() -> GradientTape:
    return _TAPE


def reset_tape() -> None:
    """Drop all recorded nodes (call between training steps)."""
    _TAPE.clear()


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(op: str, data: np.ndarray, parents, backward) -> Tensor:
    # Finite checks subsume numpy's own warnings about invalid values.
    if _finite_checks and not np.all(np.isfinite(data)):
        raise NumericError(f"op '{op}' produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out._op = op
    track = _grad_enabled and any(p.requires_grad for p in parents)
    if track:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        _TAPE.record(out)
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _make("add", a.data + b, (a,), lambda g, a=a: ((g, a),))
    b = _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _make("add", data, (a, b),
                 lambda g, a=a, b=b: ((_unbroadcast(g, a.shape), a), (_unbroadcast(g, b.shape), b)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _make("sub", a.data - b, (a,), lambda g, a=a: ((g, a),))
    b = _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return _make("sub", data, (a, b),
                 lambda g, a=a, b=b: ((_unbroadcast(g, a.shape), a), (_unbroadcast(-g, b.shape), b)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _make("mul", a.data * b, (a,), lambda g, a=a, b=b: ((g * b, a),))
    b = _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def backward(g, a=a, b=b):
        return ((_unbroadcast(g * b.data, a.shape), a),
                (_unbroadcast(g * a.data, b.shape), b))

    return _make("mul", data, (a, b), backward)


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return mul(a, 1.0 / b)
    b = _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError("div", a.shape, b.shape) from None

    def backward(g, a=a, b=b):
        return ((_unbroadcast(g / b.data, a.shape), a),
                (_unbroadcast(-g * a.data / (b.data * b.data), b.shape), b))

    return _make("div", data, (a, b), backward)


# ---------------------------------------------------------------------------
# linear algebra & structure


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward(g, a=a, b=b):
        return ((g @ b.data.T, a), (a.data.T @ g, b))

    return _make("matmul", a.data @ b.data, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    used = tuple(axes) if axes is not None else tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(used))
    return _make("transpose", np.transpose(a.data, used), (a,),
                 lambda g, a=a, inverse=inverse: ((np.transpose(g, inverse).copy(), a),))


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,),
                 lambda g, a=a: ((g.reshape(a.shape), a),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, tensors=tensors, offsets=offsets, axis=axis):
        pieces = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((np.ascontiguousarray(g[tuple(idx)]), t))
        return tuple(pieces)

    return _make("concat", data, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = _as_tensor(a)
    axis = axis % a.data.ndim
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError("narrow", a.shape, (start, length))
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g, a=a, idx=idx):
        ga = np.zeros(a.shape, dtype=g.dtype)
        ga[idx] = g
        return ((ga, a),)

    return _make("narrow", a.data[idx].copy(), (a,), backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows along axis 0 by an integer index array."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError("gather_rows", a.shape, idx.shape)

    def backward(g, a=a, idx=idx):
        ga = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(ga, idx, g)
        return ((ga, a),)

    return _make("gather_rows", a.data[idx], (a,), backward)


# ---------------------------------------------------------------------------
# convolutions (valid padding, positive stride)


def conv1d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """Strided 1-D convolution; x: (B, L, C_in), w: (C_in, K, C_out)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[2] != w.shape[0]:
        raise ShapeError("conv1d", x.shape, w.shape)
    B, L, c_in = x.shape
    _, K, c_out = w.shape
    if L < K:
        raise ShapeError("conv1d", x.shape, w.shape)
    cols = sliding_window_view(x.data, K, axis=1)[:, ::stride]  # (B, Lo, C_in, K)
    lo = cols.shape[1]
    cols2 = np.ascontiguousarray(cols).reshape(B * lo, c_in * K)
    w2 = w.data.reshape(c_in * K, c_out)
    out = (cols2 @ w2).reshape(B, lo, c_out)

    def backward(g, x=x, w=w, cols2=cols2, w2=w2, stride=stride, B=B, lo=lo,
                 c_in=c_in, K=K, c_out=c_out):
        g2 = g.reshape(B * lo, c_out)
        gw = (cols2.T @ g2).reshape(w.shape)
        gcols = (g2 @ w2.T).reshape(B, lo, c_in, K)
        gx = np.zeros(x.shape, dtype=g.dtype)
        pos = stride * np.arange(lo)
        for k in range(K):
            gx[:, pos + k, :] += gcols[:, :, :, k]
        return ((gx, x), (gw, w))

    return _make("conv1d", out, (x, w), backward)


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """2-D convolution; x: (B, H, W, C_in), w: (C_in, KH, KW, C_out)."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[0]:
        raise ShapeError("conv2d", x.shape, w.shape)
    B, H, W, c_in = x.shape
    _, kh, kw, c_out = w.shape
    if H < kh or W < kw:
        raise ShapeError("conv2d", x.shape, w.shape)
    cols = sliding_window_view(x.data, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = cols.shape[1], cols.shape[2]  # cols: (B, ho, wo, C_in, kh, kw)
    cols2 = np.ascontiguousarray(cols).reshape(B * ho * wo, c_in * kh * kw)
    w2 = w.data.reshape(c_in * kh * kw, c_out)
    out = (cols2 @ w2).reshape(B, ho, wo, c_out)

    def backward(g, x=x, w=w, cols2=cols2, w2=w2, stride=stride,
                 B=B, ho=ho, wo=wo, c_in=c_in, kh=kh, kw=kw, c_out=c_out):
        g2 = g.reshape(B * ho * wo, c_out)
        gw = (cols2.T @ g2).reshape(w.shape)
        gcols = (g2 @ w2.T).reshape(B, ho, wo, c_in, kh, kw)
        gx = np.zeros(x.shape, dtype=g.dtype)
        rows = stride * np.arange(ho)
        cols_pos = stride * np.arange(wo)
        for i in range(kh):
            for j in range(kw):
                gx[:, rows[:, None] + i, cols_pos[None, :] + j, :] += gcols[:, :, :, :, i, j]
        return ((gx, x), (gw, w))

    return _make("conv2d", out, (x, w), backward)


# ---------------------------------------------------------------------------
# reductions


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _axis_tuple(axis, a.data.ndim)

    def backward(g, a=a, axes=axes, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g, a.shape).copy(), a),)

    return _make("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    axes = _axis_tuple(axis, a.data.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.data.ndim else 1

    def backward(g, a=a, axes=axes, keepdims=keepdims, count=count):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((np.broadcast_to(g / count, a.shape).copy(), a),)

    return _make("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), backward)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    axis = axis % a.data.ndim
    m = np.max(a.data, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a.data - m), axis=axis, keepdims=True)) + m

    def backward(g, a=a, axis=axis, out=out):
        return ((np.expand_dims(g, axis) * np.exp(a.data - out), a),)

    return _make("logsumexp", np.squeeze(out, axis=axis), (a,), backward)


def l2norm(a: Tensor, keepdims: bool = True) -> Tensor:
    """Euclidean norm along the last axis."""
    a = _as_tensor(a)
    out = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True))

    def backward(g, a=a, out=out, keepdims=keepdims):
        if not keepdims:
            g = np.expand_dims(g, -1)
        return ((g * a.data / out, a),)

    return _make("l2norm", out if keepdims else np.squeeze(out, -1), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities & normalization


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make("relu", np.maximum(a.data, 0), (a,),
                 lambda g, a=a: ((g * (a.data > 0), a),))


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype)

    def backward(g, a=a, cdf=cdf):
        x = a.data
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (((g * (cdf + x * pdf)).astype(x.dtype), a),)

    return _make("gelu", out, (a,), backward)


def texp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g, a=a, out=out: ((g * out, a),))


def tlog(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make("log", out, (a,), lambda g, a=a: ((g / a.data, a),))


def tsqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g, a=a, out=out: ((g / (2.0 * out), a),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; rows are probability distributions."""
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g, a=a, out=out):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        return ((out * (g - inner), a),)

    return _make("softmax", out, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))

    def backward(g, a=a, out=out):
        return ((g - np.exp(out) * np.sum(g, axis=-1, keepdims=True), a),)

    return _make("log_softmax", out, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale/shift by gamma/beta."""
    a, gamma, beta = _as_tensor(a), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != a.shape[-1:] or beta.shape != a.shape[-1:]:
        raise ShapeError("layer_norm", a.shape, gamma.shape, beta.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def backward(g, a=a, gamma=gamma, beta=beta, xhat=xhat, inv=inv):
        lead = tuple(range(g.ndim - 1))
        gbeta = g.sum(axis=lead)
        ggamma = (g * xhat).sum(axis=lead)
        gx_hat = g * gamma.data
        m1 = gx_hat.mean(axis=-1, keepdims=True)
        m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (gx_hat - m1 - xhat * m2)
        return ((gx.astype(g.dtype), a), (ggamma, gamma), (gbeta, beta))

    return _make("layer_norm", out, (a, gamma, beta), backward)


# ---------------------------------------------------------------------------
# masking


def masked_fill(a: Tensor, mask, value: float) -> Tensor:
    """Replace positions where ``mask`` is True with a constant."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)
    except ValueError:
        raise ShapeError("masked_fill", a.shape, mask.shape) from None

    def backward(g, a=a, mask=mask):
        return ((_unbroadcast(g * ~mask, a.shape), a),)

    return _make("masked_fill", out, (a,), backward)


def mask_rows(a: Tensor, row_mask, embedding: Tensor) -> Tensor:
    """Replace whole rows of a (T, D) tensor by a learned embedding vector."""
    a, embedding = _as_tensor(a), _as_tensor(embedding)
    row_mask = np.asarray(row_mask, dtype=bool)
    if a.data.ndim != 2 or embedding.shape != a.shape[-1:] or row_mask.shape != a.shape[:1]:
        raise ShapeError("mask_rows", a.shape, row_mask.shape, embedding.shape)
    out = a.data.copy()
    out[row_mask] = embedding.data

    def backward(g, a=a, embedding=embedding, row_mask=row_mask):
        ga = g * ~row_mask[:, None]
        gemb = g[row_mask].sum(axis=0)
        return ((ga, a), (gemb, embedding))

    return _make("mask_rows", out, (a, embedding), backward)


# ---------------------------------------------------------------------------
# composites


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis; x may be (T, D) or (B, T, D)."""
    x = _as_tensor(x)
    if x.data.ndim == 2:
        out = matmul(x, w)
    else:
        lead = x.shape[:-1]
        flat = reshape(x, (-1, x.shape[-1]))
        out = reshape(matmul(flat, w), lead + (w.shape[1],))
    return add(out, b) if b is not None else out


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def op_catalogue() -> dict:
    """Name -> callable for every differentiable primitive provided here."""
    return {
        "add": add,
        "subtract": sub,
        "multiply": mul,
        "divide": div,
        "scalar_multiply": mul,
        "matmul": matmul,
        "conv1d": conv1d,
        "conv2d": conv2d,
        "transpose": transpose,
        "reshape": reshape,
        "concat": concat,
        "narrow": narrow,
        "gather_rows": gather_rows,
        "layer_norm": layer_norm,
        "softmax": softmax,
        "log_softmax": log_softmax,
        "logsumexp": logsumexp,
        "gelu": gelu,
        "relu": relu,
        "exp": texp,
        "log": tlog,
        "sqrt": tsqrt,
        "mean": tmean,
        "sum": tsum,
        "masked_fill": masked_fill,
        "mask_rows": mask_rows,
        "l2norm": l2norm,
    }


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, wrt=None) -> dict:
    """Propagate d(loss)/d(x) to every requires_grad tensor reachable from loss.

    Returns a dict keyed by tensor identity.  Tensors listed in ``wrt`` are
    guaranteed an entry (zeros when unreachable from the loss).
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ValueError("backward expects a scalar Tensor loss")
    grads: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    if loss._backward is not None:
        # Reverse creation order on the active tape is a topological order.
        started = False
        for node in reversed(_TAPE.nodes):
            if node is loss:
                started = True
            if not started or node._backward is None:
                continue
            g = grads.pop(node, None)
            if g is None:
                continue
            for contribution, parent in node._backward(g):
                acc = grads.get(parent)
                grads[parent] = contribution if acc is None else acc + contribution
    result = {t: g for t, g in grads.items() if t.requires_grad and t._backward is None}
    if loss.requires_grad and loss._backward is None:
        result[loss] = np.ones_like(loss.data)
    if wrt is not None:
        for t in wrt:
            result.setdefault(t, np.zeros_like(t.data))
    return result


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter moment accumulators plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter tensors.

    ``params`` maps name -> Tensor, ``grads`` maps Tensor -> ndarray (the
    output of :func:`backward`); missing gradients count as zero.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        if g.shape != p.data.shape:
            raise ShapeError("adam_step", p.data.shape, g.shape)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
