"""Dense tensors with a reverse-mode tape.

Every primitive computes its forward value with numpy and, when any input
requires a gradient, appends a node to the thread-local tape. ``backward``
walks the tape in reverse recording order, accumulates gradients into leaf
tensors and clears the tape.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import _kernels

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "get_default_dtype",
    "set_default_dtype",
    "default_dtype",
    "no_grad",
    "checked",
    "record_patterns",
    "get_tape",
    "backward",
    "primitive_forward",
    "PRIMITIVES",
]

BN_EPS = 1e-5

_DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def default_dtype(dtype):
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


class Tensor:
    """An n-dimensional array that can take part in reverse-mode AD."""

    __slots__ = ("data", "requires_grad", "grad", "_recorded", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f" or arr.dtype.type is not _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._recorded = False
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # primitive outputs keep their computed dtype
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t._recorded = False
        t.name = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item(): tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{rg})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __getitem__(self, index):
        return getitem(self, index)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


@dataclass
class Node:
    op: str
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    enabled: bool = True

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.checked = False
        self.patterns: Optional[list] = None


_state = _State()


def get_tape() -> Tape:
    return _state.tape


@contextlib.contextmanager
def no_grad():
    tape = _state.tape
    old = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = old


@contextlib.contextmanager
def checked(enabled: bool = True):
    """Reject non-finite primitive inputs while active."""
    old = _state.checked
    _state.checked = enabled
    try:
        yield
    finally:
        _state.checked = old


@contextlib.contextmanager
def record_patterns():
    """Collect the activation patterns (relu masks, max-pool argmaxes).

    Inside a fixed pattern the network is smooth; finite-difference checks use
    this to tell a valid stencil from one that straddles a kink.
    """
    old = _state.patterns
    patterns: list = []
    _state.patterns = patterns
    try:
        yield patterns
    finally:
        _state.patterns = old


def _note_pattern(arr: np.ndarray) -> None:
    if _state.patterns is not None:
        _state.patterns.append(arr.copy())


def _emit(op: str, out_arr: np.ndarray, inputs: tuple, bwd) -> Tensor:
    out = Tensor._wrap(out_arr)
    tape = _state.tape
    if tape.enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        tape.record(Node(op, out, inputs, bwd))
    return out


def _check_inputs(op: str, inputs: Sequence[Tensor]) -> None:
    if not _state.checked:
        return
    for i, t in enumerate(inputs):
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteError(f"{op}: input {i} contains non-finite values")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` and clear the tape."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = _state.tape
    grads: dict[int, np.ndarray] = {}
    if loss._recorded:
        grads[id(loss)] = np.ones_like(loss.data)
    elif loss.requires_grad:
        _accumulate(loss, np.ones_like(loss.data))
    try:
        for node in reversed(tape.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._recorded:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                else:
                    _accumulate(inp, gi)
    finally:
        tape.clear()


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    _check_inputs("add", (a, b))
    sa, sb = a.shape, b.shape

    def bwd(g):
        return (_unbroadcast(g, sa) if a.requires_grad else None,
                _unbroadcast(g, sb) if b.requires_grad else None)

    return _emit("add", a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    _check_inputs("mul", (a, b))
    ad, bd = a.data, b.data

    def bwd(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _emit("mul", ad * bd, (a, b), bwd)


def scale(x: Tensor, c: float) -> Tensor:
    _check_inputs("scale", (x,))
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    _check_inputs("relu", (x,))
    mask = x.data > 0
    _note_pattern(mask)
    return _emit("relu", x.data * mask, (x,), lambda g: (g * mask,))


def sum_all(x: Tensor) -> Tensor:
    _check_inputs("sum", (x,))
    shape = x.shape
    return _emit("sum", np.asarray(x.data.sum()), (x,),
                 lambda g: (np.broadcast_to(g, shape).copy(),))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _emit("reshape", out, (x,), lambda g: (g.reshape(old),))


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    out = x.data[index]

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        if _needs_add_at(index):
            np.add.at(gx, index, g)
        else:
            gx[index] = g
        return (gx,)

    return _emit("getitem", np.array(out, copy=True), (x,), bwd)


def _needs_add_at(index) -> bool:
    idx = index if isinstance(index, tuple) else (index,)
    return any(not isinstance(i, (slice, int, type(Ellipsis))) for i in idx)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ShapeError("concat: empty input list")
    ref = xs[0].shape
    for t in xs[1:]:
        if len(t.shape) != len(ref) or any(
            a != b for k, (a, b) in enumerate(zip(t.shape, ref)) if k != axis % len(ref)
        ):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    _check_inputs("concat", xs)
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        out = []
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                out.append(None)
                continue
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return _emit("concat", np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bwd)


def weighted_sum(weights: Tensor, xs: Sequence[Tensor]) -> Tensor:
    """``sum_k weights[k] * xs[k]`` for a 1-D weight vector."""
    if weights.ndim != 1 or weights.shape[0] != len(xs):
        raise ShapeError(
            f"weighted_sum: weights shape {weights.shape} does not match {len(xs)} terms")
    ref = xs[0].shape
    for t in xs:
        if t.shape != ref:
            raise ShapeError(f"weighted_sum: term shape {t.shape} differs from {ref}")
    _check_inputs("weighted_sum", (weights, *xs))
    w = weights.data
    out = w[0] * xs[0].data
    for k in range(1, len(xs)):
        out = out + w[k] * xs[k].data

    def bwd(g):
        gw = None
        if weights.requires_grad:
            gw = np.array([np.vdot(g, t.data) for t in xs], dtype=w.dtype)
        return (gw, *[g * w[k] if t.requires_grad else None for k, t in enumerate(xs)])

    return _emit("weighted_sum", np.asarray(out), (weights, *xs), bwd)


def take(x: Tensor, index) -> Tensor:
    """Gather ``x[index]`` (fancy indexing); gradient scatters back."""
    shape = x.shape
    out = x.data[index]

    def bwd(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("take", np.array(out, copy=True), (x,), bwd)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_inputs("softmax", (x,))
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", s, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_inputs("log_softmax", (x,))
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def bwd(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _emit("log_softmax", out, (x,), bwd)


def cross_entropy_mean(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"cross_entropy_mean: logits {logits.shape} incompatible with labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError(
            f"cross_entropy_mean: labels outside [0, {logits.shape[1]})")
    _check_inputs("cross_entropy_mean", (logits,))
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _emit("cross_entropy_mean", np.asarray(loss), (logits,), bwd)


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match out features {w.shape[0]}")
    inputs = (x, w) if b is None else (x, w, b)
    _check_inputs("linear", inputs)
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data

    def bwd(g):
        grads = [g @ wd if x.requires_grad else None,
                 g.T @ xd if w.requires_grad else None]
        if b is not None:
            grads.append(g.sum(axis=0) if b.requires_grad else None)
        return grads

    return _emit("linear", out, inputs, bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected NCHW input, got {x.shape}")
    _check_inputs("global_avg_pool", (x,))
    n, c, h, w = x.shape

    def bwd(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).copy(),)

    return _emit("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), bwd)


def batch_norm(x: Tensor, eps: float = BN_EPS) -> Tensor:
    """Normalize each channel with the batch's own statistics (no affine)."""
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected NCHW input, got {x.shape}")
    _check_inputs("batch_norm", (x,))
    axes = (0, 2, 3)
    mean = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        gm = g.mean(axis=axes, keepdims=True)
        gxm = (g * xhat).mean(axis=axes, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    return _emit("batch_norm", xhat, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def conv_out_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, dilation: int,
             ho: int, wo: int) -> np.ndarray:
    """Zero-copy (N, C, Ho, Wo, kh, kw) view of a padded NCHW array."""
    sn, sc, sh, sw = xp.strides
    n, c = xp.shape[:2]
    return as_strided(
        xp,
        shape=(n, c, ho, wo, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh * dilation, sw * dilation),
        writeable=False,
    )


def _pad(x: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    out = np.full((n, c, h + 2 * p, w + 2 * p), value, dtype=x.dtype)
    out[:, :, p:-p, p:-p] = x
    return out


def _fold(cols_grad: np.ndarray, padded_shape: tuple, stride: int, dilation: int,
          padding: int) -> np.ndarray:
    """Scatter-add (N, C, Ho, Wo, kh, kw) window gradients into the input."""
    n, c, ho, wo, kh, kw = cols_grad.shape
    gxp = np.zeros(padded_shape, dtype=cols_grad.dtype)
    for i in range(kh):
        r0 = i * dilation
        for j in range(kw):
            c0 = j * dilation
            gxp[:, :, r0:r0 + stride * (ho - 1) + 1:stride,
                c0:c0 + stride * (wo - 1) + 1:stride] += cols_grad[..., i, j]
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return gxp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """NCHW x OIHW cross-correlation without bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected NCHW input and OIHW kernel, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    if c % groups or o % groups or cg != c // groups:
        raise ShapeError(
            f"conv2d: input channels {c} / kernel in-channels {cg} / groups {groups} mismatch")
    ho = conv_out_size(h, kh, stride, padding, dilation)
    wo = conv_out_size(wd, kw, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {h}x{wd} too small for kernel {kh}x{kw}")
    _check_inputs("conv2d", (x, w))
    xd, wdat = x.data, w.data
    og = o // groups

    if kh == 1 and kw == 1 and groups == 1 and padding == 0:
        xs = xd[:, :, ::stride, ::stride] if stride > 1 else xd
        xs = np.ascontiguousarray(xs[:, :, :ho, :wo])
        w2 = wdat.reshape(o, c)
        out = np.matmul(w2, xs.reshape(n, c, ho * wo)).reshape(n, o, ho, wo)

        def bwd(g):
            g2 = g.reshape(n, o, ho * wo)
            gx = gw = None
            if x.requires_grad:
                gxs = np.matmul(w2.T, g2).reshape(n, c, ho, wo)
                if stride > 1:
                    gx = np.zeros_like(xd)
                    gx[:, :, ::stride, ::stride][:, :, :ho, :wo] = gxs
                else:
                    gx = gxs
            if w.requires_grad:
                gw = np.tensordot(g2, xs.reshape(n, c, ho * wo), axes=([0, 2], [0, 2])).reshape(o, c, 1, 1)
            return gx, gw

        return _emit("conv2d", out, (x, w), bwd)

    xp = _pad(xd, padding)
    if groups == c and og == 1:
        k = np.ascontiguousarray(wdat[:, 0])
        out = _kernels.depthwise_forward(xp, k, stride, dilation, ho, wo)

        def bwd(g):
            gxp, gk = _kernels.depthwise_backward(
                xp, k, np.ascontiguousarray(g), stride, dilation, x.requires_grad, w.requires_grad)
            gx = gw = None
            if x.requires_grad:
                gx = gxp[:, :, padding:-padding, padding:-padding] if padding else gxp
            if w.requires_grad:
                gw = gk[:, None]
            return gx, gw

        return _emit("conv2d", out, (x, w), bwd)

    cols = _windows(xp, kh, kw, stride, dilation, ho, wo)
    colsg = cols.reshape(n, groups, cg, ho, wo, kh, kw)
    wg = wdat.reshape(groups, og, cg, kh, kw)
    out = np.einsum("ngchwij,gocij->ngohw", colsg, wg, optimize=True).reshape(n, o, ho, wo)

    def bwd(g):
        gg = g.reshape(n, groups, og, ho, wo)
        gx = gw = None
        if x.requires_grad:
            gcols = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True)
            gx = _fold(gcols.reshape(n, c, ho, wo, kh, kw), xp.shape, stride, dilation, padding)
        if w.requires_grad:
            gw = np.einsum("ngohw,ngchwij->gocij", gg, colsg, optimize=True).reshape(o, cg, kh, kw)
        return gx, gw

    return _emit("conv2d", out, (x, w), bwd)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d: expected NCHW input, got {x.shape}")
    _check_inputs("max_pool2d", (x,))
    n, c, h, w = x.shape
    ho = conv_out_size(h, kernel, stride, padding, 1)
    wo = conv_out_size(w, kernel, stride, padding, 1)
    xp = _pad(x.data, padding, -np.inf)
    cols = _windows(xp, kernel, kernel, stride, 1, ho, wo).reshape(n, c, ho, wo, kernel * kernel)
    arg = cols.argmax(axis=-1)
    _note_pattern(arg)
    out = np.take_along_axis(cols, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        onehot = (arg[..., None] == np.arange(kernel * kernel)) * g[..., None]
        gx = _fold(onehot.reshape(n, c, ho, wo, kernel, kernel), xp.shape, stride, 1, padding)
        return (gx,)

    return _emit("max_pool2d", np.ascontiguousarray(out), (x,), bwd)


def avg_pool2d(x: Tensor, kernel: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    """Average pooling that excludes padded cells from the divisor."""
    if x.ndim != 4:
        raise ShapeError(f"avg_pool2d: expected NCHW input, got {x.shape}")
    _check_inputs("avg_pool2d", (x,))
    n, c, h, w = x.shape
    ho = conv_out_size(h, kernel, stride, padding, 1)
    wo = conv_out_size(w, kernel, stride, padding, 1)
    xp = _pad(x.data, padding)
    ones = _pad(np.ones((1, 1, h, w), dtype=x.data.dtype), padding)
    count = _windows(ones, kernel, kernel, stride, 1, ho, wo).sum(axis=(-1, -2))
    out = _windows(xp, kernel, kernel, stride, 1, ho, wo).sum(axis=(-1, -2)) / count

    def bwd(g):
        gc = np.broadcast_to((g / count)[..., None, None], (n, c, ho, wo, kernel, kernel))
        return (_fold(gc, xp.shape, stride, 1, padding),)

    return _emit("avg_pool2d", out, (x,), bwd)


# ---------------------------------------------------------------------------
# dispatch by name
# ---------------------------------------------------------------------------

PRIMITIVES: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "sum": sum_all,
    "reshape": reshape,
    "getitem": getitem,
    "concat": concat,
    "weighted_sum": weighted_sum,
    "take": take,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "cross_entropy_mean": cross_entropy_mean,
    "linear": linear,
    "global_avg_pool": global_avg_pool,
    "batch_norm": batch_norm,
    "conv2d": conv2d,
    "max_pool2d": max_pool2d,
    "avg_pool2d": avg_pool2d,
}

_LIST_INPUT = {"concat"}
_WEIGHTED = {"weighted_sum"}


def primitive_forward(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Apply a primitive by name: ``primitive_forward("conv2d", [x, w], {"stride": 2})``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    attrs = attrs or {}
    if kind in _LIST_INPUT:
        return fn(list(inputs), **attrs)
    if kind in _WEIGHTED:
        return fn(inputs[0], list(inputs[1:]), **attrs)
    return fn(*inputs, **attrs)
