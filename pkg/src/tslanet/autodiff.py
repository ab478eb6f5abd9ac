"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every op builds a node holding its parents and a closure that maps the output
cotangent to one cotangent per parent.  ``Tensor.backward`` walks the nodes in
reverse topological order (the tape) and accumulates into ``.grad`` of leaf
tensors created with ``requires_grad=True``.

Complex values never enter the graph: spectra travel as ``(re, im)`` pairs of
real tensors, see :func:`rdft`, :func:`irdft` and :func:`complex_mul`.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy import special

from . import spectral

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "is_grad_enabled",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scalar_mul",
    "exp",
    "log",
    "square",
    "sqrt",
    "absolute",
    "gelu",
    "sigmoid",
    "matmul",
    "conv1d",
    "tensor_sum",
    "mean",
    "reshape",
    "permute",
    "layer_norm",
    "log_softmax",
    "dropout",
    "normalize_by_max",
    "unfold",
    "fold_mean",
    "complex_mul",
    "rdft",
    "irdft",
    "numerical_grad",
    "gradcheck",
]


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


_GRAD_ENABLED = True


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording nodes."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array with an optional gradient."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

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
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Calling twice without clearing gradients adds the second result to the
        first.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != self.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} != {self.shape}")

        tape = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError as exc:
        raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible") from exc


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a.shape, b.shape)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
        "div",
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def scalar_mul(a, c: float) -> Tensor:
    a = _lift(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,), "scalar_mul")


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _lift(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a) -> Tensor:
    a = _lift(a)
    return _node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def absolute(a) -> Tensor:
    a = _lift(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x) with the Gaussian CDF written through erf."""
    a = _lift(a)
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return _node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),), "gelu")


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = special.expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b) -> Tensor:
    """``a[..., k] @ b[k, n]``; leading axes of ``a`` are treated as a batch."""
    a, b = _lift(a), _lift(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, b.shape[0]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _node(a.data @ b.data, (a, b), vjp, "matmul")


def _same_padding(k: int) -> tuple[int, int]:
    # Even kernels put the extra zero on the left.
    return k // 2, (k - 1) // 2


def conv1d(x, kernel, bias=None, padding: str = "same") -> Tensor:
    """Cross-correlation of ``x[B, Cin, L]`` with ``kernel[Cout, Cin, k]``."""
    x, kernel = _lift(x), _lift(kernel)
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv1d shape mismatch: x {x.shape}, kernel {kernel.shape}")
    k = kernel.shape[2]
    if padding == "same":
        left, right = _same_padding(k)
    elif padding == "valid":
        left = right = 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    length = x.shape[2]
    if k > length + left + right:
        raise ValueError(f"kernel size {k} exceeds padded length {length + left + right}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B, Cin, Lout, k]
    out = np.einsum("bclk,ock->bol", windows, kernel.data, optimize=True)
    parents = [x, kernel]
    if bias is not None:
        bias = _lift(bias)
        if bias.shape != (kernel.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({kernel.shape[0]},)")
        out = out + bias.data[None, :, None]
        parents.append(bias)
    lout = out.shape[2]

    def vjp(g):
        gk = np.einsum("bol,bclk->ock", g, windows, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j : j + lout] += np.einsum("bol,oc->bcl", g, kernel.data[:, :, j])
        gx = gxp[:, :, left : left + length]
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return _node(out, parents, vjp, "conv1d")


# ---------------------------------------------------------------------------
# reductions and shape


def _norm_axis(axis, ndim: int):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(np.asarray(out), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scalar_mul(tensor_sum(a, axes, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def permute(a, axes) -> Tensor:
    a = _lift(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(
        np.ascontiguousarray(a.data.transpose(axes)),
        (a,),
        lambda g: (g.transpose(inv),),
        "permute",
    )


# ---------------------------------------------------------------------------
# composite layers with hand-written adjoints


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x, gain, bias = _lift(x), _lift(gain), _lift(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm affine shape must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx_hat = g * gain.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(out, (x, gain, bias), vjp, "layer_norm")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return _node(
        out,
        (a,),
        lambda g: (g - soft * g.sum(axis=axis, keepdims=True),),
        "log_softmax",
    )


def dropout(a, p: float, rng: np.random.Generator | None, train: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale by 1/(1-p)."""
    a = _lift(a)
    if not train or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    return _node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def normalize_by_max(a, axis: int = -1) -> Tensor:
    """``a / max(a)`` along ``axis``; slices whose max is zero map to zero.

    The max is differentiated through its first arg-max.
    """
    a = _lift(a)
    axis = axis % a.ndim
    m = a.data.max(axis=axis, keepdims=True)
    safe = np.where(m > 0.0, m, 1.0)
    live = (m > 0.0).astype(np.float64)
    out = a.data / safe * live
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)

    def vjp(g):
        ga = g / safe * live
        corr = -(g * a.data).sum(axis=axis, keepdims=True) / (safe * safe) * live
        np.put_along_axis(ga, arg, np.take_along_axis(ga, arg, axis) + corr, axis)
        return (ga,)

    return _node(out, (a,), vjp, "normalize_by_max")


def unfold(a, size: int, step: int) -> Tensor:
    """Sliding windows over the last axis: ``[..., L] -> [..., M, size]``."""
    a = _lift(a)
    length = a.shape[-1]
    if size > length:
        raise ValueError(f"window {size} longer than axis of length {length}")
    m = (length - size) // step + 1
    idx = np.arange(m)[:, None] * step + np.arange(size)[None, :]
    out = a.data[..., idx]

    def vjp(g):
        ga = np.zeros(a.shape)
        for j in range(size):
            ga[..., j : j + step * (m - 1) + 1 : step] += g[..., :, j]
        return (ga,)

    return _node(out, (a,), vjp, "unfold")


def fold_mean(a, length: int, step: int) -> Tensor:
    """Overlap-average ``[..., M, size]`` windows back onto ``[..., length]``.

    Positions covered by no window are zero.
    """
    a = _lift(a)
    m, size = a.shape[-2], a.shape[-1]
    if step * (m - 1) + size > length:
        raise ValueError("windows extend beyond the target length")
    count = np.zeros(length)
    out = np.zeros(a.shape[:-2] + (length,))
    for j in range(size):
        sl = slice(j, j + step * (m - 1) + 1, step)
        out[..., sl] += a.data[..., :, j]
        count[sl] += 1.0
    scale = np.where(count > 0, 1.0 / np.maximum(count, 1.0), 0.0)
    out *= scale

    def vjp(g):
        gs = g * scale
        ga = np.empty(a.shape)
        for j in range(size):
            ga[..., :, j] = gs[..., j : j + step * (m - 1) + 1 : step]
        return (ga,)

    return _node(out, (a,), vjp, "fold_mean")


# ---------------------------------------------------------------------------
# paired-real complex arithmetic and transforms


def complex_mul(a: tuple, b: tuple) -> tuple[Tensor, Tensor]:
    """(ar + j ai)(br + j bi) with broadcasting, on (re, im) pairs."""
    ar, ai = a
    br, bi = b
    return sub(mul(ar, br), mul(ai, bi)), add(mul(ar, bi), mul(ai, br))


def _rdft_adjoint(g: np.ndarray, n: int) -> np.ndarray:
    # Re(sum_k G[k] e^{+j 2 pi k n / N}) with G zero-padded to N bins.
    padded = np.zeros(g.shape[:-1] + (n,), dtype=np.complex128)
    padded[..., : g.shape[-1]] = g
    return (spectral.ifft(padded) * n).real


def rdft(x) -> tuple[Tensor, Tensor]:
    """Half-spectrum DFT over the last axis, returned as ``(re, im)``."""
    x = _lift(x)
    n = x.shape[-1]
    spec = spectral.rdft(x.data).values
    re = _node(spec.real.copy(), (x,), lambda g: (_rdft_adjoint(g, n),), "rdft.re")
    im = _node(spec.imag.copy(), (x,), lambda g: (_rdft_adjoint(1j * g, n),), "rdft.im")
    return re, im


def irdft(re, im, n: int) -> Tensor:
    """Real inverse of a half spectrum given as ``(re, im)`` over the last axis."""
    re, im = _lift(re), _lift(im)
    if re.shape != im.shape:
        raise ShapeError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
    k = re.shape[-1]
    out = spectral.irdft(re.data + 1j * im.data, n)
    weight = np.full(k, 2.0 / n)
    weight[0] = 1.0 / n
    if n % 2 == 0:
        weight[-1] = 1.0 / n

    def vjp(g):
        r = spectral.rdft(g).values
        return r.real * weight, r.imag * weight

    return _node(out, (re, im), vjp, "irdft")


# ---------------------------------------------------------------------------
# finite-difference checking


def numerical_grad(f: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``t.data``."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f().item()
            flat[i] = old - h
            fm = f().item()
            flat[i] = old
            gflat[i] = (fp - fm) / (2.0 * h)
    return g


def gradcheck(
    f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5
) -> dict[str, float]:
    """Relative error between analytic and central-difference gradients.

    Returns one entry per input, keyed by its name (or position).  The error
    is ``max|analytic - numeric| / max(max|numeric|, max|analytic|, 1e-6)``.
    """
    for t in inputs:
        t.zero_grad()
    f().backward()
    errors = {}
    for i, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_grad(f, t, h)
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-6)
        errors[t.name or str(i)] = float(np.abs(analytic - numeric).max(initial=0.0) / scale)
    return errors
