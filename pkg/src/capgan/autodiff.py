"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation on tensors that require gradients records a backward
closure on its output. ``Tensor.backward`` replays closures in reverse
creation order, which is a valid topological order because an operation
can only consume tensors created before it. Fan-out accumulates with
plain ``+=`` in that fixed order, so gradients are deterministic.

numpy is used for array storage and BLAS matmul only; all derivatives
are written out here.
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_order_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference and detached forward passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


_kink_trace: list[bytes] | None = None


@contextmanager
def trace_kinks():
    """Record which side of each piecewise boundary every element lands on.

    Yields a list that leaky_relu and clamp append side fingerprints to.
    Two traces of the same graph differing means some input crossed a
    kink between the evaluations; a central difference across such a
    window stops measuring the derivative backprop computes, so gradient
    checks use this to reject the probe point rather than the gradient.
    """
    global _kink_trace
    prev = _kink_trace
    _kink_trace = trace = []
    try:
        yield trace
    finally:
        _kink_trace = prev


class Tensor:
    """A dense float64 array plus an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._order = next(_order_counter)

    # -- bookkeeping ---------------------------------------------------

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def backward(self) -> None:
        """Backpropagate from a scalar; accumulates into ``.grad`` leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._order, reverse=True)
        if self.grad is None:
            self.grad = np.ones_like(self.data)
        for t in nodes:
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def _scalar_err(t):
    raise ValueError(f"item() requires a scalar, got shape {t.data.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap an op result; record the closure only when a parent needs grad."""
    out = Tensor(data)
    if _grad_enabled:
        grads = tuple(p for p in parents if p.requires_grad)
        if grads:
            out.requires_grad = True
            out._parents = grads
            out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if not isinstance(p, (int, float)):
        raise TypeError("power exponent must be a python scalar")
    data = a.data**p

    def backward(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        _accum(a, g * data)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * 0.5 / data)

    return _make(data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - data * data))

    return _make(data, (a,), backward)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    # max(x, slope*x) equals the leaky rectifier for 0 < slope < 1
    data = a.data * slope
    np.maximum(a.data, data, out=data)
    if _kink_trace is not None:
        _kink_trace.append(np.signbit(a.data).tobytes())
    factor = np.where(a.data > 0, 1.0, slope) if a.requires_grad and _grad_enabled else None

    def backward(g):
        _accum(a, g * factor)

    return _make(data, (a,), backward)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip to [lo, hi]; gradient passes through the interior and the edges."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = np.ones(a.data.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    if _kink_trace is not None:
        _kink_trace.append(inside.tobytes())

    def backward(g):
        _accum(a, g * inside)

    return _make(data, (a,), backward)


# -- shape ops -----------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(orig))

    return _make(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accum(a, g.transpose(inv))

    return _make(data, (a,), backward)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(data, tuple(tensors), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# -- linear algebra --------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax of a 2-D matrix; rows sum to exactly the fp-sum of terms."""
    a = as_tensor(a)
    if a.data.ndim != 2 or a.data.size == 0:
        raise ValueError(f"softmax_rows requires a non-empty 2-D matrix, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        _accum(a, data * (g - dot))

    return _make(data, (a,), backward)


def log_softmax_rows(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2 or a.data.size == 0:
        raise ValueError(f"log_softmax_rows requires a non-empty 2-D matrix, got shape {a.data.shape}")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    soft = np.exp(data)

    def backward(g):
        _accum(a, g - soft * g.sum(axis=1, keepdims=True))

    return _make(data, (a,), backward)


class CosineFlags:
    """Counts zero-norm inputs seen by cosine ops (keeps training loops alive)."""

    __slots__ = ("zero_norm_count",)

    def __init__(self):
        self.zero_norm_count = 0


def column_cosine(a, b, flags: CosineFlags | None = None) -> Tensor:
    """Cosine similarity of matching columns: (B, D, L) x (B, D, L) -> (B, L).

    Columns with zero norm on either side score 0 and get zero gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 3:
        raise ValueError(f"column_cosine wants equal (B, D, L) shapes, got {a.data.shape} vs {b.data.shape}")
    na = np.sqrt((a.data * a.data).sum(axis=1))  # (B, L)
    nb = np.sqrt((b.data * b.data).sum(axis=1))
    dead = (na == 0.0) | (nb == 0.0)
    if flags is not None and dead.any():
        flags.zero_norm_count += int(dead.sum())
    sna = np.where(dead, 1.0, na)
    snb = np.where(dead, 1.0, nb)
    dot = (a.data * b.data).sum(axis=1)
    data = np.where(dead, 0.0, dot / (sna * snb))

    def backward(g):
        ge = np.where(dead, 0.0, g)[:, None, :]
        inv = (1.0 / (sna * snb))[:, None, :]
        cos_term = data[:, None, :]
        _accum(a, ge * (b.data * inv - cos_term * a.data / (sna * sna)[:, None, :]))
        _accum(b, ge * (a.data * inv - cos_term * b.data / (snb * snb)[:, None, :]))

    return _make(data, (a, b), backward)


def cosine_similarity(u, v, flags: CosineFlags | None = None) -> Tensor:
    """Cosine of two vectors; zero-norm input yields 0 with a diagnostic flag."""
    u, v = as_tensor(u), as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1 or u.data.shape != v.data.shape:
        raise ValueError("cosine_similarity wants two equal-length vectors")
    d = u.data.shape[0]
    out = column_cosine(reshape(u, (1, d, 1)), reshape(v, (1, d, 1)), flags=flags)
    return reshape(out, ())


# -- image ops -------------------------------------------------------------


def _pad_nhwc(xh: np.ndarray, ph: int, pw: int, reflect: bool) -> np.ndarray:
    """Pad (B, H, W, C) spatially by (ph, pw) per side; plain slice assigns
    run much faster than the generic np.pad path on hot conv shapes."""
    B, H, W, C = xh.shape
    out = np.empty((B, H + 2 * ph, W + 2 * pw, C))
    out[:, ph : ph + H, pw : pw + W, :] = xh
    if reflect:
        for i in range(ph):
            out[:, ph - 1 - i, :, :] = out[:, ph + 1 + i, :, :]
            out[:, ph + H + i, :, :] = out[:, ph + H - 2 - i, :, :]
        # column pass mirrors the already-filled rows, covering the corners
        for j in range(pw):
            out[:, :, pw - 1 - j, :] = out[:, :, pw + 1 + j, :]
            out[:, :, pw + W + j, :] = out[:, :, pw + W - 2 - j, :]
    else:
        if ph:
            out[:, :ph, :, :] = 0.0
            out[:, ph + H :, :, :] = 0.0
        if pw:
            out[:, :, :pw, :] = 0.0
            out[:, :, pw + W :, :] = 0.0
    return out


def conv2d(x, w, b=None, stride: int = 1, padding: str = "reflect") -> Tensor:
    """2-D convolution of (B, Cin, H, W) with (Cout, Cin, kh, kw) filters.

    Odd kernels pad by k//2 per side ("reflect" or "zero"); 1x1 kernels
    skip padding. Internally channels-last and lowered to BLAS matmuls.
    Unit-stride convs never materialise the patch matrix of the input:
    the forward either extracts patches or, when Cout < Cin, runs the
    cheaper shift-after-matmul form, and the backward correlates the
    output gradient with the flipped filter, reusing that one patch
    extraction for both the input and the filter gradient. Strided
    convs keep the classic patch-matrix forward and scatter backward.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    B, Cin, H, W = x.data.shape
    Cout, Cin2, kh, kw = w.data.shape
    if Cin != Cin2:
        raise ValueError(f"conv2d channel mismatch: input {Cin}, filter {Cin2}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d supports odd kernels only")
    ph, pw = kh // 2, kw // 2
    if padding not in ("reflect", "zero"):
        raise ValueError(f"unknown padding mode: {padding!r}")
    xh = x.data.transpose(0, 2, 3, 1)  # (B, H, W, C) view
    if ph or pw:
        pad = _pad_nhwc(xh, ph, pw, padding == "reflect")
    else:
        pad = np.ascontiguousarray(xh)
    Hp, Wp = H + 2 * ph, W + 2 * pw
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    pointwise = kh == 1 and kw == 1 and stride == 1
    cols = None
    if pointwise:
        out = pad.reshape(B * H * W, Cin) @ w.data.reshape(Cout, Cin).T
    elif stride == 1 and Cout < Cin:
        # shift-after-matmul: project once per padded pixel, then sum the
        # nine shifted slices; avoids the k*k*Cin-wide patch matrix
        wbig = w.data.transpose(1, 2, 3, 0).reshape(Cin, kh * kw * Cout)
        tmp = (pad.reshape(-1, Cin) @ wbig).reshape(B, Hp, Wp, kh, kw, Cout)
        acc = tmp[:, 0:Ho, 0:Wo, 0, 0, :].copy()
        for a in range(kh):
            for c in range(kw):
                if a or c:
                    acc += tmp[:, a : a + Ho, c : c + Wo, a, c, :]
        out = acc.reshape(B * Ho * Wo, Cout)
    else:
        win = np.lib.stride_tricks.sliding_window_view(pad, (kh, kw), axis=(1, 2))
        win = win[:, ::stride, ::stride].transpose(0, 1, 2, 4, 5, 3)  # (B, Ho, Wo, kh, kw, C)
        cols = np.ascontiguousarray(win).reshape(B * Ho * Wo, kh * kw * Cin)
        out = cols @ w.data.transpose(2, 3, 1, 0).reshape(kh * kw * Cin, Cout)
    if b is not None:
        out += b.data
    data = np.ascontiguousarray(out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2))

    def backward(g):
        gh = np.ascontiguousarray(g.transpose(0, 2, 3, 1))
        gmat = gh.reshape(B * Ho * Wo, Cout)
        if b is not None and b.requires_grad:
            _accum(b, gmat.sum(axis=0))
        if pointwise:
            if w.requires_grad:
                _accum(w, (gmat.T @ pad.reshape(B * H * W, Cin)).reshape(w.data.shape))
            if x.requires_grad:
                gx = (gmat @ w.data.reshape(Cout, Cin)).reshape(B, H, W, Cin)
                _accum(x, np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))
            return
        if stride == 1:
            if not (w.requires_grad or x.requires_grad):
                return
            # one patch extraction of the (usually thinner) output gradient
            # serves both grads: gpad = corr(g, flipped w), gW = pad^T @ patches
            gbig = _pad_nhwc(gh, kh - 1, kw - 1, False)
            gwin = np.lib.stride_tricks.sliding_window_view(gbig, (kh, kw), axis=(1, 2))
            cols_g = np.ascontiguousarray(gwin.transpose(0, 1, 2, 4, 5, 3)).reshape(
                B * Hp * Wp, kh * kw * Cout
            )
            if w.requires_grad:
                gwm = pad.reshape(-1, Cin).T @ cols_g  # (Cin, kh*kw*Cout)
                gw = gwm.reshape(Cin, kh, kw, Cout)[:, ::-1, ::-1, :].transpose(3, 0, 1, 2)
                _accum(w, np.ascontiguousarray(gw))
            if not x.requires_grad:
                return
            w2 = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kw * Cout, Cin)
            gpad = (cols_g @ w2).reshape(B, Hp, Wp, Cin)
        else:
            if w.requires_grad:
                gw = (cols.T @ gmat).reshape(kh, kw, Cin, Cout).transpose(3, 2, 0, 1)
                _accum(w, np.ascontiguousarray(gw))
            if not x.requires_grad:
                return
            gcols = gmat @ w.data.transpose(2, 3, 1, 0).reshape(kh * kw * Cin, Cout).T
            gwin = gcols.reshape(B, Ho, Wo, kh, kw, Cin)
            gpad = np.zeros((B, Hp, Wp, Cin))
            for a in range(kh):
                for c in range(kw):
                    gpad[:, a : a + stride * Ho : stride, c : c + stride * Wo : stride, :] += gwin[
                        :, :, :, a, c, :
                    ]
        if ph or pw:
            if padding == "zero":
                gx = gpad[:, ph : ph + H, pw : pw + W, :]
            else:
                gx = _fold_reflect(gpad, ph, pw, H, W)
        else:
            gx = gpad
        _accum(x, np.ascontiguousarray(gx.transpose(0, 3, 1, 2)))

    return _make(data, (x, w) if b is None else (x, w, b), backward)


def _fold_reflect(gpad: np.ndarray, ph: int, pw: int, H: int, W: int) -> np.ndarray:
    """Adjoint of reflect padding (channels-last): mirror border gradients inside."""
    gx = gpad[:, ph : ph + H, pw : pw + W, :].copy()
    for i in range(ph):
        # padded row i mirrors interior row (ph - i); same on the far side
        gx[:, ph - i, :, :] += gpad[:, i, pw : pw + W, :]
        gx[:, H - 1 - (ph - i), :, :] += gpad[:, ph + H + (ph - 1 - i), pw : pw + W, :]
    for j in range(pw):
        gx[:, :, pw - j, :] += gpad[:, ph : ph + H, j, :]
        gx[:, :, W - 1 - (pw - j), :] += gpad[:, ph : ph + H, pw + W + (pw - 1 - j), :]
    for i in range(ph):
        for j in range(pw):
            gx[:, ph - i, pw - j, :] += gpad[:, i, j, :]
            gx[:, ph - i, W - 1 - (pw - j), :] += gpad[:, i, pw + W + (pw - 1 - j), :]
            gx[:, H - 1 - (ph - i), pw - j, :] += gpad[:, ph + H + (ph - 1 - i), j, :]
            gx[:, H - 1 - (ph - i), W - 1 - (pw - j), :] += gpad[
                :, ph + H + (ph - 1 - i), pw + W + (pw - 1 - j), :
            ]
    return gx


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x upsampling of (B, C, H, W)."""
    x = as_tensor(x)
    B, C, H, W = x.data.shape
    data = np.broadcast_to(x.data[:, :, :, None, :, None], (B, C, H, 2, W, 2)).reshape(
        B, C, 2 * H, 2 * W
    )

    def backward(g):
        _accum(x, g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)))

    return _make(data, (x,), backward)


def channel_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over spatial dims with affine.

    Statistics never cross the batch axis, so results are independent of
    batch composition.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.data.ndim != 4:
        raise ValueError("channel_norm expects (B, C, H, W)")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    xhat = x.data - mu
    var = (xhat * xhat).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat *= inv
    gb = gamma.data[None, :, None, None]
    data = xhat * gb
    data += beta.data[None, :, None, None]

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3)))
        if not x.requires_grad:
            return
        gg = g * gb
        m2 = (gg * xhat).mean(axis=(2, 3), keepdims=True)
        gg -= gg.mean(axis=(2, 3), keepdims=True)
        gg -= xhat * m2
        gg *= inv
        _accum(x, gg)

    return _make(data, (x, gamma, beta), backward)


def embedding(weight, indices) -> Tensor:
    """Row lookup: (V, E) weights gathered by an int array of any shape."""
    weight = as_tensor(weight)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    data = weight.data[idx]

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx, g)
        _accum(weight, gw)

    return _make(data, (weight,), backward)


def expand_spatial(v, H: int, W: int) -> Tensor:
    """Tile (B, D) features to (B, D, H, W)."""
    v = as_tensor(v)
    data = np.broadcast_to(v.data[:, :, None, None], v.data.shape + (H, W)).copy()

    def backward(g):
        _accum(v, g.sum(axis=(2, 3)))

    return _make(data, (v,), backward)


# -- verification ----------------------------------------------------------


def finite_diff_grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` maps ``x`` to a scalar Tensor and must not mutate ``x``. Error is
    |analytic - numeric| / max(1, |analytic|), maximized over coordinates.
    """
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ValueError("grad check target must be scalar")
    out.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    numeric = np.zeros_like(analytic).reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2.0 * eps)
    numeric = numeric.reshape(analytic.shape)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
