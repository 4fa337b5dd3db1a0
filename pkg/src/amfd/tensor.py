"""Dense float64 tensors with tape-based reverse-mode autodiff.

Covers exactly the operation set the distillation losses need: elementwise
arithmetic, channel-wise 1x1 mixing, softmax, layer-norm+relu, reductions,
2x2 pooling/upsampling, channel concatenation, and a handful of fused loss
kernels. Gradients are checked against :func:`finite_diff_grad` throughout
the test suite.

Usage pattern::

    with tape():
        loss = tsum(square(x))
        backward(loss)
    # x.grad now holds dloss/dx; the tape is cleared.

Ops record onto the innermost active tape only when some input requires
grad; outside any tape every op is a plain forward computation. Tensors
are immutable values after construction except for gradient accumulation,
so independent tapes may run on independent threads.
"""

from __future__ import annotations

import math
import os
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import backend as K
from .errors import (
    BadAxis,
    EmptyInput,
    NonFiniteValue,
    NotScalar,
    ShapeMismatch,
)

LAYER_NORM_EPS = 1e-5
MAX_RANK = 4

# When true, every op output is checked for NaN/Inf (construction always is).
DEBUG_CHECK_FINITE = os.environ.get("AMFD_DEBUG", "") not in ("", "0")


class Tensor:
    """A rank 0..4 grid of float64 values, optionally carrying a gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if arr.ndim > MAX_RANK:
            raise ShapeMismatch(f"rank {arr.ndim} exceeds the supported maximum {MAX_RANK}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    # -- construction helpers ----------------------------------------------------

    @staticmethod
    def zeros(shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(tuple(shape)), requires_grad)

    @staticmethod
    def from_array(arr, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.asarray(arr, dtype=np.float64), requires_grad)

    # -- introspection -------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise NotScalar(f"item() needs a single element, shape {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    # -- operator sugar -------------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def build(shape: Sequence[int], values: Iterable[float], requires_grad: bool = False) -> Tensor:
    """Construct a tensor from a flat row-major value list."""
    shape = tuple(int(s) for s in shape)
    vals = np.asarray(values if isinstance(values, np.ndarray) else list(values),
                      dtype=np.float64).ravel()
    expected = int(np.prod(shape)) if shape else 1
    if vals.size != expected:
        raise ShapeMismatch(f"{vals.size} values for shape {shape} (needs {expected})")
    return Tensor(vals.reshape(shape), requires_grad)


# -- the tape ----------------------------------------------------------------------

class AutodiffTape:
    """Ordered record of executed ops, replayed backward for gradients."""

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._entries.append((out, backward_fn))

    def backward(self, scalar: Tensor) -> None:
        if scalar.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {scalar.shape}")
        if not self._entries:
            raise NotScalar("backward() on an empty tape: no recorded operations")
        scalar.grad = np.ones_like(scalar.data)
        for out, fn in reversed(self._entries):
            if out.grad is not None:  # side outputs off the loss path have no grad
                fn(out.grad)
        self._entries.clear()

    def clear(self) -> None:
        self._entries.clear()


_tls = threading.local()


def _tape_stack() -> list[AutodiffTape]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> AutodiffTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class tape:
    """Context manager installing a fresh tape for this thread."""

    def __init__(self):
        self._tape = AutodiffTape()

    def __enter__(self) -> AutodiffTape:
        _tape_stack().append(self._tape)
        return self._tape

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop().clear()


def backward(scalar: Tensor) -> None:
    """Backpropagate from ``scalar`` through the active tape, then clear it."""
    t = active_tape()
    if t is None:
        raise NotScalar("backward() requires an active tape (use `with tape():`)")
    t.backward(scalar)


# -- op plumbing ----------------------------------------------------------------------

def _finite_check(arr: np.ndarray) -> None:
    if DEBUG_CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise NonFiniteValue("non-finite value produced by an operation")


def make_op(data: np.ndarray, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op output; record on the active tape when gradients can flow.

    ``backward_fn(g)`` receives the output gradient and must accumulate
    into the inputs' ``grad`` fields (see :func:`accumulate`). The fused
    ops in the attention and loss modules build on this hook.
    """
    _finite_check(data)
    t = active_tape()
    needs = t is not None and any(i.requires_grad for i in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = needs
    out.grad = None  # allocated lazily on first gradient contribution
    if needs:
        t.record(out, backward_fn)
    return out


def accumulate(t: Tensor, g) -> None:
    """Add a gradient contribution to a tensor (no-op for constants)."""
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad += g


def accumulate_owned(t: Tensor, g: np.ndarray) -> None:
    """Like :func:`accumulate` for arrays the caller just allocated.

    The first contribution takes ownership instead of copying, so ``g``
    must be a fresh dense array no one else holds.
    """
    if t.requires_grad:
        if t.grad is None:
            t.grad = g
        else:
            t.grad += g


def _same_shape(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{opname}: shapes {a.shape} and {b.shape} differ")


# -- elementwise suite ------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bwd(g):
        accumulate(a, g)
        accumulate(b, g)

    return make_op(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bwd(g):
        accumulate(a, g)
        accumulate_owned(b, -g)

    return make_op(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def bwd(g):
        accumulate_owned(a, g * b.data)
        accumulate_owned(b, g * a.data)

    return make_op(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        accumulate_owned(a, g * s)

    return make_op(a.data * s, (a,), bwd)


def square(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate_owned(a, g * (2.0 * a.data))

    return make_op(a.data * a.data, (a,), bwd)


def abs_(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate_owned(a, g * np.sign(a.data))

    return make_op(np.abs(a.data), (a,), bwd)


def relu(a: Tensor) -> Tensor:
    def bwd(g):
        accumulate_owned(a, g * (a.data > 0.0))

    return make_op(np.maximum(a.data, 0.0), (a,), bwd)


def broadcast_add(x: Tensor, w: Tensor) -> Tensor:
    """Add a (C,1,1) grid onto a (C,H,W) grid."""
    if x.data.ndim != 3 or w.shape != (x.shape[0], 1, 1):
        raise ShapeMismatch(
            f"broadcast_add: need (C,H,W) and (C,1,1), got {x.shape} and {w.shape}")

    def bwd(g):
        accumulate(x, g)
        accumulate_owned(w, g.sum(axis=(1, 2), keepdims=True))

    return make_op(x.data + w.data, (x, w), bwd)


# -- channel mixing (1x1 convolution) ----------------------------------------------------

def channel_mix(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-pixel linear map across channels: (C_in,H,W) -> (C_out,H,W)."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"channel_mix: input must be rank 3, got {x.shape}")
    c_in, h, wd = x.shape
    if w.data.ndim != 2 or w.shape[1] != c_in:
        raise ShapeMismatch(f"channel_mix: weight {w.shape} does not match input channels {c_in}")
    c_out = w.shape[0]
    if b.shape != (c_out,):
        raise ShapeMismatch(f"channel_mix: bias {b.shape} does not match out channels {c_out}")
    x2 = x.data.reshape(c_in, h * wd)
    y = K.channel_mix_fwd(w.data, b.data, x2)

    def bwd(g):
        g2 = np.ascontiguousarray(g.reshape(c_out, h * wd))
        if x.requires_grad:
            accumulate_owned(x, np.asarray(K.channel_mix_bwd_x(w.data, g2)).reshape(c_in, h, wd))
        if w.requires_grad or b.requires_grad:
            gw, gb = K.channel_mix_bwd_w(x2, g2)
            accumulate_owned(w, np.asarray(gw))
            accumulate_owned(b, np.asarray(gb))

    return make_op(np.asarray(y).reshape(c_out, h, wd), (x, w, b), bwd)


# -- softmax / layer norm -----------------------------------------------------------------

def softmax(v: Tensor) -> Tensor:
    """Stable softmax over a rank-1 tensor."""
    if v.data.ndim != 1:
        raise ShapeMismatch(f"softmax: input must be rank 1, got {v.shape}")
    if v.data.size == 0:
        raise EmptyInput("softmax: empty input")
    p = np.asarray(K.softmax1d_fwd(v.data))

    def bwd(g):
        accumulate_owned(v, np.asarray(K.softmax1d_bwd(p, np.ascontiguousarray(g))))

    return make_op(p, (v,), bwd)


def layer_norm_relu(x: Tensor) -> Tensor:
    """Normalize a (C,1,1) grid to zero mean / unit variance, then relu."""
    if x.data.ndim != 3 or x.shape[1:] != (1, 1):
        raise ShapeMismatch(f"layer_norm_relu: need (C,1,1), got {x.shape}")
    c = x.shape[0]
    flat = x.data.reshape(c)
    mu = flat.mean()
    var = float(((flat - mu) ** 2).mean())
    inv_std = 1.0 / math.sqrt(var + LAYER_NORM_EPS)
    xhat = (flat - mu) * inv_std

    def bwd(g):
        gh = g.reshape(c) * (xhat > 0.0)
        gm = gh.mean()
        gxm = (gh * xhat).mean()
        accumulate_owned(x, (inv_std * (gh - gm - xhat * gxm)).reshape(c, 1, 1))

    return make_op(np.maximum(xhat, 0.0).reshape(c, 1, 1), (x,), bwd)


# -- reductions ------------------------------------------------------------------------

def _check_axes(rank: int, axes) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(rank))
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    norm = []
    for ax in axes:
        if not -rank <= ax < rank:
            raise BadAxis(f"axis {ax} out of range for rank {rank}")
        norm.append(ax % rank)
    if len(set(norm)) != len(norm):
        raise BadAxis(f"repeated axis in {axes}")
    return tuple(sorted(norm))


def tsum(x: Tensor, axes=None) -> Tensor:
    axes = _check_axes(x.data.ndim, axes)

    def bwd(g):
        accumulate(x, np.broadcast_to(np.expand_dims(g, axes), x.shape))

    return make_op(x.data.sum(axis=axes), (x,), bwd)


def tmean(x: Tensor, axes=None) -> Tensor:
    axes = _check_axes(x.data.ndim, axes)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def bwd(g):
        accumulate(x, np.broadcast_to(np.expand_dims(g / count, axes), x.shape))

    return make_op(x.data.sum(axis=axes) / count, (x,), bwd)


def mean_abs(x: Tensor, axes=None) -> Tensor:
    """Mean of absolute values over ``axes``; fused fast paths for rank-3 grids."""
    axes = _check_axes(x.data.ndim, axes)
    if x.data.ndim == 3 and axes == (0,):
        c, h, w = x.shape
        x2 = x.data.reshape(c, h * w)

        def bwd0(g):
            accumulate_owned(x, np.asarray(
                K.mean_abs_axis0_bwd(x2, np.ascontiguousarray(g.reshape(h * w)))
            ).reshape(c, h, w))

        return make_op(np.asarray(K.mean_abs_axis0_fwd(x2)).reshape(h, w), (x,), bwd0)
    if x.data.ndim == 3 and axes == (1, 2):
        c, h, w = x.shape
        x2 = x.data.reshape(c, h * w)

        def bwd1(g):
            accumulate_owned(x, np.asarray(
                K.mean_abs_axis1_bwd(x2, np.ascontiguousarray(g))).reshape(c, h, w))

        return make_op(np.asarray(K.mean_abs_axis1_fwd(x2)), (x,), bwd1)
    return tmean(abs_(x), axes)


def reduce_(x: Tensor, kind: str, axes=None) -> Tensor:
    """Generic reduction: ``kind`` in {'sum', 'mean', 'mean_abs'}."""
    if kind == "sum":
        return tsum(x, axes)
    if kind == "mean":
        return tmean(x, axes)
    if kind == "mean_abs":
        return mean_abs(x, axes)
    raise BadAxis(f"unknown reduction kind {kind!r}")


# -- structural ops ----------------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeMismatch(f"reshape: cannot view {x.shape} as {shape}")

    def bwd(g):
        accumulate(x, g.reshape(x.shape))

    # Tensors are immutable after construction, so a view is safe here.
    return make_op(x.data.reshape(shape), (x,), bwd)


def concat_ch(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (C,H,W) grids along the channel axis."""
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeMismatch(f"concat_ch: incompatible shapes {a.shape}, {b.shape}")
    ca = a.shape[0]

    def bwd(g):
        accumulate(a, g[:ca])
        accumulate(b, g[ca:])

    return make_op(np.concatenate([a.data, b.data], axis=0), (a, b), bwd)


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 on a (C,H,W) grid; H and W must be even."""
    if x.data.ndim != 3 or x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeMismatch(f"avgpool2: need (C,2h,2w), got {x.shape}")
    c, h, w = x.shape

    def bwd(g):
        gh, gw = g.shape[1], g.shape[2]
        spread = np.broadcast_to(g[:, :, None, :, None] * 0.25,
                                 (c, gh, 2, gw, 2)).reshape(c, h, w)
        accumulate(x, spread)

    return make_op(x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4)), (x,), bwd)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of a (C,H,W) grid."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"upsample2: need rank 3, got {x.shape}")

    def bwd(g):
        c, h2, w2 = g.shape
        accumulate_owned(x, g.reshape(c, h2 // 2, 2, w2 // 2, 2).sum(axis=(2, 4)))

    c, h, w = x.shape
    up = np.broadcast_to(x.data[:, :, None, :, None], (c, h, 2, w, 2)).reshape(c, 2 * h, 2 * w)
    return make_op(up, (x,), bwd)


# -- fused loss kernels ---------------------------------------------------------------------

def sq_diff_sum(a: Tensor, b: Tensor) -> Tensor:
    """Scalar sum of squared differences."""
    _same_shape(a, b, "sq_diff_sum")
    af, bf = a.data.ravel(), b.data.ravel()

    def bwd(g):
        ga = np.asarray(K.sq_diff_sum_bwd(af, bf, float(g))).reshape(a.shape)
        accumulate(a, ga)
        accumulate_owned(b, -ga)

    return make_op(np.asarray(K.sq_diff_sum_fwd(af, bf)), (a, b), bwd)


def abs_diff_sum(a: Tensor, b: Tensor) -> Tensor:
    """Scalar sum of absolute differences (L1)."""
    _same_shape(a, b, "abs_diff_sum")
    af, bf = a.data.ravel(), b.data.ravel()

    def bwd(g):
        ga = np.asarray(K.abs_diff_sum_bwd(af, bf, float(g))).reshape(a.shape)
        accumulate(a, ga)
        accumulate_owned(b, -ga)

    return make_op(np.asarray(K.abs_diff_sum_fwd(af, bf)), (a, b), bwd)


def weighted_sq_diff_sum(weight: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Scalar sum of ``weight * (a - b)**2`` with a constant weight grid."""
    _same_shape(a, b, "weighted_sq_diff_sum")
    if weight.shape != a.shape:
        raise ShapeMismatch(f"weight {weight.shape} does not match operands {a.shape}")
    wf = np.ascontiguousarray(weight, dtype=np.float64).ravel()
    af, bf = a.data.ravel(), b.data.ravel()

    def bwd(g):
        ga = np.asarray(K.weighted_sq_diff_sum_bwd(wf, af, bf, float(g))).reshape(a.shape)
        accumulate(a, ga)
        accumulate_owned(b, -ga)

    return make_op(np.asarray(K.weighted_sq_diff_sum_fwd(wf, af, bf)), (a, b), bwd)


def pixel_weighted_sum(x: Tensor, p: Tensor) -> Tensor:
    """Weighted sum of pixel slices: (C,H,W) x (H*W,) -> (C,)."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"pixel_weighted_sum: need rank 3, got {x.shape}")
    c, h, w = x.shape
    if p.shape != (h * w,):
        raise ShapeMismatch(f"pixel weights {p.shape} do not match {h}x{w} pixels")
    x2 = x.data.reshape(c, h * w)

    def bwd(g):
        gx, gp = K.pixel_weighted_sum_bwd(x2, p.data, np.ascontiguousarray(g))
        if x.requires_grad:
            accumulate(x, np.asarray(gx).reshape(c, h, w))
        accumulate(p, gp)

    return make_op(np.asarray(K.pixel_weighted_sum_fwd(x2, p.data)), (x, p), bwd)


def bce_with_logits(z: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy against constant 0/1 targets."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != z.shape:
        raise ShapeMismatch(f"bce targets {y.shape} do not match logits {z.shape}")
    zd = z.data

    def bwd(g):
        accumulate_owned(z, g * (1.0 / (1.0 + np.exp(-zd)) - y))

    return make_op(np.maximum(zd, 0.0) - zd * y + np.log1p(np.exp(-np.abs(zd))),
                   (z,), bwd)


# -- gradient oracle --------------------------------------------------------------------------

def finite_diff_grad(f: Callable[[Tensor], "Tensor | float"], x: Tensor,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of ``x``.

    ``f`` must be deterministic and pure; it is evaluated outside any tape.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")

    def eval_at(arr: np.ndarray) -> float:
        out = f(Tensor(arr))
        return float(out)

    base = x.data
    grad = np.zeros_like(base)
    flat = grad.ravel()
    for i in range(base.size):
        pert = base.copy().ravel()
        pert[i] += eps
        hi = eval_at(pert.reshape(base.shape))
        pert[i] -= 2 * eps
        lo = eval_at(pert.reshape(base.shape))
        flat[i] = (hi - lo) / (2 * eps)
    return grad


# -- AdamW ---------------------------------------------------------------------------------

def adamw_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
               step: int, lr: float = 1e-4, weight_decay: float = 1e-4,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One decoupled-weight-decay Adam update, in place on ``param``/``m``/``v``."""
    if not (param.shape == grad.shape == m.shape == v.shape):
        raise ShapeMismatch("adamw_step: parameter/gradient/moment shapes differ")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    param -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * param)


class AdamW:
    """AdamW over an ordered list of named parameter tensors."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float = 1e-4,
                 weight_decay: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in self.params}
        self.v = {n: np.zeros_like(t.data) for n, t in self.params}

    def step(self) -> None:
        self.step_count += 1
        for name, t in self.params:
            if t.grad is None:
                continue
            adamw_step(t.data, t.grad, self.m[name], self.v[name], self.step_count,
                       self.lr, self.weight_decay, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for _, t in self.params:
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment grids plus the step counter, keyed for checkpointing."""
        out: dict[str, np.ndarray] = {"opt.step": np.asarray(float(self.step_count))}
        for name, _ in self.params:
            out[f"opt.m.{name}"] = self.m[name]
            out[f"opt.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays["opt.step"])
        for name, t in self.params:
            m = arrays[f"opt.m.{name}"]
            vv = arrays[f"opt.v.{name}"]
            if m.shape != t.data.shape or vv.shape != t.data.shape:
                raise ShapeMismatch(f"optimizer state for {name} has wrong shape")
            self.m[name] = m.astype(np.float64).copy()
            self.v[name] = vv.astype(np.float64).copy()
