"""Dense NCHW tensors with a replayable reverse-mode gradient tape.

Everything the networks compute flows through the small op set in this
module: elementwise math, channel concat/split/softmax, 2d convolution and
its stride-2 transpose, and the MSE loss. Ops record onto the innermost
active ``GradTape``; ``backward`` replays the tape in reverse recording
order and accumulates gradients into every reachable ``requires_grad``
tensor. Forward math runs in the dtype of its inputs (float32 in normal
use, float64 for the finite-difference reference path); loss reductions
always accumulate in float64.
"""

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class NumericError(ArithmeticError):
    """A forward op produced NaN/Inf."""


class ContractError(RuntimeError):
    """An op was called outside its stated preconditions."""


_local = threading.local()

# finiteness screening of every op output; cheap, and NaN/Inf must never
# propagate silently
_check_finite = True


def set_finite_checks(enabled):
    global _check_finite
    prev = _check_finite
    _check_finite = bool(enabled)
    return prev


def _tape_stack():
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A contiguous (n, c, h, w) float array, optionally grad-tracked.

    ``grad`` is allocated lazily during backward and has the same shape
    and dtype as ``data``. Scalars (losses) are shape (1, 1, 1, 1).
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4d (n, c, h, w); got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def numel(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=np.float32):
    """Build a 4d Tensor, promoting scalars to shape (1, 1, 1, 1)."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    return Tensor(arr, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=np.float32):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad, dtype=dtype)


class GradTape:
    """Ordered record of ops; backward replays it once, in reverse.

    Use as a context manager around a forward pass. Replaying visits each
    recorded op exactly once; entries whose output received no gradient
    (unreachable from the loss) propagate nothing.
    """

    def __init__(self):
        self.entries = []  # (output tensor, backward fn) in execution order

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def record(self, output, backward_fn):
        output._tape = self
        self.entries.append((output, backward_fn))

    def backward(self, loss):
        """Seed d(loss)/d(loss)=1 and accumulate leaf gradients.

        Gradients of tape-produced intermediates are consumed as the
        replay passes them, so calling backward twice adds a second full
        gradient into every leaf (documented; optimizers zero leaf grads
        after each step).
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.entries:
            raise ContractError("backward on an empty tape")
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, fn in reversed(self.entries):
            g = out.grad
            if g is None:
                continue
            out.grad = None
            fn(g)


def backward(loss):
    """Run reverse-mode accumulation from a recorded scalar loss."""
    if loss._tape is None:
        raise ContractError("loss was not recorded on any tape")
    loss._tape.backward(loss)


def _finite_or_raise(arr, op_name):
    if _check_finite and not np.all(np.isfinite(arr)):
        raise NumericError(f"{op_name} produced non-finite values")


def _make_output(data, inputs, backward_fn, op_name):
    _finite_or_raise(data, op_name)
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, backward_fn)
    return out


def _same_shape(a, b, op_name):
    if a.shape != b.shape:
        raise ShapeError(f"{op_name}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


# ---------------------------------------------------------------------------
# elementwise ops


def relu(x):
    y = np.maximum(x.data, 0)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * (x.data > 0))

    return _make_output(y, (x,), bwd, "relu")


def sigmoid(x):
    # stable two-branch form
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * y * (1.0 - y))

    return _make_output(y, (x,), bwd, "sigmoid")


def add(a, b):
    _same_shape(a, b, "add")
    y = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g)

    return _make_output(y, (a, b), bwd, "add")


def sub(a, b):
    _same_shape(a, b, "sub")
    y = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(-g)

    return _make_output(y, (a, b), bwd, "sub")


def mul(a, b):
    """Elementwise product; one operand may be single-channel (n, 1, h, w)
    and broadcasts over the other's channels (attention weighting)."""
    if a.shape != b.shape:
        na, ca, ha, wa = a.shape
        nb, cb, hb, wb = b.shape
        if not ((na, ha, wa) == (nb, hb, wb) and (ca == 1 or cb == 1)):
            raise ShapeError(f"mul: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    y = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            ga = g * b.data
            if a.shape[1] == 1 and g.shape[1] != 1:
                ga = ga.sum(axis=1, keepdims=True)
            a.accumulate_grad(ga)
        if b.requires_grad:
            gb = g * a.data
            if b.shape[1] == 1 and g.shape[1] != 1:
                gb = gb.sum(axis=1, keepdims=True)
            b.accumulate_grad(gb)

    return _make_output(y, (a, b), bwd, "mul")


def scale(x, s):
    """Multiply by a plain python float (loss weighting, branch means)."""
    s = float(s)
    y = x.data * s

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * s)

    return _make_output(y, (x,), bwd, "scale")


def tsum(x):
    """Sum of all elements as a (1,1,1,1) scalar; float64 accumulation."""
    y = np.array(x.data.sum(dtype=np.float64), dtype=x.dtype).reshape(1, 1, 1, 1)

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, g.reshape(())))

    return _make_output(y, (x,), bwd, "sum")


def mse(a, b):
    """Mean of squared differences over all elements, as a scalar tensor.

    The mean (not the plain squared Frobenius norm) keeps loss weights
    resolution-independent. Accumulation is float64.
    """
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    val = np.mean(np.square(diff, dtype=np.float64))
    y = np.array(val, dtype=a.dtype).reshape(1, 1, 1, 1)
    inv_n = 2.0 / diff.size

    def bwd(g):
        g0 = g.reshape(())
        if a.requires_grad:
            a.accumulate_grad((g0 * inv_n) * diff)
        if b.requires_grad:
            b.accumulate_grad((-g0 * inv_n) * diff)

    return _make_output(y, (a, b), bwd, "mse")


# ---------------------------------------------------------------------------
# channel ops


def concat_channels(tensors):
    if not tensors:
        raise ShapeError("concat_channels: empty input list")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat_channels: incompatible shapes {tuple(tensors[0].shape)} vs {tuple(t.shape)}"
            )
    y = np.concatenate([t.data for t in tensors], axis=1)
    sizes = [t.shape[1] for t in tensors]

    def bwd(g):
        start = 0
        for t, c in zip(tensors, sizes):
            if t.requires_grad:
                t.accumulate_grad(g[:, start : start + c])
            start += c

    return _make_output(y, tuple(tensors), bwd, "concat_channels")


def split_channels(x, sizes):
    """Inverse of concat_channels; returns one tensor per chunk size."""
    if sum(sizes) != x.shape[1]:
        raise ShapeError(f"split_channels: sizes {sizes} do not sum to {x.shape[1]} channels")
    outs = []
    start = 0
    for c in sizes:
        lo = start
        sl = x.data[:, lo : lo + c].copy()

        def bwd(g, lo=lo, c=c):
            if x.requires_grad:
                full = np.zeros_like(x.data)
                full[:, lo : lo + c] = g
                x.accumulate_grad(full)

        outs.append(_make_output(sl, (x,), bwd, "split_channels"))
        start += c
    return outs


def softmax_channels(x):
    """Softmax across the channel axis, per (n, h, w) location."""
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            x.accumulate_grad(y * (g - dot))

    return _make_output(y, (x,), bwd, "softmax_channels")


def clamp01(x):
    """Inference-only [0,1] clamp; refuses to run under an active tape."""
    if active_tape() is not None and x.requires_grad:
        raise ContractError("clamp01 is inference-only; training uses the raw residual output")
    return Tensor(np.clip(x.data, 0.0, 1.0), dtype=x.dtype)


# ---------------------------------------------------------------------------
# convolution and its transpose (shared im2col/col2im core)


def _conv_out_dim(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xp, kh, kw, stride, dilation, oh, ow):
    # xp: padded input (n, c, hp, wp) -> (n, c*kh*kw, oh*ow)
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            y0 = i * dilation
            x0 = j * dilation
            cols[:, :, i, j] = xp[:, :, y0 : y0 + stride * (oh - 1) + 1 : stride,
                                  x0 : x0 + stride * (ow - 1) + 1 : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def _col2im(cols, in_shape, kh, kw, stride, padding, dilation, oh, ow):
    # adjoint of _im2col: scatter-add columns back into an (n, c, h, w) buffer
    n, c, h, w = in_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    buf = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols6 = cols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            y0 = i * dilation
            x0 = j * dilation
            buf[:, :, y0 : y0 + stride * (oh - 1) + 1 : stride,
                x0 : x0 + stride * (ow - 1) + 1 : stride] += cols6[:, :, i, j]
    if padding:
        buf = buf[:, :, padding : padding + h, padding : padding + w]
    return np.ascontiguousarray(buf)


def _check_bias(bias, c_out, op_name):
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise ShapeError(f"{op_name}: bias shape {tuple(bias.shape)} != (1, {c_out}, 1, 1)")


def contract_batch(a, b):
    """sum_n a[n] @ b[n].T for (n, i, p) x (n, j, p) -> (i, j), as one GEMM."""
    n, i, p = a.shape
    j = b.shape[1]
    a2 = np.ascontiguousarray(a.transpose(1, 0, 2)).reshape(i, n * p)
    b2 = np.ascontiguousarray(b.transpose(1, 0, 2)).reshape(j, n * p)
    return a2 @ b2.T


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2d cross-correlation with zero padding.

    weight is (c_out, c_in, kh, kw); output height is
    (h + 2p - d*(kh-1) - 1)//s + 1 and likewise for width.
    """
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c:
        raise ShapeError(f"conv2d: input {tuple(x.shape)} vs weight {tuple(weight.shape)} (channel mismatch)")
    _check_bias(bias, c_out, "conv2d")
    oh = _conv_out_dim(h, kh, stride, padding, dilation)
    ow = _conv_out_dim(w, kw, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: empty output for input {tuple(x.shape)}, weight {tuple(weight.shape)}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, dilation, oh, ow)
    wmat = weight.data.reshape(c_out, c_in * kh * kw)
    y = np.matmul(wmat, cols).reshape(n, c_out, oh, ow)
    if bias is not None:
        y = y + bias.data

    def bwd(g):
        gmat = g.reshape(n, c_out, oh * ow)
        if weight.requires_grad:
            weight.accumulate_grad(contract_batch(gmat, cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gmat.sum(axis=(0, 2)).reshape(1, c_out, 1, 1))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat)
            x.accumulate_grad(_col2im(gcols, x.shape, kh, kw, stride, padding, dilation, oh, ow))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make_output(y, inputs, bwd, "conv2d")


def deconv2d(x, weight, bias=None, stride=2, padding=1):
    """Transposed convolution, the exact adjoint of conv2d.

    weight is (c_in, c_out, kh, kw); output spatial dims are input*stride,
    so (kernel, stride, padding) must satisfy the matching conv's size
    formula. The gradient w.r.t. the input is a forward conv2d with the
    same weight, by construction.
    """
    n, c, h, w = x.shape
    wc_in, c_out, kh, kw = weight.shape
    if wc_in != c:
        raise ShapeError(f"deconv2d: input {tuple(x.shape)} vs weight {tuple(weight.shape)} (channel mismatch)")
    _check_bias(bias, c_out, "deconv2d")
    oh, ow = h * stride, w * stride
    # the adjoint is only size-consistent if the matching conv maps (oh, ow) -> (h, w)
    if _conv_out_dim(oh, kh, stride, padding, 1) != h or _conv_out_dim(ow, kw, stride, padding, 1) != w:
        raise ShapeError(
            f"deconv2d: kernel {kh}x{kw} stride {stride} padding {padding} cannot expand {h}x{w} to {oh}x{ow}"
        )

    wmat = weight.data.reshape(c, c_out * kh * kw)
    cols = np.matmul(wmat.T, x.data.reshape(n, c, h * w))
    y = _col2im(cols, (n, c_out, oh, ow), kh, kw, stride, padding, 1, h, w)
    if bias is not None:
        y = y + bias.data

    def bwd(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _im2col(gp, kh, kw, stride, 1, h, w)  # (n, c_out*kh*kw, h*w)
        if weight.requires_grad:
            gw = contract_batch(x.data.reshape(n, c, h * w), gcols).reshape(weight.shape)
            weight.accumulate_grad(gw)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(1, c_out, 1, 1))
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(n, c, h, w)
            x.accumulate_grad(np.ascontiguousarray(gx))

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _make_output(y, inputs, bwd, "deconv2d")
