"""Bilinear sampling and modulated deformable 3x3 convolution.

A deformable conv reads, for every output pixel p and kernel tap k, the
input at ``p + dilated_grid_k + offset_k(p)`` by bilinear interpolation,
scales it by a per-tap modulation weight in [0,1], and contracts with the
kernel. Offsets live in an (n, 18, h, w) map laid out as
(dy_0, dx_0, dy_1, dx_1, ...) over the row-major 3x3 tap order; the
modulation map is (n, 9, h, w). Sampling outside the image reads zeros
(zero-padded neighbors), matching conv2d's padding rule.
"""

import numpy as np
from scipy import sparse

from . import tensor as T
from .layers import Conv2d, Module, xavier_normal

K = 9  # 3x3 taps, row-major
TAP_DY = np.repeat([-1, 0, 1], 3)
TAP_DX = np.tile([-1, 0, 1], 3)
GEN_CHANNELS = 2 * K + K  # 18 offset + 9 modulation

_GRID_CACHE = {}


def _tap_grid(h, w, dilation, dtype):
    key = (h, w, dilation, np.dtype(dtype).str)
    got = _GRID_CACHE.get(key)
    if got is None:
        gy, gx = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij")
        base_y = gy[None, None] + (dilation * TAP_DY).astype(dtype)[None, :, None, None]
        base_x = gx[None, None] + (dilation * TAP_DX).astype(dtype)[None, :, None, None]
        got = _GRID_CACHE[key] = (base_y, base_x)
    return got


def bilinear_gather(img, ys, xs):
    """Sample img (c, h, w) at real-valued (ys, xs); zeros outside.

    The shared interpolation rule for deformable convs and frame warping.
    Returns an array shaped (c,) + ys.shape.
    """
    c, h, w = img.shape
    ys = np.asarray(ys, dtype=img.dtype)
    xs = np.asarray(xs, dtype=img.dtype)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ty = ys - y0
    tx = xs - x0
    flat = img.reshape(c, h * w)
    out = np.zeros((c,) + ys.shape, dtype=img.dtype)
    for dy, dx, wgt in (
        (0, 0, (1 - ty) * (1 - tx)),
        (0, 1, (1 - ty) * tx),
        (1, 0, ty * (1 - tx)),
        (1, 1, ty * tx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        idx = np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1)
        vals = flat[:, idx.reshape(-1)].reshape((c,) + ys.shape)
        out += (wgt * valid) * vals
    return out


def bilinear_sample(x, y, xpos, n=0, c=0):
    """One interpolated value of x[n, c] at real (y, xpos), as a scalar tensor.

    y/xpos may be python floats or scalar tensors; scalar tensors receive
    gradients, enabling finite-difference checks on the sample location.
    """
    yt = y if isinstance(y, T.Tensor) else None
    xt = xpos if isinstance(xpos, T.Tensor) else None
    yv = yt.item() if yt is not None else float(y)
    xv = xt.item() if xt is not None else float(xpos)
    _, _, h, w = x.shape
    y0, x0 = int(np.floor(yv)), int(np.floor(xv))
    ty, tx = yv - y0, xv - x0

    taps = []  # (yy, xx, weight, dw/dty, dw/dtx)
    for dy, dx, wgt, dwy, dwx in (
        (0, 0, (1 - ty) * (1 - tx), -(1 - tx), -(1 - ty)),
        (0, 1, (1 - ty) * tx, -tx, (1 - ty)),
        (1, 0, ty * (1 - tx), (1 - tx), -ty),
        (1, 1, ty * tx, tx, ty),
    ):
        yy, xx = y0 + dy, x0 + dx
        if 0 <= yy < h and 0 <= xx < w:
            taps.append((yy, xx, wgt, dwy, dwx))
    val = sum(wgt * float(x.data[n, c, yy, xx]) for yy, xx, wgt, _, _ in taps)
    out_data = np.array(val, dtype=x.dtype).reshape(1, 1, 1, 1)

    def bwd(g):
        g0 = float(g.reshape(()))
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for yy, xx, wgt, _, _ in taps:
                gx[n, c, yy, xx] += g0 * wgt
            x.accumulate_grad(gx)
        if yt is not None and yt.requires_grad:
            dy = sum(dwy * float(x.data[n, c, yy, xx]) for yy, xx, _, dwy, _ in taps)
            yt.accumulate_grad(np.full_like(yt.data, g0 * dy))
        if xt is not None and xt.requires_grad:
            dx = sum(dwx * float(x.data[n, c, yy, xx]) for yy, xx, _, _, dwx in taps)
            xt.accumulate_grad(np.full_like(xt.data, g0 * dx))

    inputs = tuple(t for t in (x, yt, xt) if t is not None)
    return T._make_output(out_data, inputs, bwd, "bilinear_sample")


def deform_conv2d(x, weight, offsets, modulation, dilation=1, zero_offset_mode=False):
    """Modulated deformable 3x3 conv, stride 1, padding = dilation.

    out(p) = sum_k w_k * mod_k(p) * sample(x, p + dil*grid_k + off_k(p)).
    With zero_offset_mode the learned offsets are forced to zero (their
    gradient is dropped) but modulation still applies. Differentiable in
    x, weight, offsets, modulation.
    """
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if (kh, kw) != (3, 3):
        raise T.ShapeError(f"deform_conv2d supports 3x3 kernels only, got {tuple(weight.shape)}")
    if c_in != c:
        raise T.ShapeError(f"deform_conv2d: input {tuple(x.shape)} vs weight {tuple(weight.shape)}")
    if offsets.shape != (n, 2 * K, h, w):
        raise T.ShapeError(
            f"deform_conv2d: offsets shape {tuple(offsets.shape)} != {(n, 2 * K, h, w)} (2 channels per tap)"
        )
    if modulation.shape != (n, K, h, w):
        raise T.ShapeError(
            f"deform_conv2d: modulation shape {tuple(modulation.shape)} != {(n, K, h, w)} (1 channel per tap)"
        )

    dt = np.result_type(x.dtype, weight.dtype)
    base_y, base_x = _tap_grid(h, w, dilation, dt)
    if zero_offset_mode:
        ys = np.broadcast_to(base_y, (n, K, h, w))
        xs = np.broadcast_to(base_x, (n, K, h, w))
    else:
        ys = base_y + offsets.data[:, 0::2]
        xs = base_x + offsets.data[:, 1::2]

    P = h * w
    KP = K * P
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    ty = (ys - y0).reshape(n, 1, K, P).astype(dt)
    tx = (xs - x0).reshape(n, 1, K, P).astype(dt)

    # all 4 neighbors in one gather: indices (n, 1, 4*K*P)
    yy = y0.reshape(n, 1, KP)
    xx = x0.reshape(n, 1, KP)
    yy4 = np.concatenate([yy, yy, yy + 1, yy + 1], axis=2)
    xx4 = np.concatenate([xx, xx + 1, xx, xx + 1], axis=2)
    valid4 = (yy4 >= 0) & (yy4 < h) & (xx4 >= 0) & (xx4 < w)
    idx4 = np.clip(yy4, 0, h - 1) * w + np.clip(xx4, 0, w - 1)
    vals4 = np.take_along_axis(x.data.reshape(n, c, P), idx4, axis=2)
    vals4 = vals4 * valid4
    v00, v01, v10, v11 = (vals4[:, :, i * KP : (i + 1) * KP].reshape(n, c, K, P) for i in range(4))

    w00 = (1 - ty) * (1 - tx)
    w01 = (1 - ty) * tx
    w10 = ty * (1 - tx)
    w11 = ty * tx
    V = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11  # (n, c, K, P)
    M = modulation.data.reshape(n, 1, K, P)
    VM = (V * M).reshape(n, c * K, P)
    wmat = weight.data.reshape(c_out, c * K)
    out = np.matmul(wmat, VM).reshape(n, c_out, h, w)

    def bwd(g):
        gm = g.reshape(n, c_out, P)
        if weight.requires_grad:
            weight.accumulate_grad(T.contract_batch(gm, VM).reshape(weight.shape))
        need_rest = x.requires_grad or modulation.requires_grad or (offsets.requires_grad and not zero_offset_mode)
        if not need_rest:
            return
        gVM = np.matmul(wmat.T, gm).reshape(n, c, K, P)
        if modulation.requires_grad:
            modulation.accumulate_grad((gVM * V).sum(axis=1).reshape(n, K, h, w))
        gV = gVM * M
        if x.requires_grad:
            # sparse scatter: destination pixels are per (tap, neighbor)
            # slot and shared across channels, so the channel payload rides
            # through one SpMM; duplicate (pixel, slot) entries sum during
            # the csr build. scatter: (P, KP) with 4*KP weighted entries.
            w4 = np.concatenate(
                [wgt.reshape(n, KP) for wgt in (w00, w01, w10, w11)], axis=1)
            w4 = w4 * valid4[:, 0]
            cols = np.tile(np.arange(KP), 4)
            gx_out = np.empty((n, c, P), dtype=np.float64)
            for b in range(n):
                scatter = sparse.csr_matrix(
                    (w4[b].astype(np.float64), (idx4[b, 0], cols)), shape=(P, KP))
                gx_out[b] = (scatter @ gV[b].reshape(c, KP).T.astype(np.float64)).T
            x.accumulate_grad(gx_out.astype(x.dtype).reshape(x.shape))
        if offsets.requires_grad and not zero_offset_mode:
            dVdy = (1 - tx) * (v10 - v00) + tx * (v11 - v01)
            dVdx = (1 - ty) * (v01 - v00) + ty * (v11 - v10)
            g_ys = (gV * dVdy).sum(axis=1).reshape(n, K, h, w)
            g_xs = (gV * dVdx).sum(axis=1).reshape(n, K, h, w)
            goff = np.empty_like(offsets.data)
            goff[:, 0::2] = g_ys
            goff[:, 1::2] = g_xs
            offsets.accumulate_grad(goff)

    return T._make_output(out, (x, weight, offsets, modulation), bwd, "deform_conv2d")


def gen_offsets_modulation(feature, gen_weight, gen_bias, dilation):
    """Offset and modulation maps from one 3x3 conv over the feature map.

    The conv (run at the branch's dilation, padding=dilation) emits 27
    channels: 18 raw offsets and 9 pre-sigmoid modulation logits. With
    zero generator weights this yields zero offsets and 0.5 modulation.
    """
    raw = T.conv2d(feature, gen_weight, gen_bias, stride=1, padding=dilation, dilation=dilation)
    off, mod_logits = T.split_channels(raw, [2 * K, K])
    return off, T.sigmoid(mod_logits)


class DeformBranch(Module):
    """One pyramid branch: its own offset/modulation generator plus the
    modulated deformable conv, both at the branch's dilation rate.

    The generator starts at zero so training begins as a plain dilated
    convolution (modulation uniformly 0.5, a constant scale absorbed
    downstream). ``zero_offset`` pins the sampling grid (the static-region
    branch) while modulation stays live.
    """

    def __init__(self, channels, dilation, zero_offset=False, rng=None, dtype=np.float32):
        self.dilation = dilation
        self.zero_offset = zero_offset
        self.weight = T.Tensor(xavier_normal((channels, channels, 3, 3), rng, dtype),
                               requires_grad=True, dtype=dtype)
        self.gen = Conv2d(channels, GEN_CHANNELS, dilation=dilation, init="zero", dtype=dtype)

    def gen_maps(self, f):
        return gen_offsets_modulation(f, self.gen.weight, self.gen.bias, self.dilation)

    def __call__(self, f):
        off, mod = self.gen_maps(f)
        return deform_conv2d(f, self.weight, off, mod, dilation=self.dilation,
                             zero_offset_mode=self.zero_offset)


# ---------------------------------------------------------------------------
# gradcheck cases (picked up by gradcheck.run_suite)


def _rand(rng, shape, **kw):
    from .gradcheck import rand_tensor

    return rand_tensor(rng, shape, **kw)


def _fractional_offsets(rng, n, h, w, lo=-1.6, hi=1.6):
    # keep fractional parts away from integers: bilinear kinks break FD there
    data = rng.uniform(lo, hi, size=(n, 2 * K, h, w))
    frac = data - np.floor(data)
    push = (frac < 0.1) | (frac > 0.9)
    data[push] = np.floor(data[push]) + 0.5
    return T.Tensor(data, requires_grad=True, dtype=np.float64)


def _bilinear_case(rng):
    x = _rand(rng, (1, 2, 6, 6))
    y = T.tensor(rng.uniform(0.6, 4.4), dtype=np.float64)
    y.requires_grad = True
    xp = T.tensor(rng.uniform(0.6, 4.4), dtype=np.float64)
    xp.requires_grad = True

    def f():
        s1 = bilinear_sample(x, y, xp, n=0, c=0)
        s2 = bilinear_sample(x, y, xp, n=0, c=1)
        return T.mse(T.add(s1, s2), T.tensor(0.7, dtype=np.float64))

    return f, {"input": x, "y": y, "x": xp}


def _deform_case_for(dilation):
    def build(rng):
        size = 4 + 2 * dilation
        x = _rand(rng, (1, 3, size, size))
        w = _rand(rng, (2, 3, 3, 3))
        off = _fractional_offsets(rng, 1, size, size)
        mod = _rand(rng, (1, K, size, size), lo=0.05, hi=0.95)
        tgt = _rand(rng, (1, 2, size, size), requires_grad=False)
        f = lambda: T.mse(deform_conv2d(x, w, off, mod, dilation=dilation), tgt)
        return f, {"input": x, "weight": w, "offsets": off, "modulation": mod}

    return build


def _deform_zero_offset_case(rng):
    x = _rand(rng, (1, 2, 6, 6))
    w = _rand(rng, (2, 2, 3, 3))
    off = _fractional_offsets(rng, 1, 6, 6)
    off.requires_grad = False  # zeroed branch: offsets are inert
    mod = _rand(rng, (1, K, 6, 6), lo=0.05, hi=0.95)
    tgt = _rand(rng, (1, 2, 6, 6), requires_grad=False)
    f = lambda: T.mse(deform_conv2d(x, w, off, mod, dilation=1, zero_offset_mode=True), tgt)
    return f, {"input": x, "weight": w, "modulation": mod}


def _gen_deform_composite_case(rng):
    ch = 2
    x = _rand(rng, (1, ch, 7, 7))
    branch = DeformBranch(ch, dilation=2, rng=rng, dtype=np.float64)
    # perturb the generator off zero so offset gradients are exercised,
    # staying small enough that sample points keep fractional parts
    branch.gen.weight.data += rng.uniform(-0.03, 0.03, size=branch.gen.weight.shape)
    branch.gen.bias.data += rng.uniform(0.2, 0.3, size=branch.gen.bias.shape)
    tgt = _rand(rng, (1, ch, 7, 7), requires_grad=False)
    f = lambda: T.mse(branch(x), tgt)
    return f, {"input": x, "weight": branch.weight,
               "gen_weight": branch.gen.weight, "gen_bias": branch.gen.bias}


GRADCHECK_CASES = [
    ("bilinear_sample", _bilinear_case),
    ("deform_d1", _deform_case_for(1)),
    ("deform_d2", _deform_case_for(2)),
    ("deform_d4", _deform_case_for(4)),
    ("deform_zero_offset", _deform_zero_offset_case),
    ("gen_offsets_deform", _gen_deform_composite_case),
]
