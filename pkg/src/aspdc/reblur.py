"""Reblurring network: two weight-shared encoder-decoder traversals.

The upper traversal sees concat(blurred, sharp-like) and learns where the
blur lives; the lower traversal sees the sharp-like image duplicated to
six channels. After every stage (three stride-2 conv+ResBlock pairs down,
three deconv+ResBlock pairs up) a per-stage conv turns the upper features
into a per-pixel 3x3 dynamic filter that is applied, identically on every
channel, to the lower features. Both traversals reference the identical
trunk parameters, so gradients from both accumulate into one buffer set.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .layers import Conv2d, Deconv2d, Module, ResBlock

FILTER_TAPS = 9  # 3x3 dynamic filter, row-major taps


def apply_dynamic_filter(features, filters):
    """Per-pixel 3x3 filtering, the same filter across all channels.

    out(c, p) = sum_k filters_k(p) * features(c, p + tap_k), zero padded.
    Differentiable w.r.t. both arguments. No normalization is imposed on
    the filters; a delta filter (center tap 1, rest 0) is an exact
    identity by construction.
    """
    n, c, h, w = features.shape
    if filters.shape != (n, FILTER_TAPS, h, w):
        raise T.ShapeError(
            f"dynamic filter shape {tuple(filters.shape)} != {(n, FILTER_TAPS, h, w)}"
        )
    fpad = np.pad(features.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(features.data)
    for k in range(FILTER_TAPS):
        dy, dx = divmod(k, 3)
        out += filters.data[:, k : k + 1] * fpad[:, :, dy : dy + h, dx : dx + w]

    def bwd(g):
        if filters.requires_grad:
            gf = np.empty_like(filters.data)
            for k in range(FILTER_TAPS):
                dy, dx = divmod(k, 3)
                gf[:, k] = (g * fpad[:, :, dy : dy + h, dx : dx + w]).sum(axis=1)
            filters.accumulate_grad(gf)
        if features.requires_grad:
            gpad = np.zeros_like(fpad)
            for k in range(FILTER_TAPS):
                dy, dx = divmod(k, 3)
                gpad[:, :, dy : dy + h, dx : dx + w] += filters.data[:, k : k + 1] * g
            features.accumulate_grad(gpad[:, :, 1 : 1 + h, 1 : 1 + w])

    return T._make_output(out, (features, filters), bwd, "apply_dynamic_filter")


@dataclass
class ReblurConfig:
    base_width: int = 16  # doubled at each of the three downscales


class _EncStage(Module):
    def __init__(self, c_in, c_out, rng, dtype):
        self.conv = Conv2d(c_in, c_out, stride=2, rng=rng, dtype=dtype)
        self.res = ResBlock(c_out, rng=rng, dtype=dtype)

    def __call__(self, x):
        return self.res(T.relu(self.conv(x)))


class _DecStage(Module):
    def __init__(self, c_in, c_out, rng, dtype):
        self.deconv = Deconv2d(c_in, c_out, rng=rng, dtype=dtype)
        self.res = ResBlock(c_out, rng=rng, dtype=dtype)

    def __call__(self, x):
        return self.res(T.relu(self.deconv(x)))


class ReblurNet(Module):
    def __init__(self, cfg=None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg or ReblurConfig()
        w = self.cfg.base_width
        self.stem = Conv2d(6, w, rng=rng, dtype=dtype)
        self.stages = [
            _EncStage(w, 2 * w, rng, dtype),
            _EncStage(2 * w, 4 * w, rng, dtype),
            _EncStage(4 * w, 8 * w, rng, dtype),
            _DecStage(8 * w, 4 * w, rng, dtype),
            _DecStage(4 * w, 2 * w, rng, dtype),
            _DecStage(2 * w, w, rng, dtype),
        ]
        stage_widths = [2 * w, 4 * w, 8 * w, 4 * w, 2 * w, w]
        # generators start as the identity (delta) filter: six chained
        # random filters would otherwise crush the lower branch to ~1e-17
        self.filter_gens = []
        for sw in stage_widths:
            gen = Conv2d(sw, FILTER_TAPS, init="zero", dtype=dtype)
            gen.bias.data[0, FILTER_TAPS // 2, 0, 0] = 1.0
            self.filter_gens.append(gen)
        self.out_conv = Conv2d(w, 3, rng=rng, dtype=dtype)

    def __call__(self, sharp_like, blurred):
        if sharp_like.shape != blurred.shape:
            raise T.ShapeError(
                f"reblur inputs disagree: {tuple(sharp_like.shape)} vs {tuple(blurred.shape)}"
            )
        n, c, h, w = sharp_like.shape
        if c != 3:
            raise T.ShapeError(f"reblur inputs must have 3 channels, got {tuple(sharp_like.shape)}")
        if h % 8 or w % 8:
            raise T.ShapeError(f"reblur input dims must be divisible by 8, got {h}x{w}")
        upper = T.relu(self.stem(T.concat_channels([blurred, sharp_like])))
        lower = T.relu(self.stem(T.concat_channels([sharp_like, sharp_like])))
        for stage, gen in zip(self.stages, self.filter_gens):
            upper = stage(upper)
            lower = apply_dynamic_filter(stage(lower), gen(upper))
        return self.out_conv(lower)

    def infer(self, sharp_like, blurred):
        return T.clamp01(self(sharp_like, blurred))


def reblurring_loss(reblurred, blurred):
    """Mean squared error between the reblurred output and the blurred input."""
    return T.mse(reblurred, blurred)
