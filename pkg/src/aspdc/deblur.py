"""One-stage residual deblurring network.

Head: stem conv + two ResBlocks at full resolution, then two stride-2
convs doubling channels each time. Middle: the pyramid deformable stack
at the bottleneck width. Tail: two stride-2 deconvs halving channels,
then a zero-initialized 3x3 conv to RGB. The network predicts a residual
added to its input, so a freshly initialized model is an exact identity.
No normalization layers anywhere. Training uses the raw residual output;
inference clamps to [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .blocks import AspdcConfig, AspdcStack
from .layers import Conv2d, Deconv2d, Module, ResBlock


@dataclass
class DeblurConfig:
    base_width: int = 32          # channels at full resolution; 4x at the bottleneck
    n_modules: int = 6            # pyramid blocks in the stack
    aspdc: AspdcConfig = field(default_factory=AspdcConfig)


class DeblurNet(Module):
    def __init__(self, cfg=None, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg or DeblurConfig()
        w = self.cfg.base_width
        self.stem = Conv2d(3, w, rng=rng, dtype=dtype)
        self.res1 = ResBlock(w, rng=rng, dtype=dtype)
        self.res2 = ResBlock(w, rng=rng, dtype=dtype)
        self.down1 = Conv2d(w, 2 * w, stride=2, rng=rng, dtype=dtype)
        self.down2 = Conv2d(2 * w, 4 * w, stride=2, rng=rng, dtype=dtype)
        self.stack = AspdcStack(4 * w, self.cfg.n_modules, self.cfg.aspdc, rng=rng, dtype=dtype)
        self.up1 = Deconv2d(4 * w, 2 * w, rng=rng, dtype=dtype)
        self.up2 = Deconv2d(2 * w, w, rng=rng, dtype=dtype)
        # zero init: step-0 output equals the input (residual identity)
        self.out_conv = Conv2d(w, 3, init="zero", dtype=dtype)
        self.last_attn = None  # numpy copies of the latest forward's maps

    def __call__(self, blurred):
        n, c, h, w = blurred.shape
        if c != 3:
            raise T.ShapeError(f"deblur input must have 3 channels, got {tuple(blurred.shape)}")
        if h % 4 or w % 4:
            raise T.ShapeError(f"deblur input dims must be divisible by 4, got {h}x{w}")
        x = T.relu(self.stem(blurred))
        x = self.res2(self.res1(x))
        x = T.relu(self.down1(x))
        x = T.relu(self.down2(x))
        x, attns = self.stack(x)
        x = T.relu(self.up1(x))
        x = T.relu(self.up2(x))
        residual = self.out_conv(x)
        self.last_attn = [a.tensor.data.copy() for a in attns]
        return T.add(blurred, residual)

    def infer(self, blurred):
        """Clamped forward for evaluation/export (no tape)."""
        return T.clamp01(self(blurred))


def deblurring_loss(deblurred, sharp):
    """Mean squared error between the deblurred output and the sharp target."""
    return T.mse(deblurred, sharp)
