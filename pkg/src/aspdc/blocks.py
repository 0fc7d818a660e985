"""The pyramid deformable block and its attention fusion.

One block runs up to four deformable branches over the same feature map:
branch 1 at dilation 1 with offsets pinned to zero (static regions),
branches 2-4 at dilations 1, 2, 4. A small fusion head turns the branch
outputs into per-pixel convex weights (channel softmax), and the block
output is the weighted sum. Stacks run blocks sequentially and reduce the
concatenation of all block outputs back to the working width with a 1x1
conv.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .deform import DeformBranch
from .layers import Conv2d, Module


class ConfigError(ValueError):
    """Invalid block/stack configuration."""


@dataclass
class AspdcConfig:
    """Which branches run, at which dilation, and how they fuse.

    ``duplicate`` replicates one branch k times with independent
    parameters (ablation topologies); ``afim_enabled=False`` replaces the
    learned fusion with a plain mean of branch outputs.
    """

    branch_enabled: tuple = (True, True, True, True)
    branch_dilations: tuple = (1, 1, 2, 4)
    duplicate: tuple | None = None  # (branch index 1..4, replica count)
    afim_enabled: bool = True

    def __post_init__(self):
        if len(self.branch_enabled) != 4 or len(self.branch_dilations) != 4:
            raise ConfigError("expected 4 branch flags and 4 dilation rates")
        if not any(self.branch_enabled):
            raise ConfigError("at least one branch must be enabled")
        if self.duplicate is not None:
            idx, count = self.duplicate
            if not (1 <= idx <= 4) or not self.branch_enabled[idx - 1]:
                raise ConfigError(f"duplicate target branch {idx} is not an enabled branch")
            if count < 2:
                raise ConfigError("duplicate count must be >= 2")

    def branch_specs(self):
        """(dilation, zero_offset) per branch instance, expansion applied.

        Branch 1, when enabled, always runs in zero-offset mode.
        """
        specs = []
        for i in range(4):
            if not self.branch_enabled[i]:
                continue
            reps = self.duplicate[1] if (self.duplicate and self.duplicate[0] == i + 1) else 1
            specs.extend([(self.branch_dilations[i], i == 0)] * reps)
        return specs


@dataclass
class AttentionMaps:
    """Per-branch convex fusion weights, (n, B, h, w), summing to 1 per pixel."""

    tensor: T.Tensor

    @property
    def n_branches(self):
        return self.tensor.shape[1]

    def branch(self, i):
        """Attention map of branch i as an (n, h, w) array."""
        return self.tensor.data[:, i]

    def per_pixel_sum(self):
        return self.tensor.data.sum(axis=1)


class Afim(Module):
    """Attention head: concat branches -> 1x1 conv + ReLU -> 1x1 conv to
    one logit per branch -> channel softmax."""

    def __init__(self, width, n_branches, rng=None, dtype=np.float32):
        self.conv1 = Conv2d(n_branches * width, width, k=1, padding=0, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(width, n_branches, k=1, padding=0, rng=rng, dtype=dtype)

    def __call__(self, branch_outputs):
        if not branch_outputs:
            raise ConfigError("attention fusion needs at least one branch output")
        ref = branch_outputs[0].shape
        for t in branch_outputs[1:]:
            if t.shape != ref:
                raise T.ShapeError(f"branch outputs disagree: {tuple(ref)} vs {tuple(t.shape)}")
        cat = T.concat_channels(list(branch_outputs))
        logits = self.conv2(T.relu(self.conv1(cat)))
        return AttentionMaps(T.softmax_channels(logits))


class AspdcModule(Module):
    """One pyramid block: deformable branches + fusion."""

    def __init__(self, width, cfg=None, rng=None, dtype=np.float32):
        self.cfg = cfg or AspdcConfig()
        specs = self.cfg.branch_specs()
        self.branches = [DeformBranch(width, dil, zero_offset=zo, rng=rng, dtype=dtype)
                         for dil, zo in specs]
        self.afim = Afim(width, len(specs), rng=rng, dtype=dtype) if self.cfg.afim_enabled else None

    def __call__(self, f_in):
        outs = [T.relu(branch(f_in)) for branch in self.branches]
        if self.afim is not None:
            attn = self.afim(outs)
            weights = T.split_channels(attn.tensor, [1] * len(outs))
            fused = T.mul(outs[0], weights[0])
            for o, a in zip(outs[1:], weights[1:]):
                fused = T.add(fused, T.mul(o, a))
        else:
            acc = outs[0]
            for o in outs[1:]:
                acc = T.add(acc, o)
            fused = T.scale(acc, 1.0 / len(outs))
            n, _, h, w = f_in.shape
            uniform = np.full((n, len(outs), h, w), 1.0 / len(outs), dtype=f_in.data.dtype)
            attn = AttentionMaps(T.Tensor(uniform, dtype=f_in.dtype))
        return fused, attn


class AspdcStack(Module):
    """Sequential blocks; all block outputs concatenated, 1x1-reduced."""

    def __init__(self, width, n_modules, cfg=None, rng=None, dtype=np.float32):
        if n_modules < 1:
            raise ConfigError("stack needs at least one module")
        self.modules = [AspdcModule(width, cfg, rng=rng, dtype=dtype) for _ in range(n_modules)]
        self.reduce = Conv2d(n_modules * width, width, k=1, padding=0, rng=rng, dtype=dtype)

    def __call__(self, f_in):
        x = f_in
        outs, attns = [], []
        for m in self.modules:
            x, a = m(x)
            outs.append(x)
            attns.append(a)
        return self.reduce(T.concat_channels(outs)), attns
