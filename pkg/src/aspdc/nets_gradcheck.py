"""Gradcheck cases for the fused blocks and micro networks.

Kept separate from gradcheck.py so the harness stays free of network
imports. Generators are nudged off their zero init before differencing:
at exactly zero offset the bilinear kernel sits on its kink, where central
differences are undefined (training never differentiates there twice).
"""

import numpy as np

from . import tensor as T
from .blocks import AspdcConfig, AspdcModule
from .deblur import DeblurConfig, DeblurNet
from .reblur import ReblurConfig, ReblurNet, apply_dynamic_filter


def _rand(rng, shape, **kw):
    from .gradcheck import rand_tensor

    return rand_tensor(rng, shape, **kw)


def _nudge_generators(module, rng):
    for name, p in module.named_params().items():
        if name.endswith("gen.bias"):
            p.data[:, :18] += rng.uniform(0.2, 0.3, size=(1, 18, 1, 1))
        elif name.endswith("gen.weight"):
            p.data += rng.uniform(-0.02, 0.02, size=p.data.shape)


def _dynamic_filter_case(rng):
    feats = _rand(rng, (1, 2, 5, 5))
    filt = _rand(rng, (1, 9, 5, 5))
    tgt = _rand(rng, (1, 2, 5, 5), requires_grad=False)
    f = lambda: T.mse(apply_dynamic_filter(feats, filt), tgt)
    return f, {"features": feats, "filters": filt}


def _afim_fusion_case(rng):
    cfg = AspdcConfig(branch_enabled=(True, True, False, False))
    mod = AspdcModule(3, cfg, rng=rng, dtype=np.float64)
    _nudge_generators(mod, rng)
    x = _rand(rng, (1, 3, 7, 7))
    tgt = _rand(rng, (1, 3, 7, 7), requires_grad=False)
    f = lambda: T.mse(mod(x)[0], tgt)
    return f, {
        "input": x,
        "branch0_w": mod.branches[0].weight,
        "branch1_w": mod.branches[1].weight,
        "branch1_gen_w": mod.branches[1].gen.weight,
        "afim_conv1_w": mod.afim.conv1.weight,
        "afim_conv2_w": mod.afim.conv2.weight,
    }, 5e-4


def _micro_deblur_case(rng):
    cfg = DeblurConfig(base_width=4, n_modules=1,
                       aspdc=AspdcConfig(branch_enabled=(True, True, False, True)))
    net = DeblurNet(cfg, rng=rng, dtype=np.float64)
    _nudge_generators(net, rng)
    # the tail conv starts at zero (identity network); give it signal so
    # gradients reach the interior layers during the check
    net.out_conv.weight.data += rng.normal(0, 0.08, size=net.out_conv.weight.shape)
    x = _rand(rng, (1, 3, 8, 8), lo=0.05, hi=0.95)
    tgt = _rand(rng, (1, 3, 8, 8), lo=0.05, hi=0.95, requires_grad=False)
    f = lambda: T.mse(net(x), tgt)
    return f, {
        "input": x,
        "stem_w": net.stem.weight,
        "res1_conv1_w": net.res1.conv1.weight,
        "down2_w": net.down2.weight,
        "branch_w": net.stack.modules[0].branches[1].weight,
        "afim_w": net.stack.modules[0].afim.conv2.weight,
        "reduce_w": net.stack.reduce.weight,
        "up1_w": net.up1.weight,
        "out_w": net.out_conv.weight,
    }, 2e-4


def _micro_reblur_case(rng):
    net = ReblurNet(ReblurConfig(base_width=4), rng=rng, dtype=np.float64)
    sharp = _rand(rng, (1, 3, 8, 8), lo=0.05, hi=0.95)
    blurred = _rand(rng, (1, 3, 8, 8), lo=0.05, hi=0.95, requires_grad=False)
    tgt = _rand(rng, (1, 3, 8, 8), lo=0.05, hi=0.95, requires_grad=False)
    f = lambda: T.mse(net(sharp, blurred), tgt)
    return f, {
        "sharp_input": sharp,
        "stem_w": net.stem.weight,
        "enc2_conv_w": net.stages[1].conv.weight,
        "dec1_deconv_w": net.stages[3].deconv.weight,
        "filter_gen3_w": net.filter_gens[3].weight,
        "out_w": net.out_conv.weight,
    }, 2e-4


GRADCHECK_CASES = [
    ("dynamic_filter", _dynamic_filter_case),
    ("aspdc_afim_fusion", _afim_fusion_case),
    ("micro_deblur_net", _micro_deblur_case),
    ("micro_reblur_net", _micro_reblur_case),
]
