"""The four-branch pyramid block and its attention fusion.

Run:  python3 demos/03_pyramid_attention.py     (writes demo_out/attention/)
"""

import os

import numpy as np

from aspdc import tensor as T
from aspdc.blocks import AspdcConfig, AspdcModule, AspdcStack
from aspdc.imageio import write_png

rng = np.random.default_rng(0)
out_dir = "demo_out/attention"
os.makedirs(out_dir, exist_ok=True)

# --- one block: four branches (dilations 1/1/2/4, first offset-free) --------
module = AspdcModule(width=8, cfg=AspdcConfig(), rng=rng)
feats = T.Tensor(rng.uniform(-1, 1, (1, 8, 24, 24)).astype(np.float32))
fused, attn = module(feats)
print(f"block: {len(module.branches)} branches -> fused {tuple(fused.shape)}")
print(f"attention sums per pixel: min {attn.per_pixel_sum().min():.6f}, "
      f"max {attn.per_pixel_sum().max():.6f} (convex weights)")

for i in range(attn.n_branches):
    write_png(os.path.join(out_dir, f"attn_branch_{i + 1}.png"), attn.branch(i)[0])
print(f"wrote per-branch attention maps to {out_dir}/")

# --- ablation topologies reconfigure the same block -------------------------
solo = AspdcModule(8, AspdcConfig(branch_enabled=(True, False, False, False)), rng=rng)
tripled = AspdcModule(8, AspdcConfig(branch_enabled=(True, False, True, False),
                                     duplicate=(3, 3)), rng=rng)
mean_fused = AspdcModule(8, AspdcConfig(afim_enabled=False), rng=rng)
print(f"\nparameter counts: solo {solo.param_count()}, "
      f"triplicated-branch {tripled.param_count()}, full {module.param_count()}, "
      f"mean-fusion {mean_fused.param_count()}")

# --- the stack concatenates every block's output and reduces by 1x1 ---------
stack = AspdcStack(width=8, n_modules=3, rng=rng)
out, attns = stack(feats)
print(f"\nstack of 3: output {tuple(out.shape)}, {len(attns)} attention sets kept")
