"""Deformable convolution mechanics: sampling, reduction, learned shifts.

Run:  python3 demos/02_deformable_conv.py
"""

import numpy as np

from aspdc import tensor as T
from aspdc.deform import DeformBranch, bilinear_sample, deform_conv2d

rng = np.random.default_rng(0)

# --- bilinear sampling reads fractional positions, zeros outside ------------
ramp = T.Tensor(np.tile(np.arange(6, dtype=np.float32), (6, 1)).reshape(1, 1, 6, 6))
print("ramp I(y,x)=x sampled at x=2.5:", bilinear_sample(ramp, 3.0, 2.5).item())
print("sample half a pixel above the top row:", bilinear_sample(ramp, -0.5, 3.0).item())

# --- with zero offsets and unit modulation it IS a dilated conv -------------
x = T.Tensor(rng.uniform(-1, 1, (1, 2, 10, 10)).astype(np.float32))
w = T.Tensor(rng.normal(0, 0.3, (2, 2, 3, 3)).astype(np.float32))
for dil in (1, 2, 4):
    off = T.Tensor(np.zeros((1, 18, 10, 10), dtype=np.float32))
    mod = T.Tensor(np.ones((1, 9, 10, 10), dtype=np.float32))
    a = deform_conv2d(x, w, off, mod, dilation=dil)
    b = T.conv2d(x, w, padding=dil, dilation=dil)
    print(f"dilation {dil}: max |deform - conv| = {np.abs(a.data - b.data).max():.2e}")

# --- constant (0, +1) offsets with a delta kernel shift the image left ------
img = T.Tensor(rng.uniform(0, 1, (1, 1, 5, 5)).astype(np.float32))
delta = np.zeros((1, 1, 3, 3), dtype=np.float32)
delta[0, 0, 1, 1] = 1.0
off = np.zeros((1, 18, 5, 5), dtype=np.float32)
off[:, 1::2] = 1.0
shifted = deform_conv2d(img, T.Tensor(delta), T.Tensor(off),
                        T.Tensor(np.ones((1, 9, 5, 5), dtype=np.float32)))
print("\noriginal row 2:", np.round(img.data[0, 0, 2], 3))
print("shifted row 2: ", np.round(shifted.data[0, 0, 2], 3), "(left by one, zero fill)")

# --- a branch generates its own offsets/modulation from the features --------
branch = DeformBranch(channels=2, dilation=2, rng=rng)
feats = T.Tensor(rng.uniform(-1, 1, (1, 2, 8, 8)).astype(np.float32))
offsets, modulation = branch.gen_maps(feats)
print(f"\nfresh branch: offsets all zero ({np.abs(offsets.data).max():.0f}), "
      f"modulation uniformly {modulation.data.mean():.2f} (sigmoid of zero)")
