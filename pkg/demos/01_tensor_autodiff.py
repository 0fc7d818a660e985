"""Tour of the tensor core: ops, the gradient tape, and a finite-difference check.

Run:  python3 demos/01_tensor_autodiff.py
"""

import numpy as np

from aspdc import tensor as T
from aspdc.gradcheck import check_gradients, rand_tensor

rng = np.random.default_rng(0)

# --- tensors are (n, c, h, w) float32 arrays --------------------------------
x = T.Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32), requires_grad=True)
w = T.Tensor(rng.normal(0, 0.2, (4, 3, 3, 3)).astype(np.float32), requires_grad=True)
print("input:", x, "\nweight:", w)

# --- forward math records onto an active tape -------------------------------
with T.GradTape() as tape:
    h = T.relu(T.conv2d(x, w, padding=1))
    target = T.Tensor(np.zeros_like(h.data))
    loss = T.mse(h, target)
print(f"\nloss = mean(relu(conv(x))^2) = {loss.item():.6f}")

# --- backward fills .grad on every reachable requires_grad tensor -----------
tape.backward(loss)
print(f"|dL/dx| max = {np.abs(x.grad).max():.5f}, |dL/dw| max = {np.abs(w.grad).max():.5f}")

# --- the same kernels run in float64 for finite-difference verification -----
x64 = rand_tensor(rng, (1, 2, 6, 6), avoid_zero=0.05)
w64 = rand_tensor(rng, (2, 2, 3, 3))
tgt = rand_tensor(rng, (1, 2, 12, 12), requires_grad=False)
errs = check_gradients(
    lambda: T.mse(T.deconv2d(T.relu(T.conv2d(x64, w64, padding=1)), w64, stride=2, padding=1), tgt),
    {"x": x64, "w": w64}, rng=rng)
print("\ncentral-difference agreement (relative):")
for name, err in errs.items():
    print(f"  {name}: {err:.2e}")

# --- transposed conv is the exact adjoint of conv ---------------------------
ones = T.Tensor(np.ones((1, 2, 4, 4), dtype=np.float32))
wd = T.Tensor(rng.normal(0, 0.3, (2, 3, 3, 3)).astype(np.float32))
up = T.deconv2d(ones, wd, stride=2, padding=1)
print(f"\nstride-2 deconv of 4x4 -> {tuple(up.shape)} (input dims x stride)")
