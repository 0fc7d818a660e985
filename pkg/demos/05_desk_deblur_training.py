"""Desk-scale deblurring training: tiny net, four synthetic pairs.

Run:  python3 demos/05_desk_deblur_training.py   (writes demo_out/deblur_run/)
A few hundred steps take a couple of minutes on one CPU core.
"""

import os

import numpy as np

from aspdc import synth, training
from aspdc.blocks import AspdcConfig
from aspdc.deblur import DeblurConfig
from aspdc.imageio import to_tensor, write_png
from aspdc.metrics import psnr

corpus_dir = "demo_out/deblur_run/corpus"
run_dir = "demo_out/deblur_run/run"
synth.make_corpus(corpus_dir, synth.CorpusSpec(seed=3, count=4, size=64, max_disp=8.0, kind="affine"))
pairs = synth.load_corpus(corpus_dir)
blur_psnr = np.mean([psnr(blur, sharp) for sharp, blur in pairs])
print(f"corpus: 4 pairs at 64x64, blurred-input PSNR {blur_psnr:.2f} dB")

cfg = training.TrainConfig(seed=0, batch=2, crop=64, steps=300, lr0=1e-3)
net_cfg = DeblurConfig(base_width=8, n_modules=2, aspdc=AspdcConfig())
result = training.train_deblur(pairs, cfg, net_cfg, run_dir=run_dir)

head, tail = result.history[0], result.history[-1]
print(f"step-0 epoch:  loss {head['loss']:.5f}, train PSNR {head['psnr']:.2f} dB")
print(f"final epoch:   loss {tail['loss']:.5f}, train PSNR {tail['psnr']:.2f} dB")
print(f"loss ratio {head['loss'] / tail['loss']:.1f}x over {cfg.steps} steps")
print(f"run artifacts (metrics.csv, config.txt, final.ckpt) in {run_dir}/")

sharp, blur = pairs[0]
out = result.net.infer(to_tensor([blur]))
write_png(os.path.join(run_dir, "deblurred_example.png"), out.data[0].transpose(1, 2, 0))
print(f"example: PSNR(deblurred, sharp) = "
      f"{psnr(out.data[0].transpose(1, 2, 0), sharp):.2f} dB vs blurred {psnr(blur, sharp):.2f} dB")
