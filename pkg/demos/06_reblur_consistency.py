"""The reblurring network and consistency fine-tuning, desk scale.

Run:  python3 demos/06_reblur_consistency.py   (writes demo_out/consistency/)
"""

import numpy as np

from aspdc import synth, training
from aspdc.blocks import AspdcConfig
from aspdc.deblur import DeblurConfig
from aspdc.reblur import ReblurConfig

base = "demo_out/consistency"
synth.make_corpus(f"{base}/corpus", synth.CorpusSpec(seed=5, count=4, size=64, max_disp=8.0, kind="affine"))
pairs = synth.load_corpus(f"{base}/corpus")

# --- phase one: both networks separately -------------------------------------
deblur_res = training.train_deblur(
    pairs, training.TrainConfig(seed=0, batch=2, crop=64, steps=200, lr0=1e-3),
    DeblurConfig(base_width=8, n_modules=2, aspdc=AspdcConfig()), run_dir=f"{base}/deblur")
reblur_res = training.train_reblur(
    pairs, training.TrainConfig(seed=1, batch=2, crop=64, steps=200, lr0=1e-3),
    ReblurConfig(base_width=8), run_dir=f"{base}/reblur")

copy_sharp_mse = float(np.mean([np.mean((s - b) ** 2) for s, b in pairs]))
print(f"reblur loss {reblur_res.history[-1]['loss']:.5f} vs copy-sharp baseline {copy_sharp_mse:.5f}")

# a reblur net must not collapse to echoing its blurred input: feed an
# unrelated sharp image and require the output to leave the blurred input
dev, ok = training.anticollapse_probe(reblur_res.net, pairs[2][0], pairs[0][1], floor=0.004)
print(f"anti-collapse probe: mean deviation {dev:.4f} ({'ok' if ok else 'COLLAPSED'})")

# --- phase two: fine-tune the deblurring net through the frozen reblur path --
before = training.consistency_term_on(deblur_res.net, reblur_res.net, pairs)
ft = training.finetune_consistency(
    deblur_res.net, reblur_res.net, pairs,
    training.ConsistencyConfig(lam=0.1),
    training.TrainConfig(seed=2, batch=2, crop=64, steps=120, lr0=1e-5),
    run_dir=f"{base}/finetune")
after = training.consistency_term_on(ft.net, reblur_res.net, pairs)
print(f"reblur-consistency term: {before:.6f} -> {after:.6f} "
      f"({'down' if after < before else 'up'})")
print(f"validation PSNR through fine-tuning: "
      f"{ft.history[0]['psnr']:.2f} -> {ft.history[-1]['psnr']:.2f} dB")
