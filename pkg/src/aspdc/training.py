"""Adam, learning-rate schedules, and the two-phase training procedure.

Phase one trains the deblurring and reblurring networks independently on
(sharp, blurred) pairs. Phase two replaces the reblurring network's sharp
input with the deblurred output and fine-tunes the deblurring parameters
under the combined objective

    L = L_deblur(I_d, I_s) + lam * L_reblur(reblur(I_d, I_b), I_b)

with the reblurring parameters frozen by default (otherwise the
consistency term could be trivially minimized by degrading the reblurring
network). Runs are deterministic under a fixed seed on one thread.
"""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import save_deblur, save_reblur
from .deblur import DeblurConfig, DeblurNet
from .imageio import to_tensor
from .metrics import psnr, ssim
from .reblur import ReblurConfig, ReblurNet
from .synth import load_corpus


class TrainError(RuntimeError):
    pass


class Adam:
    """Adam with float64 master weights and moments.

    beta1=0.9, beta2=0.999, eps=1e-18; the update runs entirely in
    float64 (matching a 64-bit reference trajectory to ~1e-13) and each
    step publishes float32 copies into the live parameters.
    """

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-18

    def __init__(self, params):
        self.params = dict(params)  # name -> Tensor
        self.master = {k: p.data.astype(np.float64) for k, p in self.params.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.master.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.master.items()}
        self.step_count = 0

    def step(self, lr):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.BETA1**t
        bc2 = 1.0 - self.BETA2**t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64)
            self.m[k] = self.BETA1 * self.m[k] + (1.0 - self.BETA1) * g
            self.v[k] = self.BETA2 * self.v[k] + (1.0 - self.BETA2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            self.master[k] -= lr * mhat / (np.sqrt(vhat) + self.EPS)
            p.data = self.master[k].astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self):
        out = {"opt/step": np.array([float(self.step_count)])}
        for k in self.params:
            out[f"opt/m/{k}"] = self.m[k]
            out[f"opt/v/{k}"] = self.v[k]
        return out


@dataclass
class Schedule:
    """lr = lr0 * 0.5^(epoch // period); training stops below the floor."""

    lr0: float
    period_epochs: int
    floor: float = 1e-6

    def lr(self, epoch):
        return self.lr0 * 0.5 ** (epoch // self.period_epochs)

    def active(self, epoch):
        return self.lr(epoch) >= self.floor


@dataclass
class TrainConfig:
    seed: int = 0
    batch: int = 2
    crop: int = 64
    steps: int = 2000
    lr0: float = 1e-4
    period_epochs: int = 0  # 0: auto-scale to ~3 halvings over the run
    lr_floor: float = 1e-6
    ckpt_every: int = 0     # epochs; 0 = final only


@dataclass
class ConsistencyConfig:
    lam: float = 0.1
    freeze_reblur: bool = True

    def __post_init__(self):
        if not self.lam > 0:
            raise TrainError(f"consistency weight must be positive, got {self.lam}")


@dataclass
class TrainResult:
    net: object
    history: list
    checkpoint: str | None
    corpus_size: int = 0


def _resolve_pairs(corpus):
    if isinstance(corpus, (str, os.PathLike)):
        pairs = load_corpus(corpus)
    else:
        pairs = list(corpus)
    if not pairs:
        raise TrainError("empty corpus")
    return pairs


def _plan(cfg, n_pairs):
    steps_per_epoch = max(1, math.ceil(n_pairs / cfg.batch))
    epochs = max(1, math.ceil(cfg.steps / steps_per_epoch))
    period = cfg.period_epochs if cfg.period_epochs > 0 else max(1, math.ceil(epochs / 3))
    return steps_per_epoch, epochs, period


def _epoch_batches(pairs, cfg, rng):
    """Shuffled random-crop batches of (sharp, blurred) tensors."""
    order = rng.permutation(len(pairs))
    for start in range(0, len(order), cfg.batch):
        idxs = order[start : start + cfg.batch]
        sharps, blurs = [], []
        for i in idxs:
            sharp, blur = pairs[i]
            h, w = sharp.shape[:2]
            c = min(cfg.crop, h, w)
            y0 = int(rng.integers(0, h - c + 1))
            x0 = int(rng.integers(0, w - c + 1))
            sharps.append(sharp[y0 : y0 + c, x0 : x0 + c])
            blurs.append(blur[y0 : y0 + c, x0 : x0 + c])
        yield to_tensor(sharps), to_tensor(blurs)


def _eval_scores(outputs, targets):
    """Mean PSNR/SSIM of clamped full-image outputs against targets."""
    ps = [psnr(o, t) for o, t in zip(outputs, targets)]
    ss = [ssim(o, t) for o, t in zip(outputs, targets)]
    mean_psnr = float("inf") if any(math.isinf(p) for p in ps) else float(np.mean(ps))
    return mean_psnr, float(np.mean(ss))


class RunWriter:
    """Run directory layout: config snapshot, per-epoch CSV, checkpoints."""

    def __init__(self, run_dir):
        self.run_dir = run_dir
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
            self.csv_path = os.path.join(run_dir, "metrics.csv")
            with open(self.csv_path, "w", encoding="utf-8") as fh:
                fh.write("epoch,lr,loss,psnr,ssim\n")

    def snapshot(self, text):
        if self.run_dir:
            with open(os.path.join(self.run_dir, "config.txt"), "w", encoding="utf-8") as fh:
                fh.write(text)

    def row(self, epoch, lr, loss, psnr_db, ssim_val):
        if self.run_dir:
            with open(self.csv_path, "a", encoding="utf-8") as fh:
                fh.write(f"{epoch},{lr:.8g},{loss:.8g},{psnr_db:.6g},{ssim_val:.6g}\n")

    def ckpt_path(self, tag):
        return os.path.join(self.run_dir, f"{tag}.ckpt") if self.run_dir else None


def _run_phase(net, loss_of_batch, eval_fn, pairs, cfg, sched, run_dir, save_fn, step_hook):
    writer = RunWriter(run_dir)
    steps_per_epoch, epochs, _ = _plan(cfg, len(pairs))
    writer.snapshot(
        f"seed = {cfg.seed}\nbatch = {cfg.batch}\ncrop = {cfg.crop}\nsteps = {cfg.steps}\n"
        f"lr0 = {sched.lr0}\nperiod_epochs = {sched.period_epochs}\nlr_floor = {sched.floor}\n"
        f"planned_epochs = {epochs}\nsteps_per_epoch = {steps_per_epoch}\n"
    )
    params = {k: p for k, p in net.named_params().items() if p.requires_grad}
    adam = Adam(params)
    rng = np.random.default_rng([cfg.seed, 0xD0])
    history = []
    step = 0
    for epoch in range(epochs):
        if not sched.active(epoch) or step >= cfg.steps:
            break
        lr = sched.lr(epoch)
        losses = []
        for sharp_b, blur_b in _epoch_batches(pairs, cfg, rng):
            with T.GradTape() as tape:
                loss, extras = loss_of_batch(sharp_b, blur_b)
            tape.backward(loss)
            adam.step(lr)
            adam.zero_grad()
            losses.append((loss.item(), extras))
            step += 1
            if step_hook is not None:
                step_hook(step, net, loss.item())
            if step >= cfg.steps:
                break
        mean_loss = float(np.mean([l for l, _ in losses]))
        psnr_db, ssim_val = eval_fn(pairs)
        row = {"epoch": epoch, "lr": lr, "loss": mean_loss, "psnr": psnr_db, "ssim": ssim_val,
               "extras": [e for _, e in losses]}
        history.append(row)
        writer.row(epoch, lr, mean_loss, psnr_db, ssim_val)
        if cfg.ckpt_every and run_dir and (epoch + 1) % cfg.ckpt_every == 0:
            save_fn(writer.ckpt_path(f"epoch_{epoch:05d}"), net, extra=adam.state_arrays())
    final = None
    if run_dir:
        final = save_fn(writer.ckpt_path("final"), net, extra=adam.state_arrays())
    return TrainResult(net, history, final, corpus_size=len(pairs))


def train_deblur(corpus, cfg=None, net_cfg=None, run_dir=None, step_hook=None):
    """Phase-one training of the deblurring network (MSE to the sharp target)."""
    cfg = cfg or TrainConfig()
    pairs = _resolve_pairs(corpus)
    _, epochs, period = _plan(cfg, len(pairs))
    sched = Schedule(cfg.lr0, period, cfg.lr_floor)
    net = DeblurNet(net_cfg or DeblurConfig(), rng=np.random.default_rng([cfg.seed, 1]))

    def loss_of_batch(sharp_b, blur_b):
        out = net(blur_b)
        return T.mse(out, sharp_b), None

    def eval_fn(eval_pairs):
        out = net.infer(to_tensor([blur for _, blur in eval_pairs]))
        outputs = [out.data[i].transpose(1, 2, 0) for i in range(len(eval_pairs))]
        return _eval_scores(outputs, [sharp for sharp, _ in eval_pairs])

    return _run_phase(net, loss_of_batch, eval_fn, pairs, cfg, sched, run_dir, save_deblur, step_hook)


def train_reblur(corpus, cfg=None, net_cfg=None, run_dir=None, step_hook=None):
    """Phase-one training of the reblurring network (MSE to the blurred input)."""
    cfg = cfg or TrainConfig()
    pairs = _resolve_pairs(corpus)
    _, epochs, period = _plan(cfg, len(pairs))
    sched = Schedule(cfg.lr0, period, cfg.lr_floor)
    net = ReblurNet(net_cfg or ReblurConfig(), rng=np.random.default_rng([cfg.seed, 2]))

    def loss_of_batch(sharp_b, blur_b):
        out = net(sharp_b, blur_b)
        return T.mse(out, blur_b), None

    def eval_fn(eval_pairs):
        out = net.infer(to_tensor([sharp for sharp, _ in eval_pairs]),
                        to_tensor([blur for _, blur in eval_pairs]))
        outputs = [out.data[i].transpose(1, 2, 0) for i in range(len(eval_pairs))]
        return _eval_scores(outputs, [blur for _, blur in eval_pairs])

    return _run_phase(net, loss_of_batch, eval_fn, pairs, cfg, sched, run_dir, save_reblur, step_hook)


def consistency_loss(deblur_net, reblur_net, sharp_b, blur_b, lam):
    """Eq-style combined objective; lam=0 degenerates to the plain
    deblurring loss (the reblur term contributes exact zeros)."""
    deblurred = deblur_net(blur_b)
    l_deblur = T.mse(deblurred, sharp_b)
    reblurred = reblur_net(deblurred, blur_b)
    l_reblur = T.mse(reblurred, blur_b)
    total = T.add(l_deblur, T.scale(l_reblur, lam))
    return total, (l_deblur.item(), l_reblur.item())


def finetune_consistency(deblur_net, reblur_net, corpus, cc=None, cfg=None,
                         run_dir=None, step_hook=None):
    """Phase two: refine the deblurring network through the frozen
    reblurring path. Fresh Adam state at the fine-tune learning rate."""
    cc = cc or ConsistencyConfig()
    cfg = cfg or TrainConfig(lr0=1e-5, steps=400)
    pairs = _resolve_pairs(corpus)
    _, epochs, period = _plan(cfg, len(pairs))
    sched = Schedule(cfg.lr0, period, cfg.lr_floor)

    frozen = []
    if cc.freeze_reblur:
        for p in reblur_net.params():
            p.requires_grad = False
            frozen.append(p)

    def loss_of_batch(sharp_b, blur_b):
        return consistency_loss(deblur_net, reblur_net, sharp_b, blur_b, cc.lam)

    def eval_fn(eval_pairs):
        out = deblur_net.infer(to_tensor([blur for _, blur in eval_pairs]))
        outputs = [out.data[i].transpose(1, 2, 0) for i in range(len(eval_pairs))]
        return _eval_scores(outputs, [sharp for sharp, _ in eval_pairs])

    try:
        result = _run_phase(deblur_net, loss_of_batch, eval_fn, pairs, cfg, sched,
                            run_dir, save_deblur, step_hook)
    finally:
        for p in frozen:
            p.requires_grad = True
    return result


def consistency_term_on(deblur_net, reblur_net, pairs):
    """Mean reblur-consistency MSE over full (sharp, blurred) pairs."""
    vals = []
    for sharp, blur in pairs:
        blur_t = to_tensor([blur])
        deblurred = deblur_net(blur_t)
        reblurred = reblur_net(deblurred, blur_t)
        vals.append(T.mse(reblurred, blur_t).item())
    return float(np.mean(vals))


def anticollapse_probe(reblur_net, unrelated_sharp, blurred, floor):
    """Feed an unrelated sharp image; the output must leave the blurred
    input by at least `floor` mean absolute deviation (no identity
    collapse onto the blur-information branch)."""
    out = reblur_net.infer(to_tensor([unrelated_sharp]), to_tensor([blurred]))
    dev = float(np.mean(np.abs(out.data[0].transpose(1, 2, 0) - blurred)))
    return dev, dev >= floor
