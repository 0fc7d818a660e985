"""Optimizer/schedule contracts and the fine-tuning path invariants."""

import hashlib
import os

import numpy as np
import pytest

from aspdc import tensor as T
from aspdc import training
from aspdc.blocks import AspdcConfig
from aspdc.deblur import DeblurConfig, DeblurNet
from aspdc.reblur import ReblurConfig, ReblurNet
from aspdc.synth import CorpusSpec, make_corpus, load_corpus
from aspdc.training import (
    Adam,
    ConsistencyConfig,
    Schedule,
    TrainConfig,
    TrainError,
    consistency_loss,
    finetune_consistency,
    train_deblur,
    train_reblur,
)


def tiny_corpus(tmp_path, count=2, size=32, seed=5):
    d = tmp_path / "corpus"
    make_corpus(d, CorpusSpec(seed=seed, count=count, size=size))
    return load_corpus(d)


def micro_deblur_cfg():
    return DeblurConfig(base_width=4, n_modules=1,
                        aspdc=AspdcConfig(branch_enabled=(True, True, False, False)))


class TestAdam:
    def test_matches_float64_reference_over_100_steps(self):
        rng = np.random.default_rng(0)
        p = T.Tensor(rng.normal(0, 1, (1, 1, 2, 5)).astype(np.float32), requires_grad=True)
        grads = [rng.normal(0, 0.5, (1, 1, 2, 5)) for _ in range(100)]

        opt = Adam({"p": p})
        for g in grads:
            p.grad = g.astype(np.float32)
            opt.step(1e-3)
        mine = opt.master["p"]

        # hand-rolled 64-bit reference
        theta = p.data.astype(np.float64) * 0  # rebuilt below from the same start
        theta = opt.master["p"] * 0
        rng2 = np.random.default_rng(0)
        theta = rng2.normal(0, 1, (1, 1, 2, 5)).astype(np.float32).astype(np.float64)
        _ = [rng2.normal(0, 0.5, (1, 1, 2, 5)) for _ in range(100)]  # same draw order
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        for t, g in enumerate(grads, start=1):
            g64 = g.astype(np.float32).astype(np.float64)
            m = 0.9 * m + 0.1 * g64
            v = 0.999 * v + 0.001 * g64 * g64
            mhat = m / (1 - 0.9**t)
            vhat = v / (1 - 0.999**t)
            theta -= 1e-3 * mhat / (np.sqrt(vhat) + 1e-18)
        np.testing.assert_allclose(mine, theta, atol=1e-7)

    def test_first_step_moves_by_lr(self):
        # bias-corrected first step is lr * g/(|g| + eps) = +-lr
        p = T.Tensor(np.zeros((1, 1, 1, 3), dtype=np.float32), requires_grad=True)
        opt = Adam({"p": p})
        p.grad = np.array([[[[0.5, -2.0, 1e-3]]]], dtype=np.float32)
        opt.step(0.01)
        np.testing.assert_allclose(p.data, [[[[-0.01, 0.01, -0.01]]]], rtol=1e-5)

    def test_skips_parameters_without_grad(self):
        p = T.Tensor(np.ones((1, 1, 1, 1), dtype=np.float32), requires_grad=True)
        opt = Adam({"p": p})
        opt.step(0.1)
        np.testing.assert_array_equal(p.data, 1.0)


class TestSchedule:
    def test_halving_points(self):
        s = Schedule(lr0=1e-4, period_epochs=100)
        assert s.lr(0) == 1e-4
        assert s.lr(100) == pytest.approx(5e-5)
        assert s.lr(200) == pytest.approx(2.5e-5)
        assert s.lr(99) == 1e-4

    def test_floor_stops_training(self):
        s = Schedule(lr0=1e-4, period_epochs=10, floor=1e-6)
        # 0.5^6 = 1.56e-6 >= floor; 0.5^7 = 7.8e-7 < floor
        assert s.active(69)
        assert not s.active(70)


class TestTrainingLoops:
    def test_empty_corpus_rejected(self):
        with pytest.raises(TrainError):
            train_deblur([], TrainConfig(steps=1))

    def test_deterministic_losses_same_seed(self, tmp_path):
        pairs = tiny_corpus(tmp_path)
        cfg = TrainConfig(seed=9, batch=1, crop=32, steps=12)
        r1 = train_deblur(pairs, cfg, micro_deblur_cfg())
        r2 = train_deblur(pairs, cfg, micro_deblur_cfg())
        l1 = [row["loss"] for row in r1.history]
        l2 = [row["loss"] for row in r2.history]
        assert l1 == l2

    def test_run_directory_layout(self, tmp_path):
        pairs = tiny_corpus(tmp_path)
        cfg = TrainConfig(seed=1, batch=2, crop=32, steps=6, ckpt_every=1)
        res = train_deblur(pairs, cfg, micro_deblur_cfg(), run_dir=str(tmp_path / "run"))
        assert os.path.exists(tmp_path / "run" / "config.txt")
        csv = open(tmp_path / "run" / "metrics.csv", encoding="utf-8").read().splitlines()
        assert csv[0] == "epoch,lr,loss,psnr,ssim"
        assert len(csv) >= 2
        assert os.path.exists(res.checkpoint)
        assert any(f.startswith("epoch_") for f in os.listdir(tmp_path / "run"))

    def test_step0_psnr_equals_blur_psnr(self, tmp_path):
        from aspdc.metrics import psnr

        pairs = tiny_corpus(tmp_path)
        cfg = TrainConfig(seed=2, batch=2, crop=32, steps=1)
        res = train_deblur(pairs, cfg, micro_deblur_cfg())
        blur_psnr = np.mean([psnr(blur, sharp) for sharp, blur in pairs])
        # one epoch of stats reported after the first updates; validation at
        # the residual-identity init is checked directly:
        net = DeblurNet(micro_deblur_cfg(), rng=np.random.default_rng(0))
        from aspdc.imageio import to_tensor

        out = net.infer(to_tensor([pairs[0][1]]))
        assert psnr(out.data[0].transpose(1, 2, 0), pairs[0][0]) == pytest.approx(
            psnr(pairs[0][1], pairs[0][0]), abs=1e-9)
        assert res.history[0]["psnr"] == pytest.approx(blur_psnr, abs=1.0)

    def test_reblur_loop_runs(self, tmp_path):
        pairs = tiny_corpus(tmp_path)
        cfg = TrainConfig(seed=3, batch=2, crop=32, steps=4)
        res = train_reblur(pairs, cfg, ReblurConfig(base_width=4))
        assert len(res.history) >= 1

    def test_no_update_control_loss_constant(self, tmp_path):
        # without optimizer steps the loss of a fixed batch cannot drift
        pairs = tiny_corpus(tmp_path)
        net = ReblurNet(ReblurConfig(base_width=4), rng=np.random.default_rng(4))
        from aspdc.imageio import to_tensor

        sharp_b = to_tensor([p[0] for p in pairs])
        blur_b = to_tensor([p[1] for p in pairs])
        vals = [T.mse(net(sharp_b, blur_b), blur_b).item() for _ in range(5)]
        assert all(v == vals[0] for v in vals)


class TestConsistency:
    def _trained_pair(self, pairs, steps=4):
        d = train_deblur(pairs, TrainConfig(seed=5, batch=2, crop=32, steps=steps),
                         micro_deblur_cfg())
        r = train_reblur(pairs, TrainConfig(seed=6, batch=2, crop=32, steps=steps),
                         ReblurConfig(base_width=4))
        return d.net, r.net

    def test_lambda_zero_step_equals_pretrain_step(self, tmp_path):
        pairs = tiny_corpus(tmp_path)
        deblur_net, reblur_net = self._trained_pair(pairs)
        from aspdc.imageio import to_tensor

        sharp_b = to_tensor([p[0] for p in pairs])
        blur_b = to_tensor([p[1] for p in pairs])

        with T.GradTape() as tape:
            loss = T.mse(deblur_net(blur_b), sharp_b)
        tape.backward(loss)
        ref = {k: p.grad.copy() for k, p in deblur_net.named_params().items()}
        deblur_net.zero_grad()

        for p in reblur_net.params():
            p.requires_grad = False
        with T.GradTape() as tape:
            loss, _ = consistency_loss(deblur_net, reblur_net, sharp_b, blur_b, lam=0.0)
        tape.backward(loss)
        for k, p in deblur_net.named_params().items():
            np.testing.assert_allclose(p.grad, ref[k], atol=1e-6)
        deblur_net.zero_grad()

    def test_frozen_reblur_parameters_unchanged(self, tmp_path):
        pairs = tiny_corpus(tmp_path)
        deblur_net, reblur_net = self._trained_pair(pairs)
        digest_before = {k: hashlib.sha256(p.data.tobytes()).hexdigest()
                         for k, p in reblur_net.named_params().items()}
        finetune_consistency(deblur_net, reblur_net, pairs,
                             ConsistencyConfig(lam=0.1),
                             TrainConfig(seed=7, batch=2, crop=32, steps=4, lr0=1e-5))
        for k, p in reblur_net.named_params().items():
            assert hashlib.sha256(p.data.tobytes()).hexdigest() == digest_before[k], k
        # freeze is restored afterwards
        assert all(p.requires_grad for p in reblur_net.params())

    def test_lambda_must_be_positive(self):
        with pytest.raises(TrainError):
            ConsistencyConfig(lam=0.0)

    def test_anticollapse_probe_api(self, tmp_path):
        pairs = tiny_corpus(tmp_path)
        _, reblur_net = self._trained_pair(pairs, steps=2)
        dev, ok = training.anticollapse_probe(reblur_net, pairs[0][0], pairs[1][1], floor=0.0)
        assert dev >= 0.0 and ok
