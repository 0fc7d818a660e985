"""Deformable-conv contracts: reduction to plain conv, shifts, gradients."""

import numpy as np
import pytest

from aspdc import tensor as T
from aspdc.deform import (
    DeformBranch,
    bilinear_gather,
    bilinear_sample,
    deform_conv2d,
    gen_offsets_modulation,
)
from aspdc.gradcheck import check_gradients, rand_tensor


def _maps(n, h, w, offset=0.0, mod=1.0, dtype=np.float32):
    off = T.Tensor(np.full((n, 18, h, w), offset, dtype=dtype))
    m = T.Tensor(np.full((n, 9, h, w), mod, dtype=dtype))
    return off, m


class TestBilinear:
    def test_integer_point_exact(self):
        rng = np.random.default_rng(0)
        x = T.Tensor(rng.uniform(0, 1, (1, 2, 5, 5)).astype(np.float32))
        assert bilinear_sample(x, 3.0, 2.0, n=0, c=1).item() == pytest.approx(float(x.data[0, 1, 3, 2]))

    def test_ramp_midpoint(self):
        ramp = np.tile(np.arange(5, dtype=np.float32), (5, 1))  # I(y,x) = x
        x = T.Tensor(ramp.reshape(1, 1, 5, 5))
        assert bilinear_sample(x, 2.0, 1.5).item() == pytest.approx(1.5)

    def test_outside_reads_zero_neighbors(self):
        x = T.Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        assert bilinear_sample(x, -0.5, 1.0).item() == pytest.approx(0.5)
        assert bilinear_sample(x, -2.0, 1.0).item() == pytest.approx(0.0)

    def test_coordinate_gradients_fd(self):
        # 20 random fractional points, kept off the cell boundaries where
        # the interpolant has no derivative
        rng = np.random.default_rng(1)
        x = rand_tensor(rng, (1, 1, 6, 6))
        worst = 0.0
        for _ in range(20):
            def draw():
                return float(rng.integers(0, 5)) + rng.uniform(0.1, 0.9)
            y = T.Tensor(np.full((1, 1, 1, 1), draw()), requires_grad=True, dtype=np.float64)
            xp = T.Tensor(np.full((1, 1, 1, 1), draw()), requires_grad=True, dtype=np.float64)
            errs = check_gradients(
                lambda: T.mse(bilinear_sample(x, y, xp), T.tensor(0.3, dtype=np.float64)),
                {"y": y, "x": xp}, rng=rng)
            worst = max(worst, max(errs.values()))
        assert worst <= 1e-3

    def test_gather_matches_scalar_op(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, (3, 7, 7)).astype(np.float32)
        ys = rng.uniform(-1, 7, size=(4, 4)).astype(np.float32)
        xs = rng.uniform(-1, 7, size=(4, 4)).astype(np.float32)
        got = bilinear_gather(img, ys, xs)
        x4 = T.Tensor(img[None])
        for c in range(3):
            for i in range(4):
                for j in range(4):
                    ref = bilinear_sample(x4, float(ys[i, j]), float(xs[i, j]), n=0, c=c).item()
                    assert got[c, i, j] == pytest.approx(ref, abs=1e-6)


class TestDeformConv:
    @pytest.mark.parametrize("dilation", [1, 2, 4])
    def test_reduces_to_conv2d(self, dilation):
        rng = np.random.default_rng(dilation)
        x = T.Tensor(rng.uniform(-1, 1, (2, 3, 12, 12)).astype(np.float32))
        w = T.Tensor(rng.normal(0, 0.3, (4, 3, 3, 3)).astype(np.float32))
        off, mod = _maps(2, 12, 12)
        got = deform_conv2d(x, w, off, mod, dilation=dilation)
        ref = T.conv2d(x, w, stride=1, padding=dilation, dilation=dilation)
        np.testing.assert_allclose(got.data, ref.data, atol=1e-5)

    def test_constant_offset_shifts_left(self):
        # offset (0, +1) with a delta kernel reads column x+1: a left shift
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, (1, 1, 6, 6)).astype(np.float32)
        x = T.Tensor(img)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        off = np.zeros((1, 18, 6, 6), dtype=np.float32)
        off[:, 1::2] = 1.0  # dx = +1 on every tap
        mod = np.ones((1, 9, 6, 6), dtype=np.float32)
        got = deform_conv2d(x, T.Tensor(w), T.Tensor(off), T.Tensor(mod))
        expect = np.zeros_like(img)
        expect[:, :, :, :-1] = img[:, :, :, 1:]  # zero-filled right edge
        np.testing.assert_allclose(got.data, expect, atol=1e-6)

    def test_zero_modulation_zero_output(self):
        rng = np.random.default_rng(5)
        x = T.Tensor(rng.uniform(-1, 1, (1, 2, 5, 5)).astype(np.float32))
        w = T.Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32))
        off, mod = _maps(1, 5, 5, offset=0.3, mod=0.0)
        out = deform_conv2d(x, w, off, mod)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_zero_offset_mode_ignores_offsets(self):
        rng = np.random.default_rng(6)
        x = T.Tensor(rng.uniform(-1, 1, (1, 2, 6, 6)).astype(np.float32))
        w = T.Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32))
        off_wild, mod = _maps(1, 6, 6, offset=3.7, mod=0.8)
        off_zero, _ = _maps(1, 6, 6, offset=0.0)
        a = deform_conv2d(x, w, off_wild, mod, zero_offset_mode=True)
        b = deform_conv2d(x, w, off_zero, mod, zero_offset_mode=False)
        np.testing.assert_allclose(a.data, b.data, atol=1e-6)

    def test_integer_translation_matches_shifted_input(self):
        # constant integer offsets sample a translated image (interior)
        rng = np.random.default_rng(7)
        a, b = 2, -1
        img = rng.uniform(0, 1, (1, 2, 10, 10)).astype(np.float32)
        shifted = np.zeros_like(img)
        shifted[:, :, :-a if a else None, -b:] = img[:, :, a:, : b or None]
        w = T.Tensor(rng.normal(size=(2, 2, 3, 3)).astype(np.float32))
        off = np.zeros((1, 18, 10, 10), dtype=np.float32)
        off[:, 0::2] = a
        off[:, 1::2] = b
        mod = T.Tensor(np.ones((1, 9, 10, 10), dtype=np.float32))
        got = deform_conv2d(T.Tensor(img), w, T.Tensor(off), mod)
        ref = T.conv2d(T.Tensor(shifted), w, padding=1)
        margin = 4  # |shift| + dilation, away from zero-padded borders
        np.testing.assert_allclose(got.data[:, :, margin:-margin, margin:-margin],
                                   ref.data[:, :, margin:-margin, margin:-margin], atol=1e-5)

    def test_channel_count_mismatch_rejected(self):
        x = T.Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
        w = T.Tensor(np.zeros((2, 2, 3, 3), dtype=np.float32))
        bad_off = T.Tensor(np.zeros((1, 17, 4, 4), dtype=np.float32))
        _, mod = _maps(1, 4, 4)
        with pytest.raises(T.ShapeError):
            deform_conv2d(x, w, bad_off, mod)
        off, _ = _maps(1, 4, 4)
        bad_mod = T.Tensor(np.zeros((1, 8, 4, 4), dtype=np.float32))
        with pytest.raises(T.ShapeError):
            deform_conv2d(x, w, off, bad_mod)

    def test_all_gradients_fd(self):
        rng = np.random.default_rng(8)
        x = rand_tensor(rng, (1, 2, 6, 6))
        w = rand_tensor(rng, (2, 2, 3, 3))
        off = T.Tensor(rng.uniform(0.15, 0.85, (1, 18, 6, 6)) * np.sign(rng.normal(size=(1, 18, 6, 6))),
                       requires_grad=True, dtype=np.float64)
        mod = rand_tensor(rng, (1, 9, 6, 6), lo=0.05, hi=0.95)
        tgt = rand_tensor(rng, (1, 2, 6, 6), requires_grad=False)
        errs = check_gradients(lambda: T.mse(deform_conv2d(x, w, off, mod, dilation=2), tgt),
                               {"x": x, "w": w, "off": off, "mod": mod}, rng=rng)
        assert max(errs.values()) <= 1e-3


class TestGenerator:
    def test_zero_init_yields_zero_offsets_half_modulation(self):
        rng = np.random.default_rng(0)
        branch = DeformBranch(4, dilation=2, rng=rng)
        f = T.Tensor(rng.uniform(-1, 1, (1, 4, 8, 8)).astype(np.float32))
        off, mod = branch.gen_maps(f)
        np.testing.assert_array_equal(off.data, 0.0)
        np.testing.assert_allclose(mod.data, 0.5, atol=1e-7)

    def test_dilation4_generator_keeps_spatial_dims(self):
        rng = np.random.default_rng(1)
        branch = DeformBranch(3, dilation=4, rng=rng)
        f = T.Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
        off, mod = branch.gen_maps(f)
        assert off.shape == (2, 18, 16, 16)
        assert mod.shape == (2, 9, 16, 16)

    def test_modulation_in_unit_interval(self):
        rng = np.random.default_rng(2)
        gw = T.Tensor(rng.normal(0, 0.5, (27, 3, 3, 3)).astype(np.float32))
        gb = T.Tensor(rng.normal(0, 0.5, (1, 27, 1, 1)).astype(np.float32))
        f = T.Tensor(rng.uniform(-2, 2, (1, 3, 6, 6)).astype(np.float32))
        _, mod = gen_offsets_modulation(f, gw, gb, dilation=1)
        assert (mod.data > 0).all() and (mod.data < 1).all()

    def test_branch_composite_gradcheck(self):
        rng = np.random.default_rng(3)
        branch = DeformBranch(2, dilation=1, rng=rng, dtype=np.float64)
        branch.gen.weight.data += rng.uniform(-0.02, 0.02, branch.gen.weight.shape)
        branch.gen.bias.data[:, :18] += 0.25
        x = rand_tensor(rng, (1, 2, 6, 6))
        tgt = rand_tensor(rng, (1, 2, 6, 6), requires_grad=False)
        errs = check_gradients(lambda: T.mse(branch(x), tgt),
                               {"x": x, "w": branch.weight, "gw": branch.gen.weight,
                                "gb": branch.gen.bias}, rng=rng)
        assert max(errs.values()) <= 1e-3
