"""Pyramid block contracts: fusion math, ablation topologies, stacks."""

import numpy as np
import pytest

from aspdc import tensor as T
from aspdc.blocks import Afim, AspdcConfig, AspdcModule, AspdcStack, ConfigError


def _feat(rng, n=1, c=4, h=8, w=8):
    return T.Tensor(rng.uniform(-1, 1, (n, c, h, w)).astype(np.float32))


class TestConfig:
    def test_needs_a_branch(self):
        with pytest.raises(ConfigError):
            AspdcConfig(branch_enabled=(False, False, False, False))

    def test_duplicate_must_target_enabled_branch(self):
        with pytest.raises(ConfigError):
            AspdcConfig(branch_enabled=(True, False, True, True), duplicate=(2, 3))

    def test_branch_specs_default(self):
        assert AspdcConfig().branch_specs() == [(1, True), (1, False), (2, False), (4, False)]

    def test_duplicate_expansion(self):
        cfg = AspdcConfig(branch_enabled=(True, False, True, False), duplicate=(3, 3))
        assert cfg.branch_specs() == [(1, True), (2, False), (2, False), (2, False)]


class TestFusion:
    def test_single_branch_attention_is_one_and_identity(self):
        rng = np.random.default_rng(0)
        cfg = AspdcConfig(branch_enabled=(True, False, False, False))
        mod = AspdcModule(4, cfg, rng=rng)
        x = _feat(rng)
        out, attn = mod(x)
        np.testing.assert_array_equal(attn.tensor.data, 1.0)
        branch_out = T.relu(mod.branches[0](x))
        np.testing.assert_array_equal(out.data, branch_out.data)

    def test_identical_branches_fuse_to_branch_output(self):
        rng = np.random.default_rng(1)
        cfg = AspdcConfig(branch_enabled=(False, True, True, False), branch_dilations=(1, 1, 1, 4))
        mod = AspdcModule(4, cfg, rng=rng)
        # tie the two branches' parameters so their outputs coincide
        mod.branches[1].weight.data = mod.branches[0].weight.data.copy()
        mod.branches[1].gen.weight.data = mod.branches[0].gen.weight.data.copy()
        mod.branches[1].gen.bias.data = mod.branches[0].gen.bias.data.copy()
        x = _feat(rng)
        out, _ = mod(x)
        ref = T.relu(mod.branches[0](x))
        np.testing.assert_allclose(out.data, ref.data, atol=1e-6)

    def test_output_within_branch_envelope(self):
        rng = np.random.default_rng(2)
        mod = AspdcModule(4, rng=rng)
        for p in mod.params():  # random generators: exercise real offsets
            p.data = p.data + rng.normal(0, 0.1, p.data.shape).astype(np.float32)
        x = _feat(rng)
        out, _ = mod(x)
        branch_outs = np.stack([T.relu(b(x)).data for b in mod.branches])
        lo = branch_outs.min(axis=0) - 1e-5
        hi = branch_outs.max(axis=0) + 1e-5
        assert (out.data >= lo).all() and (out.data <= hi).all()

    def test_zeroed_final_afim_layer_uniform_attention(self):
        rng = np.random.default_rng(3)
        afim = Afim(width=4, n_branches=4, rng=rng)
        afim.conv2.weight.data[:] = 0.0
        afim.conv2.bias.data[:] = 0.0
        outs = [ _feat(rng) for _ in range(4) ]
        attn = afim(outs)
        np.testing.assert_allclose(attn.tensor.data, 0.25, atol=1e-6)

    def test_attention_normalization(self):
        rng = np.random.default_rng(4)
        mod = AspdcModule(4, rng=rng)
        for _ in range(5):
            _, attn = mod(_feat(rng))
            np.testing.assert_allclose(attn.per_pixel_sum(), 1.0, atol=1e-5)
            assert (attn.tensor.data > 0).all()

    def test_afim_off_is_mean_and_branches_unchanged(self):
        rng = np.random.default_rng(5)
        cfg_on = AspdcConfig()
        mod_on = AspdcModule(4, cfg_on, rng=rng)
        cfg_off = AspdcConfig(afim_enabled=False)
        mod_off = AspdcModule(4, cfg_off, rng=np.random.default_rng(99))
        # share branch parameters between the two fusion modes
        for b_on, b_off in zip(mod_on.branches, mod_off.branches):
            b_off.weight = b_on.weight
            b_off.gen = b_on.gen
        x = _feat(rng)
        outs_on = [T.relu(b(x)).data for b in mod_on.branches]
        outs_off = [T.relu(b(x)).data for b in mod_off.branches]
        for a, b in zip(outs_on, outs_off):
            np.testing.assert_array_equal(a, b)
        out_off, attn_off = mod_off(x)
        np.testing.assert_allclose(out_off.data, np.mean(outs_on, axis=0), atol=1e-6)
        np.testing.assert_allclose(attn_off.per_pixel_sum(), 1.0, atol=1e-6)

    def test_shape_mismatch_between_branches(self):
        rng = np.random.default_rng(6)
        afim = Afim(width=2, n_branches=2, rng=rng)
        a = _feat(rng, c=2)
        b = T.Tensor(np.zeros((1, 2, 4, 4), dtype=np.float32))
        with pytest.raises(T.ShapeError):
            afim([a, b])


class TestAblationTopology:
    def expected_branch_params(self, width, dilation_count):
        # per branch: 3x3 deform weight + zero-init generator (27ch conv + bias)
        deform_w = width * width * 9
        gen = 27 * width * 9 + 27
        return dilation_count * (deform_w + gen)

    def test_single_branch_topology_parameter_count(self):
        cfg = AspdcConfig(branch_enabled=(True, False, False, False))
        mod = AspdcModule(8, cfg, rng=np.random.default_rng(0))
        assert len(mod.branches) == 1
        assert mod.branches[0].zero_offset
        afim = 1 * 8 * 8 + 8 + 8 * 1 + 1  # 1x1 convs with biases
        assert mod.param_count() == self.expected_branch_params(8, 1) + afim

    def test_triplicated_branch_topology(self):
        cfg = AspdcConfig(branch_enabled=(True, False, True, False), duplicate=(3, 3))
        mod = AspdcModule(8, cfg, rng=np.random.default_rng(0))
        assert len(mod.branches) == 4
        assert [b.dilation for b in mod.branches] == [1, 2, 2, 2]
        assert [b.zero_offset for b in mod.branches] == [True, False, False, False]
        # duplicated branches do not share parameters
        ids = {id(b.weight) for b in mod.branches}
        assert len(ids) == 4
        afim = 4 * 8 * 8 + 8 + 8 * 4 + 4
        assert mod.param_count() == self.expected_branch_params(8, 4) + afim


class TestStack:
    def test_single_module_stack_is_reduced_module_output(self):
        rng = np.random.default_rng(0)
        stack = AspdcStack(4, 1, rng=rng)
        x = _feat(rng)
        out, attns = stack(x)
        mod_out, _ = stack.modules[0](x)
        ref = stack.reduce(mod_out)
        np.testing.assert_array_equal(out.data, ref.data)
        assert len(attns) == 1

    @pytest.mark.parametrize("n_modules", [1, 2, 3])
    def test_spatial_dims_preserved(self, n_modules):
        rng = np.random.default_rng(n_modules)
        stack = AspdcStack(4, n_modules, rng=rng)
        x = _feat(rng, h=10, w=6)
        out, _ = stack(x)
        assert out.shape == (1, 4, 10, 6)

    def test_gradients_reach_every_module(self):
        rng = np.random.default_rng(7)
        stack = AspdcStack(4, 3, rng=rng)
        for p in stack.params():
            p.data = p.data + rng.normal(0, 0.05, p.data.shape).astype(np.float32)
        x = _feat(rng)
        tgt = T.Tensor(rng.uniform(-1, 1, (1, 4, 8, 8)).astype(np.float32))
        with T.GradTape() as tape:
            out, _ = stack(x)
            loss = T.mse(out, tgt)
        tape.backward(loss)
        for name, p in stack.named_params().items():
            assert p.grad is not None and np.abs(p.grad).max() > 0, f"no gradient into {name}"
