"""Block semantics: SE gating, residual identities, parameter bookkeeping."""

import numpy as np
import pytest

from drdnet import Tensor
from drdnet import tensor as T
from drdnet.blocks import (BatchNorm2d, Conv2d, DCCL, Module, PReLU,
                           RainResidualBlock, SDCAB, SEUnit)
from drdnet.errors import ConfigurationError
from drdnet.rand import derive_rng


def rand_image(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape)
                  .astype(np.float32))


class TestModuleWalk:
    def test_names_are_dotted_and_unique(self):
        block = RainResidualBlock(8, 4, derive_rng(0, "t"))
        names = [n for n, _ in block.named_parameters()]
        assert "conv1.weight" in names
        assert "se.fc1" in names
        assert len(names) == len(set(names))

    def test_list_children_get_indexed_names(self):
        class Holder(Module):
            def __init__(self):
                super().__init__()
                self.blocks = [Conv2d(2, 2, 3, rng=derive_rng(0, "a")),
                               Conv2d(2, 2, 3, rng=derive_rng(0, "b"))]

        names = [n for n, _ in Holder().named_parameters()]
        assert "blocks.0.weight" in names and "blocks.1.bias" in names

    def test_buffers_are_separate_from_params(self):
        bn = BatchNorm2d(3)
        assert {n for n, _ in bn.named_parameters()} == {"gamma", "beta"}
        assert {n for n, _ in bn.named_buffers()} == {"running_mean", "running_var"}

    def test_astype_round_trip(self):
        block = SEUnit(4, reduction=2, rng=derive_rng(1, "t"))
        block.astype(np.float64)
        assert all(p.dtype == np.float64 for _, p in block.named_parameters())
        block.astype(np.float32)
        assert all(p.dtype == np.float32 for _, p in block.named_parameters())

    def test_set_training_recurses(self):
        block = RainResidualBlock(4, 2, derive_rng(2, "t"))
        block.set_training(False)
        assert block.bn1.training is False and block.se.training is False


class TestConv2dModule:
    def test_zero_init_outputs_zero(self):
        conv = Conv2d(3, 2, 3, rng=derive_rng(0, "z"), init="zero")
        y = conv(rand_image((1, 3, 5, 5)))
        assert np.all(y.data == 0.0)

    def test_he_init_scale(self):
        conv = Conv2d(16, 64, 3, rng=derive_rng(0, "he"))
        std = conv.weight.data.std()
        want = np.sqrt(2.0 / (16 * 9))
        assert 0.8 * want < std < 1.2 * want
        assert np.all(conv.bias.data == 0.0)

    def test_same_padding_is_default(self):
        conv = Conv2d(2, 2, 3, rng=derive_rng(0, "p"), dilation=5)
        y = conv(rand_image((1, 2, 16, 16)))
        assert y.shape == (1, 2, 16, 16)


class TestSEUnit:
    def test_reduction_must_divide_channels(self):
        with pytest.raises(ConfigurationError):
            SEUnit(6, reduction=4, rng=derive_rng(0, "se"))

    def _zero_weight_se(self, c=4):
        se = SEUnit(c, reduction=2, rng=derive_rng(0, "se"))
        for _, p in se.named_parameters():
            p.data[...] = 0.0
        return se

    def test_zero_weights_halve_the_input(self):
        se = self._zero_weight_se()
        x = rand_image((2, 4, 3, 3), seed=3)
        out, gate = se(x, return_gate=True)
        assert np.all(gate.data == np.float32(0.5))
        assert np.allclose(out.data, 0.5 * x.data)

    def test_large_positive_bias_saturates_toward_one(self):
        se = self._zero_weight_se()
        se.fc2_bias.data[...] = 20.0
        _, gate = se(rand_image((1, 4, 3, 3)), return_gate=True)
        assert np.all(gate.data > 0.999) and np.all(gate.data < 1.0)

    def test_large_negative_bias_saturates_toward_zero(self):
        se = self._zero_weight_se()
        se.fc2_bias.data[...] = -20.0
        _, gate = se(rand_image((1, 4, 3, 3)), return_gate=True)
        assert np.all(gate.data < 0.001) and np.all(gate.data > 0.0)

    def test_gate_matches_straight_line_oracle(self):
        se = SEUnit(4, reduction=2, rng=derive_rng(5, "se"))
        x = rand_image((2, 4, 5, 5), seed=6)
        _, gate = se(x, return_gate=True)
        pooled = x.data.astype(np.float64).mean(axis=(2, 3))
        w1 = se.fc1.data.reshape(2, 4).astype(np.float64)
        b1 = se.fc1_bias.data.reshape(2).astype(np.float64)
        w2 = se.fc2.data.reshape(4, 2).astype(np.float64)
        b2 = se.fc2_bias.data.reshape(4).astype(np.float64)
        hidden = np.maximum(pooled @ w1.T + b1, 0.0)
        want = 1.0 / (1.0 + np.exp(-(hidden @ w2.T + b2)))
        assert np.abs(gate.data.reshape(2, 4) - want).max() <= 1e-5

    def test_parameter_count_c16_r16(self):
        se = SEUnit(16, reduction=16, rng=derive_rng(0, "cnt"))
        total = sum(p.data.size for _, p in se.named_parameters())
        assert total == 49  # 16*1+1 + 1*16+16


class TestResidualBlocks:
    def test_rrb_zero_branch_is_identity(self):
        block = RainResidualBlock(4, 2, derive_rng(1, "rrb"))
        block.bn2.gamma.data[...] = 0.0
        block.bn2.beta.data[...] = 0.0
        x = rand_image((2, 4, 6, 6), seed=7)
        assert np.array_equal(block(x).data, x.data)

    def test_sdcab_zero_branch_is_identity(self):
        block = SDCAB(4, (1, 3, 5), derive_rng(2, "sdcab"))
        block.bn2.gamma.data[...] = 0.0
        block.bn2.beta.data[...] = 0.0
        x = rand_image((1, 4, 8, 8), seed=8)
        assert np.array_equal(block(x).data, x.data)

    def test_rrb_preserves_shape(self):
        block = RainResidualBlock(8, 4, derive_rng(3, "rrb"))
        assert block(rand_image((2, 8, 10, 12))).shape == (2, 8, 10, 12)


class TestDCCL:
    def test_shape_preserved(self):
        block = DCCL(8, 8, rng=derive_rng(0, "dccl"))
        assert block(rand_image((1, 8, 20, 20))).shape == (1, 8, 20, 20)

    def test_zero_branches_leave_fuse_bias(self):
        block = DCCL(3, 5, rng=derive_rng(1, "dccl"))
        for conv in block.branches:
            conv.weight.data[...] = 0.0
            conv.bias.data[...] = 0.0
        block.fuse.weight.data[...] = 0.0
        block.fuse.bias.data[...] = np.arange(5, dtype=np.float32).reshape(1, 5, 1, 1)
        y = block(rand_image((2, 3, 4, 4), seed=9))
        want = np.broadcast_to(block.fuse.bias.data, (2, 5, 4, 4))
        assert np.array_equal(y.data, want)

    def test_branch_count_tracks_dilations(self):
        block = DCCL(2, 2, dilations=(1, 2), rng=derive_rng(2, "dccl"))
        assert len(block.branches) == 2

    def test_conv_parameter_count_example(self):
        conv = Conv2d(3, 16, 3, rng=derive_rng(0, "cnt"))
        total = conv.weight.data.size + conv.bias.data.size
        assert total == 448  # 3*3*3*16 + 16
