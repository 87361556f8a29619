# -*- coding: utf-8 -*-

import unittest

import torch

from epiunwarp.errors import ConfigError, IndivisibleExtent, ShapeMismatch
from epiunwarp.network import (DEFAULT_PARAMETER_COUNT, ResidualBlock, UNet, UNetConfig, conv2d,
                               parameter_count, residual_block, unet_forward)

TINY = UNetConfig(base_channels=2, levels=2, dropout_rate=0.0)


class UNetConfigTest(unittest.TestCase):

    def test_channels_double_up_to_the_cap(self):
        config = UNetConfig(base_channels=32, levels=4, max_channels=128)
        assert config.channels == (32, 64, 128, 128)
        assert config.bottleneck_channels == 128
        assert config.divisor == 16

    def test_invalid_configs_raise(self):
        with self.assertRaises(ConfigError):
            UNetConfig(out_channels=2)
        with self.assertRaises(ConfigError):
            UNetConfig(levels=0)
        with self.assertRaises(ConfigError):
            UNetConfig(kernel_size=4)
        with self.assertRaises(ConfigError):
            UNetConfig(dropout_rate=1.0)


class UNetTest(unittest.TestCase):

    def test_default_parameter_count(self):
        assert parameter_count(UNetConfig()) == DEFAULT_PARAMETER_COUNT

    def test_default_network_keeps_the_slice_extent(self):
        torch.manual_seed(0)
        model = UNet()
        output = unet_forward(torch.zeros(2, 6, 32, 48, dtype=torch.float64), model)
        assert output.shape == (2, 1, 32, 48)
        assert output.dtype == torch.float64

    def test_single_sample_drops_the_batch_axis(self):
        model = UNet(TINY)
        assert unet_forward(torch.zeros(6, 8, 8, dtype=torch.float64), model).shape == (1, 8, 8)

    def test_zero_weights_predict_zero(self):
        model = UNet(TINY)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        inputs = torch.randn(3, 6, 8, 12, dtype=torch.float64)
        assert not unet_forward(inputs, model).any()

    def test_evaluation_is_deterministic(self):
        torch.manual_seed(1)
        model = UNet(UNetConfig(base_channels=2, levels=2))
        inputs = torch.randn(2, 6, 8, 8, dtype=torch.float64)
        assert torch.equal(unet_forward(inputs, model), unet_forward(inputs, model))
        assert not model.training

    def test_dropout_is_active_in_training(self):
        torch.manual_seed(2)
        model = UNet(UNetConfig(base_channels=4, levels=2, dropout_rate=0.5))
        inputs = torch.randn(2, 6, 16, 16, dtype=torch.float64)
        first = unet_forward(inputs, model, training=True)
        second = unet_forward(inputs, model, training=True)
        assert not torch.equal(first, second)

    def test_indivisible_extent_raises(self):
        model = UNet(TINY)
        with self.assertRaises(IndivisibleExtent):
            unet_forward(torch.zeros(1, 6, 10, 8, dtype=torch.float64), model)

    def test_wrong_channel_count_raises(self):
        model = UNet(TINY)
        with self.assertRaises(ShapeMismatch):
            unet_forward(torch.zeros(1, 5, 8, 8, dtype=torch.float64), model)

    def test_gradients_reach_every_parameter(self):
        torch.manual_seed(3)
        model = UNet(TINY)
        inputs = torch.randn(2, 6, 8, 8, dtype=torch.float64)
        output = unet_forward(inputs, model, training=True)
        grads = torch.autograd.grad(output.square().sum(), list(model.parameters()), allow_unused=True)
        assert all(g is not None and torch.isfinite(g).all() for g in grads)


class BlockTest(unittest.TestCase):

    def test_conv2d_keeps_the_extent(self):
        weight = torch.zeros(1, 2, 3, 3, dtype=torch.float64)
        weight[0, 0, 1, 1] = 1.0
        inputs = torch.randn(1, 2, 5, 7, dtype=torch.float64)
        assert torch.equal(conv2d(inputs, weight), inputs[:, :1])

    def test_conv2d_sums_the_neighbourhood_of_a_constant_image(self):
        c = 1.5
        output = conv2d(torch.full((1, 1, 5, 6), c, dtype=torch.float64),
                        torch.ones(1, 1, 3, 3, dtype=torch.float64))[0, 0]
        assert torch.all(output[1:-1, 1:-1] == 9 * c)
        assert float(output[0, 2]) == 6 * c
        assert float(output[2, -1]) == 6 * c
        assert float(output[0, 0]) == 4 * c
        assert float(output[-1, -1]) == 4 * c

    def test_conv2d_matches_a_direct_loop(self):
        rng = torch.Generator().manual_seed(2)
        inputs = torch.randn(1, 2, 5, 4, generator=rng, dtype=torch.float64)
        weight = torch.randn(3, 2, 3, 3, generator=rng, dtype=torch.float64)
        bias = torch.randn(3, generator=rng, dtype=torch.float64)
        expected = torch.zeros(1, 3, 5, 4, dtype=torch.float64)
        for o in range(3):
            for i in range(2):
                for y in range(5):
                    for x in range(4):
                        for dy in range(3):
                            for dx in range(3):
                                v, u = y + dy - 1, x + dx - 1
                                if 0 <= v < 5 and 0 <= u < 4:
                                    expected[0, o, y, x] += weight[o, i, dy, dx] * inputs[0, i, v, u]
        expected += bias.reshape(1, 3, 1, 1)
        assert torch.allclose(conv2d(inputs, weight, bias), expected, rtol=0, atol=1e-12)

    def test_block_with_zero_weights_passes_the_skip_through(self):
        block = ResidualBlock(3, 3, dropout_rate=0.0).double()
        with torch.no_grad():
            for p in block.parameters():
                p.zero_()
        x = torch.randn(2, 3, 6, 6, dtype=torch.float64)
        assert torch.equal(residual_block(x, block, 0.0, False), torch.relu(x))

    def test_conv2d_rejects_mismatched_channels(self):
        with self.assertRaises(ShapeMismatch):
            conv2d(torch.zeros(1, 3, 4, 4), torch.zeros(1, 2, 3, 3))

    def test_block_projects_when_widths_differ(self):
        block = ResidualBlock(3, 5).double()
        assert block.proj is not None
        assert ResidualBlock(4, 4).proj is None
        output = block(torch.randn(1, 3, 6, 6, dtype=torch.float64))
        assert output.shape == (1, 5, 6, 6)
        assert (output >= 0).all()

    def test_block_rejects_the_wrong_width(self):
        block = ResidualBlock(3, 5).double()
        with self.assertRaises(ShapeMismatch):
            block(torch.zeros(1, 4, 6, 6, dtype=torch.float64))


class LayerGradientTest(unittest.TestCase):

    def setUp(self):
        self.rng = torch.Generator().manual_seed(4)

    def randn(self, *shape):
        return torch.randn(*shape, generator=self.rng, dtype=torch.float64).requires_grad_()

    def test_convolution(self):
        assert torch.autograd.gradcheck(conv2d, (self.randn(1, 2, 5, 5), self.randn(3, 2, 3, 3),
                                                 self.randn(3)), eps=1e-5, atol=1e-6)

    def test_transposed_convolution(self):
        up = torch.nn.ConvTranspose2d(2, 3, 2, stride=2).double()
        assert torch.autograd.gradcheck(up, (self.randn(1, 2, 3, 3),), eps=1e-5, atol=1e-6)

    def test_max_pooling(self):
        pool = torch.nn.functional.max_pool2d
        assert torch.autograd.gradcheck(lambda x: pool(x, 2, stride=2), (self.randn(1, 2, 4, 4),),
                                        eps=1e-5, atol=1e-6)

    def test_residual_block(self):
        block = ResidualBlock(2, 3, dropout_rate=0.0).double()
        assert torch.autograd.gradcheck(block, (self.randn(1, 2, 4, 4),), eps=1e-5, atol=1e-6)

    def test_dropout_masks_follow_the_seed(self):
        model = UNet(UNetConfig(base_channels=2, levels=2, dropout_rate=0.5))
        inputs = torch.randn(1, 6, 8, 8, dtype=torch.float64)
        torch.manual_seed(5)
        first = unet_forward(inputs, model, training=True)
        torch.manual_seed(5)
        assert torch.equal(first, unet_forward(inputs, model, training=True))
