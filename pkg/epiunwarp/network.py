# -*- coding: utf-8 -*-
"""
The 2.5D residual U-Net that predicts a displacement map from six stacked slices.

The network works in double precision; its output is the VDM (mm) of the
centre slice.
"""

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, IndivisibleExtent, ShapeMismatch

log = logging.getLogger(__name__)

#: Parameter count of ``UNet(UNetConfig())``.
DEFAULT_PARAMETER_COUNT = 508209


@dataclass(frozen=True)
class UNetConfig(object):

    """
    Architecture hyperparameters.

    >>> UNetConfig().channels
    (8, 16, 32, 64)
    >>> UNetConfig().bottleneck_channels
    128
    """

    in_channels: int = 6
    base_channels: int = 8
    levels: int = 4
    max_channels: int = 128
    dropout_rate: float = 0.2
    kernel_size: int = 3
    out_channels: int = 1

    def __post_init__(self):
        if self.out_channels != 1:
            raise ConfigError('The network predicts a single-channel VDM, got out_channels=%r.'
                              % (self.out_channels,))
        if self.levels < 1 or self.base_channels < 1 or self.in_channels < 1:
            raise ConfigError('levels, base_channels and in_channels must be positive.')
        if self.kernel_size % 2 != 1:
            raise ConfigError('kernel_size must be odd, got %r.' % (self.kernel_size,))
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError('dropout_rate must lie in [0, 1), got %r.' % (self.dropout_rate,))

    @property
    def channels(self):
        """Feature maps per encoder level, doubling and capped at ``max_channels``."""
        return tuple(min(self.base_channels * 2 ** level, self.max_channels)
                     for level in range(self.levels))

    @property
    def bottleneck_channels(self):
        return min(self.base_channels * 2 ** self.levels, self.max_channels)

    @property
    def divisor(self):
        """In-plane extents must be multiples of this."""
        return 2 ** self.levels


def conv2d(inputs, weight, bias=None):
    """Stride-1 cross-correlation with zero padding that keeps the spatial extent."""
    if inputs.dim() != 4 or inputs.shape[1] != weight.shape[1]:
        raise ShapeMismatch('Input %r does not fit a kernel with %d input channels.'
                            % (tuple(inputs.shape), weight.shape[1]))
    return F.conv2d(inputs, weight, bias, stride=1,
                    padding=(weight.shape[-2] // 2, weight.shape[-1] // 2))


class ResidualBlock(nn.Module):

    """Two convolutions with a skip; a 1x1 projection when channel counts differ."""

    def __init__(self, in_channels, out_channels, kernel_size=3, dropout_rate=0.2):
        super(ResidualBlock, self).__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size, padding=kernel_size // 2)
        self.proj = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else None
        self.dropout_rate = dropout_rate

    def forward(self, x):
        return residual_block(x, self, self.dropout_rate, self.training)


def residual_block(x, block, dropout_rate, training):
    """``relu(conv2(dropout(relu(conv1(x)))) + proj(x))``."""
    expected = block.conv1.in_channels
    if x.dim() != 4 or x.shape[1] != expected:
        raise ShapeMismatch('Residual block expects %d channels, got input %r.'
                            % (expected, tuple(x.shape)))
    h = F.relu(conv2d(x, block.conv1.weight, block.conv1.bias))
    h = F.dropout2d(h, dropout_rate, training=training)
    h = conv2d(h, block.conv2.weight, block.conv2.bias)
    skip = x if block.proj is None else conv2d(x, block.proj.weight, block.proj.bias)
    return F.relu(h + skip)


class UNet(nn.Module):

    """Residual encoder/decoder with max-pool downsampling and transposed-convolution upsampling."""

    def __init__(self, config=UNetConfig()):
        super(UNet, self).__init__()
        self.config = config
        k, p = config.kernel_size, config.dropout_rate
        widths = config.channels
        self.encoders = nn.ModuleList()
        in_channels = config.in_channels
        for width in widths:
            self.encoders.append(ResidualBlock(in_channels, width, k, p))
            in_channels = width
        self.bottleneck = ResidualBlock(in_channels, config.bottleneck_channels, k, p)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        in_channels = config.bottleneck_channels
        for width in reversed(widths):
            self.ups.append(nn.ConvTranspose2d(in_channels, width, 2, stride=2))
            self.decoders.append(ResidualBlock(2 * width, width, k, p))
            in_channels = width
        self.head = nn.Conv2d(in_channels, config.out_channels, 1)
        self.reset_parameters()
        self.double()

    def reset_parameters(self):
        """Fan-in scaled uniform weights, zero biases."""
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                module.reset_parameters()
                nn.init.zeros_(module.bias)

    def forward(self, x):
        skips = []
        for block in self.encoders:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2, stride=2)
        x = self.bottleneck(x)
        x = F.dropout2d(x, self.config.dropout_rate, training=self.training)
        for up, block, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = block(torch.cat([up(x), skip], dim=1))
        return conv2d(x, self.head.weight, self.head.bias)


def unet_forward(inputs, model, training=False):
    """
    Predict VDM slices from ``(6, H, W)`` or ``(N, 6, H, W)`` inputs.

    Returns ``(1, H, W)`` or ``(N, 1, H, W)`` respectively.
    """
    config = model.config
    single = inputs.dim() == 3
    if single:
        inputs = inputs.unsqueeze(0)
    if inputs.dim() != 4 or inputs.shape[1] != config.in_channels:
        raise ShapeMismatch('Expected %d input channels, got %r.' % (config.in_channels, tuple(inputs.shape)))
    height, width = inputs.shape[-2:]
    if height % config.divisor or width % config.divisor:
        raise IndivisibleExtent('Extents %dx%d are not multiples of %d.' % (height, width, config.divisor))
    model.train(training)
    output = model(inputs.double())
    return output[0] if single else output


def parameter_count(config):
    return sum(p.numel() for p in UNet(config).parameters())
