"""Encoder-decoder segmentation backbone with skip connections.

Batch norm follows every convolution; submodules are named so state-dict
paths end in `.conv` / `.bn`, which the weights container relies on.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn


class ConvBNReLU(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1, bias=False)
        self.bn = nn.BatchNorm2d(cout)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class ConvBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.a = ConvBNReLU(cin, cout)
        self.b = ConvBNReLU(cout, cout)

    def forward(self, x):
        return self.b(self.a(x))


class UpBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cout, 2, stride=2)
        self.block = ConvBlock(cout * 2, cout)

    def forward(self, x, skip):
        x = self.up(x)
        return self.block(torch.cat([x, skip], dim=1))


class UNet(nn.Module):
    """depth D encoder/decoder, base width F, single-logit head.

    Input dims must be divisible by 2**depth (callers pad).
    """

    def __init__(self, in_channels=1, depth=4, width=32):
        super().__init__()
        self.in_channels = in_channels
        self.depth = depth
        self.width = width
        widths = [width * 2 ** d for d in range(depth)]
        self.enc = nn.ModuleList()
        cin = in_channels
        for w in widths:
            self.enc.append(ConvBlock(cin, w))
            cin = w
        self.bottleneck = ConvBlock(cin, width * 2 ** depth)
        self.dec = nn.ModuleList()
        cin = width * 2 ** depth
        for w in reversed(widths):
            self.dec.append(UpBlock(cin, w))
            cin = w
        self.head = nn.Conv2d(cin, 1, 1)

    def forward(self, x, return_features=False):
        skips = []
        for block in self.enc:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        features = x
        for block, skip in zip(self.dec, reversed(skips)):
            x = block(x, skip)
        logits = self.head(x)
        if return_features:
            return logits, features
        return logits
