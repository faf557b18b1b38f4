"""Convolutional movement scorer over stacked trajectory descriptors.

The first layer is adapted to J input channels and the last to S+1 output
units; in between sits a scaled-down stack of conv/BN/ReLU stages (full
VGG-19/ResNeXt-50 bodies need pretrained weights, which are out of scope).
Three stem styles:

- ``vgg-like``:     3×3 conv to 64 channels, BN, ReLU
- ``resnext-like``: 7×7 conv to 64 channels, 3×3 max pool (stride 2), ReLU
- ``tiny``:         3×3 conv to 16 channels, BN, ReLU (desk-scale default)

Each body stage is `stage_depth` rounds of 3×3 conv + BN + ReLU followed by
a 2×2 max pool; a global average pool and a fully connected layer emit raw
logits (no softmax).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .tensor import Tensor, concat

STEM_CHANNELS = {"vgg-like": 64, "resnext-like": 64, "tiny": 16}

__all__ = [
    "ConfigurationError",
    "ScorerConfig",
    "Scorer",
    "build_scorer",
    "msm_forward",
    "STEM_CHANNELS",
]


class ConfigurationError(ValueError):
    """Invalid scorer configuration."""


@dataclass(frozen=True)
class ScorerConfig:
    backbone_style: str = "tiny"
    input_channels: int = 15
    num_classes: int = 5
    stage_widths: tuple = (32, 64)
    stage_depth: int = 1
    groups: int = 1  # >1 approximates aggregated-transform stages

    def __post_init__(self):
        if self.backbone_style not in STEM_CHANNELS:
            raise ConfigurationError(
                f"unknown backbone_style {self.backbone_style!r}, "
                f"expected one of {sorted(STEM_CHANNELS)}"
            )
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_channels < 1:
            raise ConfigurationError(f"input_channels must be >= 1, got {self.input_channels}")
        widths = tuple(self.stage_widths)
        object.__setattr__(self, "stage_widths", widths)
        if not widths or any(w < 1 for w in widths):
            raise ConfigurationError(f"stage_widths must be positive, got {widths}")
        if self.stage_depth < 1:
            raise ConfigurationError(f"stage_depth must be >= 1, got {self.stage_depth}")
        if self.groups < 1:
            raise ConfigurationError(f"groups must be >= 1, got {self.groups}")
        if self.groups > 1:
            for w in (STEM_CHANNELS[self.backbone_style],) + widths:
                if w % self.groups:
                    raise ConfigurationError(
                        f"stage width {w} not divisible into {self.groups} groups"
                    )


class GroupedConv2d(nn.Module):
    """3×3 convolution split into channel groups, outputs concatenated."""

    def __init__(self, in_channels, out_channels, groups, *, rng):
        super().__init__()
        self.groups = groups
        self.slice_in = in_channels // groups
        self.branches = [
            nn.Conv2d(self.slice_in, out_channels // groups, 3, padding=1, rng=rng)
            for _ in range(groups)
        ]

    def forward(self, x):
        outs = [
            branch(x[:, g * self.slice_in : (g + 1) * self.slice_in])
            for g, branch in enumerate(self.branches)
        ]
        return concat(outs, axis=1)


class ConvStage(nn.Module):
    """`depth` rounds of 3×3 conv + BN + ReLU, then a 2×2 max pool."""

    def __init__(self, in_channels, out_channels, depth, groups, *, rng):
        super().__init__()
        convs = []
        bns = []
        ch = in_channels
        for _ in range(depth):
            if groups > 1:
                convs.append(GroupedConv2d(ch, out_channels, groups, rng=rng))
            else:
                convs.append(nn.Conv2d(ch, out_channels, 3, padding=1, rng=rng))
            bns.append(nn.BatchNorm2d(out_channels))
            ch = out_channels
        self.convs = convs
        self.bns = bns
        self.pool = nn.MaxPool2d(2, 2)

    def forward(self, x):
        for conv, bn in zip(self.convs, self.bns):
            x = nn.relu(bn(conv(x)))
        return self.pool(x)


class Scorer(nn.Module):
    """Stem + conv stages + global average pool + FC(S+1) emitting raw logits."""

    def __init__(self, config: ScorerConfig, *, rng):
        super().__init__()
        self.config = config
        stem_ch = STEM_CHANNELS[config.backbone_style]
        if config.backbone_style == "resnext-like":
            self.stem = nn.Conv2d(config.input_channels, stem_ch, 7, padding=3, rng=rng)
            self.stem_pool = nn.MaxPool2d(3, 2)
            self.stem_bn = None
        else:
            self.stem = nn.Conv2d(config.input_channels, stem_ch, 3, padding=1, rng=rng)
            self.stem_pool = None
            self.stem_bn = nn.BatchNorm2d(stem_ch)
        self.stages = []
        ch = stem_ch
        for width in config.stage_widths:
            self.stages.append(ConvStage(ch, width, config.stage_depth, config.groups, rng=rng))
            ch = width
        self.head = nn.Linear(ch, config.num_classes, rng=rng)

    def forward(self, descriptors: Tensor) -> Tensor:
        """J×H×W descriptor stack (or batch N×J×H×W) to S+1 logits (or N×(S+1))."""
        x, squeezed = nn._promote(descriptors, 3)
        if x.shape[1] != self.config.input_channels:
            raise ValueError(
                f"descriptor stack has {x.shape[1]} channels, "
                f"scorer expects {self.config.input_channels}"
            )
        h = self.stem(x)
        if self.stem_pool is not None:
            h = nn.relu(self.stem_pool(h))
        else:
            h = nn.relu(self.stem_bn(h))
        for stage in self.stages:
            h = stage(h)
        pooled = h.mean(axis=(2, 3))  # global average pool -> (N, C)
        logits = self.head(pooled)
        return logits.reshape(self.config.num_classes) if squeezed else logits

    def shape_plan(self, height: int, width: int) -> list:
        """Layer-by-layer output shapes from pure arithmetic (no forward pass)."""
        cfg = self.config
        plan = [("input", (cfg.input_channels, height, width))]
        h, w = height, width
        stem_ch = STEM_CHANNELS[cfg.backbone_style]
        plan.append(("stem_conv", (stem_ch, h, w)))  # stems preserve H, W via padding
        if cfg.backbone_style == "resnext-like":
            h, w = (h - 3) // 2 + 1, (w - 3) // 2 + 1
            plan.append(("stem_pool", (stem_ch, h, w)))
        for i, width_i in enumerate(cfg.stage_widths):
            plan.append((f"stage{i}_conv", (width_i, h, w)))
            h, w = h // 2, w // 2
            plan.append((f"stage{i}_pool", (width_i, h, w)))
        plan.append(("gap", (cfg.stage_widths[-1],)))
        plan.append(("logits", (cfg.num_classes,)))
        return plan


def build_scorer(config: ScorerConfig, seed: int) -> Scorer:
    """Deterministically initialize a scorer from the seed."""
    model = Scorer(config, rng=np.random.default_rng(seed))
    nn.bind_parameter_names(model)
    return model


def msm_forward(descriptors: Tensor, model: Scorer) -> Tensor:
    """Raw S+1 logits for a descriptor stack; no softmax applied."""
    return model(descriptors)
