"""Composite network: trajectory descriptors feeding the scorer."""

from __future__ import annotations

import numpy as np

from . import nn
from .descriptor import VTDM
from .scorer import Scorer, ScorerConfig
from .tensor import Tensor

__all__ = ["MovementQualityNet", "build_model", "trainable_parameters"]


class MovementQualityNet(nn.Module):
    """End-to-end model: clip in, S+1 logits out."""

    def __init__(self, vtdm: VTDM, msm: Scorer):
        super().__init__()
        self.vtdm = vtdm
        self.msm = msm

    def forward(self, clip: Tensor) -> Tensor:
        return self.msm(self.vtdm(clip))


def build_model(
    scorer_config: ScorerConfig,
    clip_length: int = 16,
    height: int = 64,
    width: int = 64,
    stn_enabled: bool = True,
    seed: int = 0,
) -> MovementQualityNet:
    """Deterministically initialize the full model from one seed."""
    rng = np.random.default_rng(seed)
    vtdm = VTDM(clip_length, height, width, stn_enabled, rng=rng)
    msm = Scorer(scorer_config, rng=rng)
    model = MovementQualityNet(vtdm, msm)
    nn.bind_parameter_names(model)
    return model


def trainable_parameters(model: MovementQualityNet) -> list:
    """Parameters the optimizer should hold.

    With the transformer disabled the localisation network never feeds the
    loss, so its parameters are excluded (they would otherwise have no
    gradients to step).
    """
    if model.vtdm.stn_enabled:
        return model.parameters()
    return [p for name, p in model.named_parameters() if not name.startswith("vtdm.localisation.")]
