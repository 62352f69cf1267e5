"""Binary fusion operators for merging two same-shaped feature maps.

Used to combine the prediction of one scale with the upsampled prediction of
the scale below it.  All kinds map a pair of ``[B, C, H, W]`` maps to a single
``[B, C, H, W]`` map.  Sum and Max are parameter-free; Concat and Attention
own a learned 1x1 projection.
"""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .errors import ConfigError, ContractError

FUSION_KINDS = ("sum", "concat", "max", "attention")


class _FusionBase(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        if channels < 1:
            raise ConfigError("channel count must be positive")
        self.channels = channels

    def _check(self, a: Tensor, b: Tensor) -> None:
        if a.shape != b.shape:
            raise ContractError(
                f"fusion inputs must share shape, got {tuple(a.shape)} and {tuple(b.shape)}"
            )
        if a.dim() != 4 or a.shape[1] != self.channels:
            raise ContractError(
                f"fusion expects [B,{self.channels},H,W] inputs, got {tuple(a.shape)}"
            )


class SumFusion(_FusionBase):
    """Elementwise sum, ``a + b``."""

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        return a + b


class MaxFusion(_FusionBase):
    """Elementwise maximum, ``max(a, b)``."""

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        return torch.maximum(a, b)


class ConcatFusion(_FusionBase):
    """Channel concatenation followed by a learned 1x1 projection back to C.

    The projection carries no nonlinearity; fusion stays a pure mixing step
    and any nonlinearity lives in the cell that consumes the result.
    """

    def __init__(self, channels: int):
        super().__init__(channels)
        self.proj = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        self._check(a, b)
        return self.proj(torch.cat([a, b], dim=1))


class AttentionFusion(_FusionBase):
    """Soft selection between the two branches.

    A 1x1 convolution over ``[a; b]`` produces two logit maps; a softmax
    across them yields per-location weights ``w_a + w_b = 1`` and the output
    is ``w_a * a + w_b * b``.  The logit conv starts at zero, so an untrained
    fusion averages its inputs.
    """

    def __init__(self, channels: int):
        super().__init__(channels)
        self.score = nn.Conv2d(2 * channels, 2, kernel_size=1)
        with torch.no_grad():
            self.score.weight.zero_()
            self.score.bias.zero_()

    def weights(self, a: Tensor, b: Tensor) -> Tensor:
        """Per-location branch weights, shape [B, 2, H, W], summing to 1."""
        self._check(a, b)
        return torch.softmax(self.score(torch.cat([a, b], dim=1)), dim=1)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        w = self.weights(a, b)
        return w[:, 0:1] * a + w[:, 1:2] * b


_FUSION_CLASSES = {
    "sum": SumFusion,
    "concat": ConcatFusion,
    "max": MaxFusion,
    "attention": AttentionFusion,
}

_ALIASES = {"concatenate": "concat"}


def normalize_fusion_kind(kind: str) -> str:
    canonical = kind.strip().lower()
    canonical = _ALIASES.get(canonical, canonical)
    if canonical not in _FUSION_CLASSES:
        raise ConfigError(f"unknown fusion kind {kind!r}, expected one of {FUSION_KINDS}")
    return canonical


def make_fusion(kind: str, channels: int):
    """Build a fusion operator by kind name ('sum', 'concat', 'max' or 'attention')."""
    return _FUSION_CLASSES[normalize_fusion_kind(kind)](channels)
