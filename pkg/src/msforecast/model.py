"""Multi-scale recurrent frame predictors.

The main model advances a video one frame at a time in several feature
spaces at once.  A stem convolution embeds the frame at full resolution;
stride-2 convolutions descend to coarser scales; each scale runs its own
recurrent cells; and on the way back up the coarser scale's prediction is
upsampled and fused into the finer one.  Per step, each scale ``l`` below the
deepest computes

    a_l = Cell_pre(h_l)                  # prediction feature at time t
    h_{l+1} = Downsample(a_l)            # descend one scale
    b_l = Cell_post(a_l)                 # advance the scale to time t+1
    out_l = Cell_fuse(Fuse(b_l, Upsample(out_{l+1})))

while the deepest scale advances with a single cell.  The finest scale's
output maps through a 3x3 convolution and a sigmoid back to image channels,
so predicted pixels always lie in [0, 1].

With ``levels == 1`` the ladder degenerates to plain pixel-space prediction
(stem, one cell, head), matching :class:`SingleSpacePredictor` at depth 1
operation for operation.

Two interpretation choices are deliberate and documented here rather than
hidden: the second ("post") cell at each scale is a distinct cell with its
own parameters and state, and the ST-LSTM spatiotemporal memory is carried
across time within its own scale (scales have different spatial sizes, so it
cannot flow between them).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .cells import CellState, make_cell, normalize_cell_kind
from .errors import ConfigError, ContractError
from .fusion import make_fusion, normalize_fusion_kind

LEAKY_SLOPE = 0.01


@dataclass
class ModelConfig:
    """Architecture and protocol settings for the predictors.

    ``channels[l]`` is the feature width at scale ``l`` (also the hidden width
    of that scale's cells); an int is replicated across all levels.  Scale
    ``l`` runs at spatial size ``(H / 2**l, W / 2**l)``, so inputs must be
    divisible by ``2**(levels-1)``.
    """

    levels: int = 4
    channels: Tuple[int, ...] = (64, 64, 64, 64)
    cell: str = "convlstm"
    fusion: str = "concat"
    kernel_size: int = 3
    img_channels: int = 1
    input_len: int = 10
    horizon: int = 10

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if isinstance(self.channels, int):
            self.channels = (self.channels,) * self.levels
        else:
            self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != self.levels:
            raise ConfigError(
                f"need one channel width per level: got {len(self.channels)} widths "
                f"for {self.levels} levels"
            )
        if any(c < 1 for c in self.channels):
            raise ConfigError("channel widths must be positive")
        self.cell = normalize_cell_kind(self.cell)
        self.fusion = normalize_fusion_kind(self.fusion)
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel_size}")
        if self.img_channels < 1:
            raise ConfigError("img_channels must be positive")
        if self.input_len < 1:
            raise ConfigError("input_len must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def config_for_levels(base: ModelConfig, levels: int) -> ModelConfig:
    """Derive a config with a different level count, reusing the base widths."""
    chans = list(base.channels[:levels])
    while len(chans) < levels:
        chans.append(base.channels[-1])
    return dataclasses.replace(base, levels=levels, channels=tuple(chans))


@dataclass
class LadderState:
    """Per-scale recurrent state.

    Scales below the deepest hold three cell states ('pre', 'post', 'fuse');
    the deepest holds one ('deep').
    """

    levels: List[Dict[str, CellState]] = field(default_factory=list)


class Downsample(nn.Module):
    """Stride-2 same-kernel convolution halving H and W, then a leaky rectifier."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=2, padding=kernel_size // 2
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ConfigError(
                f"downsampling needs even spatial dims, got {tuple(x.shape[-2:])}"
            )
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)


class Upsample(nn.Module):
    """Nearest-neighbor x2 followed by a convolution and a leaky rectifier."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, padding=kernel_size // 2)

    def forward(self, x: Tensor) -> Tensor:
        x = x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
        return F.leaky_relu(self.conv(x), LEAKY_SLOPE)


class RecursivePredictor(nn.Module):
    """Base for next-frame predictors rolled out autoregressively.

    Subclasses implement :meth:`init_state` and :meth:`step`; :meth:`rollout`
    drives them: the whole input sequence is consumed as warm-up (updating
    state and predicting the next frame at each step), then each prediction
    is fed back as input until the horizon is filled.
    """

    config: ModelConfig

    def init_state(self, batch: int, height: int, width: int, device=None, dtype=None):
        raise NotImplementedError

    def step(self, x: Tensor, state) -> Tuple[Tensor, object]:
        raise NotImplementedError

    def _check_frame(self, x: Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != self.config.img_channels:
            raise ContractError(
                f"expected frame [B,{self.config.img_channels},H,W], got {tuple(x.shape)}"
            )

    def _check_spatial(self, height: int, width: int, factor: int) -> None:
        if height % factor or width % factor:
            raise ConfigError(
                f"spatial size {height}x{width} must be divisible by {factor} "
                f"for this configuration (odd intermediate sizes are rejected, not padded)"
            )

    def rollout(
        self,
        seq: Tensor,
        horizon: Optional[int] = None,
        return_warmup: bool = False,
    ):
        """Predict ``horizon`` future frames from an input sequence.

        ``seq`` is ``[B, T, C, H, W]``; all T frames are consumed as warm-up.
        Returns ``[B, horizon, C, H, W]``, plus the T-1 warm-up predictions
        (for frames 2..T) when ``return_warmup`` is set.
        """
        horizon = self.config.horizon if horizon is None else horizon
        if horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {horizon}")
        if seq.dim() != 5:
            raise ContractError(f"expected [B,T,C,H,W] sequence, got shape {tuple(seq.shape)}")
        batch, steps = seq.shape[0], seq.shape[1]
        if steps < 1:
            raise ContractError("input sequence must contain at least one frame")
        state = self.init_state(batch, seq.shape[3], seq.shape[4], seq.device, seq.dtype)

        warmup = []
        pred = None
        for t in range(steps):
            pred, state = self.step(seq[:, t], state)
            if t < steps - 1:
                warmup.append(pred)
        outputs = [pred]
        for _ in range(horizon - 1):
            pred, state = self.step(pred, state)
            outputs.append(pred)

        preds = torch.stack(outputs, dim=1)
        if not return_warmup:
            return preds
        if warmup:
            warm = torch.stack(warmup, dim=1)
        else:
            warm = preds.new_zeros((batch, 0) + preds.shape[2:])
        return preds, warm

    def forward(self, seq: Tensor, horizon: Optional[int] = None) -> Tensor:
        return self.rollout(seq, horizon)


class MultiSpacePredictor(RecursivePredictor):
    """The ladder model: simultaneous prediction in ``levels`` feature spaces."""

    arch = "multi"

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.channels
        k = config.kernel_size
        self.stem = nn.Conv2d(config.img_channels, c[0], k, padding=k // 2)
        self.head = nn.Conv2d(c[0], config.img_channels, k, padding=k // 2)
        self.pre_cells = nn.ModuleList()
        self.post_cells = nn.ModuleList()
        self.fuse_cells = nn.ModuleList()
        self.down = nn.ModuleList()
        self.up = nn.ModuleList()
        self.fusions = nn.ModuleList()
        for l in range(config.levels - 1):
            self.pre_cells.append(make_cell(config.cell, c[l], c[l], k))
            self.post_cells.append(make_cell(config.cell, c[l], c[l], k))
            self.fuse_cells.append(make_cell(config.cell, c[l], c[l], k))
            self.down.append(Downsample(c[l], c[l + 1], k))
            self.up.append(Upsample(c[l + 1], c[l], k))
            self.fusions.append(make_fusion(config.fusion, c[l]))
        self.deep_cell = make_cell(config.cell, c[-1], c[-1], k)

    def init_state(self, batch: int, height: int, width: int, device=None, dtype=None) -> LadderState:
        self._check_spatial(height, width, 2 ** (self.config.levels - 1))
        levels: List[Dict[str, CellState]] = []
        h, w = height, width
        for l in range(self.config.levels - 1):
            levels.append(
                {
                    "pre": self.pre_cells[l].init_state(batch, h, w, device, dtype),
                    "post": self.post_cells[l].init_state(batch, h, w, device, dtype),
                    "fuse": self.fuse_cells[l].init_state(batch, h, w, device, dtype),
                }
            )
            h, w = h // 2, w // 2
        levels.append({"deep": self.deep_cell.init_state(batch, h, w, device, dtype)})
        return LadderState(levels)

    def step(self, x: Tensor, state: LadderState) -> Tuple[Tensor, LadderState]:
        """One ladder transition: consume frame x_t, predict frame t+1."""
        self._check_frame(x)
        k = self.config.levels
        if len(state.levels) != k:
            raise ContractError(
                f"state has {len(state.levels)} levels, model is configured for {k}"
            )
        new: List[Dict[str, CellState]] = [{} for _ in range(k)]
        ahead = []  # per scale: prediction feature advanced to t+1
        h = self.stem(x)
        for l in range(k - 1):
            a, s = self.pre_cells[l](h, state.levels[l]["pre"])
            new[l]["pre"] = s
            b, s = self.post_cells[l](a, state.levels[l]["post"])
            new[l]["post"] = s
            ahead.append(b)
            h = self.down[l](a)
        out, s = self.deep_cell(h, state.levels[k - 1]["deep"])
        new[k - 1]["deep"] = s
        for l in reversed(range(k - 1)):
            fused = self.fusions[l](ahead[l], self.up[l](out))
            out, s = self.fuse_cells[l](fused, state.levels[l]["fuse"])
            new[l]["fuse"] = s
        return torch.sigmoid(self.head(out)), LadderState(new)


class SingleSpacePredictor(RecursivePredictor):
    """Prediction in exactly one feature space.

    ``depth=1`` is the plain pixel-space baseline (stem, one cell, head).
    Deeper settings encode the frame down to scale ``depth``, advance it
    there with one cell, and decode back up before the output head.
    """

    arch = "single"

    def __init__(self, config: ModelConfig, depth: int = 1):
        super().__init__()
        if depth < 1 or depth > config.levels:
            raise ConfigError(f"depth must be in [1, {config.levels}], got {depth}")
        self.config = config
        self.depth = depth
        c = config.channels
        k = config.kernel_size
        self.stem = nn.Conv2d(config.img_channels, c[0], k, padding=k // 2)
        self.head = nn.Conv2d(c[0], config.img_channels, k, padding=k // 2)
        self.encoder = nn.ModuleList(
            Downsample(c[l], c[l + 1], k) for l in range(depth - 1)
        )
        self.decoder = nn.ModuleList(
            Upsample(c[l + 1], c[l], k) for l in reversed(range(depth - 1))
        )
        self.cell = make_cell(config.cell, c[depth - 1], c[depth - 1], k)

    def init_state(self, batch: int, height: int, width: int, device=None, dtype=None) -> CellState:
        self._check_spatial(height, width, 2 ** (self.depth - 1))
        f = 2 ** (self.depth - 1)
        return self.cell.init_state(batch, height // f, width // f, device, dtype)

    def step(self, x: Tensor, state: CellState) -> Tuple[Tensor, CellState]:
        self._check_frame(x)
        h = self.stem(x)
        for down in self.encoder:
            h = down(h)
        h, state = self.cell(h, state)
        for up in self.decoder:
            h = up(h)
        return torch.sigmoid(self.head(h)), state
