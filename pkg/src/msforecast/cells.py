"""Convolutional recurrent cells with explicit state.

Every cell maps a feature map ``x: [B, C_in, H, W]`` plus the previous
:class:`CellState` to an output feature map ``y: [B, C_hid, H, W]`` and the
next state.  Gate convolutions act on the channel concatenation of the input
and the hidden map, use same-padding (odd kernels only) and carry no peephole
terms, so spatial dimensions are always preserved.

Cells are pure functions over their explicit state: parameters are read-only
during inference and calls on disjoint states are safe to run concurrently.

Kernels use the default scaled-uniform fan-in init; biases start at zero
except forget gates, which start at +1.0 for stability.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, ContractError

CELL_KINDS = ("convlstm", "convgru", "stlstm")


@dataclass
class CellState:
    """Recurrent state: hidden map plus whichever memory maps the cell uses.

    All constituent arrays share batch, height and width dimensions.
    ``memory`` is the temporal cell memory (ConvLSTM / ST-LSTM), ``st_memory``
    the extra spatiotemporal memory stream (ST-LSTM only).
    """

    hidden: Tensor
    memory: Optional[Tensor] = None
    st_memory: Optional[Tensor] = None


class _RecurrentCellBase(nn.Module):
    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd and positive, got {kernel_size}")
        if in_channels < 1 or hidden_channels < 1:
            raise ConfigError("channel counts must be positive")
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2

    def _check(self, x: Tensor, state: CellState) -> None:
        if x.dim() != 4:
            raise ContractError(f"expected rank-4 input [B,C,H,W], got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ContractError(
                f"input has {x.shape[1]} channels, cell expects {self.in_channels}"
            )
        h = state.hidden
        if h.shape[0] != x.shape[0] or h.shape[2:] != x.shape[2:]:
            raise ContractError(
                f"state shape {tuple(h.shape)} does not match input shape {tuple(x.shape)}"
            )
        if h.shape[1] != self.hidden_channels:
            raise ConfigError(
                f"state has {h.shape[1]} channels, cell is configured for {self.hidden_channels}"
            )

    def _zeros(self, batch: int, height: int, width: int, device=None, dtype=None) -> Tensor:
        ref = next(self.parameters())
        return torch.zeros(
            batch,
            self.hidden_channels,
            height,
            width,
            device=device if device is not None else ref.device,
            dtype=dtype if dtype is not None else ref.dtype,
        )


class ConvLSTMCell(_RecurrentCellBase):
    """Gated cell with a single memory map.

    With ``[i, f, g, o] = conv([x; h])``:
        c' = sigmoid(f) * c + sigmoid(i) * tanh(g)
        h' = sigmoid(o) * tanh(c')
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__(in_channels, hidden_channels, kernel_size)
        self.conv = nn.Conv2d(
            in_channels + hidden_channels, 4 * hidden_channels, kernel_size, padding=self.padding
        )
        with torch.no_grad():
            self.conv.bias.zero_()
            # gate order (i, f, g, o): forget slice starts at +1
            self.conv.bias[hidden_channels : 2 * hidden_channels].fill_(1.0)

    def init_state(self, batch: int, height: int, width: int, device=None, dtype=None) -> CellState:
        z = self._zeros(batch, height, width, device, dtype)
        return CellState(hidden=z, memory=z.clone())

    def forward(self, x: Tensor, state: CellState) -> Tuple[Tensor, CellState]:
        self._check(x, state)
        if state.memory is None:
            raise ContractError("ConvLSTM state requires a memory map")
        i, f, g, o = torch.chunk(self.conv(torch.cat([x, state.hidden], dim=1)), 4, dim=1)
        c = torch.sigmoid(f) * state.memory + torch.sigmoid(i) * torch.tanh(g)
        h = torch.sigmoid(o) * torch.tanh(c)
        return h, CellState(hidden=h, memory=c)


class ConvGRUCell(_RecurrentCellBase):
    """Gated cell with a single hidden map and no extra memory.

    With ``[z, r] = sigmoid(conv([x; h]))`` and ``n = tanh(conv([x; r * h]))``:
        h' = (1 - z) * h + z * n
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__(in_channels, hidden_channels, kernel_size)
        self.gates = nn.Conv2d(
            in_channels + hidden_channels, 2 * hidden_channels, kernel_size, padding=self.padding
        )
        self.candidate = nn.Conv2d(
            in_channels + hidden_channels, hidden_channels, kernel_size, padding=self.padding
        )
        with torch.no_grad():
            self.gates.bias.zero_()
            self.candidate.bias.zero_()

    def init_state(self, batch: int, height: int, width: int, device=None, dtype=None) -> CellState:
        return CellState(hidden=self._zeros(batch, height, width, device, dtype))

    def forward(self, x: Tensor, state: CellState) -> Tuple[Tensor, CellState]:
        self._check(x, state)
        h = state.hidden
        z, r = torch.chunk(torch.sigmoid(self.gates(torch.cat([x, h], dim=1))), 2, dim=1)
        n = torch.tanh(self.candidate(torch.cat([x, r * h], dim=1)))
        h_next = (1.0 - z) * h + z * n
        return h_next, CellState(hidden=h_next)


class STLSTMCell(_RecurrentCellBase):
    """Dual-memory cell: a temporal memory plus a spatiotemporal memory stream.

    With ``[i, f, g, o] = conv([x; h])`` and ``[i', f', g'] = conv([x; m])``:
        c' = sigmoid(f)  * c + sigmoid(i)  * tanh(g)
        m' = sigmoid(f') * m + sigmoid(i') * tanh(g')
        h' = sigmoid(o) * tanh(conv_1x1([c'; m']))
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel_size: int = 3):
        super().__init__(in_channels, hidden_channels, kernel_size)
        self.gates_h = nn.Conv2d(
            in_channels + hidden_channels, 4 * hidden_channels, kernel_size, padding=self.padding
        )
        self.gates_m = nn.Conv2d(
            in_channels + hidden_channels, 3 * hidden_channels, kernel_size, padding=self.padding
        )
        self.out_proj = nn.Conv2d(2 * hidden_channels, hidden_channels, kernel_size=1)
        with torch.no_grad():
            self.gates_h.bias.zero_()
            self.gates_h.bias[hidden_channels : 2 * hidden_channels].fill_(1.0)
            self.gates_m.bias.zero_()
            self.gates_m.bias[hidden_channels : 2 * hidden_channels].fill_(1.0)
            self.out_proj.bias.zero_()

    def init_state(self, batch: int, height: int, width: int, device=None, dtype=None) -> CellState:
        z = self._zeros(batch, height, width, device, dtype)
        return CellState(hidden=z, memory=z.clone(), st_memory=z.clone())

    def forward(self, x: Tensor, state: CellState) -> Tuple[Tensor, CellState]:
        self._check(x, state)
        if state.memory is None:
            raise ContractError("ST-LSTM state requires a memory map")
        if state.st_memory is None:
            raise ContractError("ST-LSTM state requires an st_memory map")
        i, f, g, o = torch.chunk(self.gates_h(torch.cat([x, state.hidden], dim=1)), 4, dim=1)
        c = torch.sigmoid(f) * state.memory + torch.sigmoid(i) * torch.tanh(g)
        i2, f2, g2 = torch.chunk(self.gates_m(torch.cat([x, state.st_memory], dim=1)), 3, dim=1)
        m = torch.sigmoid(f2) * state.st_memory + torch.sigmoid(i2) * torch.tanh(g2)
        h = torch.sigmoid(o) * torch.tanh(self.out_proj(torch.cat([c, m], dim=1)))
        return h, CellState(hidden=h, memory=c, st_memory=m)


_CELL_CLASSES = {
    "convlstm": ConvLSTMCell,
    "convgru": ConvGRUCell,
    "stlstm": STLSTMCell,
}


def normalize_cell_kind(kind: str) -> str:
    canonical = kind.strip().lower().replace("-", "").replace("_", "")
    if canonical not in _CELL_CLASSES:
        raise ConfigError(f"unknown cell kind {kind!r}, expected one of {CELL_KINDS}")
    return canonical


def make_cell(kind: str, in_channels: int, hidden_channels: int, kernel_size: int = 3):
    """Build a recurrent cell by kind name ('convlstm', 'convgru' or 'stlstm')."""
    return _CELL_CLASSES[normalize_cell_kind(kind)](in_channels, hidden_channels, kernel_size)
