"""Bi-directional convolutional GRU over the per-level fused features."""

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import InvalidInputError


class ConvGRUCell(nn.Module):
    """GRU cell with 3x3 convolutions in place of dense products.

    z = sigmoid(Wxz*x + Whz*h), r = sigmoid(Wxr*x + Whr*h),
    h~ = tanh(Wxh*x + Whh*(r . h)), h' = (1 - z) . h + z . h~.
    Biases live on the input convolutions only.
    """

    def __init__(self, input_dim, hidden_dim, kernel_size=3):
        super().__init__()
        pad = kernel_size // 2
        self.hidden_dim = hidden_dim
        self.conv_x = nn.Conv2d(input_dim, 3 * hidden_dim, kernel_size, padding=pad)
        self.conv_h = nn.Conv2d(hidden_dim, 2 * hidden_dim, kernel_size, padding=pad, bias=False)
        self.conv_rh = nn.Conv2d(hidden_dim, hidden_dim, kernel_size, padding=pad, bias=False)

    def forward(self, x, h_prev):
        if h_prev.shape[1] != self.hidden_dim or x.shape[-2:] != h_prev.shape[-2:]:
            raise InvalidInputError(
                f"input {tuple(x.shape)} and hidden {tuple(h_prev.shape)} do not match")
        if x.shape[1] != self.conv_x.in_channels:
            raise InvalidInputError(f"expected {self.conv_x.in_channels} input channels")
        xz, xr, xh = self.conv_x(x).chunk(3, dim=1)
        hz, hr = self.conv_h(h_prev).chunk(2, dim=1)
        z = torch.sigmoid(xz + hz)
        r = torch.sigmoid(xr + hr)
        cand = torch.tanh(xh + self.conv_rh(r * h_prev))
        return (1 - z) * h_prev + z * cand


def convgru_step(x, h_prev, cell):
    return cell(x, h_prev)


class BiConvGRU(nn.Module):
    """Runs one cell top-down and another bottom-up over the level sequence and
    combines the two final hidden states with ReLU(W_f H_f + W_b H_b + b).

    ``levels`` are given top-down, i.e. [V5, V4, V3, V2][:m].
    """

    def __init__(self, dim):
        super().__init__()
        self.forward_cell = ConvGRUCell(dim, dim)
        self.backward_cell = ConvGRUCell(dim, dim)
        self.proj_forward = nn.Conv2d(dim, dim, 1, bias=False)
        self.proj_backward = nn.Conv2d(dim, dim, 1, bias=False)
        self.bias = nn.Parameter(torch.zeros(dim))

    def directions(self, levels):
        if len(levels) == 0:
            raise InvalidInputError("bi-directional GRU needs at least one level")
        h_fwd = torch.zeros_like(levels[0])
        for x in levels:
            h_fwd = self.forward_cell(x, h_fwd)
        h_bwd = torch.zeros_like(levels[0])
        for x in reversed(levels):
            h_bwd = self.backward_cell(x, h_bwd)
        return h_fwd, h_bwd

    def forward(self, levels):
        h_fwd, h_bwd = self.directions(levels)
        out = self.proj_forward(h_fwd) + self.proj_backward(h_bwd)
        return F.relu(out + self.bias[None, :, None, None])
