"""Graph filter blocks: polynomial-in-shift filters with a nonlinearity.

One block is a cascade of T sub-layers, each computing
act(sum_h S^h X Theta_h) with learnable taps Theta_h per hop. A block of T
sub-layers plus a linear head forms one unrolled layer of the primal or dual
networks.
"""

from __future__ import annotations

import torch
from torch import nn

DTYPE = torch.float64

ACTIVATIONS = {
    "tanh": torch.tanh,
    "leaky_relu": lambda x: torch.nn.functional.leaky_relu(x, 0.01),
    "relu": torch.relu,
    "identity": lambda x: x,
}


class GraphBlock(nn.Module):
    """T stacked graph sub-layers sharing one shift operator."""

    def __init__(self, widths: list[int], n_hops: int, activation: str,
                 generator: torch.Generator | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}'")
        self.activation = activation
        self.n_hops = n_hops
        self.widths = list(widths)
        taps = []
        for f_in, f_out in zip(widths[:-1], widths[1:]):
            std = (2.0 / (f_in + f_out)) ** 0.5 / (n_hops + 1) ** 0.5
            theta = torch.randn(n_hops + 1, f_in, f_out, generator=generator, dtype=DTYPE) * std
            taps.append(nn.Parameter(theta))
        self.taps = nn.ParameterList(taps)

    def forward(self, x: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
        act = ACTIVATIONS[self.activation]
        for theta in self.taps:
            acc = x @ theta[0]
            z = x
            for h in range(1, self.n_hops + 1):
                z = shift @ z
                acc = acc + z @ theta[h]
            x = act(acc)
        return x

    @torch.no_grad()
    def set_identity(self) -> None:
        """Zero-hop identity taps (requires square widths); test helper."""
        for theta in self.taps:
            theta.zero_()
            f = min(theta.shape[1], theta.shape[2])
            theta[0, :f, :f] = torch.eye(f, dtype=DTYPE)
