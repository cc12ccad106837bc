"""Primal and dual unrolled networks for both problem families.

Each unrolled layer is a graph block (T sub-layers over the problem's shift
operator) followed by a per-node linear head with a node-shared bias. The
primal network refines x across K layers with residual connections; the dual
network walks multipliers across L layers, querying the primal network at
every layer, with a relu head keeping multipliers nonnegative. Gaussian
noise with layer-decaying variance is injected into the pre-activation head
output in train mode only.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from ..errors import DimensionMismatchError
from ..problems.base import DTYPE, ConstrainedProblem
from ..seeding import spawn_seed
from .graph import GraphBlock
from .trajectory import DualTrajectory, PrimalTrajectory


@dataclass(frozen=True)
class ArchSpec:
    """Architecture hyperparameters shared by a primal/dual pair."""

    family: str = "miqp"
    primal_layers: int = 6           # K
    dual_layers: int = 6             # L
    primal_sublayers: int = 2        # graph sub-layers per primal layer
    dual_sublayers: int = 2
    n_hops: int = 1
    features: int = 16
    activation: str = ""             # family default when empty
    noise_base_primal: float = 0.05  # layer-k std: base * decay**k
    noise_base_dual: float = 0.05
    noise_decay: float = 0.7
    normalize_gso: bool = True
    head_init_std: float = 1e-2
    multiplier_init_high: float = 10.0  # power-family lam_0 ~ Unif[0, high]
    sparse_nonzero_prob: float = 0.7    # miqp-family lam_0 nonzero probability

    def resolved_activation(self) -> str:
        if self.activation:
            return self.activation
        return "tanh" if self.family == "miqp" else "leaky_relu"

    def input_width(self) -> int:
        return 2 if self.family == "miqp" else 3

    def as_dict(self) -> dict:
        return dict(self.__dict__)


class _UnrolledNet(nn.Module):
    """Shared scaffolding: K blocks, per-layer heads, noise schedule."""

    def __init__(self, spec: ArchSpec, depth: int, sublayers: int, noise_base: float,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.spec = spec
        self.depth = depth
        widths = [spec.input_width()] + [spec.features] * sublayers
        act = spec.resolved_activation()
        self.blocks = nn.ModuleList(
            [GraphBlock(widths, spec.n_hops, act, generator) for _ in range(depth)])
        self.head_w = nn.ParameterList([
            nn.Parameter(torch.randn(spec.features, generator=generator, dtype=DTYPE)
                         * spec.head_init_std)
            for _ in range(depth)])
        self.head_b = nn.ParameterList([
            nn.Parameter(torch.zeros((), dtype=DTYPE)) for _ in range(depth)])
        self.noise_base = noise_base

    def noise_std(self, layer: int) -> float:
        """Std of the injected noise at unrolled layer `layer` (1-based)."""
        return self.noise_base * self.spec.noise_decay ** layer

    def head(self, layer: int, block_out: torch.Tensor) -> torch.Tensor:
        return block_out @ self.head_w[layer] + self.head_b[layer]

    def shift_for(self, prob: ConstrainedProblem) -> torch.Tensor:
        S = prob.gso
        if self.spec.normalize_gso:
            S = S / prob.gso_scale[..., None, None]
        return S

    @torch.no_grad()
    def zero_heads(self) -> None:
        """Make every unrolled layer an identity/no-op update; test helper."""
        for w, b in zip(self.head_w, self.head_b):
            w.zero_()
            b.zero_()

    def _noise(self, like: torch.Tensor, layer: int, train: bool,
               generator: torch.Generator | None) -> torch.Tensor | None:
        if not train:
            return None
        eps = torch.randn(like.shape, generator=generator, dtype=like.dtype)
        return eps * self.noise_std(layer)


def _check_family(net: _UnrolledNet, prob: ConstrainedProblem) -> None:
    if prob.family != net.spec.family:
        raise DimensionMismatchError("problem", "family", net.spec.family, prob.family)


def _check_lam(prob: ConstrainedProblem, lam: torch.Tensor) -> torch.Tensor:
    lam = torch.as_tensor(lam, dtype=DTYPE)
    if lam.shape[-1] != prob.n_cons:
        raise DimensionMismatchError("multipliers", "constraints", prob.n_cons, lam.shape[-1])
    if tuple(lam.shape[:-1]) != tuple(prob.batch_shape):
        raise DimensionMismatchError("multipliers", "instance batch",
                                     tuple(prob.batch_shape), tuple(lam.shape[:-1]))
    return lam


class PrimalNet(_UnrolledNet):
    """Maps (multiplier, instance) to a trajectory toward the Lagrangian minimizer."""

    def __init__(self, spec: ArchSpec, generator: torch.Generator | None = None):
        super().__init__(spec, spec.primal_layers, spec.primal_sublayers,
                         spec.noise_base_primal, generator)

    def init_point(self, prob: ConstrainedProblem,
                   generator: torch.Generator | None = None) -> torch.Tensor:
        shape = (*prob.batch_shape, prob.n_vars)
        u = torch.rand(shape, generator=generator, dtype=DTYPE)
        if self.spec.family == "miqp":
            return 2.0 * u - 1.0
        return u * prob.p_max

    def features(self, x_prev: torch.Tensor, lam: torch.Tensor,
                 prob: ConstrainedProblem) -> torch.Tensor:
        if self.spec.family == "miqp":
            col1 = torch.cat([x_prev, lam], dim=-1)
            col2 = torch.cat([prob.q, prob.b], dim=-1)
            return torch.stack([col1, col2.expand_as(col1)], dim=-1)
        slack = torch.where(prob.constrained, torch.full_like(x_prev, prob.r_min),
                            torch.zeros_like(x_prev))
        return torch.stack([x_prev / prob.p_max, lam, slack], dim=-1)

    def step(self, layer: int, x_prev: torch.Tensor, lam: torch.Tensor,
             prob: ConstrainedProblem, shift: torch.Tensor, train: bool,
             generator: torch.Generator | None) -> torch.Tensor:
        out = self.blocks[layer](self.features(x_prev, lam, prob), shift)
        update = self.head(layer, out)
        if self.spec.family == "miqp":
            update = update[..., : prob.n_vars]
        noise = self._noise(update, layer + 1, train, generator)
        if noise is not None:
            update = update + noise
        if self.spec.family == "miqp":
            return x_prev + update
        return prob.p_max * torch.sigmoid(x_prev / prob.p_max + update)

    def forward(self, lam: torch.Tensor, prob: ConstrainedProblem, mode: str = "eval",
                generator: torch.Generator | None = None,
                x0: torch.Tensor | None = None) -> PrimalTrajectory:
        _check_family(self, prob)
        lam = _check_lam(prob, lam)
        train = mode == "train"
        if x0 is None:
            x0 = self.init_point(prob, generator)
        shift = self.shift_for(prob)
        iterates = [x0]
        for k in range(self.depth):
            iterates.append(self.step(k, iterates[-1], lam, prob, shift, train, generator))
        return PrimalTrajectory(prob, lam, iterates)


class DualNet(_UnrolledNet):
    """Walks multipliers toward the dual optimum, querying a primal network."""

    def __init__(self, spec: ArchSpec, generator: torch.Generator | None = None):
        super().__init__(spec, spec.dual_layers, spec.dual_sublayers,
                         spec.noise_base_dual, generator)

    def init_multiplier(self, prob: ConstrainedProblem,
                        generator: torch.Generator | None = None) -> torch.Tensor:
        shape = (*prob.batch_shape, prob.n_cons)
        u = torch.rand(shape, generator=generator, dtype=DTYPE)
        if self.spec.family == "miqp":
            keep = torch.rand(shape, generator=generator, dtype=DTYPE) < self.spec.sparse_nonzero_prob
            return u * keep
        return u * self.spec.multiplier_init_high * prob.constrained


    def features(self, x_prev: torch.Tensor, lam_prev: torch.Tensor,
                 prob: ConstrainedProblem) -> torch.Tensor:
        if self.spec.family == "miqp":
            col1 = torch.cat([x_prev, lam_prev], dim=-1)
            col2 = torch.cat([prob.q, prob.b], dim=-1)
            return torch.stack([col1, col2.expand_as(col1)], dim=-1)
        slack = torch.where(prob.constrained, torch.full_like(x_prev, prob.r_min),
                            torch.zeros_like(x_prev))
        return torch.stack([x_prev / prob.p_max, lam_prev, slack], dim=-1)

    def step(self, layer: int, lam_prev: torch.Tensor, x_prev: torch.Tensor,
             prob: ConstrainedProblem, shift: torch.Tensor, train: bool,
             generator: torch.Generator | None) -> torch.Tensor:
        out = self.blocks[layer](self.features(x_prev, lam_prev, prob), shift)
        update = self.head(layer, out)
        if self.spec.family == "miqp":
            update = update[..., prob.n_vars:]
            noise = self._noise(update, layer + 1, train, generator)
            if noise is not None:
                update = update + noise
            return torch.relu(lam_prev + update)
        noise = self._noise(update, layer + 1, train, generator)
        if noise is not None:
            update = update + noise
        return torch.relu(lam_prev + update * prob.constrained)


def primal_forward(lam: torch.Tensor, prob: ConstrainedProblem, net: PrimalNet,
                   mode: str = "eval", generator: torch.Generator | None = None,
                   x0: torch.Tensor | None = None) -> PrimalTrajectory:
    return net(lam, prob, mode, generator, x0)


def dual_forward(prob: ConstrainedProblem, dual: DualNet, primal: PrimalNet,
                 mode: str = "eval", generator: torch.Generator | None = None,
                 lam0: torch.Tensor | None = None) -> DualTrajectory:
    """Full dual rollout: lam_0..lam_L with primal answers x_0..x_L.

    The L in-layer queries plus the final recovery query each run on a child
    seed spawned from `generator`, recorded in the trajectory for exact replay.
    """
    _check_family(dual, prob)
    _check_family(primal, prob)
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    train = mode == "train"
    if lam0 is None:
        lam0 = dual.init_multiplier(prob, generator)
    shift = dual.shift_for(prob)
    lams = [lam0]
    xs = []
    seeds = []

    def query(lam):
        seed = spawn_seed(generator)
        seeds.append(seed)
        qgen = torch.Generator()
        qgen.manual_seed(seed)
        return primal(lam, prob, mode, qgen).final

    for l in range(dual.depth):
        xs.append(query(lams[-1]))
        lams.append(dual.step(l, lams[-1], xs[-1], prob, shift, train, generator))
    xs.append(query(lams[-1]))
    return DualTrajectory(prob, lams, xs, layer_queries=dual.depth, query_seeds=seeds)


def recover_solution(prob: ConstrainedProblem, dual: DualNet, primal: PrimalNet,
                     mode: str = "eval",
                     generator: torch.Generator | None = None) -> tuple[torch.Tensor, DualTrajectory]:
    """Final primal point from feeding the dual network's last multiplier back."""
    traj = dual_forward(prob, dual, primal, mode, generator)
    return traj.solution, traj


def build_nets(spec: ArchSpec, generator: torch.Generator | None = None) -> tuple[PrimalNet, DualNet]:
    return PrimalNet(spec, generator), DualNet(spec, generator)
