"""Layer-output trajectories and their recomputed diagnostics.

Diagnostics are always derived from the raw iterates here, never cached by
the forward passes, so evaluation and training read identical numbers from
identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..problems.base import ConstrainedProblem


@dataclass
class PrimalTrajectory:
    """Iterates of one primal forward pass: x_0 .. x_K (all [*, n])."""

    problem: ConstrainedProblem
    multiplier: torch.Tensor
    iterates: list[torch.Tensor]

    @property
    def final(self) -> torch.Tensor:
        return self.iterates[-1]

    @property
    def depth(self) -> int:
        return len(self.iterates) - 1

    def detached(self) -> "PrimalTrajectory":
        return PrimalTrajectory(self.problem, self.multiplier.detach(),
                                [x.detach() for x in self.iterates])

    def lagrangians(self) -> torch.Tensor:
        """[K+1, *]: Lagrangian value at every iterate."""
        return torch.stack([self.problem.lagrangian(x, self.multiplier) for x in self.iterates])

    def grad_norms(self, create_graph: bool = False) -> torch.Tensor:
        """[K+1, *]: norm of the Lagrangian gradient at every iterate."""
        return torch.stack([
            self.problem.lagrangian_grad_x(x, self.multiplier, create_graph=create_graph)
            .norm(dim=-1) for x in self.iterates])

    def slack_norms(self) -> torch.Tensor:
        """[K+1, *]: ||f(x_k)||_2 at every iterate."""
        return torch.stack([self.problem.constraints(x).norm(dim=-1)
                            for x in self.iterates])

    def violations_mean(self) -> torch.Tensor:
        return torch.stack([self.problem.violation_mean(x) for x in self.iterates])


@dataclass
class DualTrajectory:
    """Multiplier iterates lam_0 .. lam_L with primal answers x_0 .. x_L.

    x_l approximates the Lagrangian minimizer at lam_l; x_0 .. x_{L-1} are
    the in-layer queries (`layer_queries` of them) and x_L is the final
    recovery query. `query_seeds` reproduce each primal query exactly.
    """

    problem: ConstrainedProblem
    multipliers: list[torch.Tensor]
    primals: list[torch.Tensor]
    layer_queries: int
    query_seeds: list[int] = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.multipliers) - 1

    @property
    def final_multiplier(self) -> torch.Tensor:
        return self.multipliers[-1]

    @property
    def solution(self) -> torch.Tensor:
        return self.primals[-1]

    def detached(self) -> "DualTrajectory":
        return DualTrajectory(self.problem, [m.detach() for m in self.multipliers],
                              [x.detach() for x in self.primals],
                              self.layer_queries, list(self.query_seeds),
                              dict(self.info))

    def slack_norms(self) -> torch.Tensor:
        """[L+1, *]: ||f(x_l)||_2 per layer."""
        return torch.stack([self.problem.constraints(x).norm(dim=-1) for x in self.primals])

    def lagrangians(self) -> torch.Tensor:
        """[L+1, *]: L(x_l, lam_l) per layer."""
        return torch.stack([self.problem.lagrangian(x, lam)
                            for x, lam in zip(self.primals, self.multipliers)])

    def violations_mean(self) -> torch.Tensor:
        return torch.stack([self.problem.violation_mean(x) for x in self.primals])

    def violations_max(self) -> torch.Tensor:
        return torch.stack([self.problem.violation_max(x) for x in self.primals])

    def comp_slacks(self, final_multiplier: bool = True) -> torch.Tensor:
        """[L+1, *]: lam' max{0, f(x_l)}; uses lam_L for every layer when
        `final_multiplier` (matching the layerwise feasibility diagnostic),
        otherwise the per-layer multiplier."""
        if final_multiplier:
            lam = self.multipliers[-1]
            return torch.stack([self.problem.complementary_slackness(lam, x)
                                for x in self.primals])
        return torch.stack([self.problem.complementary_slackness(lam, x)
                            for x, lam in zip(self.primals, self.multipliers)])
