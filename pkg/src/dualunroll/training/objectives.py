"""Training objectives: layerwise descent/ascent residuals and the
constraint-weighted losses of the two trainers.

The primal trainer minimizes the empirical Lagrangian of the final layer
subject to per-layer descent constraints (on the Lagrangian value or on its
gradient norm, scaled by the descent factor); the dual trainer maximizes the
final-layer Lagrangian subject to per-layer shrinkage of the constraint
slack norm. Both are handled through their own Lagrangian relaxation with
nonnegative per-layer constraint weights updated by projected ascent.

Value-mode caveat: with a descent factor above 1 the constraint flips
meaning wherever the Lagrangian is negative (the scaled term becomes more
negative than the unscaled one). The constraint is applied exactly as
specified; choose the gradient metric when that matters.
"""

from __future__ import annotations

import torch

from ..nets.trajectory import DualTrajectory, PrimalTrajectory


def _factor_column(factor, depth: int, extra_dims: int) -> torch.Tensor:
    f = torch.as_tensor(factor, dtype=torch.float64)
    if f.ndim == 0:
        f = f.expand(depth)
    if f.shape[0] != depth:
        raise ValueError(f"per-layer factor needs length {depth}, got {f.shape[0]}")
    return f.reshape(depth, *([1] * extra_dims))


def descent_residuals(traj: PrimalTrajectory, metric: str, factor,
                      create_graph: bool = False) -> torch.Tensor:
    """[K, *]: per-layer descent constraint values.

    value mode:    L_k - factor_k * L_{k-1}
    gradient mode: ||grad L_k|| - factor_k * ||grad L_{k-1}||
    """
    if metric == "value":
        vals = traj.lagrangians()
    elif metric == "gradient":
        vals = traj.grad_norms(create_graph=create_graph)
    else:
        raise ValueError(f"unknown descent metric '{metric}'")
    f = _factor_column(factor, traj.depth, vals.ndim - 1)
    return vals[1:] - f * vals[:-1]


def ascent_residuals(traj: DualTrajectory, factor) -> torch.Tensor:
    """[L, *]: ||f(x_l)|| - factor_l * ||f(x_{l-1})|| per dual layer."""
    norms = traj.slack_norms()
    f = _factor_column(factor, traj.depth, norms.ndim - 1)
    return norms[1:] - f * norms[:-1]


def meta_lagrangian_primal(traj: PrimalTrajectory, weights: torch.Tensor,
                           factor, metric: str) -> tuple[torch.Tensor, torch.Tensor]:
    """Primal training loss over one (problem x multiplier) batch.

    Returns (scalar loss, per-layer mean residuals). The loss is the batch
    mean of the final-layer Lagrangian plus the weighted mean residuals; the
    residual means are the exact ascent direction for the weights.
    """
    res = descent_residuals(traj, metric, factor, create_graph=True)
    res_means = res.reshape(res.shape[0], -1).mean(-1)
    final = traj.problem.lagrangian(traj.final, traj.multiplier).mean()
    loss = final + (torch.as_tensor(weights, dtype=torch.float64) * res_means).sum()
    return loss, res_means


def meta_lagrangian_dual(traj: DualTrajectory, weights: torch.Tensor,
                         factor) -> tuple[torch.Tensor, torch.Tensor]:
    """Dual training loss (negated maximization objective) over a batch."""
    res = ascent_residuals(traj, factor)
    res_means = res.reshape(res.shape[0], -1).mean(-1)
    final = traj.problem.lagrangian(traj.solution, traj.final_multiplier).mean()
    loss = -final + (torch.as_tensor(weights, dtype=torch.float64) * res_means).sum()
    return loss, res_means


def project_weights(weights: torch.Tensor, step: float,
                    residual_means: torch.Tensor) -> torch.Tensor:
    """One projected-ascent update of the constraint weights."""
    return (weights + step * residual_means.detach()).clamp_min(0.0)
