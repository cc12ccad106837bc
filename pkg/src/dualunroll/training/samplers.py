"""Multiplier sampling for primal-network training.

The joint problem/multiplier distribution the primal network must cover is
induced by the dual network itself, so samples are drawn from a mixture of
sources: fresh dual-network trajectories, sparse/box uniform draws, and
classical dual-ascent trajectories. All samples are detached data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from ..errors import ConfigError
from ..nets.networks import DualNet, PrimalNet, dual_forward
from ..problems.base import DTYPE, ConstrainedProblem

SOURCES = ("dual", "uniform_sparse", "uniform_box", "da")


@dataclass
class SamplerConfig:
    weights: dict = field(default_factory=lambda: {"dual": 0.5, "uniform_sparse": 0.5})
    uniform_high: float = 1.0
    sparse_nonzero_prob: float = 0.7
    da_step: float = 0.05
    da_iterations: int = 60

    def __post_init__(self):
        for k in self.weights:
            if k not in SOURCES:
                raise ConfigError(f"unknown multiplier source '{k}'")
        total = sum(self.weights.values())
        if total <= 0 or any(w < 0 for w in self.weights.values()):
            raise ConfigError("sampler weights must be nonnegative and sum > 0")
        self.weights = {k: w / total for k, w in self.weights.items() if w > 0}


def allocate_counts(weights: dict, total: int) -> dict:
    """Largest-remainder allocation of `total` samples across sources."""
    raw = {k: w * total for k, w in weights.items()}
    counts = {k: math.floor(v) for k, v in raw.items()}
    short = total - sum(counts.values())
    for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=True)[:short]:
        counts[k] += 1
    return {k: c for k, c in counts.items() if c > 0}


def _pick_from_pool(pool: torch.Tensor, count: int,
                    generator: torch.Generator) -> torch.Tensor:
    """pool [P, B, c] -> [B, count, c] picking an independent pool row per (b, i)."""
    p, b, c = pool.shape
    idx = torch.randint(0, p, (b, count), generator=generator)
    return pool.permute(1, 0, 2).gather(1, idx.unsqueeze(-1).expand(b, count, c))


def _mask(prob: ConstrainedProblem, lam: torch.Tensor) -> torch.Tensor:
    if prob.family == "power":
        return lam * prob.constrained.unsqueeze(-2)
    return lam


def sample_multipliers(prob: ConstrainedProblem, count: int, primal: PrimalNet,
                       dual: DualNet, cfg: SamplerConfig,
                       generator: torch.Generator) -> torch.Tensor:
    """[B, count, n_cons] nonnegative multipliers, detached."""
    batch = prob.batch_shape[0] if prob.batch_shape else 1
    counts = allocate_counts(cfg.weights, count)
    chunks = []
    with torch.no_grad():
        for source in SOURCES:
            need = counts.get(source, 0)
            if need == 0:
                continue
            if source == "dual":
                passes = max(1, math.ceil(need / dual.depth))
                pool = []
                for _ in range(passes):
                    traj = dual_forward(prob, dual, primal, "train", generator)
                    pool.extend(traj.multipliers[1:])  # layer outputs only
                stacked = torch.stack(pool)
                if not prob.batch_shape:
                    stacked = stacked.unsqueeze(1)
                chunks.append(_pick_from_pool(stacked, need, generator))
            elif source == "uniform_sparse":
                u = torch.rand(batch, need, prob.n_cons, generator=generator, dtype=DTYPE)
                keep = torch.rand(batch, need, prob.n_cons, generator=generator,
                                  dtype=DTYPE) < cfg.sparse_nonzero_prob
                chunks.append(_mask(prob, u * keep * cfg.uniform_high))
            elif source == "uniform_box":
                u = torch.rand(batch, need, prob.n_cons, generator=generator, dtype=DTYPE)
                chunks.append(_mask(prob, u * cfg.uniform_high))
            elif source == "da":
                from ..baselines import DaConfig, dual_ascent
                da_cfg = DaConfig(step=cfg.da_step, iterations=cfg.da_iterations,
                                  inner="net" if prob.family == "power" else "analytic",
                                  lam0="family")
                traj = dual_ascent(prob, da_cfg, primal_net=primal, mode="eval",
                                   generator=generator)
                pool = torch.stack(traj.multipliers)
                if not prob.batch_shape:
                    pool = pool.unsqueeze(1)
                chunks.append(_pick_from_pool(pool, need, generator))
    out = torch.cat(chunks, dim=1)
    if not prob.batch_shape:
        out = out.squeeze(0)
    return out.detach()
