"""Classical and learned reference methods.

All baselines emit the same `DualTrajectory` type as the learned models, so
every diagnostic and figure is method-agnostic. The projected-ascent engine
`dual_ascent` accepts a pluggable inner Lagrangian minimizer: the analytic
QP formula, a (trained) primal network, or brute-force grid search for tiny
power problems. State augmentation is the same engine with the primal
network as the inner minimizer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, OracleError
from .nets.graph import GraphBlock
from .nets.networks import PrimalNet, primal_forward
from .nets.trajectory import DualTrajectory
from .problems.base import DTYPE, ConstrainedProblem
from .problems.qp import QpProblem, analytic_minimizer
from .seeding import spawn_seed


@dataclass
class DaConfig:
    """Projected dual ascent: lam <- [lam + step * f(x(lam))]_+ ."""

    step: float = 0.01
    iterations: int = 1000
    inner: str = "analytic"      # analytic | net | grid
    lam0: str = "zeros"          # zeros | family
    grid_points: int = 50
    record_every: int = 1
    stop_target: float | None = None   # early stop when L is this close to target
    stop_rtol: float = 1e-3

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigError("DA stepsize must be positive")
        if self.iterations < 1:
            raise ConfigError("DA iteration budget must be >= 1")


def _grid_minimizer(prob: ConstrainedProblem, lam: torch.Tensor, points: int) -> torch.Tensor:
    if prob.batch_shape:
        raise ConfigError("grid inner minimizer supports single instances only")
    n = prob.n_vars
    if n > 3:
        raise ConfigError("grid inner minimizer is for n <= 3")
    axis = torch.linspace(0.0, prob.p_max, points, dtype=DTYPE)
    grid = torch.stack([torch.as_tensor(c, dtype=DTYPE)
                        for c in itertools.product(*([axis] * n))])
    vals = prob.lagrangian(grid, lam.expand(grid.shape[0], -1))
    return grid[vals.argmin()]


def _make_inner(prob, cfg: DaConfig, primal_net, mode, generator):
    if cfg.inner == "analytic":
        if not isinstance(prob, QpProblem):
            raise ConfigError("analytic inner minimizer requires the QP family")

        def inner(lam, it):
            return analytic_minimizer(lam, prob)
    elif cfg.inner == "net":
        if primal_net is None:
            raise ConfigError("inner='net' needs a primal network")
        base_seed = spawn_seed(generator)  # same init per query: lam -> p is a fixed map

        def inner(lam, it):
            qgen = torch.Generator()
            qgen.manual_seed(base_seed)
            return primal_forward(lam, prob, primal_net, mode, qgen).final
    elif cfg.inner == "grid":
        def inner(lam, it):
            return _grid_minimizer(prob, lam, cfg.grid_points)
    else:
        raise ConfigError(f"unknown inner minimizer '{cfg.inner}'")
    return inner


def initial_multiplier(prob: ConstrainedProblem, kind: str,
                       generator: torch.Generator | None,
                       high: float = 10.0) -> torch.Tensor:
    shape = (*prob.batch_shape, prob.n_cons)
    if kind == "zeros":
        return torch.zeros(shape, dtype=DTYPE)
    if kind == "family":
        if prob.family == "power":
            u = torch.rand(shape, generator=generator, dtype=DTYPE)
            return u * high * prob.constrained
        u = torch.rand(shape, generator=generator, dtype=DTYPE)
        keep = torch.rand(shape, generator=generator, dtype=DTYPE) < 0.7
        return u * keep
    raise ConfigError(f"unknown multiplier init '{kind}'")


@torch.no_grad()
def dual_ascent(prob: ConstrainedProblem, cfg: DaConfig,
                primal_net: PrimalNet | None = None, mode: str = "eval",
                generator: torch.Generator | None = None,
                lam0: torch.Tensor | None = None) -> DualTrajectory:
    """Run projected dual ascent; works on single or stacked instances."""
    if generator is None:
        generator = torch.Generator().manual_seed(0)
    inner = _make_inner(prob, cfg, primal_net, mode, generator)
    lam = initial_multiplier(prob, cfg.lam0, generator) if lam0 is None else \
        torch.as_tensor(lam0, dtype=DTYPE)

    rec_lams: list[torch.Tensor] = []
    rec_xs: list[torch.Tensor] = []

    def record(lam_l, x_l):
        rec_lams.append(lam_l)
        rec_xs.append(x_l)

    it_run = cfg.iterations
    stopped = False
    for it in range(cfg.iterations):
        try:
            x = inner(lam, it)
        except OracleError as err:
            raise OracleError(f"inner minimizer failed at iterate {it}: {err}",
                              getattr(err, "residuals", None)) from err
        recorded = it % cfg.record_every == 0
        if recorded:
            record(lam, x)
        if cfg.stop_target is not None:
            lag = prob.lagrangian(x, lam)
            rel = (lag - cfg.stop_target).abs() / (1.0 + abs(cfg.stop_target))
            if (rel <= cfg.stop_rtol).all():
                it_run = it
                stopped = True
                if not recorded:
                    record(lam, x)
                break
        lam = (lam + cfg.step * prob.constraints(x)).clamp_min(0.0)
    if not stopped:
        record(lam, inner(lam, cfg.iterations))
    traj = DualTrajectory(prob, rec_lams, rec_xs, layer_queries=it_run,
                          info={"iterations_run": it_run, "step": cfg.step,
                                "inner": cfg.inner})
    return traj


def state_augmented_da(prob: ConstrainedProblem, primal_net: PrimalNet | None,
                       cfg: DaConfig | None = None,
                       generator: torch.Generator | None = None,
                       inner: str = "net") -> DualTrajectory:
    """Dual dynamics with the trained primal network as inner minimizer.

    `inner` can be overridden (e.g. "analytic" on the QP family) to check the
    interface against plain dual ascent.
    """
    if cfg is None:
        cfg = DaConfig(step=0.05, iterations=600, inner=inner, lam0="family")
    else:
        cfg = DaConfig(**{**cfg.__dict__, "inner": inner})
    return dual_ascent(prob, cfg, primal_net=primal_net, generator=generator)


def full_power(prob) -> torch.Tensor:
    """Every pair transmits at the power budget."""
    return torch.full((*prob.batch_shape, prob.n_vars), prob.p_max, dtype=DTYPE)


# -- supervised baseline ----------------------------------------------------


@dataclass
class NaiveArch:
    depth: int = 42          # 42 for the QP family, 12 for power
    features: int = 32
    n_hops: int = 1
    activation: str = "relu"


class NaiveGnn(nn.Module):
    """Deep graph network regressing the optimal solution directly."""

    def __init__(self, family: str, arch: NaiveArch,
                 generator: torch.Generator | None = None,
                 normalize_gso: bool = True):
        super().__init__()
        self.family = family
        self.arch = arch
        self.normalize_gso = normalize_gso
        widths = [1] + [arch.features] * arch.depth
        self.block = GraphBlock(widths, arch.n_hops, arch.activation, generator)
        self.head = nn.Parameter(
            torch.randn(arch.features, generator=generator, dtype=DTYPE)
            * (1.0 / arch.features) ** 0.5)
        self.bias = nn.Parameter(torch.zeros((), dtype=DTYPE))

    def input_signal(self, prob: ConstrainedProblem) -> torch.Tensor:
        if self.family == "miqp":
            return torch.cat([prob.q, prob.b], dim=-1).unsqueeze(-1)
        slack = torch.where(prob.constrained,
                            torch.full_like(prob.constrained, prob.r_min, dtype=DTYPE),
                            torch.zeros(prob.constrained.shape, dtype=DTYPE))
        return slack.unsqueeze(-1)

    def forward(self, prob: ConstrainedProblem) -> torch.Tensor:
        shift = prob.gso
        if self.normalize_gso:
            shift = shift / prob.gso_scale[..., None, None]
        out = self.block(self.input_signal(prob), shift)
        out = out @ self.head + self.bias
        if self.family == "miqp":
            return out[..., : prob.n_vars]
        return prob.p_max * torch.sigmoid(out)


def naive_gnn_train(family: str, dataset: ConstrainedProblem, labels: torch.Tensor,
                    arch: NaiveArch, epochs: int = 200, lr: float = 1e-3,
                    batch_size: int = 32,
                    generator: torch.Generator | None = None) -> NaiveGnn:
    """Supervised regression onto oracle solutions (MSE loss).

    Labels come from the reference QP solver for the miqp family; the power
    family has no exact oracle, so callers label with a long state-augmented
    dual-ascent run of a trained primal network (record the proxy in the
    dataset manifest).
    """
    model = NaiveGnn(family, arch, generator)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    count = len(dataset)
    labels = torch.as_tensor(labels, dtype=DTYPE)
    for _ in range(epochs):
        order = torch.randperm(count, generator=generator)
        for start in range(0, count, batch_size):
            idx = order[start:start + batch_size]
            pred = model(dataset[idx])
            loss = ((pred - labels[idx]) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


def save_naive_model(path, model: NaiveGnn, extra: dict | None = None) -> None:
    from .arrays import save_arrays, write_json
    arrays = {f"naive/{k}": v.numpy() for k, v in model.state_dict().items()}
    save_arrays(path, arrays)
    manifest = {"kind": "naive", "family": model.family,
                "arch": model.arch.__dict__,
                "normalize_gso": model.normalize_gso}
    manifest.update(extra or {})
    write_json(str(path) + ".manifest.json", manifest)


def load_naive_model(path) -> tuple[NaiveGnn, dict]:
    from .arrays import load_arrays, read_json
    import torch as _torch
    arrays = load_arrays(path)
    manifest = read_json(str(path) + ".manifest.json")
    model = NaiveGnn(manifest["family"], NaiveArch(**manifest["arch"]),
                     normalize_gso=manifest["normalize_gso"])
    model.load_state_dict({k.split("/", 1)[1]: _torch.as_tensor(v)
                           for k, v in arrays.items()})
    return model, manifest
