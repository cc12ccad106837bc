"""Alternating primal/dual training with constraint-weight ascent.

One outer iteration runs a single primal epoch (problems x sampled
multipliers, descent-constrained) followed by `epoch_ratio` dual epochs
(ascent-constrained), mirroring the classical alternation between inner
minimization and outer maximization. Validation after each dual epoch gates
checkpointing: models are saved whenever the mean violation stays within
`gate_factor` times the best seen so far.

With `constrained=False` the constraint weights stay frozen at zero and the
same code path degenerates to plain unconstrained unrolling training (the
ablation baseline).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..arrays import write_json
from ..errors import ConfigError, TrainingDivergenceError
from ..nets.checkpoint import load_checkpoint, save_checkpoint
from ..nets.networks import ArchSpec, DualNet, PrimalNet, build_nets, dual_forward
from ..problems.base import DTYPE, ConstrainedProblem
from ..seeding import stream_seed, torch_generator
from .objectives import meta_lagrangian_dual, meta_lagrangian_primal, project_weights
from .samplers import SamplerConfig, sample_multipliers


@dataclass
class TrainConfig:
    iterations: int = 100
    epoch_ratio: int = 15              # dual epochs per primal epoch
    lr_primal: float = 1e-4
    lr_dual: float = 7e-4
    meta_lr_primal: float = 1e-4
    meta_lr_dual: float = 1e-3
    batch_primal: int = 8
    batch_dual: int = 256
    multipliers_per_problem: int = 32
    descent_factor: float = 0.98
    ascent_factor: float = 0.95
    descent_metric: str = "gradient"   # gradient | value
    constrained: bool = True
    gate_factor: float = 1.5
    validate_every: int = 1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig(**self.sampler)
        for name in ("lr_primal", "lr_dual", "meta_lr_primal", "meta_lr_dual"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.multipliers_per_problem < 1:
            raise ConfigError("multipliers_per_problem must be >= 1")
        if self.descent_metric not in ("gradient", "value"):
            raise ConfigError(f"unknown descent metric '{self.descent_metric}'")


@dataclass
class TrainerState:
    primal: PrimalNet
    dual: DualNet
    opt_primal: torch.optim.Adam
    opt_dual: torch.optim.Adam
    descent_weights: torch.Tensor           # [K] nonnegative
    ascent_weights: torch.Tensor            # [L] nonnegative
    gen_primal: torch.Generator
    gen_dual: torch.Generator
    iteration: int = 0
    best_violation: float = float("inf")
    history: list = field(default_factory=list)


def _shuffled_batches(count: int, batch: int, generator: torch.Generator):
    order = torch.randperm(count, generator=generator)
    for start in range(0, count, batch):
        yield order[start:start + batch]


def train_primal(state: TrainerState, cfg: TrainConfig,
                 dataset: ConstrainedProblem) -> dict:
    """One epoch of primal-network updates; dual parameters untouched."""
    losses, res_all = [], []
    for idx in _shuffled_batches(len(dataset), cfg.batch_primal, state.gen_primal):
        prob = dataset[idx]
        lams = sample_multipliers(prob, cfg.multipliers_per_problem, state.primal,
                                  state.dual, cfg.sampler, state.gen_primal)
        m = cfg.multipliers_per_problem
        tiled = prob.repeat_interleave(m)
        lam_flat = lams.reshape(-1, lams.shape[-1])
        traj = state.primal(lam_flat, tiled, "train", state.gen_primal)
        loss, res_means = meta_lagrangian_primal(traj, state.descent_weights,
                                                 cfg.descent_factor, cfg.descent_metric)
        if not torch.isfinite(loss):
            raise TrainingDivergenceError("non-finite primal training loss")
        state.opt_primal.zero_grad()
        loss.backward()
        state.opt_primal.step()
        if cfg.constrained:
            state.descent_weights = project_weights(
                state.descent_weights, cfg.meta_lr_primal, res_means)
        losses.append(float(loss.detach()))
        res_all.append(res_means.detach())
    return {"loss": float(np.mean(losses)),
            "residual_mean": float(torch.stack(res_all).mean())}


def train_dual(state: TrainerState, cfg: TrainConfig,
               dataset: ConstrainedProblem) -> dict:
    """One epoch of dual-network updates; primal parameters untouched."""
    for p in state.primal.parameters():
        p.requires_grad_(False)
    try:
        losses, res_all = [], []
        for idx in _shuffled_batches(len(dataset), cfg.batch_dual, state.gen_dual):
            prob = dataset[idx]
            traj = dual_forward(prob, state.dual, state.primal, "train", state.gen_dual)
            loss, res_means = meta_lagrangian_dual(traj, state.ascent_weights,
                                                   cfg.ascent_factor)
            if not torch.isfinite(loss):
                raise TrainingDivergenceError("non-finite dual training loss")
            state.opt_dual.zero_grad()
            loss.backward()
            state.opt_dual.step()
            if cfg.constrained:
                state.ascent_weights = project_weights(
                    state.ascent_weights, cfg.meta_lr_dual, res_means)
            losses.append(float(loss.detach()))
            res_all.append(res_means.detach())
    finally:
        for p in state.primal.parameters():
            p.requires_grad_(True)
    return {"loss": float(np.mean(losses)),
            "residual_mean": float(torch.stack(res_all).mean())}


@torch.no_grad()
def validation_violation(primal: PrimalNet, dual: DualNet,
                         dataset: ConstrainedProblem, seed: int) -> float:
    """Mean constraint violation of recovered solutions over the set."""
    gen = torch.Generator()
    gen.manual_seed(seed)
    traj = dual_forward(dataset, dual, primal, "eval", gen)
    return float(dataset.violation_mean(traj.solution).mean())


# -- resumable orchestration -------------------------------------------------


def _adam_arrays(opt: torch.optim.Adam, prefix: str) -> dict:
    out = {}
    for i, st in opt.state_dict()["state"].items():
        for key, val in st.items():
            out[f"{prefix}.{i}.{key}"] = val.detach().numpy() if torch.is_tensor(val) \
                else np.asarray(val)
    return out


def _load_adam(opt: torch.optim.Adam, arrays: dict, prefix: str) -> None:
    sd = opt.state_dict()
    state = {}
    for key, arr in arrays.items():
        if not key.startswith(prefix + "."):
            continue
        _, idx, name = key.rsplit(".", 2)
        entry = state.setdefault(int(idx), {})
        entry[name] = torch.as_tensor(arr)
    if state:
        sd["state"] = state
        opt.load_state_dict(sd)


def _state_arrays(state: TrainerState) -> dict:
    arrays = {
        "descent_weights": state.descent_weights.numpy(),
        "ascent_weights": state.ascent_weights.numpy(),
        "gen_primal": state.gen_primal.get_state().numpy(),
        "gen_dual": state.gen_dual.get_state().numpy(),
    }
    arrays.update(_adam_arrays(state.opt_primal, "adam_primal"))
    arrays.update(_adam_arrays(state.opt_dual, "adam_dual"))
    return arrays


def init_state(arch: ArchSpec, cfg: TrainConfig, root_seed: int) -> TrainerState:
    primal, dual = build_nets(arch, torch_generator(root_seed, "init"))
    opt_p = torch.optim.Adam(primal.parameters(), lr=cfg.lr_primal)
    opt_d = torch.optim.Adam(dual.parameters(), lr=cfg.lr_dual)
    return TrainerState(
        primal=primal, dual=dual, opt_primal=opt_p, opt_dual=opt_d,
        descent_weights=torch.zeros(arch.primal_layers, dtype=DTYPE),
        ascent_weights=torch.zeros(arch.dual_layers, dtype=DTYPE),
        gen_primal=torch_generator(root_seed, "train-primal"),
        gen_dual=torch_generator(root_seed, "train-dual"))


def _save_state(path, state: TrainerState, meta: dict) -> None:
    meta = dict(meta)
    meta.update({"iteration": state.iteration, "best_violation": state.best_violation})
    save_checkpoint(path, state.primal, state.dual, extra=meta,
                    extra_arrays=_state_arrays(state))


def load_state(path, cfg: TrainConfig) -> tuple[TrainerState, dict]:
    primal, dual, manifest, extra = load_checkpoint(path)
    opt_p = torch.optim.Adam(primal.parameters(), lr=cfg.lr_primal)
    opt_d = torch.optim.Adam(dual.parameters(), lr=cfg.lr_dual)
    _load_adam(opt_p, extra, "adam_primal")
    _load_adam(opt_d, extra, "adam_dual")
    gen_p, gen_d = torch.Generator(), torch.Generator()
    gen_p.set_state(torch.as_tensor(extra["gen_primal"]))
    gen_d.set_state(torch.as_tensor(extra["gen_dual"]))
    state = TrainerState(
        primal=primal, dual=dual, opt_primal=opt_p, opt_dual=opt_d,
        descent_weights=torch.as_tensor(extra["descent_weights"]),
        ascent_weights=torch.as_tensor(extra["ascent_weights"]),
        gen_primal=gen_p, gen_dual=gen_d,
        iteration=int(manifest["iteration"]),
        best_violation=float(manifest["best_violation"]))
    return state, manifest


def joint_train(arch: ArchSpec, cfg: TrainConfig, datasets: dict, root_seed: int,
                out_dir=None, resume_from=None, log=None,
                manifest_extra: dict | None = None) -> tuple[PrimalNet, DualNet, list]:
    """Run the alternating scheme for `cfg.iterations` outer iterations.

    `datasets` maps the keys "primal", "dual", "val" to stacked problems.
    With `out_dir` set, writes history.jsonl plus `last` (resumable) and
    `gated` (validation-gated) checkpoints. `resume_from` restarts from a
    `last` checkpoint and continues to `cfg.iterations` total.
    `manifest_extra` (e.g. config hash, training-data manifest hash) is
    recorded in every checkpoint manifest.
    """
    meta = {"root_seed": root_seed, **(manifest_extra or {})}
    out_dir = Path(out_dir) if out_dir is not None else None
    history_path = out_dir / "history.jsonl" if out_dir else None

    if resume_from is not None:
        state, _ = load_state(resume_from, cfg)
        if history_path is not None and history_path.exists():
            rows = [json.loads(line) for line in history_path.read_text().splitlines()]
            state.history = [r for r in rows if r["iteration"] <= state.iteration]
    else:
        state = init_state(arch, cfg, root_seed)
        if history_path is not None and history_path.exists():
            history_path.unlink()

    def emit(row):
        state.history.append(row)
        if history_path is not None:
            with history_path.open("a") as f:
                f.write(json.dumps(row, sort_keys=True) + "\n")
        if log is not None:
            log(row)

    def dump_and_raise(err: TrainingDivergenceError):
        dump_path = ckpt = None
        if out_dir is not None:
            dump_path = out_dir / "divergence.json"
            write_json(dump_path, {
                "iteration": state.iteration,
                "descent_weights": state.descent_weights.tolist(),
                "ascent_weights": state.ascent_weights.tolist(),
                "recent_history": state.history[-5:],
            })
            ckpt = out_dir / "checkpoint_last.npz"
        raise TrainingDivergenceError(str(err), dump_path, ckpt) from err

    while state.iteration < cfg.iterations:
        it = state.iteration
        try:
            stats_p = train_primal(state, cfg, datasets["primal"])
        except TrainingDivergenceError as err:
            dump_and_raise(err)
        emit({"iteration": it, "phase": "primal", "epoch": 0, **stats_p,
              "descent_weights": state.descent_weights.tolist()})
        for epoch in range(cfg.epoch_ratio):
            try:
                stats_d = train_dual(state, cfg, datasets["dual"])
            except TrainingDivergenceError as err:
                dump_and_raise(err)
            row = {"iteration": it, "phase": "dual", "epoch": epoch, **stats_d,
                   "ascent_weights": state.ascent_weights.tolist()}
            if "val" in datasets and (epoch + 1) % cfg.validate_every == 0:
                val_seed = stream_seed(root_seed, f"val/{it}/{epoch}")
                viol = validation_violation(state.primal, state.dual,
                                            datasets["val"], val_seed)
                gated = viol <= cfg.gate_factor * state.best_violation
                improved = viol < state.best_violation
                state.best_violation = min(state.best_violation, viol)
                row.update({"val_violation": viol, "gated": gated})
                # the retained gated artifact is the best-validation model
                if gated and improved and out_dir is not None:
                    save_checkpoint(out_dir / "checkpoint_gated.npz", state.primal,
                                    state.dual, extra={**meta, "iteration": it,
                                                       "val_violation": viol})
            emit(row)
        state.iteration += 1
        if out_dir is not None:
            _save_state(out_dir / "checkpoint_last.npz", state, meta)
    if out_dir is not None and not (out_dir / "checkpoint_gated.npz").exists():
        save_checkpoint(out_dir / "checkpoint_gated.npz", state.primal, state.dual,
                        extra=meta)
    return state.primal, state.dual, state.history
