"""Experiment orchestration: dataset generation, training runs, evaluation.

Artifacts chain through manifests: evaluation manifests reference the
training manifest, which references the dataset manifests. Every stage is a
pure function of (config, root seed), so re-running any stage reproduces its
artifacts byte for byte.
"""

from __future__ import annotations

import time
from pathlib import Path

import torch

from . import __version__
from .arrays import file_sha256, json_sha256, write_json
from .baselines import DaConfig
from .config import ExperimentConfig
from .errors import ConfigError
from .evaluation import EvalReport, References, compute_references, evaluate, write_table
from .nets.checkpoint import load_checkpoint
from .problems import qp as qp_mod
from .problems import power as power_mod
from .seeding import stream_seed
from .training.loop import joint_train

SPLITS = ("primal", "dual", "val", "test")


def dataset_dir(root, cfg: ExperimentConfig, split: str) -> Path:
    tag = f"{cfg.family}-n{cfg.problem.n}"
    if cfg.family == "miqp":
        tag += f"-m{cfg.problem.m}-r{cfg.problem.r}"
    else:
        tag += f"-f{cfg.problem.constrained_fraction}-rmin{cfg.problem.r_min}"
    return Path(root) / "datasets" / f"{tag}-seed{cfg.seed}" / split


def generate_split(cfg: ExperimentConfig, split: str, out_path) -> dict:
    """Generate one split; byte-identical for a fixed config and seed."""
    count = getattr(cfg.data, f"{split}_count")
    seed = stream_seed(cfg.seed, f"data-{split}")
    p = cfg.problem
    if cfg.family == "miqp":
        batch = qp_mod.generate_batch(p.n, p.m, p.r, count, seed)
        manifest = qp_mod.save_dataset(out_path, batch, seed,
                                       extra_meta={"split": split})
    else:
        batch = power_mod.generate_batch(p.n, p.constrained_fraction, count, seed,
                                         geometry=p.geometry, r_min=p.r_min,
                                         rate_log_base=p.rate_log_base)
        manifest = power_mod.save_dataset(out_path, batch, seed, p.geometry,
                                          extra_meta={"split": split})
    return manifest


def generate_all(cfg: ExperimentConfig, root) -> dict:
    """All four splits; returns {split: {path, manifest, hash}}."""
    out = {}
    for split in SPLITS:
        path = dataset_dir(root, cfg, split)
        manifest = generate_split(cfg, split, path)
        out[split] = {"path": str(path), "manifest": manifest,
                      "data_hash": file_sha256(Path(path) / "data.npz")}
    return out


def load_split(cfg: ExperimentConfig, root, split: str):
    path = dataset_dir(root, cfg, split)
    if not (Path(path) / "data.npz").exists():
        generate_split(cfg, split, path)
    loader = qp_mod.load_dataset if cfg.family == "miqp" else power_mod.load_dataset
    return loader(path)


def run_dir(root, cfg: ExperimentConfig) -> Path:
    return Path(root) / "runs" / f"{cfg.name}-seed{cfg.seed}"


def run_training(cfg: ExperimentConfig, root, resume: bool = False,
                 log=None) -> dict:
    """Train per config; writes checkpoints, history, and a run manifest."""
    datasets = {}
    hashes = {}
    for split in ("primal", "dual", "val"):
        batch, manifest = load_split(cfg, root, split)
        datasets[split] = batch
        hashes[split] = json_sha256(manifest)
    out = run_dir(root, cfg)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    resume_from = out / "checkpoint_last.npz" if resume else None
    if resume_from is not None and not resume_from.exists():
        raise ConfigError(f"no checkpoint to resume at {resume_from}")
    joint_train(cfg.arch, cfg.train, datasets, cfg.seed, out_dir=out,
                resume_from=resume_from, log=log,
                manifest_extra={"config_hash": cfg.config_hash(),
                                "data_manifest_hash": json_sha256(hashes)})
    manifest = {
        "kind": "train",
        "code_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "dataset_manifest_hashes": hashes,
        "started": started,
        "finished": time.time(),
        "artifacts": {
            "checkpoint_last": str(out / "checkpoint_last.npz"),
            "checkpoint_gated": str(out / "checkpoint_gated.npz"),
            "history": str(out / "history.jsonl"),
        },
    }
    write_json(out / "run_manifest.json", manifest)
    return manifest


def train_naive_baseline(cfg: ExperimentConfig, root, depth: int | None = None,
                         epochs: int = 300, lr: float = 3e-3) -> Path:
    """Train the supervised baseline on the primal split with oracle labels.

    miqp labels come from the reference solver; power labels from a 600-step
    state-augmented run of the trained constrained primal network (the run
    directory's gated checkpoint must exist). The label proxy is recorded in
    the model manifest.
    """
    from .baselines import NaiveArch, naive_gnn_train, save_naive_model

    batch, manifest = load_split(cfg, root, "primal")
    if cfg.family == "miqp":
        refs = compute_references(batch)
        labels = refs.x_star
        arch = NaiveArch(depth=depth or 42, features=cfg.arch.features,
                         n_hops=cfg.arch.n_hops)
    else:
        primal, _, _ = load_models(cfg, root, "gated")
        refs = compute_references(batch, primal=primal,
                                  seed=stream_seed(cfg.seed, "naive-labels"))
        labels = refs.x_star
        arch = NaiveArch(depth=depth or 12, features=cfg.arch.features,
                         n_hops=cfg.arch.n_hops)
    gen = torch.Generator()
    gen.manual_seed(stream_seed(cfg.seed, "naive-init"))
    model = naive_gnn_train(cfg.family, batch, labels, arch, epochs=epochs,
                            lr=lr, generator=gen)
    out = run_dir(root, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "naive_model.npz"
    save_naive_model(path, model, extra={
        "label_source": refs.method,
        "dataset_manifest_hash": json_sha256(manifest),
        "config_hash": cfg.config_hash()})
    return path


def load_models(cfg_or_path, root=None, which: str = "gated"):
    """Load (primal, dual) from a run directory or explicit checkpoint path."""
    if isinstance(cfg_or_path, ExperimentConfig):
        path = run_dir(root, cfg_or_path) / f"checkpoint_{which}.npz"
    else:
        path = Path(cfg_or_path)
    primal, dual, manifest, _ = load_checkpoint(path)
    return primal, dual, manifest


def run_eval(cfg: ExperimentConfig, root, method: str = "cdu",
             checkpoint: str | Path | None = None, which: str = "gated",
             references: References | None = None, sa_primal=None,
             out_name: str | None = None, seed: int | None = None) -> EvalReport:
    """Evaluate a method on the config's test split; writes report artifacts."""
    test, test_manifest = load_split(cfg, root, "test")
    seed = cfg.seed if seed is None else seed
    primal = dual = naive = None
    if method in ("cdu", "unconstrained"):
        primal, dual, _ = load_models(checkpoint or cfg, root, which)
    elif method == "sa" and sa_primal is None:
        sa_primal = load_models(checkpoint or cfg, root, which)[0]
    elif method == "naive":
        from .baselines import load_naive_model
        naive, _ = load_naive_model(checkpoint or
                                    run_dir(root, cfg) / "naive_model.npz")
    if references is None:
        ref_primal = None
        if cfg.family == "power":
            # the trained primal network anchors the power-family reference
            ref_primal = primal if primal is not None else sa_primal
            if ref_primal is None:
                ref_primal = load_models(cfg, root, which)[0]
        references = compute_references(test, primal=ref_primal,
                                        seed=stream_seed(seed, "references"))
    da_cfg = None
    if method == "da" and cfg.family == "power":
        da_cfg = DaConfig(step=0.05, iterations=600, inner="net", lam0="family",
                          record_every=100)
    report = evaluate(method, test, primal=primal, dual=dual, naive=naive,
                      references=references, seed=seed, sa_primal=sa_primal,
                      da_cfg=da_cfg,
                      dataset_manifest_hash=json_sha256(test_manifest))
    out = run_dir(root, cfg) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    name = out_name or f"{method}-seed{seed}"
    write_table(out / f"{name}.csv", report.to_rows())
    write_json(out / f"{name}.json", {
        "kind": "eval", "method": method, "seed": seed,
        "aggregates": report.aggregates,
        "reference_method": report.reference_method,
        "dataset_manifest_hash": report.dataset_manifest_hash,
        "config_hash": cfg.config_hash(),
        "training_manifest": str(run_dir(root, cfg) / "run_manifest.json"),
        "code_version": __version__,
    })
    return report
