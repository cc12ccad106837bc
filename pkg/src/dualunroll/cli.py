"""Flat command-line interface: generate / train / eval / sweep / plot /
reproduce.

Exit codes: 0 success, 2 configuration error, 3 numerical failure. The
default output root comes from --out or the DUALUNROLL_OUT environment
variable (falling back to ./out).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .arrays import write_json
from .config import PRESETS, ExperimentConfig, load_config, preset, save_config
from .errors import ConfigError, OracleError, TrainingDivergenceError
from .evaluation import FIGURES, OodSpec, emit_figure_data, ood_sweep, plot_from_table, write_table
from .pipeline import (generate_all, load_models, run_dir, run_eval,
                       run_training)

METHODS = ("cdu", "unconstrained", "da", "sa", "naive", "fullpower")


def _out_root(args) -> Path:
    root = args.out or os.environ.get("DUALUNROLL_OUT") or "out"
    return Path(root)


def _resolve_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    else:
        raise ConfigError("provide --config PATH or --preset NAME")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "family", None) and cfg.family != args.family:
        raise ConfigError(f"--family {args.family} does not match config family "
                          f"'{cfg.family}'")
    return cfg


def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    root = _out_root(args)
    out = generate_all(cfg, root)
    for split, info in out.items():
        print(f"{split}: {info['manifest']['count']} instances -> {info['path']}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    root = _out_root(args)
    if args.method in ("cdu", "unconstrained"):
        want_constrained = args.method == "cdu"
        if cfg.train.constrained != want_constrained:
            raise ConfigError(f"--method {args.method} conflicts with the config's "
                              f"constrained={cfg.train.constrained}; pick the "
                              f"matching preset/config or omit --method")
    if args.dry_run:
        print(f"config ok: {cfg.name} (family={cfg.family}, "
              f"hash={cfg.config_hash()[:12]})")
        save_config(cfg, run_dir(root, cfg) / "config.yaml")
        return 0
    if args.method == "naive":
        from .pipeline import train_naive_baseline
        path = train_naive_baseline(cfg, root)
        print(f"naive model: {path}")
        return 0

    def log(row):
        if row["phase"] == "primal" or "val_violation" in row:
            msg = f"[it {row['iteration']:4d}] {row['phase']}: loss={row['loss']:+.4f}"
            if "val_violation" in row:
                msg += f" val_violation={row['val_violation']:.4f}"
                msg += " *" if row.get("gated") else ""
            print(msg, flush=True)

    save_config(cfg, run_dir(root, cfg) / "config.yaml")
    manifest = run_training(cfg, root, resume=args.resume is not None, log=log)
    print(f"checkpoints: {manifest['artifacts']['checkpoint_gated']}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    root = _out_root(args)
    report = run_eval(cfg, root, method=args.method, checkpoint=args.checkpoint,
                      which=args.which)
    fig_dir = run_dir(root, cfg) / "eval"
    if report.layer_tables:
        emit_figure_data([report], "descent", fig_dir,
                         name=f"{args.method}-descent")
    if cfg.family == "power" and "constrained_rates" in report.extras:
        emit_figure_data([report], "rate-histogram", fig_dir,
                         name=f"{args.method}-rates",
                         meta={"r_min": cfg.problem.r_min})
        if "constrained_multipliers" in report.extras:
            emit_figure_data([report], "multiplier-histogram", fig_dir,
                             name=f"{args.method}-multipliers")
    print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    root = _out_root(args)
    grid = [float(v) if "." in v else int(v) for v in args.grid.split(",")]
    in_dist = float(args.in_dist) if "." in args.in_dist else int(args.in_dist)
    fixed = {"m": cfg.problem.m, "r": cfg.problem.r, "n": cfg.problem.n}
    if cfg.family == "power":
        fixed = {"n": cfg.problem.n,
                 "constrained_fraction": cfg.problem.constrained_fraction,
                 "r_min": cfg.problem.r_min, "geometry": cfg.problem.geometry}
    spec = OodSpec(family=cfg.family, param=args.param, grid=grid, fixed=fixed,
                   in_dist=in_dist, seeds=[cfg.seed],
                   methods=args.methods.split(","), count=args.count,
                   da_iterations=args.da_iterations)
    models = {}
    for method in spec.methods:
        if method in ("cdu", "unconstrained"):
            ckpt = args.checkpoint if method == "cdu" else args.checkpoint_unconstrained
            if ckpt is None:
                raise ConfigError(f"--checkpoint for method '{method}' required")
            primal, dual, _ = load_models(ckpt)
            models[method] = (primal, dual)
    rows = ood_sweep(spec, models)
    out = run_dir(root, cfg) / "sweeps"
    out.mkdir(parents=True, exist_ok=True)
    table = out / f"ood-{args.param}.csv"
    write_table(table, rows)
    plot_from_table(table, "ood", table.with_suffix(".png"))
    write_json(out / f"ood-{args.param}.manifest.json",
               {"kind": "sweep", "param": args.param, "grid": grid,
                "config_hash": cfg.config_hash(), "methods": spec.methods})
    print(f"sweep table: {table}")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out_file) if args.out_file else Path(args.table).with_suffix(".png")
    plot_from_table(args.table, args.figure, out)
    print(f"figure: {out}")
    return 0


def cmd_reproduce(args) -> int:
    """Desk-scale end-to-end chain: generate, train both arms, evaluate, plot."""
    root = _out_root(args)
    family = args.family or "miqp"
    seeds = [int(s) for s in args.seeds.split(",")]
    summary = {}
    for seed in seeds:
        for arm in ("constrained", "unconstrained"):
            cfg = preset(f"{family}-desk-{arm}", seed=seed)
            if args.iterations:
                cfg.train.iterations = args.iterations
            print(f"== {cfg.name} seed={seed}")
            generate_all(cfg, root)
            run_training(cfg, root)
            method = "cdu" if arm == "constrained" else "unconstrained"
            report = run_eval(cfg, root, method=method)
            summary[f"{arm}-seed{seed}"] = report.aggregates
            print(json.dumps(report.aggregates, indent=2, sort_keys=True))
    write_json(root / f"reproduce-{family}.json", summary)
    print(f"summary: {root / f'reproduce-{family}.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualunroll",
        description="Constrained primal/dual unrolled optimization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        p.add_argument("--out", help="output root (default $DUALUNROLL_OUT or ./out)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if config:
            p.add_argument("--config", help="path to a config YAML")
            p.add_argument("--preset", choices=sorted(PRESETS),
                           help="named preset configuration")
            p.add_argument("--family", choices=("miqp", "power"))

    p = sub.add_parser("generate", help="generate dataset splits")
    common(p)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train primal and dual networks")
    common(p)
    p.add_argument("--method", choices=("cdu", "unconstrained", "naive"),
                   help="what to train (default: the pair per the config's "
                        "constrained flag; naive = supervised baseline)")
    p.add_argument("--resume", help="resume from this run's last checkpoint")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the config without computing")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a method on the test split")
    common(p)
    p.add_argument("--method", choices=METHODS, default="cdu")
    p.add_argument("--checkpoint", help="explicit checkpoint path")
    p.add_argument("--which", choices=("gated", "last"), default="gated")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="out-of-distribution sweep")
    common(p)
    p.add_argument("--param", required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--in-dist", dest="in_dist", required=True)
    p.add_argument("--methods", default="cdu")
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--da-iterations", type=int, default=1400)
    p.add_argument("--checkpoint")
    p.add_argument("--checkpoint-unconstrained")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("plot", help="re-render a figure from its table")
    p.add_argument("--table", required=True)
    p.add_argument("--figure", choices=FIGURES, required=True)
    p.add_argument("--out-file")
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("reproduce", help="desk-scale acceptance pipeline")
    p.add_argument("--out")
    p.add_argument("--family", choices=("miqp", "power"))
    p.add_argument("--seeds", default="0")
    p.add_argument("--iterations", type=int,
                   help="override training iterations (quick runs)")
    p.set_defaults(fn=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (OracleError, TrainingDivergenceError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
