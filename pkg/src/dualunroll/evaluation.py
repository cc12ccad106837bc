"""Metrics, layerwise diagnostics, OOD sweeps, and figure-data emission.

Every method (learned or classical) is reduced to the same report: primal
and multiplier MSE against the reference solution, objective value, mean/max
violation, complementary slackness, and per-layer trajectories. MSEs are
per-coordinate mean squared errors. References come from the convex-QP
oracle for the QP family and from a long state-augmented dual-ascent run for
the power family (the reference method is recorded in the report).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .baselines import DaConfig, dual_ascent, full_power, state_augmented_da
from .errors import ConfigError
from .nets.networks import DualNet, PrimalNet, dual_forward
from .nets.trajectory import DualTrajectory
from .problems.base import ConstrainedProblem
from .problems.qp import generate_batch as qp_generate_batch
from .problems.qp_oracle import kkt_report, reference_solve
from .problems.power import GeometryConfig
from .problems.power import generate_batch as power_generate_batch
from .seeding import stream_seed

LEARNED_METHODS = ("cdu", "unconstrained")
ALL_METHODS = ("cdu", "unconstrained", "da", "sa", "naive", "fullpower")


@dataclass
class References:
    """Per-instance reference solutions and their provenance."""

    x_star: torch.Tensor          # [N, n]
    lam_star: torch.Tensor        # [N, c]
    p_star: torch.Tensor          # [N]
    method: str
    kkt_residuals: list = field(default_factory=list)


def compute_references(dataset: ConstrainedProblem,
                       primal: PrimalNet | None = None,
                       sa_iterations: int = 600, seed: int = 0) -> References:
    """Oracle solutions: convex-QP KKT solve (miqp) or long SA run (power)."""
    if dataset.family == "miqp":
        xs, lams, vals, reports = [], [], [], []
        for i in range(len(dataset)):
            x, lam, val = reference_solve(dataset[i])
            xs.append(x)
            lams.append(lam)
            vals.append(val)
            reports.append(kkt_report(dataset[i], x, lam).as_dict())
        return References(torch.stack(xs), torch.stack(lams),
                          torch.tensor(vals, dtype=torch.float64), "kkt-oracle", reports)
    if primal is None:
        raise ConfigError("power-family references need a trained primal network")
    gen = torch.Generator()
    gen.manual_seed(seed)
    traj = state_augmented_da(dataset, primal,
                              DaConfig(step=0.05, iterations=sa_iterations,
                                       inner="net", lam0="family", record_every=sa_iterations),
                              generator=gen)
    x = traj.solution.detach()
    return References(x, traj.final_multiplier.detach(),
                      -dataset.objective(x).detach(), f"sa-{sa_iterations}")


def _layer_tables(traj: DualTrajectory) -> dict:
    """Per-dual-layer diagnostics, averaged over instances."""
    t = traj.detached()

    def avg(x):
        return x.reshape(x.shape[0], -1).mean(-1).numpy()

    return {
        "dual_slack_norm": avg(t.slack_norms()),
        "dual_violation_mean": avg(t.violations_mean()),
        "dual_comp_slack": avg(t.comp_slacks()),
        "dual_lagrangian": avg(t.lagrangians()),
    }


def layer_diagnostics(traj, prob: ConstrainedProblem) -> dict:
    """Recompute every per-layer diagnostic from raw iterates.

    Accepts a primal or dual trajectory; never trusts cached values.
    """
    if isinstance(traj, DualTrajectory):
        t = traj.detached()
        return {
            "lagrangian": t.lagrangians().numpy(),
            "slack_norm": t.slack_norms().numpy(),
            "violation_mean": t.violations_mean().numpy(),
            "comp_slack": t.comp_slacks().numpy(),
        }
    t = traj.detached()
    return {
        "lagrangian": t.lagrangians().numpy(),
        "grad_norm": t.grad_norms().numpy(),
        "slack_norm": t.slack_norms().numpy(),
        "violation_mean": t.violations_mean().numpy(),
    }


@dataclass
class EvalReport:
    method: str
    family: str
    seed: int
    per_instance: list
    aggregates: dict
    layer_tables: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    reference_method: str = ""
    dataset_manifest_hash: str = ""

    def to_rows(self) -> list[dict]:
        """Long format: (method, instance, metric, layer, value, seed)."""
        rows = []
        for rec in self.per_instance:
            for metric, value in rec.items():
                if metric == "instance" or value is None:
                    continue
                rows.append({"method": self.method, "instance": rec["instance"],
                             "metric": metric, "layer": -1, "value": value,
                             "seed": self.seed})
        for name, column in self.layer_tables.items():
            for layer, value in enumerate(np.asarray(column)):
                rows.append({"method": self.method, "instance": -1, "metric": name,
                             "layer": layer, "value": float(value), "seed": self.seed})
        return rows


def _per_instance_rows(dataset, x, lam, refs: References | None) -> tuple[list, dict]:
    rows = []
    count = len(dataset)
    for i in range(count):
        prob = dataset[i]
        xi = x[i]
        rec = {
            "instance": i,
            "objective": float(prob.objective(xi)),
            "violation_mean": float(prob.violation_mean(xi)),
            "violation_max": float(prob.violation_max(xi)),
        }
        if refs is not None:
            rec["mse_x"] = float(((xi - refs.x_star[i]) ** 2).mean())
        if lam is not None:
            rec["comp_slack"] = float(prob.complementary_slackness(lam[i], xi))
            if refs is not None:
                rec["mse_lambda"] = float(((lam[i] - refs.lam_star[i]) ** 2).mean())
        if dataset.family == "power":
            rec["sum_rate"] = float(prob.rates(xi).sum())
        rows.append(rec)
    keys = [k for k in rows[0] if k != "instance"] if rows else []
    aggregates = {k: float(np.mean([r[k] for r in rows if r.get(k) is not None]))
                  for k in keys}
    return rows, aggregates


@torch.no_grad()
def evaluate(method: str, dataset: ConstrainedProblem, *,
             primal: PrimalNet | None = None, dual: DualNet | None = None,
             naive=None, references: References | None = None, seed: int = 0,
             da_cfg: DaConfig | None = None, sa_primal: PrimalNet | None = None,
             dataset_manifest_hash: str = "") -> EvalReport:
    """Evaluate one method on one dataset; deterministic per seed."""
    gen = torch.Generator()
    gen.manual_seed(seed)
    lam = None
    layer_tables = {}
    extras = {}

    if method in LEARNED_METHODS:
        if primal is None or dual is None:
            raise ConfigError(f"method '{method}' needs primal and dual networks")
        traj = dual_forward(dataset, dual, primal, "eval", gen)
        x, lam = traj.solution, traj.final_multiplier
        layer_tables = _layer_tables(traj)
        # per-primal-layer diagnostics at the final multiplier
        ptraj = primal(lam, dataset, "eval", gen).detached()
        layer_tables["primal_grad_norm"] = \
            ptraj.grad_norms().reshape(len(ptraj.iterates), -1).mean(-1).numpy()
        layer_tables["primal_lagrangian"] = \
            ptraj.lagrangians().reshape(len(ptraj.iterates), -1).mean(-1).numpy()
    elif method == "da":
        cfg = da_cfg or DaConfig(step=0.01, iterations=1400, record_every=100)
        traj = dual_ascent(dataset, cfg, primal_net=sa_primal, generator=gen)
        x, lam = traj.solution, traj.final_multiplier
        layer_tables = _layer_tables(traj)
    elif method == "sa":
        if sa_primal is None:
            raise ConfigError("method 'sa' needs a primal network")
        cfg = da_cfg or DaConfig(step=0.05, iterations=600, inner="net",
                                 lam0="family", record_every=50)
        traj = state_augmented_da(dataset, sa_primal, cfg, gen)
        x, lam = traj.solution, traj.final_multiplier
        layer_tables = _layer_tables(traj)
    elif method == "naive":
        if naive is None:
            raise ConfigError("method 'naive' needs a trained model")
        x = naive(dataset)
    elif method == "fullpower":
        x = full_power(dataset)
    elif method == "oracle":
        if references is None:
            raise ConfigError("method 'oracle' evaluates the references themselves")
        x, lam = references.x_star, references.lam_star
    else:
        raise ConfigError(f"unknown method '{method}'")

    x = x.detach()
    lam = lam.detach() if lam is not None else None
    per_instance, aggregates = _per_instance_rows(dataset, x, lam, references)
    if dataset.family == "power":
        rates = torch.stack([dataset[i].rates(x[i]) for i in range(len(dataset))])
        extras["constrained_rates"] = rates[dataset.constrained].numpy()
        if lam is not None:
            extras["constrained_multipliers"] = lam[dataset.constrained].numpy()
    return EvalReport(method=method, family=dataset.family, seed=seed,
                      per_instance=per_instance, aggregates=aggregates,
                      layer_tables=layer_tables, extras=extras,
                      reference_method=references.method if references else "",
                      dataset_manifest_hash=dataset_manifest_hash)


# -- OOD sweeps ---------------------------------------------------------------

MIQP_SWEEP_PARAMS = ("n", "m", "r")
POWER_SWEEP_PARAMS = ("r_min", "n", "constrained_fraction")


@dataclass
class OodSpec:
    family: str
    param: str
    grid: list
    fixed: dict
    in_dist: float
    seeds: list = field(default_factory=lambda: [0])
    methods: list = field(default_factory=lambda: ["cdu"])
    count: int = 32
    da_iterations: int = 1400

    def __post_init__(self):
        valid = MIQP_SWEEP_PARAMS if self.family == "miqp" else POWER_SWEEP_PARAMS
        if self.param not in valid:
            raise ConfigError(f"swept parameter must be one of {valid}")
        if self.in_dist not in self.grid:
            raise ConfigError("the in-distribution point must be part of the grid")


def _sweep_dataset(spec: OodSpec, value, seed: int):
    params = dict(spec.fixed)
    params[spec.param] = value
    if spec.family == "miqp":
        return qp_generate_batch(int(params["n"]), int(params["m"]), int(params["r"]),
                                 count=spec.count, seed=seed)
    geometry = params.get("geometry") or GeometryConfig()
    return power_generate_batch(int(params["n"]), float(params["constrained_fraction"]),
                                count=spec.count, seed=seed, geometry=geometry,
                                r_min=float(params["r_min"]))


def ood_sweep(spec: OodSpec, models: dict) -> list[dict]:
    """One row per (method, grid value, seed, aggregate metric).

    `models` maps method names to the objects `evaluate` needs:
    {"cdu": (primal, dual), "unconstrained": (primal, dual), "naive": model}.
    The reference primal for power-family SA/labels is models["cdu"][0].
    """
    rows = []
    for value in spec.grid:
        for seed in spec.seeds:
            data_seed = stream_seed(seed, f"ood/{spec.param}/{value}")
            dataset = _sweep_dataset(spec, value, data_seed)
            ref_primal = models.get("cdu", (None, None))[0]
            refs = compute_references(dataset, primal=ref_primal, seed=seed)
            for method in spec.methods:
                kwargs = {}
                if method in LEARNED_METHODS:
                    kwargs["primal"], kwargs["dual"] = models[method]
                elif method == "naive":
                    kwargs["naive"] = models["naive"]
                elif method in ("sa",):
                    kwargs["sa_primal"] = ref_primal
                elif method == "da":
                    kwargs["da_cfg"] = DaConfig(step=0.01, iterations=spec.da_iterations,
                                                record_every=spec.da_iterations)
                    if spec.family == "power":
                        kwargs["da_cfg"] = DaConfig(step=0.05, iterations=spec.da_iterations,
                                                    inner="net", lam0="family",
                                                    record_every=spec.da_iterations)
                        kwargs["sa_primal"] = ref_primal
                report = evaluate(method, dataset, references=refs, seed=seed, **kwargs)
                for metric, val in report.aggregates.items():
                    rows.append({"method": method, "param": spec.param,
                                 "param_value": value, "seed": seed,
                                 "metric": metric, "value": val,
                                 "in_dist": value == spec.in_dist})
    return rows


# -- figure data ---------------------------------------------------------------

FIGURES = ("trajectories", "descent", "ood", "rate-histogram", "multiplier-histogram")


def write_table(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        raise ConfigError("refusing to write an empty table")
    keys = list(rows[0].keys())
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def read_table(path) -> list[dict]:
    with Path(path).open() as f:
        return list(csv.DictReader(f))


def emit_figure_data(source, figure_id: str, out_dir, name: str | None = None,
                     meta: dict | None = None) -> tuple[Path, Path]:
    """Produce the plot-ready table and its rendered image.

    `source` depends on the figure: a DualTrajectory for "trajectories",
    an EvalReport list for "descent" and the histograms, sweep rows for
    "ood". Returns (table_path, image_path); the image is regenerable from
    the table alone via `plot_from_table`.
    """
    out_dir = Path(out_dir)
    name = name or figure_id
    rows = figure_rows(source, figure_id, meta or {})
    table_path = out_dir / f"{name}.csv"
    write_table(table_path, rows)
    image_path = out_dir / f"{name}.png"
    plot_from_table(table_path, figure_id, image_path)
    return table_path, image_path


def figure_rows(source, figure_id: str, meta: dict) -> list[dict]:
    if figure_id == "trajectories":
        traj: DualTrajectory = source
        lag = traj.detached().lagrangians().reshape(len(traj.multipliers), -1).mean(-1)
        rows = []
        for step, val in enumerate(lag.numpy()):
            rows.append({"step": step, "lagrangian": float(val),
                         "dual_value": float(val)})
        return rows
    if figure_id == "descent":
        rows = []
        for report in source:
            for metric in ("primal_grad_norm", "primal_lagrangian",
                           "dual_violation_mean", "dual_comp_slack", "dual_slack_norm"):
                if metric not in report.layer_tables:
                    continue
                for layer, val in enumerate(report.layer_tables[metric]):
                    rows.append({"method": report.method, "metric": metric,
                                 "layer": layer, "value": float(val)})
        return rows
    if figure_id == "ood":
        if not source:
            raise ConfigError("empty sweep: nothing to plot")
        return [dict(r) for r in source]
    if figure_id == "rate-histogram":
        rows = []
        for report in source:
            for v in np.asarray(report.extras["constrained_rates"]).ravel():
                rows.append({"method": report.method, "rate": float(v),
                             "r_min": meta.get("r_min", 1.5)})
        return rows
    if figure_id == "multiplier-histogram":
        rows = []
        for report in source:
            for v in np.asarray(report.extras["constrained_multipliers"]).ravel():
                rows.append({"method": report.method, "multiplier": float(v)})
        return rows
    raise ConfigError(f"unknown figure id '{figure_id}'; known: {FIGURES}")


def plot_from_table(table_path, figure_id: str, out_path) -> Path:
    """Render a figure from its CSV table alone (no model/dataset access)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_table(table_path)
    if not rows:
        raise ConfigError("empty table: nothing to plot")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    if figure_id == "trajectories":
        steps = [int(r["step"]) for r in rows]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
        axes[0].plot(steps, [float(r["lagrangian"]) for r in rows])
        axes[0].set(xlabel="step", ylabel="Lagrangian")
        axes[1].plot(steps, [float(r["dual_value"]) for r in rows])
        axes[1].set(xlabel="step", ylabel="dual value")
    elif figure_id == "descent":
        metrics = sorted({r["metric"] for r in rows})
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.4 * len(metrics), 3.2))
        axes = np.atleast_1d(axes)
        for ax, metric in zip(axes, metrics):
            for method in sorted({r["method"] for r in rows}):
                pts = [(int(r["layer"]), float(r["value"])) for r in rows
                       if r["metric"] == metric and r["method"] == method]
                if pts:
                    ax.plot(*zip(*pts), marker="o", label=method)
            ax.set(xlabel="layer", ylabel=metric)
            ax.legend(fontsize=7)
    elif figure_id == "ood":
        metrics = sorted({r["metric"] for r in rows})
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.4 * len(metrics), 3.2))
        axes = np.atleast_1d(axes)
        in_dist = [float(r["param_value"]) for r in rows
                   if str(r["in_dist"]).lower() == "true"]
        for ax, metric in zip(axes, metrics):
            for method in sorted({r["method"] for r in rows}):
                pts = {}
                for r in rows:
                    if r["metric"] == metric and r["method"] == method:
                        pts.setdefault(float(r["param_value"]), []).append(float(r["value"]))
                if pts:
                    xs = sorted(pts)
                    ax.plot(xs, [np.mean(pts[x]) for x in xs], marker="o", label=method)
            if in_dist:
                ax.axvline(in_dist[0], color="red", linestyle=":", linewidth=1)
            ax.set(xlabel=rows[0]["param"], ylabel=metric)
            ax.legend(fontsize=7)
    elif figure_id == "rate-histogram":
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for method in sorted({r["method"] for r in rows}):
            vals = [float(r["rate"]) for r in rows if r["method"] == method]
            ax.hist(vals, bins=30, alpha=0.6, label=method)
        ax.axvline(float(rows[0]["r_min"]), color="red", linestyle="--", linewidth=1)
        ax.set(xlabel="rate (constrained pairs)", ylabel="count")
        ax.legend(fontsize=7)
    elif figure_id == "multiplier-histogram":
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for method in sorted({r["method"] for r in rows}):
            vals = [min(float(r["multiplier"]), 6.0) for r in rows if r["method"] == method]
            ax.hist(vals, bins=30, alpha=0.6, label=method)
        ax.set(xlabel="multiplier (truncated at 6)", ylabel="count")
        ax.legend(fontsize=7)
    else:
        raise ConfigError(f"unknown figure id '{figure_id}'")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
