"""Interference networks and the sum-rate power allocation problem.

A network of n transmitter-receiver pairs shares one channel. Entry (i, j)
of the gain matrix is the amplitude gain from transmitter i to receiver j;
pair i achieves rate

    r_i(p) = log(1 + g_ii^2 p_i / (W N0 + sum_{j != i} g_ji^2 p_j))

in bits/s/Hz (log base 2 by default; switchable to natural log). The
optimization problem maximizes the sum rate while a constrained subset of
pairs must each reach `r_min`. Stored in minimization form: the objective is
the negated sum rate, and the constraint vector is r_min - r_i on the
constrained set and -r_i elsewhere, so the shared `ConstrainedProblem`
surface applies unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch

from ..arrays import load_arrays, read_json, save_arrays, write_json
from ..errors import ContractViolationError, DimensionMismatchError
from .base import DTYPE, ConstrainedProblem, as_tensor

GENERATOR_VERSION = "power-1"

# physical defaults: P_max = 0 dBm, W = 20 MHz, N0 = -174 dBm/Hz
DEFAULT_P_MAX = 1e-3
DEFAULT_BANDWIDTH = 20e6
DEFAULT_NOISE_DENSITY = 10.0 ** (-174.0 / 10.0) * 1e-3


@dataclass(frozen=True)
class GeometryConfig:
    """Deployment geometry and the dual-slope path-loss model.

    `gain0` is calibrated so a direct link of `calib_distance` meters at full
    power sees `calib_snr_db` of SNR. Shadowing is i.i.d. log-normal per link.
    """

    area_side: float = 1500.0
    pair_dist_min: float = 20.0
    pair_dist_max: float = 60.0
    pl_exp_near: float = 2.0
    pl_exp_far: float = 4.0
    breakpoint: float = 100.0
    calib_distance: float = 40.0
    calib_snr_db: float = 30.0
    shadow_sigma_db: float = 7.0

    def gain0(self, p_max: float, bandwidth: float, noise_density: float) -> float:
        snr = 10.0 ** (self.calib_snr_db / 10.0)
        return snr * bandwidth * noise_density / p_max * self.calib_distance ** self.pl_exp_near

    def path_gain(self, dist: np.ndarray, p_max: float = DEFAULT_P_MAX,
                  bandwidth: float = DEFAULT_BANDWIDTH,
                  noise_density: float = DEFAULT_NOISE_DENSITY) -> np.ndarray:
        """Power-domain path gain at distance `dist` (meters)."""
        g0 = self.gain0(p_max, bandwidth, noise_density)
        dist = np.maximum(np.asarray(dist, dtype=float), 1.0)
        near = g0 * dist ** (-self.pl_exp_near)
        far = g0 * self.breakpoint ** (self.pl_exp_far - self.pl_exp_near) * dist ** (-self.pl_exp_far)
        return np.where(dist <= self.breakpoint, near, far)


@dataclass(frozen=True)
class PowerProblem(ConstrainedProblem):
    """One interference network (or a stacked batch of same-size ones)."""

    gains: torch.Tensor            # [*, n, n] amplitude gains, tx i -> rx j
    constrained: torch.Tensor      # [*, n] bool mask of minimum-rate pairs
    r_min: float = 1.5
    p_max: float = DEFAULT_P_MAX
    bandwidth: float = DEFAULT_BANDWIDTH
    noise_density: float = DEFAULT_NOISE_DENSITY
    rate_log_base: float = 2.0     # 2.0 for bits/s/Hz, e for nats
    positions: torch.Tensor | None = None  # [*, 2, n, 2] (tx, rx), provenance only

    family = "power"

    def __post_init__(self):
        object.__setattr__(self, "gains", as_tensor(self.gains, "gains"))
        object.__setattr__(self, "constrained", torch.as_tensor(self.constrained, dtype=torch.bool))
        if self.gains.shape[-1] != self.gains.shape[-2]:
            raise DimensionMismatchError("gains", "square", self.gains.shape[-2], self.gains.shape[-1])
        if self.constrained.shape[-1] != self.gains.shape[-1]:
            raise DimensionMismatchError("constrained", "pairs", self.gains.shape[-1],
                                         self.constrained.shape[-1])
        if (self.gains < 0).any():
            raise ContractViolationError("gains must be nonnegative")
        diag = self.gains.diagonal(dim1=-2, dim2=-1)
        if (diag <= 0).any():
            raise ContractViolationError("direct gains must be positive")
        if self.r_min <= 0 or self.p_max <= 0:
            raise ContractViolationError("r_min and p_max must be positive")

    @property
    def n_vars(self) -> int:
        return self.gains.shape[-1]

    @property
    def n_cons(self) -> int:
        return self.gains.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return tuple(self.gains.shape[:-2])

    @cached_property
    def noise_power(self) -> float:
        return self.bandwidth * self.noise_density

    def rates(self, p: torch.Tensor) -> torch.Tensor:
        """Per-pair rates; p in watts within [0, p_max].

        The interference sum per receiver runs in sorted term order, so the
        result is exactly invariant under joint relabeling of the pairs.
        """
        p = self._check_x(p)
        if (p < 0).any():
            raise ContractViolationError("powers must be nonnegative")
        if (p > self.p_max * (1 + 1e-9)).any():
            raise ContractViolationError(f"powers must not exceed p_max={self.p_max}")
        pow_gain = self._align(self.gains, p) ** 2
        n = self.n_vars
        eye = torch.eye(n, dtype=p.dtype)
        # terms[..., i, j] = g_ji^2 p_j for receiver i, interferer j
        terms = pow_gain.transpose(-1, -2) * p.unsqueeze(-2) * (1.0 - eye)
        interference = torch.sort(terms, dim=-1).values.sum(-1)
        direct = pow_gain.diagonal(dim1=-2, dim2=-1) * p
        snr = direct / (self.noise_power + interference)
        return torch.log1p(snr) / math.log(self.rate_log_base)

    def objective(self, x: torch.Tensor) -> torch.Tensor:
        """Negated sum rate (minimization convention)."""
        return -self.rates(x).sum(-1)

    def constraints(self, x: torch.Tensor) -> torch.Tensor:
        r = self.rates(x)
        mask = self._align(self.constrained, x)
        return torch.where(mask, self.r_min - r, -r)

    @property
    def constrained_count(self) -> int:
        counts = self.constrained.sum(-1)
        return int(counts.reshape(-1)[0]) if counts.numel() else 0

    # -- batching ---------------------------------------------------------

    @classmethod
    def stack(cls, problems: list["PowerProblem"]) -> "PowerProblem":
        first = problems[0]
        pos = None
        if all(p.positions is not None for p in problems):
            pos = torch.stack([p.positions for p in problems])
        return cls(
            gains=torch.stack([p.gains for p in problems]),
            constrained=torch.stack([p.constrained for p in problems]),
            r_min=first.r_min, p_max=first.p_max, bandwidth=first.bandwidth,
            noise_density=first.noise_density, rate_log_base=first.rate_log_base,
            positions=pos)

    def __getitem__(self, i) -> "PowerProblem":
        if not self.batch_shape:
            raise IndexError("not a batched problem")
        pos = self.positions[i] if self.positions is not None else None
        return PowerProblem(self.gains[i], self.constrained[i], self.r_min, self.p_max,
                            self.bandwidth, self.noise_density, self.rate_log_base, pos)

    def __len__(self) -> int:
        return self.batch_shape[0] if self.batch_shape else 1

    def repeat_interleave(self, times: int) -> "PowerProblem":
        """[B] -> [B*times] with each instance repeated `times` consecutively."""
        out = PowerProblem(self.gains.repeat_interleave(times, 0),
                           self.constrained.repeat_interleave(times, 0),
                           self.r_min, self.p_max, self.bandwidth,
                           self.noise_density, self.rate_log_base)
        if "gso_scale" in self.__dict__:
            out.__dict__["gso_scale"] = self.__dict__["gso_scale"].repeat_interleave(times, 0)
        return out

    # -- graph structure ----------------------------------------------------

    @cached_property
    def gso(self) -> torch.Tensor:
        return self.gains

    @cached_property
    def gso_scale(self) -> torch.Tensor:
        s = torch.linalg.matrix_norm(self.gains, ord=2)
        return torch.where(s > 0, s, torch.ones_like(s))


def channel_gains(tx: np.ndarray, rx: np.ndarray, shadow_db: np.ndarray,
                  geometry: GeometryConfig, p_max: float = DEFAULT_P_MAX,
                  bandwidth: float = DEFAULT_BANDWIDTH,
                  noise_density: float = DEFAULT_NOISE_DENSITY) -> np.ndarray:
    """Amplitude gain matrix from positions and a per-link shadowing draw (dB)."""
    dist = np.linalg.norm(tx[:, None, :] - rx[None, :, :], axis=-1)
    power_gain = geometry.path_gain(dist, p_max, bandwidth, noise_density)
    power_gain = power_gain * 10.0 ** (shadow_db / 10.0)
    return np.sqrt(power_gain)


def generate_network(n: int, constrained_fraction: float, seed: int,
                     geometry: GeometryConfig = GeometryConfig(),
                     r_min: float = 1.5, p_max: float = DEFAULT_P_MAX,
                     bandwidth: float = DEFAULT_BANDWIDTH,
                     noise_density: float = DEFAULT_NOISE_DENSITY,
                     rate_log_base: float = 2.0) -> PowerProblem:
    """Drop transmitters uniformly in the area, receivers 20-60 m away.

    |constrained set| = round(constrained_fraction * n). Positions and
    shadowing come from separate substreams so geometric transformations of
    a draw (e.g. distance scaling in tests) can reuse the same shadowing.
    """
    if n < 1:
        raise ContractViolationError("n must be >= 1")
    if not 0.0 <= constrained_fraction <= 1.0:
        raise ContractViolationError("constrained_fraction must lie in [0, 1]")
    root = np.random.default_rng(seed)
    pos_rng = np.random.default_rng(root.integers(2**63 - 1))
    shadow_rng = np.random.default_rng(root.integers(2**63 - 1))
    pick_rng = np.random.default_rng(root.integers(2**63 - 1))

    tx = pos_rng.uniform(0.0, geometry.area_side, size=(n, 2))
    radius = pos_rng.uniform(geometry.pair_dist_min, geometry.pair_dist_max, size=n)
    angle = pos_rng.uniform(0.0, 2.0 * np.pi, size=n)
    rx = tx + np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)

    shadow_db = shadow_rng.normal(0.0, geometry.shadow_sigma_db, size=(n, n))
    gains = channel_gains(tx, rx, shadow_db, geometry, p_max, bandwidth, noise_density)

    k = int(round(constrained_fraction * n))
    mask = np.zeros(n, dtype=bool)
    mask[pick_rng.choice(n, size=k, replace=False)] = True

    positions = torch.stack([torch.as_tensor(tx, dtype=DTYPE), torch.as_tensor(rx, dtype=DTYPE)])
    return PowerProblem(gains, mask, r_min, p_max, bandwidth, noise_density,
                        rate_log_base, positions)


def generate_batch(n: int, constrained_fraction: float, count: int, seed: int,
                   geometry: GeometryConfig = GeometryConfig(), **kwargs) -> PowerProblem:
    root = np.random.default_rng(seed)
    seeds = root.integers(0, 2**63 - 1, size=count)
    nets = [generate_network(n, constrained_fraction, int(s), geometry, **kwargs)
            for s in seeds]
    return PowerProblem.stack(nets)


# -- dataset files --------------------------------------------------------

def save_dataset(path, net: PowerProblem, seed: int, geometry: GeometryConfig,
                 extra_meta: dict | None = None) -> dict:
    arrays = {
        "H": net.gains.numpy(),
        "I": net.constrained.numpy().astype(np.uint8),
    }
    if net.positions is not None:
        arrays["positions"] = net.positions.numpy()
    save_arrays(f"{path}/data.npz", arrays)
    manifest = {
        "family": "power", "generator_version": GENERATOR_VERSION,
        "seed": int(seed), "count": len(net),
        "n": net.n_vars, "r_min": net.r_min, "p_max": net.p_max,
        "bandwidth": net.bandwidth, "noise_density": net.noise_density,
        "rate_log_base": net.rate_log_base,
        "geometry": geometry.__dict__,
    }
    manifest.update(extra_meta or {})
    write_json(f"{path}/manifest.json", manifest)
    return manifest


def load_dataset(path) -> tuple[PowerProblem, dict]:
    arrays = load_arrays(f"{path}/data.npz")
    manifest = read_json(f"{path}/manifest.json")
    pos = torch.as_tensor(arrays["positions"], dtype=DTYPE) if "positions" in arrays else None
    net = PowerProblem(arrays["H"], arrays["I"].astype(bool), manifest["r_min"],
                       manifest["p_max"], manifest["bandwidth"], manifest["noise_density"],
                       manifest["rate_log_base"], pos)
    return net, manifest
