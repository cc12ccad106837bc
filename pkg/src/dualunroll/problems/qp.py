"""Quadratic programs with box-relaxed binary variables.

The raw family is a convex MIQP: minimize 0.5 x'Px + q'x subject to
A_bar x <= b_bar and x_i in {-1, 1} on an index set of size r. Relaxing the
binary set to [-1, 1] stacks 2r box rows under A_bar and yields the convex
QP that all downstream modules consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch

from ..arrays import load_arrays, read_json, save_arrays, write_json
from ..errors import ContractViolationError, DimensionMismatchError, OracleError
from .base import DTYPE, ConstrainedProblem, as_tensor, check_multipliers

GENERATOR_VERSION = "miqp-1"


def _check_square_spd(P: torch.Tensor, sym_tol: float = 1e-10) -> None:
    if P.shape[-1] != P.shape[-2]:
        raise DimensionMismatchError("P", "square", P.shape[-1], P.shape[-2])
    asym = (P - P.transpose(-1, -2)).abs().max()
    if asym > sym_tol:
        raise ContractViolationError(f"P must be symmetric within {sym_tol}, asymmetry {asym:.2e}")
    eigmin = torch.linalg.eigvalsh(P)[..., 0].min()
    if eigmin <= 0:
        raise ContractViolationError(f"P must be positive definite, min eigenvalue {eigmin:.2e}")


@dataclass(frozen=True)
class MiqpInstance:
    """One MIQP realization before relaxation."""

    P: torch.Tensor          # [n, n], symmetric positive definite
    q: torch.Tensor          # [n]
    A_bar: torch.Tensor      # [m, n]
    b_bar: torch.Tensor      # [m]
    binary_idx: torch.Tensor # [r] indices of {-1, 1} variables

    def __post_init__(self):
        object.__setattr__(self, "P", as_tensor(self.P, "P"))
        object.__setattr__(self, "q", as_tensor(self.q, "q"))
        object.__setattr__(self, "A_bar", as_tensor(self.A_bar, "A_bar"))
        object.__setattr__(self, "b_bar", as_tensor(self.b_bar, "b_bar"))
        object.__setattr__(self, "binary_idx", torch.as_tensor(self.binary_idx, dtype=torch.long))
        n = self.P.shape[-1]
        _check_square_spd(self.P)
        if self.q.shape[-1] != n:
            raise DimensionMismatchError("q", "variables", n, self.q.shape[-1])
        if self.A_bar.shape[-1] != n:
            raise DimensionMismatchError("A_bar", "variables", n, self.A_bar.shape[-1])
        if self.b_bar.shape[-1] != self.A_bar.shape[-2]:
            raise DimensionMismatchError("b_bar", "rows", self.A_bar.shape[-2], self.b_bar.shape[-1])
        idx = self.binary_idx
        if idx.numel() and (idx.min() < 0 or idx.max() >= n):
            raise ContractViolationError("binary_idx entries must lie in [0, n)")
        if idx.numel() != torch.unique(idx).numel():
            raise ContractViolationError("binary_idx entries must be unique")

    @property
    def n(self) -> int:
        return self.P.shape[-1]

    @property
    def m(self) -> int:
        return self.A_bar.shape[-2]

    @property
    def r(self) -> int:
        return self.binary_idx.shape[-1]


def selection_matrix(binary_idx: torch.Tensor, n: int) -> torch.Tensor:
    """0/1 matrix with one row per relaxed binary variable."""
    r = binary_idx.shape[-1]
    M = torch.zeros(r, n, dtype=DTYPE)
    if r:
        M[torch.arange(r), binary_idx] = 1.0
    return M


@dataclass(frozen=True)
class QpProblem(ConstrainedProblem):
    """Convex QP: minimize 0.5 x'Px + q'x s.t. Ax <= b.

    Produced by `relax`; `A` stacks the linear rows over the +/- box rows of
    the relaxed binary variables, `b` stacks b_bar over ones. Supports an
    optional leading batch dimension on all payload tensors.
    """

    P: torch.Tensor   # [*, n, n]
    q: torch.Tensor   # [*, n]
    A: torch.Tensor   # [*, c, n]
    b: torch.Tensor   # [*, c]
    binary_idx: torch.Tensor = field(default_factory=lambda: torch.zeros(0, dtype=torch.long))
    m_lin: int = -1   # rows of A_bar inside A; defaults to c - 2r

    family = "miqp"

    def __post_init__(self):
        object.__setattr__(self, "P", as_tensor(self.P, "P"))
        object.__setattr__(self, "q", as_tensor(self.q, "q"))
        object.__setattr__(self, "A", as_tensor(self.A, "A"))
        object.__setattr__(self, "b", as_tensor(self.b, "b"))
        object.__setattr__(self, "binary_idx", torch.as_tensor(self.binary_idx, dtype=torch.long))
        n, c = self.P.shape[-1], self.A.shape[-2]
        if self.q.shape[-1] != n:
            raise DimensionMismatchError("q", "variables", n, self.q.shape[-1])
        if self.A.shape[-1] != n:
            raise DimensionMismatchError("A", "variables", n, self.A.shape[-1])
        if self.b.shape[-1] != c:
            raise DimensionMismatchError("b", "rows", c, self.b.shape[-1])
        if self.m_lin < 0:
            object.__setattr__(self, "m_lin", c - 2 * self.binary_idx.shape[-1])

    @property
    def n_vars(self) -> int:
        return self.P.shape[-1]

    @property
    def n_cons(self) -> int:
        return self.A.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return tuple(self.q.shape[:-1])

    def objective(self, x: torch.Tensor) -> torch.Tensor:
        x = self._check_x(x)
        P = self._align(self.P, x)
        q = self._align(self.q, x)
        Px = (P @ x.unsqueeze(-1)).squeeze(-1)
        return 0.5 * (x * Px).sum(-1) + (q * x).sum(-1)

    def constraints(self, x: torch.Tensor) -> torch.Tensor:
        x = self._check_x(x)
        A = self._align(self.A, x)
        b = self._align(self.b, x)
        return (A @ x.unsqueeze(-1)).squeeze(-1) - b

    def lagrangian_grad_x(self, x: torch.Tensor, lam: torch.Tensor,
                          create_graph: bool = False) -> torch.Tensor:
        """Px + q + A'lam, closed form."""
        lam = check_multipliers(lam, self.n_cons)
        x = self._check_x(x)
        P = self._align(self.P, x)
        q = self._align(self.q, x)
        At = self._align(self.A.transpose(-1, -2), x)
        return (P @ x.unsqueeze(-1)).squeeze(-1) + q + (At @ lam.unsqueeze(-1)).squeeze(-1)

    # -- batching ---------------------------------------------------------

    @classmethod
    def stack(cls, problems: list["QpProblem"]) -> "QpProblem":
        return cls(
            P=torch.stack([p.P for p in problems]),
            q=torch.stack([p.q for p in problems]),
            A=torch.stack([p.A for p in problems]),
            b=torch.stack([p.b for p in problems]),
            binary_idx=torch.stack([p.binary_idx for p in problems]),
            m_lin=problems[0].m_lin,
        )

    def __getitem__(self, i) -> "QpProblem":
        if not self.batch_shape:
            raise IndexError("not a batched problem")
        return QpProblem(self.P[i], self.q[i], self.A[i], self.b[i],
                         self.binary_idx[i], self.m_lin)

    def __len__(self) -> int:
        return self.batch_shape[0] if self.batch_shape else 1

    def repeat_interleave(self, times: int) -> "QpProblem":
        """[B] -> [B*times] with each instance repeated `times` consecutively."""
        out = QpProblem(self.P.repeat_interleave(times, 0), self.q.repeat_interleave(times, 0),
                        self.A.repeat_interleave(times, 0), self.b.repeat_interleave(times, 0),
                        self.binary_idx.repeat_interleave(times, 0), self.m_lin)
        if "gso" in self.__dict__:
            out.__dict__["gso"] = self.__dict__["gso"].repeat_interleave(times, 0)
        if "gso_scale" in self.__dict__:
            out.__dict__["gso_scale"] = self.__dict__["gso_scale"].repeat_interleave(times, 0)
        return out

    # -- graph structure ---------------------------------------------------

    @cached_property
    def gso(self) -> torch.Tensor:
        """Bipartite shift operator [[P, A'], [A, 0]]; variable nodes first."""
        return build_gso(self)

    @cached_property
    def gso_scale(self) -> torch.Tensor:
        s = torch.linalg.matrix_norm(self.gso, ord=2)
        return torch.where(s > 0, s, torch.ones_like(s))


def build_gso(qp: QpProblem) -> torch.Tensor:
    n, c = qp.n_vars, qp.n_cons
    batch = qp.batch_shape
    S = torch.zeros(*batch, n + c, n + c, dtype=DTYPE)
    S[..., :n, :n] = qp.P
    S[..., :n, n:] = qp.A.transpose(-1, -2)
    S[..., n:, :n] = qp.A
    return S


def relax(inst: MiqpInstance) -> QpProblem:
    """Box-relax the binary variables of `inst` into a convex QP."""
    M = selection_matrix(inst.binary_idx, inst.n)
    ones = torch.ones(inst.r, dtype=DTYPE)
    A = torch.cat([inst.A_bar, M, -M], dim=0)
    b = torch.cat([inst.b_bar, ones, ones], dim=0)
    return QpProblem(inst.P, inst.q, A, b, inst.binary_idx, inst.m)


def analytic_minimizer(lam: torch.Tensor, qp: QpProblem,
                       cond_limit: float = 1e12) -> torch.Tensor:
    """Unconstrained Lagrangian minimizer x = -P^{-1}(q + A'lam)."""
    lam = check_multipliers(lam, qp.n_cons)
    cond = torch.linalg.cond(qp.P)
    if (cond > cond_limit).any():
        raise OracleError("P numerically singular", {"condition": float(cond.max())})
    nb = len(qp.batch_shape)
    extra = lam.ndim - 1 - nb
    At = qp.A.transpose(-1, -2).reshape(*qp.batch_shape, *([1] * extra), qp.n_vars, qp.n_cons)
    q = qp.q.reshape(*qp.batch_shape, *([1] * extra), qp.n_vars)
    P = qp.P.reshape(*qp.batch_shape, *([1] * extra), qp.n_vars, qp.n_vars)
    rhs = q + (At @ lam.unsqueeze(-1)).squeeze(-1)
    return -torch.linalg.solve(P, rhs.unsqueeze(-1)).squeeze(-1)


def generate_instance(n: int, m: int, r: int, seed: int) -> MiqpInstance:
    """Draw one MIQP realization.

    A_bar and q are standard normal; A_bar is scaled by its spectral norm;
    P = G'G/n + 0.1 I with G standard normal; b_bar = A_bar x0 + eps with
    x0 a clipped standard normal in [-1, 1] and eps ~ Unif[0, 1]^m, which
    leaves x0 strictly feasible for the linear rows and feasible for the box.
    """
    if n < 1:
        raise ContractViolationError("n must be >= 1")
    if m < 0 or r < 0:
        raise ContractViolationError("m and r must be nonnegative")
    if r > n:
        raise ContractViolationError(f"r={r} exceeds n={n}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    P = G.T @ G / n + 0.1 * np.eye(n)
    q = rng.standard_normal(n)
    A_bar = rng.standard_normal((m, n))
    if m > 0:
        A_bar = A_bar / np.linalg.norm(A_bar, ord=2)
    x0 = np.clip(rng.standard_normal(n), -1.0, 1.0)
    eps = rng.uniform(0.0, 1.0, size=m)
    b_bar = A_bar @ x0 + eps
    binary_idx = np.sort(rng.choice(n, size=r, replace=False))
    return MiqpInstance(P, q, A_bar, b_bar, binary_idx)


def generate_batch(n: int, m: int, r: int, count: int, seed: int) -> QpProblem:
    """Generate `count` relaxed instances with per-instance child seeds."""
    root = np.random.default_rng(seed)
    seeds = root.integers(0, 2**63 - 1, size=count)
    problems = [relax(generate_instance(n, m, r, int(s))) for s in seeds]
    if not problems:
        return QpProblem(
            P=torch.zeros(0, n, n), q=torch.zeros(0, n),
            A=torch.zeros(0, m + 2 * r, n), b=torch.zeros(0, m + 2 * r),
            binary_idx=torch.zeros(0, r, dtype=torch.long), m_lin=m)
    return QpProblem.stack(problems)


# -- dataset files --------------------------------------------------------

def save_dataset(path, qp: QpProblem, seed: int, extra_meta: dict | None = None) -> dict:
    """Write a stacked QP batch as data.npz + manifest.json in `path`."""
    count = len(qp) if qp.batch_shape else 0
    n = qp.n_vars
    r = qp.binary_idx.shape[-1]
    arrays = {
        "P": qp.P.numpy(), "q": qp.q.numpy(),
        "A": qp.A.numpy(), "b": qp.b.numpy(),
        "I": qp.binary_idx.numpy(),
    }
    save_arrays(f"{path}/data.npz", arrays)
    manifest = {
        "family": "miqp", "generator_version": GENERATOR_VERSION,
        "seed": int(seed), "count": count,
        "n": n, "m": int(qp.m_lin), "r": int(r),
    }
    manifest.update(extra_meta or {})
    write_json(f"{path}/manifest.json", manifest)
    return manifest


def load_dataset(path) -> tuple[QpProblem, dict]:
    arrays = load_arrays(f"{path}/data.npz")
    manifest = read_json(f"{path}/manifest.json")
    qp = QpProblem(arrays["P"], arrays["q"], arrays["A"], arrays["b"],
                   torch.as_tensor(arrays["I"], dtype=torch.long), int(manifest["m"]))
    return qp, manifest
