"""Common language of constrained minimization problems.

Every family exposes the same surface: a scalar objective f0(x; z), a
constraint vector f(x; z) with the convention "feasible iff f <= 0", the
Lagrangian f0 + lam . f, and feasibility metrics built on them. Primal
points and multipliers are plain float64 torch tensors; multipliers must be
elementwise nonnegative wherever a Lagrangian is formed.

Instances are immutable after construction and all operations are pure, so
they are safe to share across concurrent evaluation workers. An instance may
carry a leading batch dimension (see `batch_shape`); evaluation inputs use
the layout ``[*batch_shape, *extra, n]`` where `extra` are free sampling
dimensions (e.g. multiple multipliers per problem).
"""

from __future__ import annotations

import abc

import torch

from ..errors import ContractViolationError, DimensionMismatchError

DTYPE = torch.float64


def as_tensor(value, name: str = "value") -> torch.Tensor:
    t = torch.as_tensor(value, dtype=DTYPE)
    if not torch.isfinite(t).all():
        raise ContractViolationError(f"{name} contains non-finite entries")
    return t


def check_multipliers(lam: torch.Tensor, n_cons: int, name: str = "multipliers") -> torch.Tensor:
    lam = torch.as_tensor(lam, dtype=DTYPE)
    if lam.shape[-1] != n_cons:
        raise DimensionMismatchError(name, "constraints", n_cons, lam.shape[-1])
    if (lam < 0).any():
        raise ContractViolationError(f"{name} must be elementwise nonnegative")
    return lam


class ConstrainedProblem(abc.ABC):
    """One problem realization (or a stacked batch of same-shaped ones)."""

    family: str

    @property
    @abc.abstractmethod
    def n_vars(self) -> int: ...

    @property
    @abc.abstractmethod
    def n_cons(self) -> int: ...

    @property
    @abc.abstractmethod
    def batch_shape(self) -> tuple: ...

    @abc.abstractmethod
    def objective(self, x: torch.Tensor) -> torch.Tensor:
        """f0(x; z); shape [*batch, *extra]."""

    @abc.abstractmethod
    def constraints(self, x: torch.Tensor) -> torch.Tensor:
        """f(x; z); shape [*batch, *extra, n_cons]; feasible iff <= 0."""

    def lagrangian(self, x: torch.Tensor, lam: torch.Tensor) -> torch.Tensor:
        lam = check_multipliers(lam, self.n_cons)
        return self.objective(x) + (lam * self.constraints(x)).sum(-1)

    def lagrangian_grad_x(self, x: torch.Tensor, lam: torch.Tensor,
                          create_graph: bool = False) -> torch.Tensor:
        """Gradient of the Lagrangian in the primal variable.

        Default implementation differentiates through `lagrangian`; families
        with closed-form gradients override it.
        """
        lam = check_multipliers(lam, self.n_cons)
        detached = not x.requires_grad
        if detached:
            x = x.detach().requires_grad_(True)
        with torch.enable_grad():
            val = self.lagrangian(x, lam).sum()
            (grad,) = torch.autograd.grad(val, x, create_graph=create_graph and not detached)
        return grad.detach() if detached else grad

    def violation(self, x: torch.Tensor) -> torch.Tensor:
        """Elementwise max{0, f_i(x)}; shape [*batch, *extra, n_cons]."""
        return self.constraints(x).clamp_min(0.0)

    def violation_mean(self, x: torch.Tensor) -> torch.Tensor:
        return self.violation(x).mean(-1)

    def violation_max(self, x: torch.Tensor) -> torch.Tensor:
        return self.violation(x).amax(-1)

    def complementary_slackness(self, lam: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """lam . max{0, f(x)} >= 0; zero at any feasible point."""
        lam = check_multipliers(lam, self.n_cons)
        return (lam * self.violation(x)).sum(-1)

    def is_feasible(self, x: torch.Tensor, tol: float = 0.0) -> torch.Tensor:
        return (self.constraints(x) <= tol).all(-1)

    # -- helpers for batched payloads ------------------------------------

    def _check_x(self, x) -> torch.Tensor:
        x = torch.as_tensor(x, dtype=DTYPE)
        if x.shape[-1] != self.n_vars:
            raise DimensionMismatchError("primal point", "variables", self.n_vars, x.shape[-1])
        nb = len(self.batch_shape)
        if nb and tuple(x.shape[:nb]) != tuple(self.batch_shape):
            raise DimensionMismatchError(
                "primal point", "instance batch", tuple(self.batch_shape), tuple(x.shape[:nb]))
        return x

    def _align(self, payload: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        """View `payload` [*batch, *core] so it broadcasts against x's extra dims."""
        nb = len(self.batch_shape)
        extra = x.ndim - 1 - nb
        if extra < 0:
            raise DimensionMismatchError("primal point", "rank", f">= {nb + 1}", x.ndim)
        core = payload.shape[nb:]
        return payload.reshape(*payload.shape[:nb], *([1] * extra), *core)
