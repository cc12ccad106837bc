"""Reference solver for the relaxed convex QP family.

Solves min 0.5 x'Px + q'x s.t. Ax <= b (P positive definite) through its
dual, a nonnegatively constrained concave quadratic in lam:

    maximize  -0.5 lam' G lam - h' lam,   G = A P^{-1} A',  h = A P^{-1} q + b.

Accelerated projected gradient with adaptive restart drives lam close to the
optimum; a primal-dual active-set polish then solves the equality KKT system
on the identified active rows, which certifies the solution to near machine
precision. Pure numpy/scipy; no external solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import OracleError
from .base import DTYPE
from .qp import QpProblem


@dataclass
class KktResiduals:
    stationarity: float
    violation_max: float
    comp_slack: float

    def within(self, tol: float) -> bool:
        return max(self.stationarity, self.violation_max, self.comp_slack) <= tol

    def as_dict(self) -> dict:
        return {"stationarity": self.stationarity,
                "violation_max": self.violation_max,
                "comp_slack": self.comp_slack}


def _kkt_residuals(P, q, A, b, x, lam) -> KktResiduals:
    stat = np.linalg.norm(P @ x + q + A.T @ lam)
    slack = A @ x - b
    viol = float(np.maximum(slack, 0.0).max(initial=0.0))
    comp = float(abs(lam @ slack)) if lam.size else 0.0
    return KktResiduals(float(stat), viol, comp)


def _polish(P, q, A, b, lam, active, rounds: int = 40):
    """Primal-dual active-set iterations from an initial active guess."""
    c = A.shape[0]
    seen = set()
    for _ in range(rounds):
        key = active.tobytes()
        if key in seen:
            break
        seen.add(key)
        idx = np.flatnonzero(active)
        if idx.size == 0:
            x = np.linalg.solve(P, -q)
            lam = np.zeros(c)
        else:
            Aw, bw = A[idx], b[idx]
            n = P.shape[0]
            kkt = np.block([[P, Aw.T], [Aw, np.zeros((idx.size, idx.size))]])
            rhs = np.concatenate([-q, bw])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            x = sol[:n]
            lam = np.zeros(c)
            lam[idx] = sol[n:]
        # next active guess from the complementarity condition
        slack = A @ x - b
        new_active = (lam + slack) > 0
        if np.array_equal(new_active, active):
            return x, np.maximum(lam, 0.0)
        active = new_active
    return x, np.maximum(lam, 0.0)


def reference_solve(qp: QpProblem, tol: float = 1e-8, max_iter: int = 200_000,
                    polish_every: int = 250) -> tuple[torch.Tensor, torch.Tensor, float]:
    """Solve one relaxed QP to KKT residuals <= tol.

    Returns (x_star, lam_star, primal_value). Raises OracleError with the
    achieved residuals if the budget is exhausted.
    """
    if qp.batch_shape:
        raise ValueError("reference_solve expects a single instance; index the batch first")
    P = qp.P.numpy()
    q = qp.q.numpy()
    A = qp.A.numpy()
    b = qp.b.numpy()
    n, c = P.shape[0], A.shape[0]

    cond = np.linalg.cond(P)
    if cond > 1e12:
        raise OracleError("P numerically singular", {"condition": cond})

    if c == 0:
        x = np.linalg.solve(P, -q)
        lam = np.zeros(0)
        val = 0.5 * x @ P @ x + q @ x
        return (torch.as_tensor(x, dtype=DTYPE), torch.as_tensor(lam, dtype=DTYPE), float(val))

    Pinv_At = np.linalg.solve(P, A.T)
    G = A @ Pinv_At
    h = Pinv_At.T @ q + b
    lip = float(np.linalg.eigvalsh(G)[-1])
    step = 1.0 / max(lip, 1e-12)

    def dual_grad(lam):
        return G @ lam + h  # gradient of the negated (minimized) dual

    def primal_from(lam):
        return -np.linalg.solve(P, q + A.T @ lam)

    lam = np.zeros(c)
    y = lam.copy()
    t = 1.0
    best = None
    for it in range(1, max_iter + 1):
        lam_next = np.maximum(y - step * dual_grad(y), 0.0)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        momentum = (t - 1.0) / t_next
        if (lam_next - lam) @ (lam_next - y) > 0:  # adaptive restart
            t_next, momentum = 1.0, 0.0
        y = lam_next + momentum * (lam_next - lam)
        lam, t = lam_next, t_next

        if it % polish_every == 0 or it == max_iter:
            x_cand = primal_from(lam)
            active = (lam + (A @ x_cand - b)) > 0
            x_pol, lam_pol = _polish(P, q, A, b, lam.copy(), active)
            res = _kkt_residuals(P, q, A, b, x_pol, lam_pol)
            if best is None or res.stationarity + res.violation_max < best[2].stationarity + best[2].violation_max:
                best = (x_pol, lam_pol, res)
            if res.within(tol):
                val = 0.5 * x_pol @ P @ x_pol + q @ x_pol
                return (torch.as_tensor(x_pol, dtype=DTYPE),
                        torch.as_tensor(lam_pol, dtype=DTYPE), float(val))

    raise OracleError("reference_solve did not converge", best[2].as_dict() if best else {})


def kkt_report(qp: QpProblem, x: torch.Tensor, lam: torch.Tensor) -> KktResiduals:
    """Residuals of a candidate primal-dual pair for a single instance."""
    return _kkt_residuals(qp.P.numpy(), qp.q.numpy(), qp.A.numpy(), qp.b.numpy(),
                          np.asarray(x, dtype=float), np.asarray(lam, dtype=float))
