"""Shared constrained-problem surface: objective, constraints, Lagrangian,
feasibility metrics, and their invariants."""

import numpy as np
import pytest
import torch

from dualunroll.errors import ContractViolationError, DimensionMismatchError
from dualunroll.problems import QpProblem, analytic_minimizer, generate_instance, relax
from dualunroll.problems.qp_oracle import reference_solve


def tiny_qp(n=2, P=None, q=None, A=None, b=None):
    P = torch.eye(n, dtype=torch.float64) if P is None else torch.as_tensor(P, dtype=torch.float64)
    q = torch.zeros(n, dtype=torch.float64) if q is None else torch.as_tensor(q, dtype=torch.float64)
    A = torch.eye(n, dtype=torch.float64) if A is None else torch.as_tensor(A, dtype=torch.float64)
    b = torch.ones(A.shape[0], dtype=torch.float64) if b is None else torch.as_tensor(b, dtype=torch.float64)
    return QpProblem(P, q, A, b)


def test_objective_zero_point():
    qp = tiny_qp(n=3)
    assert qp.objective(torch.zeros(3)).item() == 0.0


def test_objective_hand_value():
    # 0.5 x'Px + q'x with P = 2I, q = 1, x = 1, n = 2  ->  2 + 2 = 4
    qp = tiny_qp(n=2, P=2 * torch.eye(2), q=torch.ones(2))
    assert qp.objective(torch.ones(2)).item() == pytest.approx(4.0, abs=1e-14)


def test_constraints_signs():
    qp = tiny_qp(n=3)  # A = I, b = 1
    assert torch.equal(qp.constraints(torch.zeros(3)), -torch.ones(3, dtype=torch.float64))
    qp0 = tiny_qp(n=3, b=torch.zeros(3))
    assert torch.equal(qp0.constraints(torch.ones(3)), torch.ones(3, dtype=torch.float64))


def test_lagrangian_hand_value():
    # n=1: P=[2], q=[0], A=[1], b=[1], x=1, lam=3 -> 1 + 3*0 = 1
    qp = tiny_qp(n=1, P=[[2.0]], q=[0.0], A=[[1.0]], b=[1.0])
    val = qp.lagrangian(torch.tensor([1.0]), torch.tensor([3.0]))
    assert val.item() == pytest.approx(1.0, abs=1e-14)


def test_lagrangian_zero_multiplier_is_objective():
    rng = np.random.default_rng(0)
    qp = relax(generate_instance(6, 4, 2, seed=3))
    for _ in range(20):
        x = torch.as_tensor(rng.standard_normal(6))
        lam0 = torch.zeros(qp.n_cons, dtype=torch.float64)
        assert qp.lagrangian(x, lam0).item() == qp.objective(x).item()


def test_lagrangian_affine_in_multiplier():
    rng = np.random.default_rng(1)
    qp = relax(generate_instance(5, 3, 1, seed=7))
    for _ in range(20):
        x = torch.as_tensor(rng.standard_normal(5))
        l1 = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
        l2 = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
        a = rng.uniform()
        lhs = qp.lagrangian(x, a * l1 + (1 - a) * l2)
        rhs = a * qp.lagrangian(x, l1) + (1 - a) * qp.lagrangian(x, l2)
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_lagrangian_rejects_negative_multiplier():
    qp = tiny_qp()
    with pytest.raises(ContractViolationError):
        qp.lagrangian(torch.zeros(2), torch.tensor([-0.1, 0.0]))


def test_gradient_vanishes_at_analytic_minimizer():
    qp = relax(generate_instance(8, 5, 2, seed=11))
    lam = torch.rand(qp.n_cons, dtype=torch.float64)
    x = analytic_minimizer(lam, qp)
    assert qp.lagrangian_grad_x(x, lam).norm().item() <= 1e-8


def test_violation_definition():
    qp = tiny_qp(n=2, A=torch.eye(2), b=torch.zeros(2))  # f = x
    v = qp.violation(torch.tensor([-1.0, 2.0]))
    assert torch.equal(v, torch.tensor([0.0, 2.0], dtype=torch.float64))
    # feasible point -> zero vector
    assert qp.violation(torch.tensor([-0.5, -0.1])).abs().max().item() == 0.0


def test_violation_matches_brute_reimplementation():
    qp = relax(generate_instance(7, 4, 2, seed=5))
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.standard_normal(7)
        f = qp.A.numpy() @ x - qp.b.numpy()
        brute = np.maximum(0.0, f)
        got = qp.violation(torch.as_tensor(x)).numpy()
        np.testing.assert_allclose(got, brute, atol=1e-14)
        assert (got >= 0).all()


def test_complementary_slackness_values():
    qp = tiny_qp(n=2, A=torch.eye(2), b=torch.zeros(2))  # f(x) = x
    x = torch.tensor([0.5, -1.0])
    assert qp.complementary_slackness(torch.zeros(2), x).item() == 0.0
    got = qp.complementary_slackness(torch.tensor([1.0, 2.0]), x)
    assert got.item() == pytest.approx(0.5, abs=1e-14)
    # feasible point, any multiplier -> 0
    feas = torch.tensor([-0.3, -0.7])
    assert qp.complementary_slackness(torch.tensor([4.0, 5.0]), feas).item() == 0.0


def test_comp_slack_zero_iff_feasible_or_orthogonal():
    qp = relax(generate_instance(6, 4, 2, seed=21))
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = torch.as_tensor(rng.standard_normal(6))
        lam = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
        if rng.uniform() < 0.5:  # force orthogonality on the violated set
            lam = lam * (qp.constraints(x) <= 0)
        cs = qp.complementary_slackness(lam, x).item()
        viol = qp.violation(x)
        assert cs >= 0
        orthogonal = float((lam * viol).sum()) == 0.0
        feasible = bool((viol == 0).all())
        assert (cs == 0.0) == (feasible or orthogonal)


def test_weak_duality_against_reference():
    for seed in range(5):
        qp = relax(generate_instance(6, 3, 2, seed=seed))
        _, _, p_star = reference_solve(qp)
        rng = np.random.default_rng(seed)
        for _ in range(10):
            lam = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
            x = analytic_minimizer(lam, qp)
            assert qp.lagrangian(x, lam).item() <= p_star + 1e-6


def test_dimension_errors_name_axis():
    qp = tiny_qp(n=3)
    with pytest.raises(DimensionMismatchError) as err:
        qp.objective(torch.zeros(4))
    assert "variables" in str(err.value)
    with pytest.raises(DimensionMismatchError):
        qp.lagrangian(torch.zeros(3), torch.zeros(5))


def test_batched_evaluation_matches_loop():
    problems = [relax(generate_instance(5, 3, 1, seed=s)) for s in range(4)]
    batch = QpProblem.stack(problems)
    x = torch.randn(4, 2, 5, dtype=torch.float64)  # 2 samples per instance
    lam = torch.rand(4, 2, batch.n_cons, dtype=torch.float64)
    got = batch.lagrangian(x, lam)
    for i, prob in enumerate(problems):
        for j in range(2):
            want = prob.lagrangian(x[i, j], lam[i, j])
            assert got[i, j].item() == pytest.approx(want.item(), abs=1e-12)
