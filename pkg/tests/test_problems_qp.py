"""MIQP generation, relaxation, analytic minimizer, GSO, and the QP oracle."""

import numpy as np
import pytest
import torch

from dualunroll.arrays import file_sha256
from dualunroll.errors import ContractViolationError, OracleError
from dualunroll.problems import (QpProblem, analytic_minimizer, build_gso,
                                 generate_instance, relax)
from dualunroll.problems.qp import generate_batch, load_dataset, save_dataset
from dualunroll.problems.qp_oracle import kkt_report, reference_solve


def test_generate_paper_shape():
    inst = generate_instance(80, 45, 10, seed=0)
    assert (inst.n, inst.m, inst.r) == (80, 45, 10)
    qp = relax(inst)
    assert qp.n_cons == 45 + 20
    # the construction point is strictly feasible for the linear rows
    assert qp.constraints(torch.zeros(80)).shape == (65,)


def test_generate_no_constraints_edge():
    inst = generate_instance(2, 0, 0, seed=1)
    qp = relax(inst)
    assert qp.n_cons == 0
    assert qp.objective(torch.zeros(2)).item() == 0.0


def test_generate_rejects_r_gt_n():
    with pytest.raises(ContractViolationError):
        generate_instance(3, 2, 4, seed=0)


def test_generated_p_positive_definite_100_seeds():
    for seed in range(100):
        inst = generate_instance(6, 3, 2, seed=seed)
        eigmin = torch.linalg.eigvalsh(inst.P)[0].item()
        assert eigmin > 0


def test_generate_deterministic():
    a = generate_instance(5, 3, 2, seed=42)
    b = generate_instance(5, 3, 2, seed=42)
    assert torch.equal(a.P, b.P) and torch.equal(a.q, b.q)
    assert torch.equal(a.A_bar, b.A_bar) and torch.equal(a.b_bar, b.b_bar)
    assert torch.equal(a.binary_idx, b.binary_idx)


def test_generated_relaxation_strictly_feasible():
    for seed in range(20):
        qp = relax(generate_instance(10, 6, 3, seed=seed))
        x_feas = torch.zeros(10)  # origin is inside the box rows
        assert (qp.constraints(x_feas)[qp.m_lin:] < 0).all()


def test_relax_r_zero_keeps_rows():
    inst = generate_instance(4, 3, 0, seed=2)
    qp = relax(inst)
    assert torch.equal(qp.A, inst.A_bar)
    assert torch.equal(qp.b, inst.b_bar)


def test_relax_stacks_selection_rows():
    inst_P = torch.eye(2, dtype=torch.float64)
    inst = generate_instance(2, 1, 0, seed=0)
    from dualunroll.problems.qp import MiqpInstance
    mi = MiqpInstance(inst_P, torch.zeros(2), inst.A_bar, inst.b_bar,
                      torch.tensor([1]))  # second variable is binary
    qp = relax(mi)
    assert qp.A.shape == (3, 2)
    assert torch.equal(qp.A[1], torch.tensor([0.0, 1.0], dtype=torch.float64))
    assert torch.equal(qp.A[2], torch.tensor([0.0, -1.0], dtype=torch.float64))
    assert torch.equal(qp.b[1:], torch.ones(2, dtype=torch.float64))


def test_relaxed_constraints_componentwise():
    # constraints at any x equal [A_bar x - b_bar; Mx - 1; -Mx - 1]
    inst = generate_instance(6, 4, 2, seed=9)
    qp = relax(inst)
    rng = np.random.default_rng(0)
    M = np.zeros((2, 6))
    M[np.arange(2), inst.binary_idx.numpy()] = 1.0
    for _ in range(10):
        x = rng.standard_normal(6)
        f = qp.constraints(torch.as_tensor(x)).numpy()
        want = np.concatenate([inst.A_bar.numpy() @ x - inst.b_bar.numpy(),
                               M @ x - 1.0, -M @ x - 1.0])
        np.testing.assert_allclose(f, want, atol=1e-13)


def test_box_feasible_point_satisfies_relaxation():
    inst = generate_instance(5, 3, 2, seed=4)
    qp = relax(inst)
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.uniform(-1, 1, 5)
        if (inst.A_bar.numpy() @ x <= inst.b_bar.numpy()).all():
            assert (qp.constraints(torch.as_tensor(x)) <= 1e-12).all()


def test_analytic_minimizer_hand_values():
    qp = QpProblem(torch.eye(3, dtype=torch.float64), torch.zeros(3),
                   torch.zeros(0, 3), torch.zeros(0))
    x = analytic_minimizer(torch.zeros(0), qp)
    assert torch.equal(x, torch.zeros(3, dtype=torch.float64))

    qp2 = QpProblem(2 * torch.eye(3, dtype=torch.float64), torch.ones(3),
                    torch.zeros(0, 3), torch.zeros(0))
    x2 = analytic_minimizer(torch.zeros(0), qp2)
    np.testing.assert_allclose(x2.numpy(), -0.5 * np.ones(3), atol=1e-14)


def test_analytic_minimizer_stationarity_random():
    rng = np.random.default_rng(3)
    for seed in range(10):
        qp = relax(generate_instance(8, 5, 2, seed=seed))
        for _ in range(10):
            lam = torch.as_tensor(rng.uniform(0, 3, qp.n_cons))
            x = analytic_minimizer(lam, qp)
            resid = qp.lagrangian_grad_x(x, lam).norm().item()
            assert resid <= 1e-8 * (1 + qp.q.norm().item())


def test_analytic_minimizer_inner_optimality():
    # L(x*(lam), lam) <= L(x, lam) for random x
    qp = relax(generate_instance(6, 4, 2, seed=13))
    rng = np.random.default_rng(4)
    lam = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
    x_star = analytic_minimizer(lam, qp)
    best = qp.lagrangian(x_star, lam).item()
    for _ in range(100):
        x = torch.as_tensor(rng.standard_normal(6))
        assert best <= qp.lagrangian(x, lam).item() + 1e-12


def test_analytic_minimizer_singular_p_errors():
    qp = QpProblem(torch.diag(torch.tensor([1.0, 1e-15], dtype=torch.float64)),
                   torch.zeros(2), torch.zeros(0, 2), torch.zeros(0))
    with pytest.raises(OracleError):
        analytic_minimizer(torch.zeros(0), qp)


def test_dual_function_concavity_probe():
    qp = relax(generate_instance(6, 4, 2, seed=17))
    rng = np.random.default_rng(5)

    def g(lam):
        x = analytic_minimizer(lam, qp)
        return qp.lagrangian(x, lam).item()

    for _ in range(20):
        l1 = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
        l2 = torch.as_tensor(rng.uniform(0, 2, qp.n_cons))
        a = rng.uniform()
        assert g(a * l1 + (1 - a) * l2) >= a * g(l1) + (1 - a) * g(l2) - 1e-8


def test_reference_solve_hand_kkt_inactive():
    # min x^2 + x  s.t. x <= 1  ->  x* = -0.5, lam* = 0, P* = -0.25
    qp = QpProblem(torch.tensor([[2.0]], dtype=torch.float64), torch.tensor([1.0]),
                   torch.tensor([[1.0]], dtype=torch.float64), torch.tensor([1.0]))
    x, lam, val = reference_solve(qp)
    assert abs(x.item() + 0.5) <= 1e-10
    assert abs(lam.item()) <= 1e-10
    assert abs(val + 0.25) <= 1e-10


def test_reference_solve_hand_kkt_active():
    # min x^2  s.t. -x <= -1  ->  x* = 1, lam* = 2, P* = 1
    qp = QpProblem(torch.tensor([[2.0]], dtype=torch.float64), torch.tensor([0.0]),
                   torch.tensor([[-1.0]], dtype=torch.float64), torch.tensor([-1.0]))
    x, lam, val = reference_solve(qp)
    assert abs(x.item() - 1.0) <= 1e-10
    assert abs(lam.item() - 2.0) <= 1e-10
    assert abs(val - 1.0) <= 1e-10


def test_reference_solve_kkt_residuals_random():
    for seed in range(10):
        qp = relax(generate_instance(12, 7, 3, seed=seed))
        x, lam, _ = reference_solve(qp)
        res = kkt_report(qp, x, lam)
        assert res.stationarity <= 1e-6
        assert res.violation_max <= 1e-6
        assert res.comp_slack <= 1e-6
        assert (lam >= 0).all()


def test_reference_solve_dominates_dual_function():
    # weak duality: P* >= g(lam) for sampled lam >= 0
    qp = relax(generate_instance(7, 4, 2, seed=23))
    _, _, p_star = reference_solve(qp)
    rng = np.random.default_rng(6)
    for _ in range(30):
        lam = torch.as_tensor(rng.uniform(0, 3, qp.n_cons))
        g = qp.lagrangian(analytic_minimizer(lam, qp), lam).item()
        assert p_star >= g - 1e-8


def test_build_gso_blocks():
    qp = relax(generate_instance(5, 3, 2, seed=8))
    S = build_gso(qp)
    n, c = qp.n_vars, qp.n_cons
    assert S.shape == (n + c, n + c)
    assert torch.equal(S[:n, :n], qp.P)
    assert torch.equal(S[n:, :n], qp.A)
    assert (S - S.T).abs().max().item() <= 1e-12


def test_build_gso_zero_constraint_block():
    qp = QpProblem(torch.tensor([[3.0]], dtype=torch.float64), torch.zeros(1),
                   torch.zeros(1, 1, dtype=torch.float64), torch.zeros(1))
    S = build_gso(qp)
    assert torch.equal(S, torch.tensor([[3.0, 0.0], [0.0, 0.0]], dtype=torch.float64))


def test_dataset_roundtrip_bit_exact(tmp_path):
    batch = generate_batch(5, 3, 2, count=4, seed=99)
    save_dataset(tmp_path / "d1", batch, seed=99)
    save_dataset(tmp_path / "d2", batch, seed=99)
    assert file_sha256(tmp_path / "d1/data.npz") == file_sha256(tmp_path / "d2/data.npz")
    loaded, manifest = load_dataset(tmp_path / "d1")
    assert torch.equal(loaded.P, batch.P) and torch.equal(loaded.q, batch.q)
    assert torch.equal(loaded.A, batch.A) and torch.equal(loaded.b, batch.b)
    assert torch.equal(loaded.binary_idx, batch.binary_idx)
    assert manifest["count"] == 4 and manifest["m"] == 3
