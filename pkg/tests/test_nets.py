"""Unrolled network structure: graph blocks, heads, coupling, noise, and
equivariance/determinism invariants."""

import numpy as np
import pytest
import torch

from dualunroll.nets import (ArchSpec, GraphBlock, build_nets, dual_forward,
                             load_checkpoint, primal_forward, recover_solution,
                             save_checkpoint)
from dualunroll.problems import QpProblem, generate_instance, relax
from dualunroll.problems.power import GeometryConfig, PowerProblem, generate_network


def miqp_setup(n=6, m=4, r=2, seed=0, **spec_kw):
    spec = ArchSpec(family="miqp", primal_layers=3, dual_layers=3,
                    primal_sublayers=2, dual_sublayers=2, features=8, **spec_kw)
    primal, dual = build_nets(spec, torch.Generator().manual_seed(7))
    qp = relax(generate_instance(n, m, r, seed=seed))
    return spec, primal, dual, qp


def power_setup(n=6, seed=0, **spec_kw):
    spec = ArchSpec(family="power", primal_layers=3, dual_layers=3,
                    primal_sublayers=2, dual_sublayers=2, features=8, **spec_kw)
    primal, dual = build_nets(spec, torch.Generator().manual_seed(9))
    net = generate_network(n, 0.5, seed=seed, geometry=GeometryConfig(area_side=500))
    return spec, primal, dual, net


def test_graph_block_identity_filter():
    block = GraphBlock([3, 3, 3], n_hops=1, activation="identity")
    block.set_identity()
    X = torch.randn(5, 3, dtype=torch.float64)
    S = torch.randn(5, 5, dtype=torch.float64)
    assert torch.equal(block(X, S), X)


def test_graph_block_zero_shift_is_pointwise():
    # with S = 0 only the zero-hop tap acts: a per-node MLP
    gen = torch.Generator().manual_seed(0)
    block = GraphBlock([2, 4, 4], n_hops=1, activation="tanh", generator=gen)
    X = torch.randn(6, 2, dtype=torch.float64)
    S = torch.zeros(6, 6, dtype=torch.float64)
    out = block(X, S)
    # node rows are processed independently: permuting rows permutes outputs
    perm = torch.randperm(6)
    out_perm = block(X[perm], S)
    assert torch.allclose(out_perm, out[perm], atol=0, rtol=0)


def test_graph_block_permutation_equivariance():
    gen = torch.Generator().manual_seed(1)
    block = GraphBlock([2, 8, 8], n_hops=2, activation="tanh", generator=gen)
    X = torch.randn(7, 2, dtype=torch.float64)
    S = torch.randn(7, 7, dtype=torch.float64)
    S = 0.5 * (S + S.T)
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(3))
    want = block(X, S)[perm]
    got = block(X[perm], S[perm][:, perm])
    assert (got - want).abs().max().item() <= 1e-6


def test_primal_zero_heads_identity():
    _, primal, _, qp = miqp_setup()
    primal.zero_heads()
    lam = torch.rand(qp.n_cons, dtype=torch.float64)
    x0 = torch.randn(qp.n_vars, dtype=torch.float64)
    traj = primal_forward(lam, qp, primal, "eval", x0=x0)
    assert torch.equal(traj.final, x0)
    assert len(traj.iterates) == 4


def test_dual_zero_heads_identity():
    _, primal, dual, qp = miqp_setup()
    dual.zero_heads()
    lam0 = torch.rand(qp.n_cons, dtype=torch.float64)
    traj = dual_forward(qp, dual, primal, "eval", torch.Generator().manual_seed(2), lam0=lam0)
    assert torch.equal(traj.final_multiplier, lam0)


def test_dual_multipliers_nonnegative_everywhere():
    for setup in (miqp_setup, power_setup):
        _, primal, dual, prob = setup()
        for seed in range(5):
            traj = dual_forward(prob, dual, primal, "train",
                                torch.Generator().manual_seed(seed))
            for lam in traj.multipliers:
                assert (lam >= 0).all()


def test_power_box_satisfied_at_every_layer():
    _, primal, dual, net = power_setup()
    for mode in ("train", "eval"):
        traj = dual_forward(net, dual, primal, mode, torch.Generator().manual_seed(11))
        for x in traj.primals:
            assert (x >= 0).all() and (x <= net.p_max).all()
        lam = torch.rand(net.n_cons, dtype=torch.float64)
        ptraj = primal_forward(lam, net, primal, mode, torch.Generator().manual_seed(5))
        for x in ptraj.iterates:
            assert (x >= 0).all() and (x <= net.p_max).all()


def test_power_multipliers_masked_off_constrained_set():
    _, primal, dual, net = power_setup()
    traj = dual_forward(net, dual, primal, "train", torch.Generator().manual_seed(3))
    off = ~net.constrained
    for lam in traj.multipliers:
        assert (lam[off] == 0).all()


def test_dual_layer_query_count():
    _, primal, dual, qp = miqp_setup()
    traj = dual_forward(qp, dual, primal, "eval", torch.Generator().manual_seed(0))
    assert traj.layer_queries == dual.depth
    assert len(traj.primals) == dual.depth + 1
    assert len(traj.query_seeds) == dual.depth + 1


def test_eval_mode_deterministic_bit_for_bit():
    for setup in (miqp_setup, power_setup):
        _, primal, dual, prob = setup()
        t1 = dual_forward(prob, dual, primal, "eval", torch.Generator().manual_seed(42))
        t2 = dual_forward(prob, dual, primal, "eval", torch.Generator().manual_seed(42))
        for a, b in zip(t1.multipliers, t2.multipliers):
            assert torch.equal(a, b)
        for a, b in zip(t1.primals, t2.primals):
            assert torch.equal(a, b)


def test_train_mode_noise_present_eval_absent():
    _, primal, _, qp = miqp_setup()
    lam = torch.rand(qp.n_cons, dtype=torch.float64)
    x0 = torch.zeros(qp.n_vars, dtype=torch.float64)
    eval_a = primal_forward(lam, qp, primal, "eval", torch.Generator().manual_seed(0), x0=x0)
    eval_b = primal_forward(lam, qp, primal, "eval", torch.Generator().manual_seed(99), x0=x0)
    assert torch.equal(eval_a.final, eval_b.final)  # no rng consumed after x0
    tr_a = primal_forward(lam, qp, primal, "train", torch.Generator().manual_seed(0), x0=x0)
    tr_b = primal_forward(lam, qp, primal, "train", torch.Generator().manual_seed(99), x0=x0)
    assert not torch.equal(tr_a.final, tr_b.final)


def test_noise_schedule_decays():
    spec, primal, dual, _ = miqp_setup()
    stds_p = [primal.noise_std(k) for k in range(1, primal.depth + 1)]
    stds_d = [dual.noise_std(l) for l in range(1, dual.depth + 1)]
    assert all(a > b for a, b in zip(stds_p, stds_p[1:]))
    assert all(a > b for a, b in zip(stds_d, stds_d[1:]))
    assert stds_p[0] == pytest.approx(spec.noise_base_primal * spec.noise_decay)


def test_recover_solution_replays_final_query():
    _, primal, dual, qp = miqp_setup()
    x, traj = recover_solution(qp, dual, primal, "eval", torch.Generator().manual_seed(8))
    qgen = torch.Generator().manual_seed(traj.query_seeds[-1])
    replay = primal_forward(traj.final_multiplier, qp, primal, "eval", qgen)
    assert torch.equal(x, replay.final)


def _joint_permutation_miqp(qp, perm_v, perm_c):
    return QpProblem(qp.P[perm_v][:, perm_v], qp.q[perm_v],
                     qp.A[perm_c][:, perm_v], qp.b[perm_c],
                     qp.binary_idx, qp.m_lin)


def test_networks_permutation_equivariant_miqp():
    _, primal, dual, qp = miqp_setup(n=6, m=4, r=2)
    gen = torch.Generator().manual_seed(17)
    perm_v = torch.randperm(qp.n_vars, generator=gen)
    perm_c = torch.randperm(qp.n_cons, generator=gen)
    qp_p = _joint_permutation_miqp(qp, perm_v, perm_c)
    lam = torch.rand(qp.n_cons, dtype=torch.float64)
    x0 = torch.randn(qp.n_vars, dtype=torch.float64)
    base = primal_forward(lam, qp, primal, "eval", x0=x0)
    perm = primal_forward(lam[perm_c], qp_p, primal, "eval", x0=x0[perm_v])
    assert (perm.final - base.final[perm_v]).abs().max().item() <= 1e-6

    shift = dual.shift_for(qp)
    shift_p = dual.shift_for(qp_p)
    lam1 = dual.step(0, lam, x0, qp, shift, False, None)
    lam1_p = dual.step(0, lam[perm_c], x0[perm_v], qp_p, shift_p, False, None)
    assert (lam1_p - lam1[perm_c]).abs().max().item() <= 1e-6


def test_networks_permutation_equivariant_power():
    _, primal, dual, net = power_setup(n=7)
    perm = torch.randperm(7, generator=torch.Generator().manual_seed(23))
    net_p = PowerProblem(net.gains[perm][:, perm], net.constrained[perm],
                         net.r_min, net.p_max, net.bandwidth, net.noise_density,
                         net.rate_log_base)
    lam = torch.rand(7, dtype=torch.float64) * net.constrained
    p0 = torch.rand(7, dtype=torch.float64) * net.p_max
    base = primal_forward(lam, net, primal, "eval", x0=p0)
    permuted = primal_forward(lam[perm], net_p, primal, "eval", x0=p0[perm])
    assert (permuted.final - base.final[perm]).abs().max().item() <= 1e-6

    shift, shift_p = dual.shift_for(net), dual.shift_for(net_p)
    lam1 = dual.step(0, lam, p0, net, shift, False, None)
    lam1_p = dual.step(0, lam[perm], p0[perm], net_p, shift_p, False, None)
    assert (lam1_p - lam1[perm]).abs().max().item() <= 1e-6


def test_directional_derivative_matches_finite_differences():
    # final-Lagrangian sensitivity to parameters on a tiny net
    spec = ArchSpec(family="miqp", primal_layers=2, dual_layers=2,
                    primal_sublayers=1, dual_sublayers=1, features=4)
    primal, _ = build_nets(spec, torch.Generator().manual_seed(1))
    qp = relax(generate_instance(4, 2, 1, seed=0))
    lam = torch.rand(qp.n_cons, dtype=torch.float64)
    x0 = torch.randn(qp.n_vars, dtype=torch.float64)

    def value():
        return qp.lagrangian(primal_forward(lam, qp, primal, "eval", x0=x0).final, lam)

    loss = value()
    loss.backward()
    rng = np.random.default_rng(0)
    params = list(primal.parameters())
    direction = [torch.as_tensor(rng.standard_normal(p.shape.numel()).reshape(tuple(p.shape)))
                 for p in params]
    analytic = sum((p.grad * d).sum().item() for p, d in zip(params, direction))
    h = 1e-6
    with torch.no_grad():
        for p, d in zip(params, direction):
            p.add_(h * d)
        up = value().item()
        for p, d in zip(params, direction):
            p.add_(-2 * h * d)
        down = value().item()
        for p, d in zip(params, direction):
            p.add_(h * d)
    fd = (up - down) / (2 * h)
    assert abs(analytic - fd) <= 1e-4 * max(1.0, abs(fd))


def test_checkpoint_roundtrip(tmp_path):
    spec, primal, dual, qp = miqp_setup()
    save_checkpoint(tmp_path / "ckpt.npz", primal, dual,
                    extra={"config_hash": "abc", "data_manifest_hash": "def"})
    primal2, dual2, manifest, _ = load_checkpoint(tmp_path / "ckpt.npz")
    assert manifest["family"] == "miqp"
    assert manifest["config_hash"] == "abc"
    lam = torch.rand(qp.n_cons, dtype=torch.float64)
    x0 = torch.zeros(qp.n_vars, dtype=torch.float64)
    a = primal_forward(lam, qp, primal, "eval", x0=x0).final
    b = primal_forward(lam, qp, primal2, "eval", x0=x0).final
    assert torch.equal(a, b)
    t1 = dual_forward(qp, dual, primal, "eval", torch.Generator().manual_seed(3))
    t2 = dual_forward(qp, dual2, primal2, "eval", torch.Generator().manual_seed(3))
    assert torch.equal(t1.final_multiplier, t2.final_multiplier)
