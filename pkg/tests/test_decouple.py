"""Decoupling bounds: single-shot, n-copy, witness search, cq generalization."""

import math

import numpy as np
import pytest

from decoupkit.channels import (
    compose,
    depolarizing_map,
    identity_map,
    t_w_map,
    trace_map,
)
from decoupkit.decouple import (
    CqInstance,
    DecouplingInstance,
    corollary1_search,
    covering_bound,
    decoupling_error,
    hayashi_bounds,
    iid_state,
    mc_lhs,
    mc_lhs_cq,
    projector_pair,
    simultaneous_witness,
    thm1_2_rhs,
    thm1_rhs,
    thm1_rhs_iid,
    zeta_opt,
)
from decoupkit.qmat import (
    DensityOp,
    LabeledOperator,
    purify,
    space,
    truncation_isometry,
)
from decoupkit.twirl import RngSeed

from conftest import random_density, random_kraus_channel, rng


def _schumacher_map(dan, dim_b):
    w = truncation_isometry(space(A=dan), space(B=dim_b))
    return compose(trace_map(space(B=dim_b)), t_w_map(w))


def test_thm1_rhs_term_breakdown():
    g = rng(41)
    rho = random_density(g, space(A=2, R=2))
    t = depolarizing_map(space(A=2), 0.5)
    inst = DecouplingInstance(rho, t, 1.5, "optimize", 1, "old")
    rep = thm1_rhs(inst)
    terms = rep.exponent_terms
    expo = terms["log_nu"] + terms["d_alpha_term"] + terms["theta"]
    assert abs(rep.rhs - 4.0 * 2.0 ** ((0.5 / 3.0) * expo)) <= 1e-12


def test_thm1_bound_holds_small_grid():
    g = rng(42)
    for i in range(6):
        rho = random_density(g, space(A=2, R=2))
        t = random_kraus_channel(g, space(A=2), space(E=2))
        alpha = (1.25, 1.5, 2.0)[i % 3]
        dtype = ("old", "sandwiched")[i % 2]
        inst = DecouplingInstance(rho, t, alpha, "optimize", 1, dtype)
        rep = thm1_rhs(inst)
        est = mc_lhs(inst, 50, RngSeed(400 + i))
        assert est.mean <= rep.rhs + 3.0 * est.stderr


def test_thm1_rhs_iid_eventually_decreasing():
    rho = DensityOp(LabeledOperator(space(A=2, R=2),
                                    np.diag([0.45, 0.05, 0.45, 0.05])), "unit")
    t = _schumacher_map(2, 1)
    vals = []
    for n in (50, 100, 200, 400):
        inst = DecouplingInstance(rho, t, 2.0, "optimize", n, "old")
        vals.append(thm1_rhs_iid(inst).rhs)
    assert vals[-1] < vals[0]
    assert vals[-1] < 1e-3


def test_mc_lhs_decreases_in_n_on_schumacher_family():
    # fixed super-capacity rate: the measured lhs shrinks with more copies
    rho = DensityOp(LabeledOperator(space(A=2), np.diag([0.9, 0.1])), "unit")
    psi = purify(rho, "R").projector()
    rate = 0.75
    means = []
    for n in range(1, 6):
        dan = 2 ** n
        dim_b = max(1, min(dan, math.floor(2.0 ** (n * rate))))
        inst = DecouplingInstance(psi, _schumacher_map(dan, dim_b), 1.5,
                                  "optimize", n, "old")
        est = mc_lhs(inst, 25, RngSeed(7))
        means.append(est.mean)
    assert all(b < a for a, b in zip(means, means[1:])), means


def test_mc_lhs_dimension_cap():
    rho = DensityOp(LabeledOperator(space(A=2), np.diag([0.9, 0.1])), "unit")
    psi = purify(rho, "R").projector()
    inst = DecouplingInstance(psi, _schumacher_map(2 ** 7, 2), 1.5,
                              "optimize", 7, "old")
    with pytest.raises(ValueError):
        mc_lhs(inst, 10, RngSeed(1))


def test_simultaneous_witness_and_anomaly():
    g = rng(43)
    rho = random_density(g, space(A=2, R=2))
    t = identity_map(space(A=2))
    inst = DecouplingInstance(rho, t, 1.5, "optimize", 1, "old")

    def err(u):
        return decoupling_error(inst, u)

    # a generous bound is met on the first try
    rep = simultaneous_witness([err], [10.0], 2, 5, RngSeed(3))
    assert not rep.anomaly and rep.tries == 1
    # an impossible bound exhausts the budget and flags the anomaly
    rep2 = simultaneous_witness([err], [0.0], 2, 4, RngSeed(3))
    assert rep2.anomaly and rep2.tries == 4
    # the best-effort unitary is still returned with its error
    assert abs(rep2.errors[0] - err(rep2.unitary)) <= 1e-12


def test_corollary1_search_two_conditions():
    g = rng(44)
    rho1 = random_density(g, space(A=4, R=2))
    rho2 = random_density(g, space(A=4, R=2))
    t = _schumacher_map(4, 2)
    insts = [DecouplingInstance(rho1, t, 1.5, "optimize", 1, "old"),
             DecouplingInstance(rho2, t, 2.0, "optimize", 1, "old")]
    rep = corollary1_search(insts, 10, RngSeed(5))
    assert len(rep.errors) == 2
    if not rep.anomaly:
        assert all(e <= b for e, b in zip(rep.errors, rep.bounds))


def test_projector_pair_partitions_identity():
    g = rng(45)
    rho = random_density(g, space(A=2))
    sig = random_density(g, space(A=2))
    pair = projector_pair(rho, sig, 1.0)
    s = pair.Pi.entries + pair.Pi_hat.entries
    assert np.abs(s - np.eye(2)).max() <= 1e-12


def test_hayashi_bounds_random_instances():
    g = rng(46)
    for _ in range(20):
        rho = random_density(g, space(A=3))
        sig = random_density(g, space(A=3))
        for zeta in (0.1, 1.0, 10.0):
            (l1, r1), (l2, r2) = hayashi_bounds(rho, sig, zeta, 2.0)
            assert l1 <= r1 + 1e-9
            assert l2 <= r2 + 1e-9


def test_zeta_opt_balances_terms_and_is_near_optimal():
    for x, y, alpha in ((1.0, 2.0, 1.5), (0.3, 0.7, 2.0), (5.0, 0.1, 1.25)):
        z_star, val_star = zeta_opt(x, y, alpha)
        t1 = x * z_star ** ((1.0 - alpha) / 2.0)
        t2 = y * math.sqrt(z_star)
        # the convenient choice equalizes the two terms of the objective
        assert abs(t1 - t2) <= 1e-9 * max(t1, t2)
        assert abs(val_star - (t1 + t2)) <= 1e-9 * val_star
        # a balanced choice is within a factor 2 of the true minimum
        zs = np.geomspace(z_star * 1e-3, z_star * 1e3, 20001)
        vals = x * zs ** ((1.0 - alpha) / 2.0) + y * np.sqrt(zs)
        assert val_star <= 2.0 * vals.min() * (1 + 1e-9)


def test_cq_instance_validation():
    with pytest.raises(ValueError):
        CqInstance(np.array([0.7, 0.7]), [None, None], 4, None, 1.5)
    with pytest.raises(ValueError):
        CqInstance(np.array([1.0]), [None], 0, None, 1.5)


def test_covering_bound_decreases_in_m():
    g = rng(47)
    p = np.full(4, 0.25)
    states = [random_density(g, space(R=2)) for _ in range(4)]
    means = []
    for m in (4, 16):
        rep = covering_bound(p, states, m, 1.5, None, 60, RngSeed(6))
        assert rep.lhs.mean <= rep.rhs + 3.0 * rep.lhs.stderr
        means.append(rep.lhs.mean)
    assert means[1] < means[0]


def test_cq_quantum_part_bound_holds():
    g = rng(48)
    p = np.array([0.5, 0.5])
    states = [random_density(g, space(A=2, R=2)) for _ in range(2)]
    t = depolarizing_map(space(A=2), 0.5)
    inst = CqInstance(p, states, 8, t, 1.5)
    rep = thm1_2_rhs(inst)
    est = mc_lhs_cq(inst, 40, RngSeed(8))
    assert est.mean <= rep.rhs + 3.0 * est.stderr


def test_iid_state_merges_factors():
    g = rng(49)
    rho = random_density(g, space(A=2, R=3))
    big = iid_state(rho, 2)
    assert big.space.dim_of("A") == 4 and big.space.dim_of("R") == 9
    assert abs(np.trace(big.op.entries).real - 1.0) <= 1e-12
