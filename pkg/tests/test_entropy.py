"""Renyi divergences and conditional entropies: limits, duality, DPI, oracle."""

import math

import numpy as np
import pytest

from decoupkit.entropy import (
    RenyiParams,
    bloch_grid_min,
    d_alpha,
    dpi_check,
    duality_check,
    h_cond,
    relative_entropy,
    renyi_entropy,
    von_neumann_entropy,
    von_neumann_suite,
)
from decoupkit.qmat import DensityOp, LabeledOperator, space

from conftest import random_density, random_kraus_channel, random_pure, rng


def _diag(sp, probs):
    return DensityOp(LabeledOperator(sp, np.diag(probs)), "unit")


def test_renyi_entropy_classical_values():
    rho = np.diag([0.5, 0.5])
    assert abs(renyi_entropy(rho, 2.0) - 1.0) <= 1e-12
    rho = np.diag([0.9, 0.1])
    expected = math.log2(0.9 ** 2 + 0.1 ** 2) / (1 - 2)
    assert abs(renyi_entropy(rho, 2.0) - expected) <= 1e-12
    # alpha -> 1 recovers von Neumann
    h1 = renyi_entropy(rho, 1.0 + 1e-9)
    hv = -(0.9 * math.log2(0.9) + 0.1 * math.log2(0.1))
    assert abs(h1 - hv) <= 1e-6


def test_d_alpha_against_classical_formula():
    p = np.array([0.7, 0.3])
    q = np.array([0.4, 0.6])
    sp = space(A=2)
    for alpha in (1.25, 1.5, 2.0):
        want = math.log2(np.sum(p ** alpha * q ** (1 - alpha))) / (alpha - 1)
        for dtype in ("old", "sandwiched"):
            got = d_alpha(_diag(sp, p), LabeledOperator(sp, np.diag(q)),
                          RenyiParams(alpha, dtype))
            assert abs(got - want) <= 1e-10, (alpha, dtype)


def test_d_alpha_support_violation_is_infinite():
    sp = space(A=2)
    rho = _diag(sp, [0.5, 0.5])
    sig = LabeledOperator(sp, np.diag([1.0, 0.0]))
    assert d_alpha(rho, sig, RenyiParams(1.5, "old")) == math.inf


def test_sandwiched_below_old():
    # Araki-Lieb-Thirring: sandwiched <= old for alpha > 1
    g = rng(11)
    for _ in range(20):
        rho = random_density(g, space(A=3))
        sig = random_density(g, space(A=3))
        for alpha in (1.25, 1.5, 2.0):
            ds = d_alpha(rho, sig.op, RenyiParams(alpha, "sandwiched"))
            do = d_alpha(rho, sig.op, RenyiParams(alpha, "old"))
            assert ds <= do + 1e-9


def test_alpha_monotonicity_of_divergence():
    g = rng(12)
    rho = random_density(g, space(A=3))
    sig = random_density(g, space(A=3))
    for dtype in ("old", "sandwiched"):
        vals = [d_alpha(rho, sig.op, RenyiParams(a, dtype))
                for a in (1.1, 1.25, 1.5, 1.75, 2.0)]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_relative_entropy_is_alpha_one_limit():
    g = rng(13)
    rho = random_density(g, space(A=3))
    sig = random_density(g, space(A=3))
    base = relative_entropy(rho, sig.op)
    near = d_alpha(rho, sig.op, RenyiParams(1.0 + 1e-7, "old"))
    assert abs(base - near) <= 1e-4


def test_h_cond_arrow_ordering():
    # optimizing the conditioner can only increase the entropy
    g = rng(14)
    for i in range(10):
        rho = random_density(g, space(A=2, B=2))
        for dtype in ("old", "sandwiched"):
            alpha = (1.25, 1.5, 2.0)[i % 3]
            fixed = h_cond(rho, "B", RenyiParams(alpha, dtype, "fixed_marginal"))
            opt = h_cond(rho, "B", RenyiParams(alpha, dtype, "optimized"))
            assert opt.value >= fixed.value - 1e-7


def test_h_cond_product_state_reduces_to_marginal_entropy():
    g = rng(15)
    rho_a = random_density(g, space(A=2))
    rho_b = random_density(g, space(B=2))
    joint = DensityOp(LabeledOperator(
        space(A=2, B=2), np.kron(rho_a.op.entries, rho_b.op.entries)), "unit")
    for alpha in (1.25, 2.0):
        got = h_cond(joint, "B", RenyiParams(alpha, "old", "optimized")).value
        want = renyi_entropy(rho_a.op.entries, alpha)
        assert abs(got - want) <= 1e-6


def test_duality_residuals():
    g = rng(16)
    for _ in range(20):
        psi = random_pure(g, space(A=2, B=2, C=2))
        for alpha in (1.25, 1.5, 2.0):
            assert abs(duality_check(psi, "A", "B", "C", alpha)) <= 1e-6


def test_dpi_random_instances():
    g = rng(17)
    for i in range(25):
        sp = space(A=2)
        rho = random_density(g, sp)
        sig = random_density(g, sp)
        t = random_kraus_channel(g, sp, space(E=2))
        p = RenyiParams((1.25, 2.0)[i % 2], ("old", "sandwiched")[i % 2])
        assert dpi_check(rho, sig, t, p)


def test_optimizer_matches_bloch_grid():
    for i in range(4):
        rho = random_density(rng(180 + i), space(A=2, B=2))
        p = RenyiParams((1.25, 1.5, 2.0)[i % 3], ("old", "sandwiched")[i % 2],
                        "optimized")
        closed = h_cond(rho, "B", p).value
        oracle = bloch_grid_min(rho, "B", p, n_points=8000)
        assert abs(closed - oracle) <= 2e-3


def test_von_neumann_suite_pure_state_duality():
    g = rng(19)
    proj = random_pure(g, space(A=2, B=2, C=2)).projector()
    given_b = von_neumann_suite(proj, ("A",), ("B",))
    given_c = von_neumann_suite(proj, ("A",), ("C",))
    # on a pure tripartite state H(A|B) = -H(A|C)
    assert abs(given_b["H(A|B)"] + given_c["H(A|B)"]) <= 1e-9


def test_invalid_alpha_rejected():
    with pytest.raises(ValueError):
        RenyiParams(2.5, "old")
    with pytest.raises(ValueError):
        RenyiParams(1.5, "newfangled")
