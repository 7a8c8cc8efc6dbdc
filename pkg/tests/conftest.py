"""Shared helpers for the test suite: random states, channels, spaces."""

import numpy as np
import pytest

from decoupkit.qmat import (
    DensityOp,
    LabeledOperator,
    PartialIsom,
    PureState,
    SubsystemSpace,
    space,
)


def rng(seed=0):
    return np.random.default_rng(seed)


def random_density(g, sp) -> DensityOp:
    d = sp.total_dim
    m = g.normal(size=(d, d)) + 1j * g.normal(size=(d, d))
    m = m @ m.conj().T
    return DensityOp(LabeledOperator(sp, m / np.trace(m).real), "unit")


def random_psd(g, d, trace=None) -> np.ndarray:
    m = g.normal(size=(d, d)) + 1j * g.normal(size=(d, d))
    m = m @ m.conj().T
    if trace is not None:
        m *= trace / np.trace(m).real
    return m


def random_pure(g, sp) -> PureState:
    d = sp.total_dim
    v = g.normal(size=d) + 1j * g.normal(size=d)
    return PureState(sp, v / np.linalg.norm(v))


def random_unitary(g, d) -> np.ndarray:
    z = g.normal(size=(d, d)) + 1j * g.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_partial_isometry(g, sp_in, sp_out) -> PartialIsom:
    """A Haar-random full-rank partial isometry between the two spaces."""
    da, db = sp_in.total_dim, sp_out.total_dim
    if db <= da:
        u = random_unitary(g, da)
        return PartialIsom(sp_in, sp_out, u[:db, :])
    u = random_unitary(g, db)
    return PartialIsom(sp_in, sp_out, u[:, :da])


def random_kraus_channel(g, sp_in, sp_out, n_env=2):
    """A random CPTP map obtained from a Haar isometry into out x env."""
    from decoupkit.channels import KrausMap

    da = sp_in.total_dim
    db = sp_out.total_dim
    if db * n_env < da:
        raise ValueError("environment too small for an isometry")
    big = random_unitary(g, db * n_env)[:, :da]
    ks = [big.reshape(db, n_env, da)[:, e, :] for e in range(n_env)]
    return KrausMap(sp_in, sp_out, ks, "cptp")
