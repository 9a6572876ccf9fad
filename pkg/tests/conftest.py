"""Shared builders for the test suite."""

import numpy as np
import pytest

from koopman_lmi import edmd, lifting as lf


def make_em(Psi, ThetaPlus, lifting=None, m=None, n=None):
    """EdmdMatrices straight from snapshot matrices."""
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    ThetaPlus = np.atleast_2d(np.asarray(ThetaPlus, dtype=float))
    q = Psi.shape[1]
    return edmd.EdmdMatrices(
        G=ThetaPlus @ Psi.T / q,
        H=(Psi @ Psi.T + (Psi @ Psi.T).T) / (2 * q),
        c=float(np.sum(ThetaPlus * ThetaPlus) / q),
        q=q,
        Psi=Psi,
        lifting=lifting,
        m=m,
        n=n,
    )


def random_em(seed, p_theta=3, p=5, q=200, scale=1.0):
    rng = np.random.default_rng(seed)
    Psi = scale * rng.standard_normal((p, q))
    ThetaPlus = scale * rng.standard_normal((p_theta, q))
    return make_em(Psi, ThetaPlus)


def scalar_unit_em():
    """Psi = [1], ThetaPlus = [1], q = 1: the soft-threshold instance."""
    return make_em([[1.0]], [[1.0]])


def scalar_system_em(rho, steps=12, episodes=4, seed=0, with_input=False,
                     input_gain=1.0):
    """Snapshots of x+ = rho x (+ input_gain u) with identity lifting."""
    rng = np.random.default_rng(seed)
    eps = []
    for _ in range(episodes):
        x = float(rng.uniform(0.5, 1.5)) * (1 if rng.uniform() < 0.5 else -1)
        u = rng.standard_normal(steps - 1) if with_input else None
        xs = [x]
        for k in range(steps - 1):
            drive = input_gain * u[k] if with_input else 0.0
            xs.append(rho * xs[-1] + drive)
        states = np.array(xs)[:, None]
        eps.append((states, None if u is None else u[:, None]))
    data = lf.SnapshotDataset.from_episodes(eps)
    spec = lf.LiftingSpec(degree=1)
    lifted = lf.build_snapshots(data, spec)
    return edmd.compute_gram(lifted), data


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
