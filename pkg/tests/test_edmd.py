"""Gram matrices, closed-form solutions, and the factorization routes."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_em, random_em
from koopman_lmi import edmd
from koopman_lmi import lifting as lf
from koopman_lmi.exceptions import (
    EmptyDatasetError,
    InvalidParameterError,
    NotPositiveSemidefiniteError,
)


class TestComputeGram:
    def test_diagonal_hand_oracle(self):
        lifted = lf.LiftedMatrices(
            Psi=np.eye(2), ThetaPlus=np.diag([2.0, 3.0]),
            p=2, p_theta=2, p_upsilon=0, q=2, m=2, n=0,
            lifting=lf.LiftingSpec(degree=1))
        em = edmd.compute_gram(lifted)
        np.testing.assert_allclose(em.G, np.diag([1.0, 1.5]))
        np.testing.assert_allclose(em.H, np.eye(2) / 2)
        assert em.c == pytest.approx(6.5)
        assert em.q == 2

    def test_zero_data(self):
        lifted = lf.LiftedMatrices(
            Psi=np.zeros((2, 3)), ThetaPlus=np.zeros((2, 3)),
            p=2, p_theta=2, p_upsilon=0, q=3, m=2, n=0,
            lifting=lf.LiftingSpec(degree=1))
        em = edmd.compute_gram(lifted)
        assert np.all(em.G == 0) and np.all(em.H == 0) and em.c == 0.0

    def test_empty_rejected(self):
        lifted = lf.LiftedMatrices(
            Psi=np.zeros((2, 0)), ThetaPlus=np.zeros((2, 0)),
            p=2, p_theta=2, p_upsilon=0, q=0, m=2, n=0,
            lifting=lf.LiftingSpec(degree=1))
        with pytest.raises(EmptyDatasetError):
            edmd.compute_gram(lifted)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 30))
    def test_gram_is_psd_and_symmetric(self, seed, p, q):
        rng = np.random.default_rng(seed)
        Psi = rng.standard_normal((p, q))
        lifted = lf.LiftedMatrices(
            Psi=Psi, ThetaPlus=Psi[:1], p=p, p_theta=1, p_upsilon=p - 1,
            q=q, m=1, n=0, lifting=lf.LiftingSpec(degree=1))
        em = edmd.compute_gram(lifted)
        assert np.array_equal(em.H, em.H.T)
        assert np.linalg.eigvalsh(em.H)[0] >= -1e-12
        assert em.c >= 0.0


class TestSolvePinv:
    def test_diagonal_hand_oracle(self):
        em = make_em(np.eye(2), np.diag([2.0, 3.0]))
        model = edmd.solve_pinv(em)
        np.testing.assert_allclose(model.U, np.diag([2.0, 3.0]), atol=1e-12)

    def test_identity_dynamics(self):
        # Rich scalar data from x+ = x gives U = 1 exactly.
        x = np.array([1.0, 1.0, 2.0, 2.0, -0.5, -0.5])
        em = make_em(x[None, ::2], x[None, 1::2])
        model = edmd.solve_pinv(em)
        np.testing.assert_allclose(model.U, [[1.0]], atol=1e-12)

    def test_zero_gram_gives_zero(self):
        em = make_em(np.zeros((2, 4)), np.zeros((2, 4)))
        with pytest.warns(edmd.RankDeficientGramWarning):
            model = edmd.solve_pinv(em)
        assert np.all(model.U == 0.0)

    def test_rank_deficiency_warns(self):
        Psi = np.ones((3, 5))
        em = make_em(Psi, Psi[:2])
        with pytest.warns(edmd.RankDeficientGramWarning):
            edmd.solve_pinv(em)

    def test_partition_shapes(self):
        em = random_em(0, p_theta=3, p=5, q=50)
        model = edmd.solve_pinv(em)
        assert model.A.shape == (3, 3)
        assert model.B.shape == (3, 2)
        np.testing.assert_array_equal(model.U, np.hstack([model.A, model.B]))


class TestSolveTikhonov:
    def test_ridge_identity_case(self):
        # Psi = Theta = I, q = 2, alpha = 1: U = 1/(1 + alpha) I = I/2.
        em = make_em(np.eye(2), np.eye(2))
        model = edmd.solve_tikhonov(em, 1.0)
        np.testing.assert_allclose(model.U, np.eye(2) / 2, atol=1e-12)

    def test_alpha_zero_reduces_to_pinv(self):
        em = random_em(7)
        U0 = edmd.solve_pinv(em).U
        U1 = edmd.solve_tikhonov(em, 0.0).U
        np.testing.assert_allclose(U1, U0, atol=1e-10)

    def test_infinite_shrinkage_limit(self):
        em = make_em(np.eye(2), np.eye(2))
        model = edmd.solve_tikhonov(em, 1e12)
        assert np.linalg.norm(model.U) < 1e-10

    def test_shrinkage_monotone_in_alpha(self):
        em = random_em(11)
        norms = [np.linalg.norm(edmd.solve_tikhonov(em, a).U, "fro")
                 for a in (0.0, 1e-3, 1e-1, 1.0, 10.0, 100.0)]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def test_negative_alpha_rejected(self):
        with pytest.raises(InvalidParameterError):
            edmd.solve_tikhonov(random_em(0), -0.5)


class TestFactorL:
    def test_identity(self):
        em = make_em(np.eye(3), np.eye(3))  # H = I/3
        rg = edmd.factor_L(em, 0.0, route="eig")
        np.testing.assert_allclose(rg.L_alpha @ rg.L_alpha.T, rg.H_alpha,
                                   atol=1e-14)
        # H_alpha = I/3, so L is the scaled identity (stable tie order).
        np.testing.assert_allclose(rg.L_alpha, np.eye(3) / np.sqrt(3),
                                   atol=1e-14)

    def test_diagonal_square_root(self):
        em = edmd.EdmdMatrices(G=np.zeros((2, 2)), H=np.diag([4.0, 9.0]),
                               c=0.0, q=1)
        rg = edmd.factor_L(em, 0.0, route="eig")
        np.testing.assert_allclose(rg.L_alpha @ rg.L_alpha.T,
                                   np.diag([4.0, 9.0]), atol=1e-12)
        np.testing.assert_allclose(
            np.sort(np.linalg.svd(rg.L_alpha, compute_uv=False)), [2.0, 3.0])

    def test_routes_agree(self):
        rng = np.random.default_rng(3)
        Psi = rng.standard_normal((4, 50))
        em = make_em(Psi, Psi[:2])
        a = edmd.factor_L(em, 0.1, route="eig")
        b = edmd.factor_L(em, 0.1, route="svd")
        err = np.linalg.norm(a.L_alpha @ a.L_alpha.T
                             - b.L_alpha @ b.L_alpha.T, "fro")
        assert err <= 1e-8

    def test_svd_route_with_short_data(self):
        # Fewer snapshots than lifted dimensions still factors exactly.
        rng = np.random.default_rng(4)
        Psi = rng.standard_normal((5, 3))
        em = make_em(Psi, Psi[:2])
        rg = edmd.factor_L(em, 0.2, route="svd")
        np.testing.assert_allclose(rg.L_alpha @ rg.L_alpha.T, rg.H_alpha,
                                   atol=1e-12)

    def test_positive_alpha_makes_definite(self):
        Psi = np.ones((3, 4))  # rank one
        em = make_em(Psi, Psi[:1])
        for route in edmd.FACTORIZATION_ROUTES:
            rg = edmd.factor_L(em, 1e-3, route=route)
            assert np.linalg.eigvalsh(rg.H_alpha)[0] > 0
            np.testing.assert_allclose(rg.L_alpha @ rg.L_alpha.T,
                                       rg.H_alpha, atol=1e-12)

    def test_indefinite_rejected(self):
        em = edmd.EdmdMatrices(G=np.zeros((1, 2)), H=np.diag([1.0, -1.0]),
                               c=0.0, q=1)
        with pytest.raises(NotPositiveSemidefiniteError):
            edmd.factor_L(em, 0.0, route="eig")

    def test_svd_needs_psi(self):
        em = edmd.EdmdMatrices(G=np.zeros((1, 2)), H=np.eye(2), c=0.0, q=1)
        with pytest.raises(InvalidParameterError):
            edmd.factor_L(em, 0.0, route="svd")

    def test_unknown_route_rejected(self):
        with pytest.raises(InvalidParameterError):
            edmd.factor_L(random_em(0), 0.0, route="cholesky")

    def test_shift_formula(self):
        em = random_em(9, p_theta=2, p=4, q=30)
        rg = edmd.factor_L(em, 2.5)
        np.testing.assert_array_equal(
            rg.H_alpha, em.H + (2.5 / em.q) * np.eye(4))


class TestCostAlgebra:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gram_cost_equals_residual(self, seed):
        # c - 2 tr(U G^T) + tr(U H U^T) == (1/q) ||Theta - U Psi||_F^2
        rng = np.random.default_rng(seed)
        p_t, p, q = 2, 4, 17
        Psi = rng.standard_normal((p, q))
        Theta = rng.standard_normal((p_t, q))
        U = rng.standard_normal((p_t, p))
        em = make_em(Psi, Theta)
        lhs = em.c - 2 * np.sum(U * em.G) + np.sum((U @ em.H) * U)
        rhs = np.sum((Theta - U @ Psi) ** 2) / q
        assert lhs == pytest.approx(rhs, rel=1e-8)
