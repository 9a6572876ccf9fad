"""Acceptance suite.

Each test checks one release criterion end to end at its stated tolerance
and prints a PASS/FAIL line (run with ``pytest -s`` to see them inline).
All problems are desk-scale and every criterion runs in well under a
minute.
"""

import contextlib

import numpy as np
import pytest

from conftest import make_em, scalar_system_em, scalar_unit_em
from koopman_lmi import analysis, bilinear, cli, edmd, sdp
from koopman_lmi import lifting as lf


@contextlib.contextmanager
def criterion(number, title):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number:02d} ({title}): FAIL")
        raise
    print(f"[acceptance] criterion {number:02d} ({title}): PASS")


def rel_fro(A, B):
    return np.linalg.norm(A - B, "fro") / max(np.linalg.norm(B, "fro"), 1e-30)


def random_instance(seed, p_theta=3, p=5, q=200):
    rng = np.random.default_rng(seed)
    Psi = rng.standard_normal((p, q))
    Theta = rng.standard_normal((p_theta, q))
    return make_em(Psi, Theta)


def test_01_edmd_equivalence():
    with criterion(1, "EDMD equivalence"):
        for seed in range(20):
            em = random_instance(seed)
            rg = edmd.factor_L(em, 0.0)
            sol = sdp.solve(sdp.formulate_base(rg, em))
            assert sol.status == "optimal"
            U_pinv = edmd.solve_pinv(em).U
            assert rel_fro(np.asarray(sol.values["U"]), U_pinv) <= 1e-4, \
                f"seed {seed}"


def test_02_tikhonov_equivalence():
    with criterion(2, "Tikhonov equivalence"):
        em = random_instance(100)
        for alpha in (1e-3, 1e-1, 1.0, 10.0):
            rg = edmd.factor_L(em, alpha)
            sol = sdp.solve(sdp.formulate_base(rg, em))
            U_ridge = edmd.solve_tikhonov(em, alpha).U
            assert rel_fro(np.asarray(sol.values["U"]), U_ridge) <= 1e-4, \
                f"alpha {alpha}"


def test_03_formulation_cross_check():
    with criterion(3, "inverted vs inversion-free formulations"):
        for seed, alpha in ((0, 0.0), (1, 0.0), (2, 0.3), (3, 2.0)):
            em = random_instance(200 + seed)
            rg = edmd.factor_L(em, alpha)
            assert np.linalg.eigvalsh(rg.H_alpha)[0] > 0
            sol_free = sdp.solve(sdp.formulate_base(rg, em))
            sol_inv = sdp.solve(sdp.formulate_base_inverted(rg, em))
            assert rel_fro(np.asarray(sol_inv.values["U"]),
                           np.asarray(sol_free.values["U"])) <= 1e-4


def test_04_factorization_cross_check():
    with criterion(4, "eigendecomposition vs SVD factor"):
        for seed in range(5):
            rng = np.random.default_rng(300 + seed)
            Psi = rng.standard_normal((4, 50))
            em = make_em(Psi, Psi[:2])
            for alpha in (0.0, 0.1, 1.0):
                a = edmd.factor_L(em, alpha, route="eig")
                b = edmd.factor_L(em, alpha, route="svd")
                err = np.linalg.norm(
                    a.L_alpha @ a.L_alpha.T - b.L_alpha @ b.L_alpha.T, "fro")
                assert err <= 1e-8


def test_05_two_norm():
    with criterion(5, "matrix two-norm regularizer"):
        em = scalar_unit_em()
        rg = edmd.factor_L(em, 0.0)
        # Scalar soft threshold: argmin (1-u)^2 + beta|u| = max(0, 1-beta/2).
        for beta in (0.5, 1.0, 3.0, 10.0):
            sol = sdp.solve(sdp.add_two_norm(
                sdp.formulate_base(rg, em), beta, em.q))
            u = float(np.asarray(sol.values["U"])[0, 0])
            assert u == pytest.approx(max(0.0, 1.0 - beta / 2), abs=1e-4)
            sigma = abs(u)
            assert float(sol.values["gamma"]) == pytest.approx(sigma,
                                                               abs=1e-4)
        # Matrix instance: penalized bound is tight and shrinks with beta.
        em = random_instance(400, p_theta=3, p=4, q=80)
        rg = edmd.factor_L(em, 0.0)
        sigmas = []
        for beta in (0.01, 0.1, 1.0, 10.0):
            sol = sdp.solve(sdp.add_two_norm(
                sdp.formulate_base(rg, em), beta, em.q))
            U = np.asarray(sol.values["U"])
            sigma = float(np.linalg.svd(U, compute_uv=False)[0])
            assert float(sol.values["gamma"]) == pytest.approx(sigma,
                                                               abs=1e-4)
            sigmas.append(sigma)
        assert all(b <= a + 1e-6 for a, b in zip(sigmas, sigmas[1:]))


def test_06_nuclear_norm():
    with criterion(6, "nuclear-norm regularizer"):
        em = scalar_unit_em()
        rg = edmd.factor_L(em, 0.0)
        for beta, expect in ((1.0, 0.5), (10.0, 0.0)):
            sol = sdp.solve(sdp.add_nuclear(
                sdp.formulate_base(rg, em), beta, em.q))
            u = float(np.asarray(sol.values["U"])[0, 0])
            assert u == pytest.approx(expect, abs=1e-4)
            assert float(sol.values["gamma"]) == pytest.approx(abs(u),
                                                               abs=1e-4)
        # Rank-one-plus-noise 3x3 system: nuclear norm shrinks over the grid.
        rng = np.random.default_rng(500)
        low_rank = np.outer(rng.standard_normal(3), rng.standard_normal(3))
        Psi = rng.standard_normal((3, 150))
        Theta = low_rank @ Psi + 0.05 * rng.standard_normal((3, 150))
        em = make_em(Psi, Theta)
        rg = edmd.factor_L(em, 0.0)
        nucs = []
        for beta in (0.01, 0.1, 1.0, 10.0):
            sol = sdp.solve(sdp.add_nuclear(
                sdp.formulate_base(rg, em), beta, em.q))
            U = np.asarray(sol.values["U"])
            nuc = float(np.sum(np.linalg.svd(U, compute_uv=False)))
            assert float(sol.values["gamma"]) == pytest.approx(nuc, abs=1e-4)
            nucs.append(nuc)
        assert all(b <= a + 1e-6 for a, b in zip(nucs, nucs[1:]))


def test_07_stability_constraint():
    with criterion(7, "asymptotic stability constraint"):
        # Unstable scalar dynamics land just inside the bound.
        em, _ = scalar_system_em(1.2)
        rg = edmd.factor_L(em, 0.0)
        cfg = bilinear.AlternationConfig()
        model, trace = bilinear.solve_stability(em, rg, 0.99, cfg=cfg)
        rho = analysis.spectral_radius(model.A)
        assert 0.98 <= rho <= 0.991
        assert len(trace.records) <= cfg.max_iterations
        assert trace.termination_reason == "converged"
        # Already-stable data: the constraint is inactive.
        em_s, _ = scalar_system_em(0.5)
        rg_s = edmd.factor_L(em_s, 0.0)
        model_s, _ = bilinear.solve_stability(em_s, rg_s, 0.99, cfg=cfg)
        assert rel_fro(model_s.U, edmd.solve_pinv(em_s).U) <= 1e-3
        # Monotone descent within the solver-tolerance band.
        cfg_long = bilinear.AlternationConfig(relative_cost_tolerance=1e-7,
                                              max_iterations=12)
        _, tr = bilinear.solve_stability(em, rg, 0.99, cfg=cfg_long)
        objs = tr.objectives()
        band = 10 * cfg_long.solver_tolerance
        assert all(b <= a + band + 1e-12 for a, b in zip(objs, objs[1:]))


def test_08_hinf_regularizer():
    with criterion(8, "worst-case-gain regularizer"):
        em, _ = scalar_system_em(0.5, with_input=True, seed=3)
        rg = edmd.factor_L(em, 0.0)
        gammas = []
        for beta in (0.01, 0.1, 1.0, 10.0):
            model, _, gamma = bilinear.solve_hinf(em, rg, beta=beta)
            assert analysis.spectral_radius(model.A) < 1.0
            sweep = analysis.hinf_norm(model.A, model.B, np.eye(1),
                                       np.zeros((1, 1)))
            assert gamma >= sweep - 1e-2 * gamma
            gammas.append(gamma)
        assert all(b <= a + 1e-6 for a, b in zip(gammas, gammas[1:]))
        # Vanishing penalty recovers the unregularized fit on stable data.
        model, _, _ = bilinear.solve_hinf(em, rg, beta=1e-8)
        assert rel_fro(model.U, edmd.solve_pinv(em).U) <= 1e-2


def test_09_hinf_oracle_self_test():
    with criterion(9, "frequency-sweep oracle self-test"):
        # First-order closed form: peak gain b/(1-a) at zero frequency.
        assert analysis.hinf_norm(0.5, 1.0, 1.0, 0.0) == pytest.approx(
            2.0, abs=1e-3)


def test_10_cost_algebra():
    with criterion(10, "Gram-form cost identity"):
        rng = np.random.default_rng(600)
        for _ in range(100):
            p_t = int(rng.integers(1, 5))
            p = p_t + int(rng.integers(0, 4))
            q = int(rng.integers(1, 40))
            Psi = rng.standard_normal((p, q))
            Theta = rng.standard_normal((p_t, q))
            U = rng.standard_normal((p_t, p))
            em = make_em(Psi, Theta)
            lhs = em.c - 2 * np.sum(U * em.G) + np.sum((U @ em.H) * U)
            rhs = float(np.sum((Theta - U @ Psi) ** 2) / q)
            assert lhs == pytest.approx(rhs, rel=1e-8)


def test_11_end_to_end(tmp_path):
    with criterion(11, "generate / fit / predict round trip"):
        data_path = tmp_path / "lin.csv"
        assert cli.main(["generate", "linear2d", "--steps", "60",
                         "--episodes", "3", "--seed", "11",
                         "--noise-std", "0.0", "--out", str(data_path)]) == 0
        model_path = tmp_path / "model.json"
        config = tmp_path / "fit.json"
        config.write_text(
            '{"data_path": "%s", "output_path": "%s", '
            '"lifting": {"degree": 1}}' % (data_path, model_path))
        assert cli.main(["fit", "--config", str(config)]) == 0
        model = analysis.load_model(model_path)
        A_true, B_true = cli.linear2d_truth()
        err = np.linalg.norm(model.U - np.hstack([A_true, B_true]), "fro")
        assert err <= 1e-6
        # Prediction reproduces the simulated trajectory step by step.
        pred_path = tmp_path / "pred.csv"
        assert cli.main(["predict", "--model", str(model_path),
                         "--data", str(data_path), "--horizon", "50",
                         "--out", str(pred_path)]) == 0
        data = lf.load_episode_csv(data_path)
        states, inputs = data.episodes[0]
        result = analysis.predict(model, states[0], inputs[:50])
        step_err = np.abs(result.predicted_states - states[1:51]).max(axis=1)
        assert np.all(step_err <= 1e-6)
