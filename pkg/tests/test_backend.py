"""Standard-form lowering and the conic solver adapter."""

import numpy as np
import pytest

from koopman_lmi import backend
from koopman_lmi.exceptions import FormulationError
from koopman_lmi.sdp import (
    AffineMatrix,
    LinearEquality,
    PsdConstraint,
    SdpProblem,
    Variable,
    block,
    scalar_variable,
)


def min_gamma_problem():
    """min gamma s.t. [[gamma, 1], [1, gamma]] >= 0; optimum 1."""
    gamma = scalar_variable("gamma")
    expr = (AffineMatrix.scalar_times(gamma, np.eye(2))
            + AffineMatrix.wrap([[0.0, 1.0], [1.0, 0.0]]))
    return SdpProblem(
        variables=(gamma,),
        objective_constant=0.0,
        objective_terms=(("gamma", np.array([[1.0]])),),
        constraints=(PsdConstraint("offdiag", expr, 0.0),),
    )


class TestLower:
    def test_two_norm_block_structure(self):
        # One coefficient matrix per entry of U plus one for gamma.
        U = Variable("U", "matrix", 2, 3)
        gamma = scalar_variable("gamma")
        expr = block([
            [AffineMatrix.scalar_times(gamma, np.eye(2)),
             AffineMatrix.of_variable(U)],
            [AffineMatrix.of_variable(U).T,
             AffineMatrix.scalar_times(gamma, np.eye(3))],
        ])
        problem = SdpProblem(
            variables=(U, gamma),
            objective_constant=0.0,
            objective_terms=(("gamma", np.array([[1.0]])),),
            constraints=(PsdConstraint("two_norm", expr, 0.0),),
        )
        std = backend.lower(problem)
        assert std.n == 6 + 1
        blk = std.blocks[0]
        assert blk.dim == 5
        assert len(blk.coeffs) == 6 + 1
        for F in blk.coeffs.values():
            assert np.array_equal(F, F.T)

    def test_lowering_preserves_evaluation(self):
        problem = min_gamma_problem()
        std = backend.lower(problem)
        x = np.array([1.7])
        M_std = std.blocks[0].evaluate(x)
        M_expr = problem.constraints[0].expr.evaluate({"gamma": 1.7})
        assert np.abs(M_std - M_expr).max() <= 1e-12

    def test_margin_enters_constant(self):
        gamma = scalar_variable("gamma")
        expr = AffineMatrix.scalar_times(gamma, np.eye(2))
        problem = SdpProblem(
            variables=(gamma,), objective_constant=0.0,
            objective_terms=(("gamma", np.array([[1.0]])),),
            constraints=(PsdConstraint("pd", expr, 0.25),))
        std = backend.lower(problem)
        np.testing.assert_allclose(std.blocks[0].F0, -0.25 * np.eye(2))

    def test_empty_constraints_rejected(self):
        problem = SdpProblem(
            variables=(scalar_variable("t"),),
            objective_constant=0.0,
            objective_terms=(("t", np.array([[1.0]])),),
            constraints=(),
        )
        with pytest.raises(FormulationError):
            backend.lower(problem)

    def test_symmetric_variable_folding(self):
        # d tr(SW) / dw_ij doubles off-diagonal components.
        W = Variable("W", "symmetric", 2, 2)
        S = np.array([[1.0, 2.0], [2.0, 5.0]])
        expr = AffineMatrix.inner(W, S)
        problem = SdpProblem(
            variables=(W,), objective_constant=0.0,
            objective_terms=(("W", np.eye(2)),),
            constraints=(PsdConstraint("row", expr, 0.0),))
        std = backend.lower(problem)
        blk = std.blocks[0]
        # components: (0,0), (0,1), (1,1)
        assert blk.coeffs[0][0, 0] == 1.0
        assert blk.coeffs[1][0, 0] == 4.0
        assert blk.coeffs[2][0, 0] == 5.0
        # objective folding of tr(W): off-diagonal gets both mirror entries
        np.testing.assert_array_equal(std.objective, [1.0, 0.0, 1.0])

    def test_flattening_layout_documented(self):
        U = Variable("U", "matrix", 2, 2)
        W = Variable("W", "symmetric", 2, 2)
        t = scalar_variable("t")
        problem = SdpProblem(
            variables=(U, W, t), objective_constant=0.0,
            objective_terms=(),
            constraints=(PsdConstraint(
                "pd", AffineMatrix.of_variable(W), 0.0),))
        std = backend.lower(problem)
        offsets = {lay.name: (lay.offset, lay.size) for lay in std.layout}
        assert offsets == {"U": (0, 4), "W": (4, 3), "t": (7, 1)}


class TestSolveStandard:
    def test_min_gamma_determinant_oracle(self):
        sol = backend.solve_standard(backend.lower(min_gamma_problem()))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(1.0, abs=1e-7)
        assert sol.values["gamma"] == pytest.approx(1.0, abs=1e-7)

    def test_psd_projection_oracle(self, rng):
        # min tr(W) s.t. W >= M and W >= 0 has value sum(max(eig(M), 0)).
        M = rng.standard_normal((3, 3))
        M = (M + M.T) / 2
        W = Variable("W", "symmetric", 3, 3)
        W_expr = AffineMatrix.of_variable(W)
        problem = SdpProblem(
            variables=(W,), objective_constant=0.0,
            objective_terms=(("W", np.eye(3)),),
            constraints=(
                PsdConstraint("dominates", W_expr - M, 0.0),
                PsdConstraint("psd", W_expr, 0.0),
            ))
        sol = backend.solve_standard(backend.lower(problem))
        expected = float(np.sum(np.clip(np.linalg.eigvalsh(M), 0.0, None)))
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(expected, abs=1e-6)

    def test_infeasible_toy(self):
        t = scalar_variable("t")
        problem = SdpProblem(
            variables=(t,), objective_constant=0.0,
            objective_terms=(),
            constraints=(
                PsdConstraint("neg", AffineMatrix.wrap(-np.eye(2)), 0.0),
                PsdConstraint("t_pd", AffineMatrix.of_variable(t), 0.0),
            ))
        sol = backend.solve_standard(backend.lower(problem))
        assert sol.status == "infeasible"
        assert sol.values == {}
        assert np.isnan(sol.objective)

    def test_equality_constraint(self):
        # Feasibility with trace(P) = 2 pins the scale of P.
        P = Variable("P", "symmetric", 2, 2)
        problem = SdpProblem(
            variables=(P,), objective_constant=0.0,
            objective_terms=(),
            constraints=(PsdConstraint(
                "pd", AffineMatrix.of_variable(P), 1e-9),),
            equalities=(LinearEquality("trace", (("P", np.eye(2)),), 2.0),))
        sol = backend.solve_standard(backend.lower(problem))
        assert sol.status == "optimal"
        assert np.trace(sol.values["P"]) == pytest.approx(2.0, abs=1e-7)

    def test_deterministic(self):
        std = backend.lower(min_gamma_problem())
        a = backend.solve_standard(std)
        b = backend.solve_standard(std)
        assert a.values["gamma"] == b.values["gamma"]
        assert a.objective == b.objective
        assert a.iterations == b.iterations

    def test_round_trip_residuals(self, rng):
        # Un-flattened values reproduce the standard-form block residuals.
        problem = min_gamma_problem()
        std = backend.lower(problem)
        sol = backend.solve_standard(std)
        x = np.array([sol.values["gamma"]])
        for con, blk in zip(problem.constraints, std.blocks):
            M_expr = con.expr.evaluate(sol.values) - con.margin * np.eye(blk.dim)
            M_std = blk.evaluate(x)
            assert np.abs(M_expr - M_std).max() <= 1e-10

    def test_duality_gap_reported_solution(self):
        # The adapter's optimal solutions respect the gap tolerance.
        std = backend.lower(min_gamma_problem())
        sol = backend.solve_standard(
            std, backend.SolverSettings(tolerance=1e-10))
        assert abs(sol.objective - 1.0) <= 1e-8
