"""Alternating solves for the bilinear stability and gain problems.

The spectral-radius constraint and the worst-case-gain regularizer each
couple the coefficient matrix with a Lyapunov certificate, making the
joint problem bilinear. Both are handled the same way: freeze the
certificate and solve the convex regression step, then freeze the model
and recompute the certificate, until the cost stops changing
significantly. Each step re-optimizes over a set containing the previous
iterate, so the cost is non-increasing up to solver tolerance; no claim of
global optimality is made.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import linalg

from . import sdp
from .analysis import KoopmanModel, spectral_radius
from .edmd import EdmdMatrices, RegularizedGram, solve_tikhonov
from .exceptions import (
    FormulationError,
    InvalidParameterError,
    NumericalError,
)

INITIAL_P_CHOICES = ("identity", "lyapunov_from_unregularized")

TERMINATION_REASONS = ("converged", "max_iterations", "infeasible_step")


@dataclass(frozen=True)
class AlternationConfig:
    """Iteration control for the alternating solves.

    Convergence is declared when the relative cost change
    ``|J_i - J_{i-1}| / max(1, |J_i|)`` falls below
    ``relative_cost_tolerance``.
    """

    max_iterations: int = 40
    relative_cost_tolerance: float = 1e-4
    initial_P: str = "lyapunov_from_unregularized"
    solver_tolerance: float = 1e-9

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise InvalidParameterError("max_iterations must be >= 1")
        if self.relative_cost_tolerance <= 0:
            raise InvalidParameterError("relative_cost_tolerance must be > 0")
        if self.initial_P not in INITIAL_P_CHOICES:
            raise InvalidParameterError(
                f"initial_P must be one of {INITIAL_P_CHOICES}, "
                f"got {self.initial_P!r}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    gamma: Optional[float]
    spectral_radius: float
    status: str


@dataclass
class AlternationTrace:
    """Per-iteration history of an alternating solve."""

    records: List[IterationRecord] = field(default_factory=list)
    termination_reason: str = "max_iterations"

    def objectives(self) -> List[float]:
        return [r.objective for r in self.records]

    def write_csv(self, path: Union[str, Path]) -> None:
        """Write the trace as ``iteration,objective,gamma,spectral_radius,status``."""
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["iteration", "objective", "gamma", "spectral_radius",
                 "status"])
            for r in self.records:
                writer.writerow([
                    r.iteration,
                    repr(r.objective),
                    "" if r.gamma is None else repr(r.gamma),
                    repr(r.spectral_radius),
                    r.status,
                ])


def evaluate_objective(em: EdmdMatrices, U, alpha: float = 0.0,
                       beta: float = 0.0, gamma: float = 0.0) -> float:
    """Regression cost with slack variables eliminated at their tight values.

    Returns ``c - 2 trace(U G^T) + trace(U H_alpha U^T) + (beta/q) gamma``,
    which equals the mean squared one-step residual plus the ridge and
    gain penalties.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    H_alpha = em.H + (alpha / em.q) * np.eye(em.p)
    quad = float(np.sum((U @ H_alpha) * U))
    lin = float(np.sum(U * em.G))
    return em.c - 2.0 * lin + quad + (beta / em.q) * gamma


def _normalize_trace(P: np.ndarray) -> np.ndarray:
    P = (P + P.T) / 2.0
    return P * (P.shape[0] / np.trace(P))


def _margin_for(rg: RegularizedGram) -> float:
    """Strictness margin consistent with the regression-step problems."""
    return sdp.default_margin(rg.H_alpha)


def _p_step_margin(margin: float) -> float:
    # The certificate step runs with a smaller margin than the regression
    # step so the just-solved model stays strictly feasible for it.
    return max(margin / 10.0, 1e-12)


def _initial_P_stability(A0: np.ndarray, rho_bar: float,
                         cfg: AlternationConfig, margin: float) -> np.ndarray:
    p_t = A0.shape[0]
    if cfg.initial_P == "identity":
        return np.eye(p_t)
    rho0 = spectral_radius(A0)
    if rho0 < rho_bar * (1.0 - 1e-9):
        # A'PA - rho^2 P + I = 0 has a positive definite solution here.
        A_scaled = A0 / rho_bar
        P = linalg.solve_discrete_lyapunov(A_scaled.T,
                                           np.eye(p_t) / rho_bar**2)
        return _normalize_trace(P)
    # Unregularized model violates the bound: certify a version of it
    # projected just inside the bound instead.
    A_proj = A0 * (0.995 * rho_bar / rho0)
    step = sdp.add_stability_step_P(A_proj, rho_bar,
                                    margin=_p_step_margin(margin))
    sol = sdp.solve(step, tol=cfg.solver_tolerance)
    if sol.status != "optimal":
        return np.eye(p_t)
    return _normalize_trace(np.asarray(sol.values["P"]))


def _initial_P_hinf(A0: np.ndarray, B0: np.ndarray, C, D,
                    cfg: AlternationConfig,
                    margin: float) -> np.ndarray:
    p_t = A0.shape[0]
    if cfg.initial_P == "identity":
        return np.eye(p_t)
    rho0 = spectral_radius(A0)
    A_init = A0 if rho0 < 0.995 else A0 * (0.95 / rho0)
    step = sdp.add_hinf_step_P(A_init, B0, C=C, D=D,
                               margin=_p_step_margin(margin))
    sol = sdp.solve(step, tol=cfg.solver_tolerance)
    if sol.status != "optimal":
        return np.eye(p_t)
    P = np.asarray(sol.values["P"])
    return (P + P.T) / 2.0


def _model_from(em: EdmdMatrices, U: np.ndarray) -> KoopmanModel:
    return KoopmanModel(U=U, lifting=em.lifting, m=em.m, n=em.n)


def _extra_terms(problem: sdp.SdpProblem, extra, q: int) -> sdp.SdpProblem:
    if extra is None:
        return problem
    kind, beta = extra
    if kind == "two_norm":
        return sdp.add_two_norm(problem, beta, q)
    if kind == "nuclear":
        return sdp.add_nuclear(problem, beta, q)
    raise InvalidParameterError(f"unknown extra regularizer {kind!r}")


def solve_stability(em: EdmdMatrices, rg: RegularizedGram, rho_bar: float,
                    cfg: Optional[AlternationConfig] = None,
                    extra: Optional[Tuple[str, float]] = None,
                    ) -> Tuple[KoopmanModel, AlternationTrace]:
    """Fit under a spectral-radius bound by alternating convex solves.

    Parameters
    ----------
    em, rg : EdmdMatrices, RegularizedGram
        Regression data and its ridge-shifted factorization.
    rho_bar : float
        Spectral-radius bound in (0, 1).
    cfg : AlternationConfig, optional
        Iteration control.
    extra : tuple, optional
        ``('two_norm', beta)`` or ``('nuclear', beta)`` to keep a norm
        penalty active alongside the constraint.

    Returns
    -------
    (KoopmanModel, AlternationTrace)
        The model from the last successful regression step (its state
        block satisfies the bound at every iterate, not only at
        convergence) and the iteration history.
    """
    if not (0.0 < rho_bar < 1.0):
        raise InvalidParameterError(f"rho_bar must be in (0, 1), got {rho_bar}")
    cfg = cfg or AlternationConfig()
    U0 = solve_tikhonov(em, rg.alpha).U
    A0 = U0[:, : em.p_theta]
    P = _initial_P_stability(A0, rho_bar, cfg, _margin_for(rg))
    trace = AlternationTrace()
    U = None
    J_prev = None
    for it in range(1, cfg.max_iterations + 1):
        problem = sdp.formulate_base(rg, em)
        problem = _extra_terms(problem, extra, em.q)
        problem = sdp.add_stability_step_U(problem, rho_bar, P)
        sol = sdp.solve(problem, tol=cfg.solver_tolerance)
        if sol.status != "optimal":
            trace.termination_reason = "infeasible_step"
            if U is None:
                raise NumericalError(
                    f"first regression step failed with status {sol.status} "
                    f"({sol.raw_status})")
            break
        U = np.asarray(sol.values["U"])
        A = U[:, : em.p_theta]
        gamma = sol.values.get("gamma")
        trace.records.append(IterationRecord(
            iteration=it, objective=sol.objective,
            gamma=None if gamma is None else float(gamma),
            spectral_radius=spectral_radius(A), status=sol.status))
        if J_prev is not None:
            if abs(sol.objective - J_prev) / max(1.0, abs(sol.objective)) \
                    < cfg.relative_cost_tolerance:
                trace.termination_reason = "converged"
                break
        J_prev = sol.objective
        if it == cfg.max_iterations:
            trace.termination_reason = "max_iterations"
            break
        p_step = sdp.add_stability_step_P(
            A, rho_bar, margin=_p_step_margin(problem.strictness_margin))
        p_sol = sdp.solve(p_step, tol=cfg.solver_tolerance)
        if p_sol.status != "optimal":
            trace.termination_reason = "infeasible_step"
            break
        P = _normalize_trace(np.asarray(p_sol.values["P"]))
    return _model_from(em, U), trace


def solve_hinf(em: EdmdMatrices, rg: RegularizedGram, beta: float,
               q: Optional[int] = None,
               cfg: Optional[AlternationConfig] = None,
               C=None, D=None,
               ) -> Tuple[KoopmanModel, AlternationTrace, float]:
    """Fit with a worst-case-gain penalty by alternating convex solves.

    Returns the model, the iteration trace, and a certified gain bound
    ``gamma``: the bounded-gain block held at every regression step, so
    the returned state block is asymptotically stable, and a final
    certificate solve tightens the reported bound to the smallest one the
    frozen model admits. The true gain of the returned system never
    exceeds ``gamma`` up to solver tolerance.

    Raises
    ------
    InvalidParameterError
        If ``beta <= 0``.
    FormulationError
        If the data has no input columns.
    """
    if beta <= 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    if em.p_upsilon < 1:
        raise FormulationError(
            "gain regularization needs input columns in the data")
    cfg = cfg or AlternationConfig()
    q = em.q if q is None else q
    U0 = solve_tikhonov(em, rg.alpha).U
    A0 = U0[:, : em.p_theta]
    B0 = U0[:, em.p_theta:]
    P = _initial_P_hinf(A0, B0, C, D, cfg, _margin_for(rg))
    trace = AlternationTrace()
    U = None
    gamma = float("nan")
    J_prev = None
    for it in range(1, cfg.max_iterations + 1):
        problem = sdp.formulate_base(rg, em)
        problem = sdp.add_hinf_step_U(problem, beta, q, P, C=C, D=D)
        sol = sdp.solve(problem, tol=cfg.solver_tolerance)
        if sol.status != "optimal":
            trace.termination_reason = "infeasible_step"
            if U is None:
                raise NumericalError(
                    f"first regression step failed with status {sol.status} "
                    f"({sol.raw_status})")
            break
        U = np.asarray(sol.values["U"])
        gamma = float(sol.values["gamma"])
        A = U[:, : em.p_theta]
        trace.records.append(IterationRecord(
            iteration=it, objective=sol.objective, gamma=gamma,
            spectral_radius=spectral_radius(A), status=sol.status))
        if J_prev is not None:
            if abs(sol.objective - J_prev) / max(1.0, abs(sol.objective)) \
                    < cfg.relative_cost_tolerance:
                trace.termination_reason = "converged"
                break
        J_prev = sol.objective
        if it == cfg.max_iterations:
            trace.termination_reason = "max_iterations"
            break
        p_step = sdp.add_hinf_step_P(
            A, U[:, em.p_theta:], C=C, D=D,
            margin=_p_step_margin(problem.strictness_margin))
        p_sol = sdp.solve(p_step, tol=cfg.solver_tolerance)
        if p_sol.status != "optimal":
            trace.termination_reason = "infeasible_step"
            break
        Pn = np.asarray(p_sol.values["P"])
        P = (Pn + Pn.T) / 2.0
    # The regression step leaves gamma wherever the penalty pressure put
    # it; re-certify the returned model once so the reported bound is the
    # tightest one its Lyapunov certificate supports.
    final = sdp.solve(
        sdp.add_hinf_step_P(U[:, : em.p_theta], U[:, em.p_theta:], C=C, D=D,
                            margin=_p_step_margin(sdp.default_margin(rg.H_alpha))),
        tol=cfg.solver_tolerance)
    if final.status == "optimal":
        gamma = float(final.values["gamma"])
    return _model_from(em, U), trace, gamma
