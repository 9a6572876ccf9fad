"""Standard-form lowering and the conic solver boundary.

A problem is lowered exactly (no relaxation) to

    minimize    objective . x
    subject to  F0_j + sum_i x_i F_ij  is positive semidefinite, per block j
                E x = rhs              (linear equalities)

over a flattened scalar variable vector ``x``. The flattening is a
documented bijection: variables contribute components in declaration
order, matrices row-major over all entries, symmetric matrices row-major
over the upper triangle, scalars one component. Every coefficient matrix
``F_ij`` is symmetric; asymmetry beyond rounding noise indicates a
formulation bug and is rejected.

The shipped solver adapter feeds this form to Clarabel, an interior-point
conic solver with native semidefinite cone support. One-by-one blocks are
routed to the nonnegative cone. The contract here (statuses, determinism,
duality-gap tolerance), not the particular solver, is what the rest of the
package relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import sparse

from .exceptions import FormulationError
from .sdp import (
    FrobTerm,
    MatTerm,
    ScalarTerm,
    SdpProblem,
    SdpSolution,
)

_SYM_CHECK_TOL = 1e-9


@dataclass(frozen=True)
class VariableLayout:
    """Placement of one variable inside the flattened vector."""

    name: str
    kind: str
    rows: int
    cols: int
    offset: int
    size: int

    def component_indices(self) -> list:
        if self.kind == "symmetric":
            return [(a, b) for a in range(self.rows)
                    for b in range(a, self.cols)]
        return [(a, b) for a in range(self.rows) for b in range(self.cols)]


@dataclass(frozen=True)
class StandardBlock:
    """One PSD cone membership ``F0 + sum_i x_i F_i >= 0``.

    ``coeffs`` maps flattened-variable indices to their (symmetric)
    coefficient matrices; indices with identically zero coefficients are
    omitted.
    """

    name: str
    dim: int
    F0: np.ndarray
    coeffs: Dict[int, np.ndarray]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Value of the block at a flattened point (for round-trip checks)."""
        M = self.F0.copy()
        for i, F in self.coeffs.items():
            M += x[i] * F
        return M


@dataclass(frozen=True)
class SolverSettings:
    """Adapter-level solver settings.

    ``tolerance`` bounds the duality gap (absolute and relative) and the
    feasibility residuals of an ``optimal`` solution.
    """

    tolerance: float = 1e-9
    max_iterations: int = 200
    verbose: bool = False


@dataclass(frozen=True)
class StandardFormSdp:
    """A lowered problem over the flattened variable vector."""

    n: int
    objective: np.ndarray
    objective_constant: float
    layout: Tuple[VariableLayout, ...]
    blocks: Tuple[StandardBlock, ...]
    equalities: Tuple[Tuple[np.ndarray, float], ...]


def _layout_of(problem: SdpProblem) -> Tuple[VariableLayout, ...]:
    layout = []
    offset = 0
    for v in problem.variables:
        layout.append(VariableLayout(v.name, v.kind, v.rows, v.cols,
                                     offset, v.n_components))
        offset += v.n_components
    return tuple(layout)


def _fold_coefficient(lay: VariableLayout, C: np.ndarray,
                      out: np.ndarray) -> None:
    """Accumulate a full-matrix linear coefficient into flattened slots."""
    if lay.kind == "symmetric":
        k = lay.offset
        for a in range(lay.rows):
            for b in range(a, lay.cols):
                out[k] += C[a, b] if a == b else C[a, b] + C[b, a]
                k += 1
    else:
        out[lay.offset:lay.offset + lay.size] += C.reshape(-1)


def _check_symmetric(name: str, M: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.abs(M).max()) if M.size else 0.0)
    if np.abs(M - M.T).max() > _SYM_CHECK_TOL * scale:
        raise FormulationError(
            f"constraint {name!r} lowers to a non-symmetric coefficient "
            "matrix; the block expression is not symmetric")
    return (M + M.T) / 2.0


def lower(problem: SdpProblem) -> StandardFormSdp:
    """Lower a block-structured problem to standard form, exactly.

    Raises
    ------
    FormulationError
        If the problem has no PSD blocks (an unconstrained linear program
        is unbounded or trivial; either way it signals a formulation bug),
        or if a block expression fails the symmetry check.
    """
    if not problem.constraints:
        raise FormulationError(
            "problem has no positive-semidefinite blocks; refusing to lower "
            "an unconstrained linear program")
    layout = _layout_of(problem)
    by_name = {lay.name: lay for lay in layout}
    n = sum(lay.size for lay in layout)

    objective = np.zeros(n)
    for name, coeff in problem.objective_terms:
        lay = by_name[name]
        _fold_coefficient(lay, np.atleast_2d(np.asarray(coeff, float)),
                          objective)

    blocks = []
    for con in problem.constraints:
        N = con.expr.rows
        F0 = con.expr.constant - con.margin * np.eye(N)
        accum: Dict[int, np.ndarray] = {}

        def bump(idx: int, M: np.ndarray) -> None:
            if idx in accum:
                accum[idx] += M
            else:
                accum[idx] = M.copy()

        for t in con.expr.terms:
            lay = by_name[t.var]
            if isinstance(t, ScalarTerm):
                bump(lay.offset, t.coeff)
            elif isinstance(t, FrobTerm):
                if N != 1:
                    raise FormulationError(
                        f"constraint {con.name!r}: trace-type term inside a "
                        f"{N}x{N} block")
                for k, (a, b) in enumerate(lay.component_indices()):
                    val = t.coeff[a, b] if a == b else t.coeff[a, b] + t.coeff[b, a]
                    if val != 0.0:
                        bump(lay.offset + k, np.array([[val]]))
            elif isinstance(t, MatTerm):
                # d(L V R)/dV[a,b] = outer(L[:,a], R[b,:]);
                # d(L V^T R)/dV[a,b] = outer(L[:,b], R[a,:]).
                L, R = t.left, t.right
                for k, (a, b) in enumerate(lay.component_indices()):
                    if t.transpose:
                        M = np.outer(L[:, b], R[a, :])
                        if lay.kind == "symmetric" and a != b:
                            M = M + np.outer(L[:, a], R[b, :])
                    else:
                        M = np.outer(L[:, a], R[b, :])
                        if lay.kind == "symmetric" and a != b:
                            M = M + np.outer(L[:, b], R[a, :])
                    bump(lay.offset + k, M)
            else:
                raise FormulationError(
                    f"constraint {con.name!r}: unknown term type {type(t)}")

        F0 = _check_symmetric(con.name, F0)
        coeffs = {}
        for idx, M in accum.items():
            if np.abs(M).max() == 0.0:
                continue
            coeffs[idx] = _check_symmetric(con.name, M)
        blocks.append(StandardBlock(con.name, N, F0, coeffs))

    equalities = []
    for eq in problem.equalities:
        row = np.zeros(n)
        for name, coeff in eq.coeffs:
            _fold_coefficient(by_name[name],
                              np.atleast_2d(np.asarray(coeff, float)), row)
        equalities.append((row, float(eq.rhs)))

    return StandardFormSdp(
        n=n,
        objective=objective,
        objective_constant=problem.objective_constant,
        layout=layout,
        blocks=tuple(blocks),
        equalities=tuple(equalities),
    )


def svec_dim(N: int) -> int:
    return N * (N + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization (column-major, off-diag * sqrt 2).

    This is the layout Clarabel's semidefinite cone expects; it is an
    isometry, so inner products are preserved.
    """
    N = M.shape[0]
    out = np.empty(svec_dim(N))
    k = 0
    for j in range(N):
        for i in range(j + 1):
            out[k] = M[i, j] if i == j else M[i, j] * math.sqrt(2.0)
            k += 1
    return out


def _unflatten(layout: Tuple[VariableLayout, ...],
               x: np.ndarray) -> Dict[str, object]:
    values: Dict[str, object] = {}
    for lay in layout:
        chunk = x[lay.offset:lay.offset + lay.size]
        if lay.kind == "scalar":
            values[lay.name] = float(chunk[0])
        elif lay.kind == "symmetric":
            M = np.zeros((lay.rows, lay.cols))
            k = 0
            for a in range(lay.rows):
                for b in range(a, lay.cols):
                    M[a, b] = chunk[k]
                    M[b, a] = chunk[k]
                    k += 1
            values[lay.name] = M
        else:
            values[lay.name] = chunk.reshape(lay.rows, lay.cols).copy()
    return values


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "MaxIterations": "max_iterations",
    "MaxTime": "max_iterations",
}


def solve_standard(std: StandardFormSdp,
                   settings: Optional[SolverSettings] = None) -> SdpSolution:
    """Solve a standard-form problem with the shipped conic solver.

    The solve is deterministic for identical inputs and settings. On any
    non-optimal outcome the returned values are empty and the objective is
    NaN; garbage is never silently returned.
    """
    import clarabel

    if settings is None:
        settings = SolverSettings()
    if not std.blocks:
        raise FormulationError("standard form has no cone blocks")

    rows = []
    b = []
    cones = []
    for coeff_row, rhs in std.equalities:
        rows.append(coeff_row)
        b.append(rhs)
    if std.equalities:
        cones.append(clarabel.ZeroConeT(len(std.equalities)))
    for blk in std.blocks:
        if blk.dim == 1:
            row = np.zeros(std.n)
            for idx, F in blk.coeffs.items():
                row[idx] = -F[0, 0]
            rows.append(row)
            b.append(float(blk.F0[0, 0]))
            cones.append(clarabel.NonnegativeConeT(1))
        else:
            chunk = np.zeros((svec_dim(blk.dim), std.n))
            for idx, F in blk.coeffs.items():
                chunk[:, idx] = -svec(F)
            rows.append(chunk)
            b.extend(svec(blk.F0))
            cones.append(clarabel.PSDTriangleConeT(blk.dim))
    A = sparse.csc_matrix(np.vstack([np.atleast_2d(r) for r in rows]))
    b = np.asarray(b, dtype=float)

    P = sparse.csc_matrix((std.n, std.n))
    cl_settings = clarabel.DefaultSettings()
    cl_settings.verbose = settings.verbose
    cl_settings.max_iter = settings.max_iterations
    cl_settings.tol_gap_abs = settings.tolerance
    cl_settings.tol_gap_rel = settings.tolerance
    cl_settings.tol_feas = settings.tolerance
    solver = clarabel.DefaultSolver(P, std.objective, A, b, cones, cl_settings)
    result = solver.solve()

    raw = str(result.status)
    status = _STATUS_MAP.get(raw, "numerical_failure")
    iterations = int(getattr(result, "iterations", 0))
    if status != "optimal":
        return SdpSolution(status=status, objective=math.nan, values={},
                           raw_status=raw, iterations=iterations)
    x = np.asarray(result.x, dtype=float)
    objective = float(std.objective @ x + std.objective_constant)
    return SdpSolution(status="optimal", objective=objective,
                       values=_unflatten(std.layout, x), raw_status=raw,
                       iterations=iterations)
