"""Block-structured semidefinite programs for regularized Koopman regression.

A problem is a set of named decision variables (rectangular matrices,
symmetric matrices, or scalars), a linear objective, and a list of affine
symmetric matrix blocks required to be positive semidefinite. Constraints
written strictly in the underlying derivations are realized by shifting
each such block down by ``margin * I``.

The base regression problem minimizes

    c - 2 trace(U G^T) + nu

subject to ``trace(W) < nu``, ``W > 0`` and a Schur-complement block that
bounds ``trace(U H_alpha U^T)`` by ``trace(W)``. Two interchangeable forms
of that block are provided: one using the inverse of ``H_alpha`` and an
inversion-free one using a factor ``L_alpha``. Regularizers (matrix
two-norm, nuclear norm, worst-case system gain) and an asymptotic
stability constraint compose onto the base problem as additional variables
and blocks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .edmd import EdmdMatrices, RegularizedGram
from .exceptions import (
    FormulationError,
    InvalidParameterError,
    NotPositiveDefiniteError,
)

VARIABLE_KINDS = ("matrix", "symmetric", "scalar")

EXTRA_REGULARIZERS = ("none", "two_norm", "nuclear", "hinf")

# Strict inequalities become `block - margin*I >= 0` with this scale rule.
MARGIN_COEFF = 1e-7


# ---------------------------------------------------------------------------
# Decision variables and affine matrix expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Variable:
    """A named decision variable block."""

    name: str
    kind: str
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.kind not in VARIABLE_KINDS:
            raise FormulationError(f"unknown variable kind {self.kind!r}")
        if self.rows < 1 or self.cols < 1:
            raise FormulationError(
                f"variable {self.name!r} has empty shape "
                f"({self.rows}, {self.cols})")
        if self.kind == "symmetric" and self.rows != self.cols:
            raise FormulationError(
                f"symmetric variable {self.name!r} must be square")
        if self.kind == "scalar" and (self.rows, self.cols) != (1, 1):
            raise FormulationError(
                f"scalar variable {self.name!r} must have shape (1, 1)")

    @property
    def n_components(self) -> int:
        """Number of free scalar components."""
        if self.kind == "symmetric":
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def component_indices(self) -> list:
        """(row, col) index of each free scalar component, in order.

        Matrices enumerate row-major over all entries; symmetric variables
        enumerate the upper triangle row-major. This map, together with the
        declaration order of variables, defines the flattening bijection
        used by the solver backend.
        """
        if self.kind == "symmetric":
            return [(a, b) for a in range(self.rows)
                    for b in range(a, self.cols)]
        return [(a, b) for a in range(self.rows) for b in range(self.cols)]


def scalar_variable(name: str) -> Variable:
    return Variable(name, "scalar", 1, 1)


@dataclass(frozen=True)
class MatTerm:
    """Term ``left @ V @ right`` (or ``left @ V.T @ right``)."""

    var: str
    left: np.ndarray
    right: np.ndarray
    transpose: bool = False


@dataclass(frozen=True)
class ScalarTerm:
    """Term ``v * coeff`` for a scalar variable ``v``."""

    var: str
    coeff: np.ndarray


@dataclass(frozen=True)
class FrobTerm:
    """Term ``<coeff, V>`` (Frobenius inner product); only valid in 1x1 blocks."""

    var: str
    coeff: np.ndarray


Term = Union[MatTerm, ScalarTerm, FrobTerm]


@dataclass(frozen=True)
class AffineMatrix:
    """A matrix-valued expression, affine in the declared variables."""

    rows: int
    cols: int
    constant: np.ndarray
    terms: Tuple[Term, ...] = ()

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def wrap(obj, rows: Optional[int] = None,
             cols: Optional[int] = None) -> "AffineMatrix":
        """Coerce a constant array (or an existing expression) to an expression."""
        if isinstance(obj, AffineMatrix):
            return obj
        M = np.atleast_2d(np.asarray(obj, dtype=float))
        if rows is not None and M.shape != (rows, cols):
            raise FormulationError(
                f"constant block has shape {M.shape}, expected ({rows}, {cols})")
        return AffineMatrix(M.shape[0], M.shape[1], M.copy())

    @staticmethod
    def zeros(rows: int, cols: int) -> "AffineMatrix":
        return AffineMatrix(rows, cols, np.zeros((rows, cols)))

    @staticmethod
    def of_variable(var: Variable) -> "AffineMatrix":
        """The variable itself as an expression."""
        return AffineMatrix(
            var.rows, var.cols, np.zeros((var.rows, var.cols)),
            (MatTerm(var.name, np.eye(var.rows), np.eye(var.cols)),))

    @staticmethod
    def scalar_times(var: Variable, coeff) -> "AffineMatrix":
        """``v * coeff`` for a scalar variable ``v`` and constant ``coeff``."""
        if var.kind != "scalar":
            raise FormulationError(f"{var.name!r} is not a scalar variable")
        C = np.atleast_2d(np.asarray(coeff, dtype=float))
        return AffineMatrix(C.shape[0], C.shape[1], np.zeros(C.shape),
                            (ScalarTerm(var.name, C.copy()),))

    @staticmethod
    def inner(var: Variable, coeff) -> "AffineMatrix":
        """1x1 expression ``<coeff, V>``; use for trace-type rows."""
        C = np.asarray(coeff, dtype=float)
        if C.shape != (var.rows, var.cols):
            raise FormulationError(
                f"inner-product coefficient shape {C.shape} does not match "
                f"variable {var.name!r} of shape ({var.rows}, {var.cols})")
        return AffineMatrix(1, 1, np.zeros((1, 1)),
                            (FrobTerm(var.name, C.copy()),))

    @staticmethod
    def trace_of(var: Variable) -> "AffineMatrix":
        """1x1 expression ``trace(V)``."""
        if var.rows != var.cols:
            raise FormulationError(f"trace of non-square variable {var.name!r}")
        return AffineMatrix.inner(var, np.eye(var.rows))

    # -- algebra ------------------------------------------------------------

    def __add__(self, other) -> "AffineMatrix":
        other = AffineMatrix.wrap(other)
        if other.shape != self.shape:
            raise FormulationError(
                f"shape mismatch in sum: {self.shape} vs {other.shape}")
        return AffineMatrix(self.rows, self.cols,
                            self.constant + other.constant,
                            self.terms + other.terms)

    def __neg__(self) -> "AffineMatrix":
        return self.scale(-1.0)

    def __sub__(self, other) -> "AffineMatrix":
        return self + (-AffineMatrix.wrap(other))

    def scale(self, s: float) -> "AffineMatrix":
        terms = []
        for t in self.terms:
            if isinstance(t, MatTerm):
                terms.append(MatTerm(t.var, s * t.left, t.right, t.transpose))
            elif isinstance(t, ScalarTerm):
                terms.append(ScalarTerm(t.var, s * t.coeff))
            else:
                terms.append(FrobTerm(t.var, s * t.coeff))
        return AffineMatrix(self.rows, self.cols, s * self.constant,
                            tuple(terms))

    def left_mul(self, M) -> "AffineMatrix":
        """``M @ self`` for a constant matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.rows:
            raise FormulationError(
                f"left factor of shape {M.shape} does not fit expression "
                f"with {self.rows} rows")
        terms = []
        for t in self.terms:
            if isinstance(t, MatTerm):
                terms.append(MatTerm(t.var, M @ t.left, t.right, t.transpose))
            elif isinstance(t, ScalarTerm):
                terms.append(ScalarTerm(t.var, M @ t.coeff))
            else:
                raise FormulationError(
                    "trace-type expressions cannot be matrix-multiplied")
        return AffineMatrix(M.shape[0], self.cols, M @ self.constant,
                            tuple(terms))

    def right_mul(self, M) -> "AffineMatrix":
        """``self @ M`` for a constant matrix ``M``."""
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[0] != self.cols:
            raise FormulationError(
                f"right factor of shape {M.shape} does not fit expression "
                f"with {self.cols} columns")
        terms = []
        for t in self.terms:
            if isinstance(t, MatTerm):
                terms.append(MatTerm(t.var, t.left, t.right @ M, t.transpose))
            elif isinstance(t, ScalarTerm):
                terms.append(ScalarTerm(t.var, t.coeff @ M))
            else:
                raise FormulationError(
                    "trace-type expressions cannot be matrix-multiplied")
        return AffineMatrix(self.rows, M.shape[1], self.constant @ M,
                            tuple(terms))

    @property
    def T(self) -> "AffineMatrix":
        terms = []
        for t in self.terms:
            if isinstance(t, MatTerm):
                terms.append(MatTerm(t.var, t.right.T, t.left.T,
                                     not t.transpose))
            elif isinstance(t, ScalarTerm):
                terms.append(ScalarTerm(t.var, t.coeff.T))
            else:
                terms.append(t)  # 1x1
        return AffineMatrix(self.cols, self.rows, self.constant.T,
                            tuple(terms))

    def evaluate(self, values: Dict[str, Union[np.ndarray, float]]) -> np.ndarray:
        """Numeric value of the expression at a variable assignment."""
        out = self.constant.copy()
        for t in self.terms:
            V = np.atleast_2d(np.asarray(values[t.var], dtype=float))
            if isinstance(t, MatTerm):
                out += t.left @ (V.T if t.transpose else V) @ t.right
            elif isinstance(t, ScalarTerm):
                out += float(V[0, 0]) * t.coeff
            else:
                out[0, 0] += float(np.sum(t.coeff * V))
        return out


def block(grid: Sequence[Sequence]) -> AffineMatrix:
    """Assemble a block matrix expression from a 2-D grid of entries.

    Entries may be expressions, constant arrays, or ``None`` for a zero
    block whose shape is inferred from its row and column neighbours.
    """
    nrows = len(grid)
    ncols = len(grid[0])
    if any(len(row) != ncols for row in grid):
        raise FormulationError("ragged block grid")
    wrapped = [[None if e is None else AffineMatrix.wrap(e) for e in row]
               for row in grid]
    heights = [None] * nrows
    widths = [None] * ncols
    for i in range(nrows):
        for j in range(ncols):
            e = wrapped[i][j]
            if e is None:
                continue
            if heights[i] is None:
                heights[i] = e.rows
            elif heights[i] != e.rows:
                raise FormulationError(f"inconsistent height in block row {i}")
            if widths[j] is None:
                widths[j] = e.cols
            elif widths[j] != e.cols:
                raise FormulationError(f"inconsistent width in block column {j}")
    if any(h is None for h in heights) or any(w is None for w in widths):
        raise FormulationError("a block row or column contains only zero blocks")
    N = sum(heights)
    M = sum(widths)
    row_off = np.concatenate([[0], np.cumsum(heights)])
    col_off = np.concatenate([[0], np.cumsum(widths)])
    constant = np.zeros((N, M))
    terms = []
    for i in range(nrows):
        for j in range(ncols):
            e = wrapped[i][j]
            if e is None:
                continue
            ro, co = int(row_off[i]), int(col_off[j])
            constant[ro:ro + e.rows, co:co + e.cols] += e.constant
            for t in e.terms:
                if isinstance(t, MatTerm):
                    left = np.zeros((N, t.left.shape[1]))
                    left[ro:ro + e.rows] = t.left
                    right = np.zeros((t.right.shape[0], M))
                    right[:, co:co + e.cols] = t.right
                    terms.append(MatTerm(t.var, left, right, t.transpose))
                elif isinstance(t, ScalarTerm):
                    coeff = np.zeros((N, M))
                    coeff[ro:ro + e.rows, co:co + e.cols] = t.coeff
                    terms.append(ScalarTerm(t.var, coeff))
                else:
                    raise FormulationError(
                        "trace-type expressions cannot be embedded in a "
                        "larger block")
    return AffineMatrix(N, M, constant, tuple(terms))


# ---------------------------------------------------------------------------
# Problems and solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PsdConstraint:
    """Requirement ``expr - margin * I >= 0`` (positive semidefinite)."""

    name: str
    expr: AffineMatrix
    margin: float = 0.0

    def __post_init__(self) -> None:
        if self.expr.rows != self.expr.cols:
            raise FormulationError(
                f"constraint {self.name!r} block is not square: "
                f"{self.expr.shape}")
        if self.margin < 0:
            raise FormulationError(f"constraint {self.name!r} margin < 0")


@dataclass(frozen=True)
class LinearEquality:
    """Requirement ``sum_v <coeff_v, V> = rhs``."""

    name: str
    coeffs: Tuple[Tuple[str, np.ndarray], ...]
    rhs: float


@dataclass(frozen=True)
class SdpProblem:
    """An immutable semidefinite program with a linear objective.

    ``objective_terms`` maps each variable to a coefficient array of the
    same shape; the objective is the constant plus the sum of Frobenius
    inner products of coefficients with variable values. Treat instances
    as immutable: composition helpers return new problems.
    """

    variables: Tuple[Variable, ...]
    objective_constant: float
    objective_terms: Tuple[Tuple[str, np.ndarray], ...]
    constraints: Tuple[PsdConstraint, ...]
    equalities: Tuple[LinearEquality, ...] = ()
    strictness_margin: float = 0.0

    def __post_init__(self) -> None:
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise FormulationError(f"duplicate variable names in {names}")
        declared = set(names)
        for name, _ in self.objective_terms:
            if name not in declared:
                raise FormulationError(
                    f"objective references undeclared variable {name!r}")
        for con in self.constraints:
            for t in con.expr.terms:
                if t.var not in declared:
                    raise FormulationError(
                        f"constraint {con.name!r} references undeclared "
                        f"variable {t.var!r}")
        for eq in self.equalities:
            for name, _ in eq.coeffs:
                if name not in declared:
                    raise FormulationError(
                        f"equality {eq.name!r} references undeclared "
                        f"variable {name!r}")

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise FormulationError(f"no variable named {name!r}")

    def has_variable(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    def extended(self, variables: Sequence[Variable] = (),
                 objective_terms: Sequence[Tuple[str, np.ndarray]] = (),
                 constraints: Sequence[PsdConstraint] = (),
                 equalities: Sequence[LinearEquality] = ()) -> "SdpProblem":
        """A new problem with extra variables, objective terms, and blocks."""
        return SdpProblem(
            variables=self.variables + tuple(variables),
            objective_constant=self.objective_constant,
            objective_terms=self.objective_terms + tuple(objective_terms),
            constraints=self.constraints + tuple(constraints),
            equalities=self.equalities + tuple(equalities),
            strictness_margin=self.strictness_margin,
        )

    def objective_value(self, values: Dict[str, Union[np.ndarray, float]]) -> float:
        """Recompute the objective at a variable assignment."""
        total = self.objective_constant
        for name, coeff in self.objective_terms:
            V = np.atleast_2d(np.asarray(values[name], dtype=float))
            total += float(np.sum(np.asarray(coeff) * V))
        return float(total)


@dataclass(frozen=True)
class SdpSolution:
    """Solver output.

    ``status`` is one of ``optimal``, ``infeasible``, ``max_iterations``
    or ``numerical_failure``. ``values`` maps variable names to matrices
    (or floats for scalar variables); it is empty unless the solve
    produced a usable point.
    """

    status: str
    objective: float
    values: Dict[str, Union[np.ndarray, float]]
    raw_status: str = ""
    iterations: int = 0


# ---------------------------------------------------------------------------
# Regularizer configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegularizerSpec:
    """Which regularizers and constraints to apply on top of the ridge term.

    At most one of the ``extra`` regularizers may be active, and the
    worst-case-gain regularizer cannot be combined with the stability
    constraint because each alternation owns its own Lyapunov certificate.
    """

    tikhonov_alpha: float = 0.0
    extra: str = "none"
    beta: Optional[float] = None
    spectral_radius: Optional[float] = None

    def __post_init__(self) -> None:
        if self.tikhonov_alpha < 0:
            raise InvalidParameterError(
                f"tikhonov_alpha must be >= 0, got {self.tikhonov_alpha}")
        if self.extra not in EXTRA_REGULARIZERS:
            raise InvalidParameterError(
                f"extra must be one of {EXTRA_REGULARIZERS}, got {self.extra!r}")
        if self.extra != "none":
            if self.beta is None or self.beta <= 0:
                raise InvalidParameterError(
                    f"beta must be > 0 with extra={self.extra!r}, "
                    f"got {self.beta}")
        elif self.beta is not None:
            raise InvalidParameterError("beta given but extra='none'")
        if self.spectral_radius is not None:
            if not (0.0 < self.spectral_radius < 1.0):
                raise InvalidParameterError(
                    f"spectral_radius must be in (0, 1), "
                    f"got {self.spectral_radius}")
            if self.extra == "hinf":
                raise InvalidParameterError(
                    "the worst-case-gain regularizer and the stability "
                    "constraint cannot be combined; each needs its own "
                    "Lyapunov variable")


# ---------------------------------------------------------------------------
# Formulations
# ---------------------------------------------------------------------------


def default_margin(H_alpha: np.ndarray) -> float:
    """Strictness margin scaled to the data: ``1e-7 * max(1, ||H_alpha||_2)``."""
    return MARGIN_COEFF * max(1.0, float(np.linalg.norm(H_alpha, 2)))


def _selector_A(p: int, p_theta: int) -> np.ndarray:
    S = np.zeros((p, p_theta))
    S[:p_theta, :] = np.eye(p_theta)
    return S


def _selector_B(p: int, p_theta: int) -> np.ndarray:
    S = np.zeros((p, p - p_theta))
    S[p_theta:, :] = np.eye(p - p_theta)
    return S


def _check_dims(rg: RegularizedGram, em: EdmdMatrices) -> None:
    p = em.p
    if rg.H_alpha.shape != (p, p) or rg.L_alpha.shape != (p, p):
        raise FormulationError(
            f"regularized Gram of shape {rg.H_alpha.shape} does not match "
            f"data with p = {p}")


def _base_problem(em: EdmdMatrices, quad_block: AffineMatrix,
                  margin: float) -> SdpProblem:
    p_t, p = em.p_theta, em.p
    U = Variable("U", "matrix", p_t, p)
    W = Variable("W", "symmetric", p_t, p_t)
    nu = scalar_variable("nu")
    slack = (AffineMatrix.scalar_times(nu, [[1.0]])
             - AffineMatrix.trace_of(W))
    return SdpProblem(
        variables=(U, W, nu),
        objective_constant=em.c,
        objective_terms=(("U", -2.0 * em.G), ("nu", np.array([[1.0]]))),
        constraints=(
            PsdConstraint("cost_slack", slack, margin),
            PsdConstraint("W_pd", AffineMatrix.of_variable(W), margin),
            PsdConstraint("quadratic_cost", quad_block, margin),
        ),
        strictness_margin=margin,
    )


def formulate_base(rg: RegularizedGram, em: EdmdMatrices,
                   margin: Optional[float] = None) -> SdpProblem:
    """Inversion-free base regression problem.

    Uses the factor ``L_alpha`` in the Schur block

        [ W          U L_alpha ]
        [ L^T U^T    I         ]

    so the data matrix never needs to be inverted. Minimizing the
    objective drives ``U`` to the ridge-regularized regression solution.
    """
    _check_dims(rg, em)
    if margin is None:
        margin = default_margin(rg.H_alpha)
    p_t, p = em.p_theta, em.p
    U = Variable("U", "matrix", p_t, p)
    W = Variable("W", "symmetric", p_t, p_t)
    UL = AffineMatrix.of_variable(U).right_mul(rg.L_alpha)
    quad = block([
        [AffineMatrix.of_variable(W), UL],
        [UL.T, np.eye(p)],
    ])
    return _base_problem(em, quad, margin)


def formulate_base_inverted(rg: RegularizedGram, em: EdmdMatrices,
                            margin: Optional[float] = None) -> SdpProblem:
    """Base regression problem in the matrix-inverse form.

    Requires ``H_alpha`` to be positive definite and places its inverse in
    the Schur block

        [ W      U          ]
        [ U^T    H_alpha^-1 ]

    This form exists to cross-validate the inversion-free one; that one is
    almost always preferable numerically.

    Raises
    ------
    NotPositiveDefiniteError
        If ``H_alpha`` is singular or indefinite.
    """
    _check_dims(rg, em)
    if margin is None:
        margin = default_margin(rg.H_alpha)
    w = np.linalg.eigvalsh(rg.H_alpha)
    if w[0] <= 1e-12 * max(1.0, float(w[-1])):
        raise NotPositiveDefiniteError(
            f"H_alpha is not positive definite (min eigenvalue {w[0]:.3e}); "
            "use the inversion-free formulation or a positive ridge "
            "coefficient")
    H_inv = np.linalg.inv(rg.H_alpha)
    H_inv = (H_inv + H_inv.T) / 2.0
    p_t = em.p_theta
    U = Variable("U", "matrix", p_t, em.p)
    W = Variable("W", "symmetric", p_t, p_t)
    quad = block([
        [AffineMatrix.of_variable(W), AffineMatrix.of_variable(U)],
        [AffineMatrix.of_variable(U).T, H_inv],
    ])
    return _base_problem(em, quad, margin)


def _require_base(problem: SdpProblem) -> Variable:
    if not problem.has_variable("U"):
        raise FormulationError("the base regression problem must be "
                               "formulated first")
    return problem.variable("U")


def _require_no_extra(problem: SdpProblem) -> None:
    if problem.has_variable("gamma"):
        raise FormulationError(
            "at most one extra regularizer may be added to a problem")


def add_two_norm(problem: SdpProblem, beta: float, q: int) -> SdpProblem:
    """Add a matrix two-norm penalty ``(beta/q) * sigma_max(U)``.

    Introduces a scalar bound ``gamma`` with the block

        [ gamma*I   U       ]
        [ U^T       gamma*I ]

    and adds ``(beta/q) * gamma`` to the objective.
    """
    if beta <= 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    U = _require_base(problem)
    _require_no_extra(problem)
    gamma = scalar_variable("gamma")
    expr = block([
        [AffineMatrix.scalar_times(gamma, np.eye(U.rows)),
         AffineMatrix.of_variable(U)],
        [AffineMatrix.of_variable(U).T,
         AffineMatrix.scalar_times(gamma, np.eye(U.cols))],
    ])
    return problem.extended(
        variables=(gamma,),
        objective_terms=(("gamma", np.array([[beta / q]])),),
        constraints=(PsdConstraint("two_norm", expr,
                                   problem.strictness_margin),),
    )


def add_nuclear(problem: SdpProblem, beta: float, q: int) -> SdpProblem:
    """Add a nuclear-norm penalty ``(beta/q) * ||U||_*``.

    Introduces symmetric ``V1``, ``V2`` and a scalar ``gamma`` with

        trace(V1) + trace(V2) <= 2*gamma,
        [ V1    U  ]
        [ U^T   V2 ]  >=  0   (not shifted: this block is non-strict),

    and adds ``(beta/q) * gamma`` to the objective.
    """
    if beta <= 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    U = _require_base(problem)
    _require_no_extra(problem)
    gamma = scalar_variable("gamma")
    V1 = Variable("V1", "symmetric", U.rows, U.rows)
    V2 = Variable("V2", "symmetric", U.cols, U.cols)
    trace_row = (AffineMatrix.scalar_times(gamma, [[2.0]])
                 - AffineMatrix.trace_of(V1)
                 - AffineMatrix.trace_of(V2))
    outer = block([
        [AffineMatrix.of_variable(V1), AffineMatrix.of_variable(U)],
        [AffineMatrix.of_variable(U).T, AffineMatrix.of_variable(V2)],
    ])
    return problem.extended(
        variables=(gamma, V1, V2),
        objective_terms=(("gamma", np.array([[beta / q]])),),
        constraints=(
            PsdConstraint("nuclear_trace", trace_row, 0.0),
            PsdConstraint("nuclear_outer", outer, 0.0),
        ),
    )


def _check_spd(P: np.ndarray, what: str) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidParameterError(f"{what} must be square, got {P.shape}")
    if np.linalg.norm(P - P.T, np.inf) > 1e-10 * max(1.0, np.linalg.norm(P, np.inf)):
        raise InvalidParameterError(f"{what} must be symmetric")
    P = (P + P.T) / 2.0
    w = np.linalg.eigvalsh(P)
    if w[0] <= 1e-12 * max(1.0, float(w[-1])):
        raise InvalidParameterError(
            f"{what} must be positive definite (min eigenvalue {w[0]:.3e})")
    return P


def add_stability_step_U(problem: SdpProblem, rho_bar: float,
                         P_fixed) -> SdpProblem:
    """Constrain the spectral radius of the state block for a frozen ``P``.

    Adds the Lyapunov-type block

        [ rho_bar*P   A^T P     ]
        [ P A         rho_bar*P ]

    where ``A`` is the left square block of ``U``. For the frozen
    certificate this is affine in ``U`` and any feasible ``A`` has
    spectral radius below ``rho_bar``.
    """
    if not (0.0 < rho_bar < 1.0):
        raise InvalidParameterError(f"rho_bar must be in (0, 1), got {rho_bar}")
    U = _require_base(problem)
    P = _check_spd(P_fixed, "P_fixed")
    p_t = U.rows
    if P.shape != (p_t, p_t):
        raise InvalidParameterError(
            f"P_fixed has shape {P.shape}, expected ({p_t}, {p_t})")
    A_expr = AffineMatrix.of_variable(U).right_mul(_selector_A(U.cols, p_t))
    expr = block([
        [rho_bar * P, A_expr.T.right_mul(P)],
        [A_expr.left_mul(P), rho_bar * P],
    ])
    return problem.extended(
        constraints=(PsdConstraint("stability", expr,
                                   problem.strictness_margin),),
    )


def add_stability_step_P(A_fixed, rho_bar: float,
                         margin: float = 1e-8) -> SdpProblem:
    """Feasibility problem for a Lyapunov certificate of a frozen ``A``.

    Searches for symmetric ``P`` with ``P > 0`` and the same block as
    :func:`add_stability_step_U`, now affine in ``P``. The certificate is
    normalized by ``trace(P) = p_theta`` because the block is homogeneous
    in ``P``. Infeasible exactly when the spectral radius of ``A`` is not
    below ``rho_bar``.
    """
    if not (0.0 < rho_bar < 1.0):
        raise InvalidParameterError(f"rho_bar must be in (0, 1), got {rho_bar}")
    A = np.atleast_2d(np.asarray(A_fixed, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise InvalidParameterError(f"A_fixed must be square, got {A.shape}")
    p_t = A.shape[0]
    P = Variable("P", "symmetric", p_t, p_t)
    P_expr = AffineMatrix.of_variable(P)
    expr = block([
        [P_expr.scale(rho_bar), P_expr.left_mul(A.T)],
        [P_expr.right_mul(A), P_expr.scale(rho_bar)],
    ])
    constraints = [
        PsdConstraint("P_pd", P_expr, margin),
        PsdConstraint("stability", expr, margin),
    ]
    constraints.extend(_spectral_precheck(A, rho_bar))
    return SdpProblem(
        variables=(P,),
        objective_constant=0.0,
        objective_terms=(),
        constraints=tuple(constraints),
        equalities=(LinearEquality("P_trace", (("P", np.eye(p_t)),),
                                   float(p_t)),),
        strictness_margin=margin,
    )


def _spectral_precheck(A: np.ndarray, rho_bar: float) -> Tuple[PsdConstraint, ...]:
    """Encode provable certificate nonexistence as an infeasible block.

    A Lyapunov-type certificate for a frozen ``A`` exists exactly when its
    spectral radius is below the bound, so when it is not, the problem is
    infeasible by construction. Interior-point solvers detect that only
    weakly here (the violation is margin-deep), so the exact analytic
    condition is planted as a constant infeasible row instead, which any
    solver certifies instantly.
    """
    rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    if rho >= rho_bar:
        return (PsdConstraint(
            "spectral_radius_precheck",
            AffineMatrix.wrap([[rho_bar - rho - 1.0]]), 0.0),)
    return ()


def _resolve_CD(C, D, p_t: int, p_u: int) -> Tuple[np.ndarray, np.ndarray]:
    C = np.eye(p_t) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != p_t:
        raise FormulationError(f"C must have {p_t} columns, got {C.shape}")
    D = (np.zeros((C.shape[0], p_u)) if D is None
         else np.atleast_2d(np.asarray(D, dtype=float)))
    if D.shape != (C.shape[0], p_u):
        raise FormulationError(
            f"D must have shape ({C.shape[0]}, {p_u}), got {D.shape}")
    return C, D


def _gain_block(AP_expr: AffineMatrix, B_expr: AffineMatrix,
                P_expr: AffineMatrix, gamma: Variable,
                C: np.ndarray, D: np.ndarray,
                p_u: int) -> AffineMatrix:
    """Bounded-gain block shared by the two alternation steps.

        [ P       A P    B        0       ]
        [ P A^T   P      0        P C^T   ]
        [ B^T     0      gamma*I  D^T     ]
        [ 0       C P    D        gamma*I ]

    ``AP_expr`` is the product ``A P`` (affine in whichever factor is the
    decision variable) and ``B_expr`` the input block.
    """
    n_out = C.shape[0]
    PCt = P_expr.right_mul(C.T)
    return block([
        [P_expr, AP_expr, B_expr, None],
        [AP_expr.T, P_expr, None, PCt],
        [B_expr.T, None,
         AffineMatrix.scalar_times(gamma, np.eye(p_u)), D.T],
        [None, PCt.T, D,
         AffineMatrix.scalar_times(gamma, np.eye(n_out))],
    ])


def add_hinf_step_U(problem: SdpProblem, beta: float, q: int, P_fixed,
                    C=None, D=None) -> SdpProblem:
    """Add a worst-case-gain penalty for a frozen Lyapunov certificate.

    Introduces a scalar ``gamma``, adds ``(beta/q) * gamma`` to the
    objective, and imposes the discrete-time bounded-gain block with ``P``
    frozen, affine in the partition ``U = [A B]``. Any feasible point
    certifies that the induced LTI system has worst-case gain below
    ``gamma`` (and in particular is asymptotically stable).

    Raises
    ------
    FormulationError
        If the model has no input columns; the gain is from the lifted
        input to the output, so ``B`` must exist.
    """
    if beta <= 0:
        raise InvalidParameterError(f"beta must be > 0, got {beta}")
    U = _require_base(problem)
    _require_no_extra(problem)
    p_t, p = U.rows, U.cols
    p_u = p - p_t
    if p_u < 1:
        raise FormulationError(
            "the worst-case-gain regularizer needs at least one input "
            "column in U")
    P = _check_spd(P_fixed, "P_fixed")
    if P.shape != (p_t, p_t):
        raise InvalidParameterError(
            f"P_fixed has shape {P.shape}, expected ({p_t}, {p_t})")
    C, D = _resolve_CD(C, D, p_t, p_u)
    gamma = scalar_variable("gamma")
    U_expr = AffineMatrix.of_variable(U)
    A_expr = U_expr.right_mul(_selector_A(p, p_t))
    expr = _gain_block(
        A_expr.right_mul(P),                    # A P, affine in U
        U_expr.right_mul(_selector_B(p, p_t)),  # B, affine in U
        AffineMatrix.wrap(P),
        gamma, C, D, p_u)
    return problem.extended(
        variables=(gamma,),
        objective_terms=(("gamma", np.array([[beta / q]])),),
        constraints=(PsdConstraint("bounded_gain", expr,
                                   problem.strictness_margin),),
    )


def add_hinf_step_P(A_fixed, B_fixed, C=None, D=None,
                    margin: float = 1e-8) -> SdpProblem:
    """Tightest certified gain bound for a frozen model.

    Minimizes ``gamma`` over a symmetric ``P > 0`` and the bounded-gain
    block with ``A`` and ``B`` frozen (affine in ``P`` and ``gamma``).
    Infeasible exactly when the frozen state block is not asymptotically
    stable.
    """
    A = np.atleast_2d(np.asarray(A_fixed, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise InvalidParameterError(f"A_fixed must be square, got {A.shape}")
    p_t = A.shape[0]
    B = np.asarray(B_fixed, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != p_t or B.shape[1] < 1:
        raise FormulationError(
            f"B_fixed must have {p_t} rows and at least one column, "
            f"got {B.shape}")
    p_u = B.shape[1]
    C, D = _resolve_CD(C, D, p_t, p_u)
    P = Variable("P", "symmetric", p_t, p_t)
    gamma = scalar_variable("gamma")
    P_expr = AffineMatrix.of_variable(P)
    expr = _gain_block(
        P_expr.left_mul(A),        # A P, affine in P
        AffineMatrix.wrap(B),
        P_expr,
        gamma, C, D, p_u)
    constraints = [
        PsdConstraint("P_pd", P_expr, margin),
        PsdConstraint("bounded_gain", expr, margin),
    ]
    constraints.extend(_spectral_precheck(A, 1.0))
    return SdpProblem(
        variables=(P, gamma),
        objective_constant=0.0,
        objective_terms=(("gamma", np.array([[1.0]])),),
        constraints=tuple(constraints),
        strictness_margin=margin,
    )


# ---------------------------------------------------------------------------
# Solving and inspection
# ---------------------------------------------------------------------------


def solve(problem: SdpProblem, tol: float = 1e-9,
          max_iterations: int = 200, verbose: bool = False) -> SdpSolution:
    """Solve a problem through the standard-form backend.

    On an ``optimal`` status every constraint block, re-evaluated at the
    returned values, has minimum eigenvalue at least ``margin - 1e-6``;
    solutions violating this are downgraded to ``numerical_failure``
    rather than silently returned.
    """
    from . import backend

    std = backend.lower(problem)
    settings = backend.SolverSettings(tolerance=tol,
                                      max_iterations=max_iterations,
                                      verbose=verbose)
    sol = backend.solve_standard(std, settings)
    if sol.status != "optimal":
        return sol
    for con in problem.constraints:
        M = con.expr.evaluate(sol.values)
        M = (M + M.T) / 2.0
        lam_min = float(np.linalg.eigvalsh(M)[0])
        if lam_min < con.margin - 1e-6:
            return dataclasses.replace(
                sol, status="numerical_failure",
                raw_status=(f"{sol.raw_status}; residual check failed on "
                            f"{con.name!r} (min eig {lam_min:.3e})"))
    return sol


def format_problem(problem: SdpProblem) -> str:
    """Human-readable dump of a problem for solver-independent inspection.

    Lists the variable table, the objective, and each constraint's dense
    constant block along with the structure of its variable terms. The
    format is for debugging and is not guaranteed bit-stable.
    """
    out = []
    out.append(f"SdpProblem: {len(problem.variables)} variables, "
               f"{len(problem.constraints)} PSD blocks, "
               f"{len(problem.equalities)} equalities")
    out.append(f"strictness margin: {problem.strictness_margin:.3e}")
    out.append("variables:")
    for v in problem.variables:
        out.append(f"  {v.name:10s} {v.kind:10s} ({v.rows} x {v.cols}), "
                   f"{v.n_components} components")
    out.append(f"objective: {problem.objective_constant!r} + sum of:")
    for name, coeff in problem.objective_terms:
        out.append(f"  <coeff, {name}> with coeff =")
        out.append(_indent(np.array2string(np.asarray(coeff), precision=6)))
    for con in problem.constraints:
        out.append(f"constraint {con.name!r}: {con.expr.rows} x "
                   f"{con.expr.cols}, margin {con.margin:.3e}")
        out.append("  constant block =")
        out.append(_indent(np.array2string(con.expr.constant, precision=6)))
    for eq in problem.equalities:
        vars_ = ", ".join(name for name, _ in eq.coeffs)
        out.append(f"equality {eq.name!r}: <coeffs, ({vars_})> = {eq.rhs!r}")
    return "\n".join(out)


def _indent(text: str, prefix: str = "    ") -> str:
    return "\n".join(prefix + line for line in text.splitlines())
