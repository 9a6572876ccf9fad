"""Scaled Gram matrices, closed-form regression solutions, and factorization.

The regression data is summarized by the snapshot-scaled Gram matrices
``G = ThetaPlus Psi^T / q`` and ``H = Psi Psi^T / q`` together with the
constant ``c = trace(ThetaPlus ThetaPlus^T) / q``, so that the mean squared
one-step residual of any coefficient matrix ``U`` equals
``c - 2 trace(U G^T) + trace(U H U^T)``. The ridge-shifted matrix
``H_alpha = H + (alpha/q) I`` carries Tikhonov regularization, and its
factor ``L_alpha`` (``H_alpha = L_alpha L_alpha^T``) is what the
inversion-free optimization formulations consume.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lifting as lf
from .analysis import KoopmanModel
from .exceptions import (
    EmptyDatasetError,
    InvalidParameterError,
    NotPositiveSemidefiniteError,
    NumericalError,
)

FACTORIZATION_ROUTES = ("eig", "svd")

# Eigenvalues of H_alpha in [-EIG_CLAMP_TOL, 0) are treated as floating-point
# noise and clamped to zero; anything below signals corrupted input.
EIG_CLAMP_TOL = 1e-12

DEFAULT_RCOND = 1e-12


class RankDeficientGramWarning(UserWarning):
    """The data Gram matrix is rank deficient; the pseudoinverse truncated."""


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


@dataclass(frozen=True)
class EdmdMatrices:
    """Snapshot-scaled regression data.

    ``Psi`` is retained (when available) because the SVD factorization
    route works on the raw snapshot matrix rather than on ``H``. The
    lifting metadata rides along so fitted models can be used for
    prediction.
    """

    G: np.ndarray
    H: np.ndarray
    c: float
    q: int
    Psi: Optional[np.ndarray] = None
    lifting: Optional[lf.LiftingSpec] = None
    m: Optional[int] = None
    n: Optional[int] = None

    @property
    def p_theta(self) -> int:
        return self.G.shape[0]

    @property
    def p(self) -> int:
        return self.G.shape[1]

    @property
    def p_upsilon(self) -> int:
        return self.p - self.p_theta


@dataclass(frozen=True)
class RegularizedGram:
    """Ridge-shifted Gram matrix and a factor of it.

    ``H_alpha = H + (alpha/q) I`` and ``L_alpha L_alpha^T = H_alpha`` up to
    the reconstruction tolerance enforced at construction time.
    """

    alpha: float
    H_alpha: np.ndarray
    L_alpha: np.ndarray
    route: str


def compute_gram(lifted: lf.LiftedMatrices) -> EdmdMatrices:
    """Compute the scaled Gram data from lifted snapshot matrices.

    Raises
    ------
    EmptyDatasetError
        If there are no snapshot columns.
    """
    if lifted.q < 1:
        raise EmptyDatasetError("no snapshot pairs; cannot form Gram matrices")
    q = lifted.q
    G = lifted.ThetaPlus @ lifted.Psi.T / q
    H = _sym(lifted.Psi @ lifted.Psi.T / q)
    c = float(np.sum(lifted.ThetaPlus * lifted.ThetaPlus) / q)
    return EdmdMatrices(G=G, H=H, c=c, q=q, Psi=lifted.Psi.copy(),
                        lifting=lifted.lifting, m=lifted.m, n=lifted.n)


def _model_from(em: EdmdMatrices, U: np.ndarray) -> KoopmanModel:
    return KoopmanModel(U=U, lifting=em.lifting, m=em.m, n=em.n)


def _shifted_pinv(em: EdmdMatrices, shift: float, rcond: float) -> np.ndarray:
    H_alpha = _sym(em.H) + shift * np.eye(em.p)
    w = np.linalg.eigvalsh(H_alpha)
    w_max = float(w[-1])
    rank = int(np.sum(w > rcond * max(w_max, 0.0)))
    if rank < em.p:
        warnings.warn(
            f"data Gram matrix is rank deficient (rank {rank} of {em.p}); "
            "small eigenvalues were truncated in the pseudoinverse",
            RankDeficientGramWarning, stacklevel=3)
    return np.linalg.pinv(H_alpha, rcond=rcond, hermitian=True)


def solve_pinv(em: EdmdMatrices, rcond: float = DEFAULT_RCOND) -> KoopmanModel:
    """Least-squares regression solution ``U = G H^+``.

    Eigenvalues of ``H`` below ``rcond`` times the largest are truncated.
    Rank deficiency is reported with :class:`RankDeficientGramWarning`
    rather than an error.
    """
    U = em.G @ _shifted_pinv(em, 0.0, rcond)
    return _model_from(em, U)


def solve_tikhonov(em: EdmdMatrices, alpha: float,
                   rcond: float = DEFAULT_RCOND) -> KoopmanModel:
    """Ridge-regularized regression solution ``U = G (H + (alpha/q) I)^+``.

    Reduces exactly to :func:`solve_pinv` at ``alpha = 0``.

    Raises
    ------
    InvalidParameterError
        If ``alpha`` is negative.
    """
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    U = em.G @ _shifted_pinv(em, alpha / em.q, rcond)
    return _model_from(em, U)


def factor_L(em: EdmdMatrices, alpha: float = 0.0,
             route: str = "eig") -> RegularizedGram:
    """Factor the ridge-shifted Gram matrix as ``H_alpha = L L^T``.

    Parameters
    ----------
    em : EdmdMatrices
        Regression data.
    alpha : float
        Ridge coefficient (>= 0).
    route : str
        ``'eig'`` factors ``H_alpha`` by eigendecomposition, clamping
        eigenvalues in ``[-1e-12, 0)`` to zero. ``'svd'`` builds the factor
        from a full singular value decomposition of the snapshot matrix,
        which never forms ``H`` explicitly; the square root involved is of
        a diagonal matrix. Columns are ordered by descending eigenvalue or
        singular value respectively.

    Raises
    ------
    NotPositiveSemidefiniteError
        If ``H_alpha`` has an eigenvalue below ``-1e-12`` (corrupted data).
    InvalidParameterError
        For a negative ``alpha``, an unknown route, or the SVD route on
        data without a stored snapshot matrix.
    """
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be >= 0, got {alpha}")
    if route not in FACTORIZATION_ROUTES:
        raise InvalidParameterError(
            f"route must be one of {FACTORIZATION_ROUTES}, got {route!r}")
    H_alpha = _sym(em.H) + (alpha / em.q) * np.eye(em.p)
    if route == "eig":
        w, V = np.linalg.eigh(H_alpha)
        if w[0] < -EIG_CLAMP_TOL:
            raise NotPositiveSemidefiniteError(
                f"H_alpha has eigenvalue {w[0]:.3e} < -{EIG_CLAMP_TOL:.0e}")
        w = np.clip(w, 0.0, None)
        order = np.argsort(-w, kind="stable")
        L = V[:, order] * np.sqrt(w[order])
    else:
        if em.Psi is None:
            raise InvalidParameterError(
                "the 'svd' route needs the snapshot matrix Psi; this "
                "EdmdMatrices was built without one")
        Q, s, _ = np.linalg.svd(em.Psi, full_matrices=True)
        s_full = np.zeros(em.p)
        s_full[: s.size] = s
        L = Q * np.sqrt((s_full**2 + alpha) / em.q)
    err = np.linalg.norm(L @ L.T - H_alpha, "fro")
    if err > 1e-8 * max(1.0, np.linalg.norm(H_alpha, "fro")):
        raise NumericalError(
            f"factor does not reconstruct H_alpha (error {err:.3e})")
    return RegularizedGram(alpha=float(alpha), H_alpha=H_alpha, L_alpha=L,
                           route=route)
