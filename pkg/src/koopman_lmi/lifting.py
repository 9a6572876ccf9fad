"""Polynomial lifting functions and snapshot-matrix assembly.

The lifted state collects every monomial of the plant state up to a chosen
total degree, with the raw state coordinates first so that the plant state
can always be recovered from a lifted state by projection. Inputs are either
passed through unchanged or augmented with all state-input products.
Snapshot matrices are assembled per episode so that no data pair straddles
an episode boundary.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .exceptions import EmptyDatasetError, InvalidDataError, InvalidParameterError

INPUT_LIFTINGS = ("identity", "bilinear")


@dataclass(frozen=True)
class LiftingSpec:
    """Configuration of the vector-valued lifting.

    Parameters
    ----------
    degree : int
        Maximum total degree of the state monomials. Degree 1 is the
        identity lifting.
    input_lifting : str
        ``'identity'`` passes the input through unchanged; ``'bilinear'``
        appends all products of state and input coordinates.
    include_constant : bool
        Append a constant feature to the lifted state. Off by default
        because it produces an exactly rank-deficient data Gram matrix on
        degenerate data.

    Notes
    -----
    Monomials are enumerated by total degree, then within each degree by
    :func:`itertools.combinations_with_replacement` order of variable
    indices (graded lexicographic). The enumeration is deterministic, so
    repeated runs produce bit-identical matrices. The constant feature,
    when enabled, is placed last so the first ``m`` lifted coordinates are
    always the plant state itself.
    """

    degree: int = 1
    input_lifting: str = "identity"
    include_constant: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.degree, int) or self.degree < 1:
            raise InvalidParameterError(
                f"lifting degree must be an integer >= 1, got {self.degree!r}")
        if self.input_lifting not in INPUT_LIFTINGS:
            raise InvalidParameterError(
                f"input_lifting must be one of {INPUT_LIFTINGS}, "
                f"got {self.input_lifting!r}")


@lru_cache(maxsize=None)
def _monomial_index_tuples(m: int, degree: int) -> tuple:
    """Variable-index multisets of all monomials of degree 1..degree."""
    out = []
    for total in range(1, degree + 1):
        out.extend(itertools.combinations_with_replacement(range(m), total))
    return tuple(out)


def monomial_exponents(m: int, degree: int) -> tuple:
    """Exponent vectors of the state monomials, in enumeration order.

    Parameters
    ----------
    m : int
        Number of state variables.
    degree : int
        Maximum total degree.

    Returns
    -------
    tuple
        One exponent tuple of length ``m`` per monomial; the first ``m``
        entries are the unit vectors (the raw state coordinates).
    """
    exps = []
    for combo in _monomial_index_tuples(m, degree):
        e = [0] * m
        for i in combo:
            e[i] += 1
        exps.append(tuple(e))
    return tuple(exps)


def state_dim(spec: LiftingSpec, m: int) -> int:
    """Dimension of the lifted state for an ``m``-dimensional plant state."""
    if m < 1:
        raise InvalidParameterError(f"state dimension must be >= 1, got {m}")
    base = math.comb(m + spec.degree, spec.degree) - 1
    return base + (1 if spec.include_constant else 0)


def input_dim(spec: LiftingSpec, m: int, n: int) -> int:
    """Dimension of the lifted input for an ``n``-dimensional plant input."""
    if n < 0:
        raise InvalidParameterError(f"input dimension must be >= 0, got {n}")
    if n == 0:
        return 0
    if spec.input_lifting == "identity":
        return n
    return n + m * n


def lifted_dim(spec: LiftingSpec, m: int, n: int) -> int:
    """Total lifted dimension (state part plus input part)."""
    return state_dim(spec, m) + input_dim(spec, m, n)


def _as_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidDataError(f"{name} must be a 1-D vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidDataError(f"{name} contains non-finite values")
    return x


def _lift_state_columns(X: np.ndarray, spec: LiftingSpec) -> np.ndarray:
    """Lift each column of the (m, N) state matrix ``X``."""
    m, N = X.shape
    rows = [X[i] for i in range(m)]
    for combo in _monomial_index_tuples(m, spec.degree)[m:]:
        rows.append(np.prod(X[list(combo), :], axis=0))
    if spec.include_constant:
        rows.append(np.ones(N))
    return np.vstack(rows) if rows else np.zeros((0, N))


def _input_feature_columns(X: np.ndarray, U: np.ndarray,
                           spec: LiftingSpec) -> np.ndarray:
    """Lifted-input block for state columns ``X`` (m, N) and inputs ``U`` (n, N)."""
    m, N = X.shape
    n = U.shape[0]
    if n == 0:
        return np.zeros((0, N))
    if spec.input_lifting == "identity":
        return U.copy()
    rows = [U[j] for j in range(n)]
    for i in range(m):
        for j in range(n):
            rows.append(X[i] * U[j])
    return np.vstack(rows)


def lift_state(x, spec: LiftingSpec) -> np.ndarray:
    """Apply the state lifting to a single state vector.

    The first ``len(x)`` entries of the result equal ``x`` itself.

    Raises
    ------
    InvalidDataError
        If ``x`` is not a finite 1-D vector.
    """
    x = _as_vector(x, "state")
    if x.size < 1:
        raise InvalidDataError("state must have at least one coordinate")
    return _lift_state_columns(x[:, None], spec)[:, 0]


def lift_pair(x, u, spec: LiftingSpec) -> np.ndarray:
    """Lift a state/input pair into a single column of the data matrix.

    The result is the lifted state followed by the lifted input. With no
    inputs (``u`` empty) the result is just the lifted state.
    """
    x = _as_vector(x, "state")
    u = _as_vector(u, "input") if u is not None else np.zeros(0)
    theta = lift_state(x, spec)
    ups = _input_feature_columns(x[:, None], u[:, None], spec)[:, 0]
    return np.concatenate([theta, ups])


def lift_input(x, u, spec: LiftingSpec) -> np.ndarray:
    """Lifted-input part of the data column for a single (state, input) pair."""
    x = _as_vector(x, "state")
    u = _as_vector(u, "input") if u is not None else np.zeros(0)
    return _input_feature_columns(x[:, None], u[:, None], spec)[:, 0]


def retract_state(theta, m: int) -> np.ndarray:
    """Recover the plant state from a lifted state by projection.

    Valid because the lifting places the raw state coordinates first.
    """
    theta = _as_vector(theta, "lifted state")
    if theta.size < m:
        raise InvalidDataError(
            f"lifted state has dimension {theta.size} < state dimension {m}")
    return theta[:m].copy()


@dataclass(frozen=True)
class SnapshotDataset:
    """Episodic state/input data.

    Attributes
    ----------
    episodes : tuple
        One ``(states, inputs)`` pair per episode, where ``states`` has
        shape ``(T, m)`` with ``T >= 2`` and ``inputs`` has shape
        ``(T - 1, n)``. The input paired with the final state of an
        episode is never needed and is not stored.
    m : int
        State dimension, shared by all episodes.
    n : int
        Input dimension (0 for autonomous data).
    """

    episodes: tuple
    m: int
    n: int

    def __post_init__(self) -> None:
        if len(self.episodes) == 0:
            raise EmptyDatasetError("dataset has no episodes")
        for idx, (states, inputs) in enumerate(self.episodes):
            if states.ndim != 2 or states.shape[1] != self.m:
                raise InvalidDataError(
                    f"episode {idx}: states must have shape (T, {self.m})")
            if states.shape[0] < 2:
                raise InvalidDataError(
                    f"episode {idx}: needs at least 2 states, got "
                    f"{states.shape[0]}")
            if inputs.shape != (states.shape[0] - 1, self.n):
                raise InvalidDataError(
                    f"episode {idx}: inputs must have shape "
                    f"({states.shape[0] - 1}, {self.n}), got {inputs.shape}")
            if not (np.all(np.isfinite(states)) and np.all(np.isfinite(inputs))):
                raise InvalidDataError(f"episode {idx}: non-finite data")

    @classmethod
    def from_episodes(cls, episodes: Iterable) -> "SnapshotDataset":
        """Build a dataset from ``(states, inputs)`` pairs or bare state arrays.

        ``inputs`` may be ``None`` (or omitted by passing a bare array) for
        autonomous data.
        """
        normalized = []
        for ep in episodes:
            if isinstance(ep, tuple) and len(ep) == 2:
                states, inputs = ep
            else:
                states, inputs = ep, None
            states = np.asarray(states, dtype=float)
            if states.ndim == 1:
                # A sequence of scalar states.
                states = states[:, None]
            if inputs is None:
                inputs = np.zeros((states.shape[0] - 1, 0))
            else:
                inputs = np.asarray(inputs, dtype=float)
                if inputs.ndim == 1:
                    inputs = inputs[:, None]
            normalized.append((states, inputs))
        if not normalized:
            raise EmptyDatasetError("dataset has no episodes")
        m = normalized[0][0].shape[1]
        n = normalized[0][1].shape[1]
        return cls(episodes=tuple(normalized), m=m, n=n)

    @property
    def n_snapshots(self) -> int:
        """Total number of usable data pairs, summed over episodes."""
        return sum(states.shape[0] - 1 for states, _ in self.episodes)


@dataclass(frozen=True)
class LiftedMatrices:
    """Side-by-side lifted snapshot columns plus dimension bookkeeping.

    ``Psi`` holds lifted (state, input) pairs; ``ThetaPlus`` holds the
    lifted successor states from the same episode, column-aligned with
    ``Psi``.
    """

    Psi: np.ndarray
    ThetaPlus: np.ndarray
    p: int
    p_theta: int
    p_upsilon: int
    q: int
    m: int
    n: int
    lifting: LiftingSpec


def build_snapshots(data: SnapshotDataset, spec: LiftingSpec) -> LiftedMatrices:
    """Assemble the lifted snapshot matrices from episodic data.

    Column ``k`` of ``Psi`` is the lifted (state, input) pair at some time
    step, and column ``k`` of ``ThetaPlus`` is the lifted state one step
    later within the same episode. Episodes contribute ``T - 1`` columns
    each, in episode order, so no column pair crosses a boundary.
    """
    p_t = state_dim(spec, data.m)
    p_u = input_dim(spec, data.m, data.n)
    psi_parts = []
    theta_parts = []
    for states, inputs in data.episodes:
        X = states.T
        U = inputs.T
        lifted = _lift_state_columns(X, spec)
        ups = _input_feature_columns(X[:, :-1], U, spec)
        psi_parts.append(np.vstack([lifted[:, :-1], ups]))
        theta_parts.append(lifted[:, 1:])
    Psi = np.hstack(psi_parts)
    ThetaPlus = np.hstack(theta_parts)
    return LiftedMatrices(
        Psi=Psi,
        ThetaPlus=ThetaPlus,
        p=p_t + p_u,
        p_theta=p_t,
        p_upsilon=p_u,
        q=Psi.shape[1],
        m=data.m,
        n=data.n,
        lifting=spec,
    )


def save_episode_csv(data: SnapshotDataset, path: Union[str, Path]) -> None:
    """Write a dataset in the episode CSV format.

    Header is ``episode,k,x0..x{m-1}[,u0..u{n-1}]``; rows are sorted by
    ``(episode, k)``. The input entries on the final row of each episode
    carry no information and are written as zeros.
    """
    path = Path(path)
    header = (["episode", "k"] + [f"x{i}" for i in range(data.m)]
              + [f"u{j}" for j in range(data.n)])
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ep_idx, (states, inputs) in enumerate(data.episodes):
            T = states.shape[0]
            for k in range(T):
                u_row = inputs[k] if k < T - 1 else np.zeros(data.n)
                writer.writerow([ep_idx, k]
                                + [repr(float(v)) for v in states[k]]
                                + [repr(float(v)) for v in u_row])


def load_episode_csv(path: Union[str, Path]) -> SnapshotDataset:
    """Read a dataset from the episode CSV format.

    The input columns of the last row of each episode are ignored.

    Raises
    ------
    InvalidDataError
        On a malformed header, non-contiguous step indices, or unparsable
        values.
    """
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidDataError(f"{path}: empty file") from None
        m, n = _parse_header(header, path)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                ep = int(row[0])
                k = int(row[1])
                vals = [float(v) for v in row[2:]]
            except (ValueError, IndexError) as exc:
                raise InvalidDataError(f"{path}:{lineno}: bad row: {exc}") from exc
            if len(vals) != m + n:
                raise InvalidDataError(
                    f"{path}:{lineno}: expected {m + n} values, got {len(vals)}")
            rows.append((ep, k, vals))
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    rows.sort(key=lambda r: (r[0], r[1]))
    episodes = []
    for ep, group in itertools.groupby(rows, key=lambda r: r[0]):
        group = list(group)
        ks = [g[1] for g in group]
        if ks != list(range(len(group))):
            raise InvalidDataError(
                f"{path}: episode {ep} has non-contiguous step indices")
        states = np.array([g[2][:m] for g in group])
        inputs = np.array([g[2][m:] for g in group[:-1]]).reshape(len(group) - 1, n)
        episodes.append((states, inputs))
    return SnapshotDataset(episodes=tuple(episodes), m=m, n=n)


def _parse_header(header: Sequence[str], path: Path) -> tuple:
    cols = [h.strip() for h in header]
    if cols[:2] != ["episode", "k"]:
        raise InvalidDataError(f"{path}: header must start with 'episode,k'")
    m = sum(1 for c in cols if c.startswith("x"))
    n = sum(1 for c in cols if c.startswith("u"))
    expected = (["episode", "k"] + [f"x{i}" for i in range(m)]
                + [f"u{j}" for j in range(n)])
    if cols != expected or m < 1:
        raise InvalidDataError(f"{path}: malformed header {cols}")
    return m, n
