"""Fitted-model types and independent verification tools.

Everything here is deliberately decoupled from the optimization code: the
frequency-sweep norm estimate, the spectra, and the prediction rollouts
share no code path with the certificates produced by the fitting routines,
so they can be used to cross-check them.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import lifting as lf
from .exceptions import (
    EmptyDatasetError,
    InvalidDataError,
    InvalidParameterError,
    UnboundedNormError,
)

PREDICTION_MODES = ("relift", "lifted_rollout")

MODEL_FORMAT = "koopman-lmi-model"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KoopmanModel:
    """A fitted linear model of the lifted dynamics.

    The coefficient matrix ``U`` maps a lifted (state, input) column to the
    next lifted state and partitions as ``U = [A B]``, where ``A`` acts on
    the lifted state and ``B`` on the lifted input. Together with the
    output matrix ``C`` (identity by default) and feedthrough ``D`` (zero
    by default) this induces a discrete-time LTI system.

    ``lifting``, ``m`` and ``n`` describe how raw data maps into the lifted
    space; they are ``None`` for models built directly from matrices, in
    which case prediction and scoring are unavailable.
    """

    U: np.ndarray
    lifting: Optional[lf.LiftingSpec] = None
    m: Optional[int] = None
    n: Optional[int] = None
    C: Optional[np.ndarray] = None
    D: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        U = np.asarray(self.U, dtype=float)
        if U.ndim != 2:
            raise InvalidDataError(f"U must be a matrix, got shape {U.shape}")
        if U.shape[1] < U.shape[0]:
            raise InvalidDataError(
                f"U must have at least as many columns as rows, got {U.shape}")
        object.__setattr__(self, "U", U)
        p_t, p_u = U.shape[0], U.shape[1] - U.shape[0]
        C = np.eye(p_t) if self.C is None else np.asarray(self.C, dtype=float)
        D = (np.zeros((C.shape[0], p_u)) if self.D is None
             else np.asarray(self.D, dtype=float))
        if C.ndim != 2 or C.shape[1] != p_t:
            raise InvalidDataError(f"C must have {p_t} columns, got {C.shape}")
        if D.shape != (C.shape[0], p_u):
            raise InvalidDataError(
                f"D must have shape ({C.shape[0]}, {p_u}), got {D.shape}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        if self.lifting is not None:
            if self.m is None or self.n is None:
                raise InvalidDataError(
                    "a model with a lifting spec must also carry m and n")
            if lf.state_dim(self.lifting, self.m) != p_t:
                raise InvalidDataError(
                    "lifting spec is inconsistent with the row count of U")
            if lf.input_dim(self.lifting, self.m, self.n) != p_u:
                raise InvalidDataError(
                    "lifting spec is inconsistent with the column count of U")

    @property
    def p_theta(self) -> int:
        return self.U.shape[0]

    @property
    def p_upsilon(self) -> int:
        return self.U.shape[1] - self.U.shape[0]

    @property
    def p(self) -> int:
        return self.U.shape[1]

    @property
    def A(self) -> np.ndarray:
        """Lifted-state transition block (left square part of ``U``)."""
        return self.U[:, : self.p_theta]

    @property
    def B(self) -> np.ndarray:
        """Lifted-input block (remaining columns of ``U``)."""
        return self.U[:, self.p_theta:]


@dataclass(frozen=True)
class PredictionResult:
    """Multi-step prediction output.

    ``predicted_states`` holds the retracted plant states, one row per
    step; ``predicted_lifted`` holds the propagated lifted states before
    any re-lifting.
    """

    predicted_states: np.ndarray
    predicted_lifted: np.ndarray
    mode: str


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidDataError(f"matrix must be square, got shape {A.shape}")
    if A.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def _peak_gain(A, B, C, D, theta: float) -> float:
    if A.shape[0] == 0:
        M = D.astype(complex)
    else:
        z = np.exp(1j * theta)
        M = C @ np.linalg.solve(z * np.eye(A.shape[0]) - A, B) + D
    if min(M.shape) == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def hinf_norm(A, B, C, D, grid_size: int = 4096) -> float:
    """Worst-case gain of a discrete-time LTI system by frequency sweep.

    Evaluates the largest singular value of the transfer matrix on a dense
    uniform grid over the upper half of the unit circle, then refines
    around the peak by golden-section search. The result is a lower-bound
    estimate, tight to the grid resolution; it is intentionally independent
    of any certificate-based bound.

    Raises
    ------
    UnboundedNormError
        If the state matrix has spectral radius >= 1.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidDataError(f"A must be square, got shape {A.shape}")
    p = A.shape[0]
    B = np.asarray(B, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    elif B.ndim == 1:
        B = B[:, None]
    C = np.asarray(C, dtype=float)
    if C.ndim == 0:
        C = C.reshape(1, 1)
    elif C.ndim == 1:
        C = C[None, :]
    D = np.asarray(D, dtype=float)
    if D.ndim == 0:
        D = D.reshape(1, 1)
    elif D.ndim == 1:
        D = D[:, None] if D.size == C.shape[0] else D[None, :]
    if B.shape[0] != p or C.shape[1] != p or D.shape != (C.shape[0], B.shape[1]):
        raise InvalidDataError(
            f"inconsistent system dimensions: A {A.shape}, B {B.shape}, "
            f"C {C.shape}, D {D.shape}")
    if grid_size < 2:
        raise InvalidParameterError("grid_size must be at least 2")
    if A.shape[0] > 0 and spectral_radius(A) >= 1.0:
        raise UnboundedNormError(
            "state matrix has spectral radius >= 1; the norm is unbounded")
    if min(B.shape[1], C.shape[0]) == 0:
        return 0.0
    thetas = np.linspace(0.0, np.pi, grid_size)
    gains = np.array([_peak_gain(A, B, C, D, t) for t in thetas])
    i = int(np.argmax(gains))
    lo = thetas[max(i - 1, 0)]
    hi = thetas[min(i + 1, grid_size - 1)]
    best = float(gains[i])
    # Golden-section refinement of the bracketed peak.
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = _peak_gain(A, B, C, D, c)
    fd = _peak_gain(A, B, C, D, d)
    for _ in range(80):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _peak_gain(A, B, C, D, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _peak_gain(A, B, C, D, d)
        best = max(best, fc, fd)
    return best


def _require_lifting(model: KoopmanModel) -> None:
    if model.lifting is None or model.m is None or model.n is None:
        raise InvalidDataError(
            "model carries no lifting spec; prediction and scoring need one")


def predict(model: KoopmanModel, x0, inputs=None, mode: str = "relift",
            horizon: Optional[int] = None) -> PredictionResult:
    """Roll the model forward from a plant state.

    Parameters
    ----------
    model : KoopmanModel
        Model with a lifting spec.
    x0 : array
        Initial plant state (dimension ``model.m``).
    inputs : array, optional
        Input sequence of shape ``(horizon, n)``. May be omitted for
        autonomous models, in which case ``horizon`` is required.
    mode : str
        ``'lifted_rollout'`` propagates the lifted state linearly,
        retracting only to evaluate input features and report plant
        states. ``'relift'`` additionally replaces the lifted state with
        the lifting of the retracted state after every step. The two
        coincide for degree-1 lifting.
    horizon : int, optional
        Number of steps; inferred from ``inputs`` when given.
    """
    _require_lifting(model)
    if mode not in PREDICTION_MODES:
        raise InvalidParameterError(
            f"mode must be one of {PREDICTION_MODES}, got {mode!r}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != model.m:
        raise InvalidDataError(
            f"x0 has dimension {x0.size}, model expects {model.m}")
    if inputs is None:
        if model.n != 0:
            raise InvalidDataError("model has inputs; an input sequence is required")
        if horizon is None or horizon < 1:
            raise InvalidParameterError("horizon must be >= 1 when inputs are omitted")
        inputs = np.zeros((horizon, 0))
    else:
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if inputs.shape[1] != model.n:
            raise InvalidDataError(
                f"inputs have dimension {inputs.shape[1]}, model expects {model.n}")
        if horizon is not None and horizon != inputs.shape[0]:
            raise InvalidDataError("horizon disagrees with the input sequence length")
    h = inputs.shape[0]
    A, B = model.A, model.B
    x = x0
    theta = lf.lift_state(x0, model.lifting)
    states = np.empty((h, model.m))
    lifted = np.empty((h, model.p_theta))
    for k in range(h):
        ups = lf.lift_input(x, inputs[k], model.lifting)
        theta = A @ theta + B @ ups
        x = lf.retract_state(theta, model.m)
        states[k] = x
        lifted[k] = theta
        if mode == "relift":
            theta = lf.lift_state(x, model.lifting)
    return PredictionResult(predicted_states=states, predicted_lifted=lifted,
                            mode=mode)


def score(model: KoopmanModel, data: lf.SnapshotDataset) -> float:
    """Mean squared one-step residual of the model on a dataset.

    Returns ``(1/q) * ||ThetaPlus - U Psi||_F^2`` over the lifted
    snapshots of ``data``.
    """
    _require_lifting(model)
    if data.m != model.m or data.n != model.n:
        raise InvalidDataError(
            f"dataset dimensions ({data.m}, {data.n}) do not match the model "
            f"({model.m}, {model.n})")
    lifted = lf.build_snapshots(data, model.lifting)
    if lifted.q < 1:
        raise EmptyDatasetError("dataset has no snapshot pairs")
    residual = lifted.ThetaPlus - model.U @ lifted.Psi
    return float(np.sum(residual * residual) / lifted.q)


def save_model(model: KoopmanModel, path: Union[str, Path]) -> None:
    """Write a model as a JSON document with row-major matrix arrays."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "p_theta": model.p_theta,
        "p_upsilon": model.p_upsilon,
        "m": model.m,
        "n": model.n,
        "lifting": None if model.lifting is None else {
            "degree": model.lifting.degree,
            "input_lifting": model.lifting.input_lifting,
            "include_constant": model.lifting.include_constant,
        },
        "U": model.U.tolist(),
        "C": model.C.tolist(),
        "D": model.D.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: Union[str, Path]) -> KoopmanModel:
    """Read a model written by :func:`save_model`.

    The float round trip is exact: JSON stores shortest-repr doubles.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidDataError(f"{path}: not valid JSON: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise InvalidDataError(f"{path}: not a {MODEL_FORMAT} document")
    spec = None
    if doc.get("lifting") is not None:
        spec = lf.LiftingSpec(
            degree=int(doc["lifting"]["degree"]),
            input_lifting=doc["lifting"]["input_lifting"],
            include_constant=bool(doc["lifting"]["include_constant"]),
        )
    U = np.array(doc["U"], dtype=float)
    p_u = int(doc["p_upsilon"])
    D = np.array(doc["D"], dtype=float).reshape(len(doc["D"]), p_u)
    return KoopmanModel(
        U=U,
        lifting=spec,
        m=doc.get("m"),
        n=doc.get("n"),
        C=np.array(doc["C"], dtype=float),
        D=D,
    )


def save_prediction_csv(result: PredictionResult, path: Union[str, Path]) -> None:
    """Write predicted plant states as ``k,x0..x{m-1}`` rows (k starts at 1)."""
    path = Path(path)
    m = result.predicted_states.shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [f"x{i}" for i in range(m)])
        for k, row in enumerate(result.predicted_states, start=1):
            writer.writerow([k] + [repr(float(v)) for v in row])
