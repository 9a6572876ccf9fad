"""Command-line front end: generate, fit, predict, sweep.

Exit codes: 0 on success, 1 on solver infeasibility or numerical failure,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, bilinear, edmd, sdp
from . import lifting as lf
from .exceptions import (
    ConfigError,
    EmptyDatasetError,
    InvalidDataError,
    InvalidParameterError,
    KoopmanLmiError,
)

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2

SYSTEMS = ("duffing", "vanderpol", "linear2d")

# Continuous-time linear plant behind the 'linear2d' generator; forward
# Euler with _LINEAR2D_DT gives the exact discrete-time ground truth.
_LINEAR2D_A_CT = np.array([[0.0, 1.0], [-1.0, -0.5]])
_LINEAR2D_B_CT = np.array([[0.0], [1.0]])
_LINEAR2D_DT = 0.1

_DUFFING_DT = 0.05
_VANDERPOL_DT = 0.05


def linear2d_truth() -> tuple:
    """Exact discrete-time (A, B) realized by the 'linear2d' generator."""
    A = np.eye(2) + _LINEAR2D_DT * _LINEAR2D_A_CT
    B = _LINEAR2D_DT * _LINEAR2D_B_CT
    return A, B


def _euler_step(system: str, x: np.ndarray, u: float) -> np.ndarray:
    if system == "linear2d":
        return x + _LINEAR2D_DT * (_LINEAR2D_A_CT @ x
                                   + _LINEAR2D_B_CT[:, 0] * u)
    if system == "duffing":
        dx = np.array([x[1], -0.2 * x[1] - x[0] - x[0] ** 3 + u])
        return x + _DUFFING_DT * dx
    if system == "vanderpol":
        dx = np.array([x[1], 1.0 * (1.0 - x[0] ** 2) * x[1] - x[0] + u])
        return x + _VANDERPOL_DT * dx
    raise ConfigError(f"unknown system {system!r}")


def generate_dataset(system: str, steps: int, episodes: int, seed: int,
                     noise_std: float = 0.0) -> lf.SnapshotDataset:
    """Simulate a toy system into an episodic dataset.

    Each episode starts from a uniform random state in [-1, 1]^2, applies
    standard normal pseudo-random inputs, and adds Gaussian process noise
    of the given standard deviation to every state update. Output is
    bit-reproducible for a fixed seed.
    """
    if system not in SYSTEMS:
        raise ConfigError(f"unknown system {system!r}; choose from {SYSTEMS}")
    if steps < 2:
        raise ConfigError(f"steps must be >= 2, got {steps}")
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    rng = np.random.default_rng(seed)
    eps = []
    for _ in range(episodes):
        x = rng.uniform(-1.0, 1.0, size=2)
        inputs = rng.standard_normal(steps - 1)
        states = np.empty((steps, 2))
        states[0] = x
        for k in range(steps - 1):
            x = _euler_step(system, x, float(inputs[k]))
            if noise_std > 0.0:
                x = x + noise_std * rng.standard_normal(2)
            states[k + 1] = x
        eps.append((states, inputs[:, None]))
    return lf.SnapshotDataset.from_episodes(eps)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitConfig:
    """Parsed fit configuration (see README for the JSON schema)."""

    data_path: str
    output_path: str
    lifting: lf.LiftingSpec
    regularizer: sdp.RegularizerSpec
    solver_tolerance: float
    strictness_margin: Optional[float]
    factorization_route: str
    alternation: bilinear.AlternationConfig


def _take(section: dict, where: str, known: dict) -> dict:
    """Apply defaults and reject unknown keys."""
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
    merged = dict(known)
    merged.update(section)
    return merged


def parse_fit_config(doc: dict, base_dir: Path) -> FitConfig:
    """Validate a config document; unknown fields are rejected."""
    top = _take(doc, "config", {
        "data_path": None,
        "output_path": None,
        "lifting": {},
        "regularizer": {},
        "solver": {},
        "alternation": {},
    })
    if not top["data_path"]:
        raise ConfigError("config: data_path is required")
    if not top["output_path"]:
        raise ConfigError("config: output_path is required")
    lift_sec = _take(top["lifting"], "lifting", {
        "degree": 1, "input_lifting": "identity", "include_constant": False})
    reg_sec = _take(top["regularizer"], "regularizer", {
        "tikhonov_alpha": 0.0, "extra": "none", "beta": None,
        "spectral_radius": None})
    solver_sec = _take(top["solver"], "solver", {
        "tolerance": 1e-9, "strictness_margin": None,
        "factorization_route": "eig"})
    alt_sec = _take(top["alternation"], "alternation", {
        "max_iterations": 40, "relative_cost_tolerance": 1e-4,
        "initial_P": "lyapunov_from_unregularized"})
    try:
        spec = lf.LiftingSpec(
            degree=lift_sec["degree"],
            input_lifting=lift_sec["input_lifting"],
            include_constant=bool(lift_sec["include_constant"]))
        reg = sdp.RegularizerSpec(
            tikhonov_alpha=float(reg_sec["tikhonov_alpha"]),
            extra=reg_sec["extra"],
            beta=None if reg_sec["beta"] is None else float(reg_sec["beta"]),
            spectral_radius=(None if reg_sec["spectral_radius"] is None
                             else float(reg_sec["spectral_radius"])))
        alt = bilinear.AlternationConfig(
            max_iterations=int(alt_sec["max_iterations"]),
            relative_cost_tolerance=float(alt_sec["relative_cost_tolerance"]),
            initial_P=alt_sec["initial_P"],
            solver_tolerance=float(solver_sec["tolerance"]))
    except KoopmanLmiError as exc:
        raise ConfigError(str(exc)) from exc
    route = solver_sec["factorization_route"]
    if route not in edmd.FACTORIZATION_ROUTES:
        raise ConfigError(f"solver.factorization_route must be one of "
                          f"{edmd.FACTORIZATION_ROUTES}")
    return FitConfig(
        data_path=str(base_dir / top["data_path"]),
        output_path=str(base_dir / top["output_path"]),
        lifting=spec,
        regularizer=reg,
        solver_tolerance=float(solver_sec["tolerance"]),
        strictness_margin=(None if solver_sec["strictness_margin"] is None
                           else float(solver_sec["strictness_margin"])),
        factorization_route=route,
        alternation=alt,
    )


def load_fit_config(path) -> FitConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    return parse_fit_config(doc, path.parent)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    model: analysis.KoopmanModel
    report: dict
    trace: Optional[bilinear.AlternationTrace]


def fit_dataset(data: lf.SnapshotDataset, cfg: FitConfig) -> FitResult:
    """Run the configured regression on an in-memory dataset."""
    lifted = lf.build_snapshots(data, cfg.lifting)
    em = edmd.compute_gram(lifted)
    rg = edmd.factor_L(em, cfg.regularizer.tikhonov_alpha,
                       route=cfg.factorization_route)
    reg = cfg.regularizer
    trace = None
    gamma = None
    nu = None
    if reg.spectral_radius is not None:
        extra = None
        if reg.extra in ("two_norm", "nuclear"):
            extra = (reg.extra, reg.beta)
        model, trace = bilinear.solve_stability(
            em, rg, reg.spectral_radius, cfg=cfg.alternation, extra=extra)
        objective = trace.records[-1].objective
        gamma = trace.records[-1].gamma
        status = "optimal"
    elif reg.extra == "hinf":
        model, trace, gamma = bilinear.solve_hinf(
            em, rg, reg.beta, cfg=cfg.alternation)
        objective = trace.records[-1].objective
        status = "optimal"
    elif reg.extra == "none":
        # Pure (possibly ridge-regularized) regression has an exact closed
        # form; no reason to run the conic solver for it.
        model = edmd.solve_tikhonov(em, reg.tikhonov_alpha)
        objective = bilinear.evaluate_objective(em, model.U,
                                                alpha=reg.tikhonov_alpha)
        status = "closed_form"
    else:
        problem = sdp.formulate_base(rg, em, margin=cfg.strictness_margin)
        if reg.extra == "two_norm":
            problem = sdp.add_two_norm(problem, reg.beta, em.q)
        else:
            problem = sdp.add_nuclear(problem, reg.beta, em.q)
        sol = sdp.solve(problem, tol=cfg.solver_tolerance)
        if sol.status != "optimal":
            raise KoopmanLmiError(
                f"solver returned {sol.status} ({sol.raw_status})")
        model = analysis.KoopmanModel(U=np.asarray(sol.values["U"]),
                                      lifting=cfg.lifting, m=data.m, n=data.n)
        objective = sol.objective
        nu = float(sol.values["nu"])
        gamma = (float(sol.values["gamma"])
                 if "gamma" in sol.values else None)
        status = sol.status
    rho = analysis.spectral_radius(model.A)
    hinf = None
    if rho < 1.0 and model.p_upsilon >= 1:
        hinf = analysis.hinf_norm(model.A, model.B, model.C, model.D)
    report = {
        "objective": float(objective),
        "nu": nu,
        "gamma": gamma,
        "spectral_radius": rho,
        "hinf_norm": hinf,
        "solver_status": status,
        "score": analysis.score(model, data),
        "q": em.q,
        "iterations": None if trace is None else len(trace.records),
        "termination": None if trace is None else trace.termination_reason,
    }
    return FitResult(model=model, report=report, trace=trace)


def fit_from_config(cfg: FitConfig) -> FitResult:
    data = lf.load_episode_csv(cfg.data_path)
    return fit_dataset(data, cfg)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_generate(args) -> int:
    data = generate_dataset(args.system, args.steps, args.episodes,
                            args.seed, args.noise_std)
    lf.save_episode_csv(data, args.out)
    print(f"wrote {data.n_snapshots} snapshot pairs over "
          f"{len(data.episodes)} episodes to {args.out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = load_fit_config(args.config)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_path=args.out)
    result = fit_from_config(cfg)
    out = Path(cfg.output_path)
    analysis.save_model(result.model, out)
    report = dict(result.report)
    if result.trace is not None:
        trace_path = out.with_suffix(".trace.csv")
        result.trace.write_csv(trace_path)
        report["trace_path"] = str(trace_path)
    report_path = out.with_suffix(".report.json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"model written to {out}")
    print(f"report written to {report_path}")
    for key in ("objective", "spectral_radius", "hinf_norm", "score"):
        print(f"  {key}: {report[key]}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    if args.horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {args.horizon}")
    model = analysis.load_model(args.model)
    data = lf.load_episode_csv(args.data)
    if data.m != model.m:
        raise ConfigError(
            f"data has state dimension {data.m}, model expects {model.m}")
    if data.n != model.n:
        raise ConfigError(
            f"data has input dimension {data.n}, model expects {model.n}")
    states, inputs = data.episodes[0]
    x0 = states[0]
    if model.n > 0:
        if inputs.shape[0] < args.horizon:
            raise ConfigError(
                f"first episode provides {inputs.shape[0]} inputs; "
                f"horizon {args.horizon} needs that many")
        result = analysis.predict(model, x0, inputs[: args.horizon],
                                  mode=args.mode)
    else:
        result = analysis.predict(model, x0, mode=args.mode,
                                  horizon=args.horizon)
    analysis.save_prediction_csv(result, args.out)
    print(f"prediction written to {args.out}")
    avail = min(args.horizon, states.shape[0] - 1)
    if avail > 0:
        err = result.predicted_states[:avail] - states[1:avail + 1]
        mse = float(np.mean(np.sum(err * err, axis=1)))
        print(f"score vs ground truth over {avail} steps: {mse!r}")
        if args.residuals is not None:
            with Path(args.residuals).open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["k"] + [f"r{i}" for i in range(data.m)])
                for k, row in enumerate(err, start=1):
                    writer.writerow([k] + [repr(float(v)) for v in row])
            print(f"residuals written to {args.residuals}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = load_fit_config(args.config)
    try:
        grid = [float(v) for v in args.grid.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad grid value: {exc}") from exc
    if not grid:
        raise ConfigError("grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("grid values must be strictly increasing")
    if args.parameter == "beta" and cfg.regularizer.extra == "none":
        raise ConfigError("beta sweep needs an extra regularizer in the config")
    data = lf.load_episode_csv(cfg.data_path)
    rows = []
    for value in grid:
        reg = cfg.regularizer
        if args.parameter == "alpha":
            reg = sdp.RegularizerSpec(
                tikhonov_alpha=value, extra=reg.extra, beta=reg.beta,
                spectral_radius=reg.spectral_radius)
        else:
            reg = sdp.RegularizerSpec(
                tikhonov_alpha=reg.tikhonov_alpha, extra=reg.extra,
                beta=value, spectral_radius=reg.spectral_radius)
        point_cfg = dataclasses.replace(cfg, regularizer=reg)
        try:
            result = fit_dataset(data, point_cfg)
            U = result.model.U
            svals = np.linalg.svd(U, compute_uv=False)
            rows.append([
                repr(value),
                repr(result.report["objective"]),
                repr(float(np.linalg.norm(U, "fro"))),
                repr(float(svals[0]) if svals.size else 0.0),
                repr(float(np.sum(svals))),
                repr(result.report["spectral_radius"]),
                "" if result.report["gamma"] is None
                else repr(result.report["gamma"]),
                "ok",
            ])
        except KoopmanLmiError as exc:
            rows.append([repr(value)] + [""] * 6 + [f"failed: {exc}"])
    with Path(args.out).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "objective", "u_frobenius", "u_two_norm",
                         "u_nuclear", "spectral_radius", "gamma", "status"])
        writer.writerows(rows)
    print(f"sweep table written to {args.out}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopman-lmi",
        description="Fit, constrain, and verify linear lifted-dynamics "
                    "models from snapshot data.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a toy system to CSV")
    gen.add_argument("system", choices=SYSTEMS)
    gen.add_argument("--steps", type=int, default=50,
                     help="states per episode (>= 2)")
    gen.add_argument("--episodes", type=int, default=5)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise-std", type=float, default=0.0)
    gen.add_argument("--out", required=True)

    fit = sub.add_parser("fit", help="fit a model from a JSON config")
    fit.add_argument("--config", required=True)
    fit.add_argument("--out", default=None,
                     help="override the config's output_path")

    pred = sub.add_parser("predict", help="roll a fitted model forward")
    pred.add_argument("--model", required=True)
    pred.add_argument("--data", required=True)
    pred.add_argument("--horizon", type=int, required=True)
    pred.add_argument("--mode", choices=analysis.PREDICTION_MODES,
                      default="relift")
    pred.add_argument("--out", required=True)
    pred.add_argument("--residuals", default=None,
                      help="also write per-step residuals to this CSV")

    sweep = sub.add_parser("sweep", help="re-fit over a parameter grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--parameter", choices=("alpha", "beta"),
                       required=True)
    sweep.add_argument("--grid", required=True,
                       help="comma-separated, strictly increasing values")
    sweep.add_argument("--out", required=True)
    return parser


_COMMANDS = {
    "generate": _cmd_generate,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, InvalidDataError, EmptyDatasetError,
            InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KoopmanLmiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
