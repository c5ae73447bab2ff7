"""Command line front end.

Four subcommands: ``lump`` (reduce at a fixed tolerance), ``find-epsilon``
(bisect for a tolerance hitting a target size ratio), ``simulate`` (integrate
and, given a reduction, report errors), and ``sweep`` (tolerance staircase).
Every command writes its artifacts plus a manifest.json into ``--out``.

Exit codes: 0 success, 1 parse or usage error, 2 numeric failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    EvaluationError,
    IntegrationError,
    LumpkitError,
    ModelSyntaxError,
    ModelValidationError,
    MonotonicityError,
    PseudoinverseError,
    RankDeficiencyError,
    SamplingError,
)
from .jacobian import default_domain, sample_jacobian_basis
from .lumping import (
    EpsilonSearchConfig,
    LumpingMatrix,
    approximate_lump,
    epsilon_max,
    find_epsilon,
    staircase,
)
from .model import evaluate_drift, parse_model
from .simulate import SolverConfig, integrate, reduction_report, write_series_csv

_PARSE_ERRORS = (ModelSyntaxError, ModelValidationError)
_NUMERIC_ERRORS = (
    EvaluationError,
    SamplingError,
    RankDeficiencyError,
    PseudoinverseError,
    DimensionMismatchError,
    IntegrationError,
    ConvergenceError,
    MonotonicityError,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default; usage problems must exit 1
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lumpkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lumpkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, solver=False):
        p.add_argument("--model", required=True, help="model file path")
        p.add_argument("--out", required=True, help="output directory")
        if seed:
            p.add_argument(
                "--seed",
                type=int,
                default=None,
                help="PRNG seed; falls back to LUMPKIT_SEED, then 0",
            )
            p.add_argument(
                "--confirmations",
                type=int,
                default=3,
                help="consecutive dependent samples ending basis sampling",
            )
        if solver:
            p.add_argument("--rel-tol", type=float, default=1e-6)
            p.add_argument("--abs-tol", type=float, default=1e-9)
            p.add_argument("--horizon", type=float, default=None)

    p_lump = sub.add_parser("lump", help="reduce at a fixed tolerance")
    common(p_lump)
    p_lump.add_argument("--epsilon", type=float, required=True)
    p_lump.add_argument(
        "--points", default=None, help="JSON file with explicit sample points"
    )

    p_find = sub.add_parser("find-epsilon", help="bisect for a target size")
    common(p_find)
    p_find.add_argument("--ratio", type=float, required=True, help="target size / m")
    p_find.add_argument("--d-min", type=float, default=1e-6)

    p_sim = sub.add_parser("simulate", help="integrate, optionally against a reduction")
    common(p_sim, seed=True, solver=True)
    p_sim.add_argument("--lumping", default=None, help="L.json from a lump run")
    p_sim.add_argument("--grid", type=int, default=200, help="output grid points")

    p_sweep = sub.add_parser("sweep", help="tolerance staircase over [0, epsilon_max]")
    common(p_sweep)
    p_sweep.add_argument("--grid", type=int, default=50, help="grid points")

    return parser


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("LUMPKIT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise _UsageError(f"LUMPKIT_SEED must be an integer, got {env!r}") from None
    return 0


def _write_json(path: Path, payload: dict):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out: Path, command: str, settings: dict, timings: dict):
    _write_json(
        out / "manifest.json",
        {
            "tool": "lumpkit",
            "version": __version__,
            "command": command,
            "settings": settings,
            "timings": {k: round(v, 6) for k, v in timings.items()},
        },
    )


class _Phases:
    def __init__(self):
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def mark(self, name: str):
        now = time.perf_counter()
        self.timings[name] = now - self._t0
        self._t0 = now


def _load_model(path: str):
    return parse_model(Path(path).read_text())


def _load_points(path: str | None):
    if path is None:
        return ()
    data = json.loads(Path(path).read_text())
    return [np.asarray(x, dtype=float) for x in data]


def _cmd_lump(args) -> int:
    if args.epsilon < 0:
        raise _UsageError("--epsilon must be non-negative")
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phases = _Phases()

    system = _load_model(args.model)
    phases.mark("parse")

    domain = default_domain(system, seed=seed, confirmations=args.confirmations)
    basis = sample_jacobian_basis(system, domain, _load_points(args.points))
    phases.mark("basis")

    lump = approximate_lump(basis, system.observables, args.epsilon)
    eps_mx = epsilon_max(basis, system.observables)
    phases.mark("lump")

    _write_json(out / "basis.json", {"seed": seed, **basis.to_json_dict()})
    _write_json(out / "L.json", lump.to_json_dict())
    _write_manifest(
        out,
        "lump",
        {
            "model": args.model,
            "seed": seed,
            "confirmations": args.confirmations,
            "epsilon": args.epsilon,
        },
        phases.timings,
    )
    ratio = args.epsilon / eps_mx if eps_mx > 0 else 0.0
    print(f"reduced size: {lump.dim} of {system.dim}")
    print(f"epsilon / epsilon_max: {ratio:.6g}")
    return 0


def _cmd_find_epsilon(args) -> int:
    if not (0 < args.ratio <= 1):
        raise _UsageError("--ratio must lie in (0, 1]")
    if args.d_min <= 0:
        raise _UsageError("--d-min must be positive")
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phases = _Phases()

    system = _load_model(args.model)
    phases.mark("parse")

    domain = default_domain(system, seed=seed, confirmations=args.confirmations)
    basis = sample_jacobian_basis(system, domain)
    phases.mark("basis")

    # fractional cutoffs bound the size from above, so round down
    cutoff = int(math.floor(args.ratio * system.dim + 1e-9))
    config = EpsilonSearchConfig(cutoff_size=cutoff, d_min=args.d_min)
    result = find_epsilon(basis, system.observables, config)
    phases.mark("search")

    if result.boundary == "cutoff_below_observable_rank":
        print(
            "warning: cutoff size is below the observable rank; "
            "returning epsilon_max",
            file=sys.stderr,
        )
    _write_json(
        out / "search.json",
        {
            "ratio": args.ratio,
            "cutoff_size": cutoff,
            "d_min": args.d_min,
            "epsilon": result.epsilon,
            "iterations": result.iterations,
            "boundary": result.boundary,
            "reduced_size": result.lump.dim,
            "history": [
                {
                    "iteration": step.iteration,
                    "lo": step.lo,
                    "hi": step.hi,
                    "epsilon": step.epsilon,
                    "size": step.size,
                }
                for step in result.history
            ],
        },
    )
    _write_json(out / "L.json", result.lump.to_json_dict())
    _write_manifest(
        out,
        "find-epsilon",
        {
            "model": args.model,
            "seed": seed,
            "confirmations": args.confirmations,
            "ratio": args.ratio,
            "d_min": args.d_min,
        },
        phases.timings,
    )
    print(f"epsilon: {result.epsilon:.17g}")
    print(f"reduced size: {result.lump.dim} of {system.dim}")
    print(f"iterations: {result.iterations}")
    return 0


def _load_lumping(path: str, state_dim: int) -> LumpingMatrix:
    data = json.loads(Path(path).read_text())
    matrix = np.asarray(data["matrix"], dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != state_dim:
        raise DimensionMismatchError(
            f"lumping matrix has {matrix.shape} shape, expected columns = {state_dim}"
        )
    return LumpingMatrix(
        matrix=matrix,
        epsilon=float(data.get("epsilon", 0.0)),
        observable_rank=int(data.get("observable_rank", matrix.shape[0])),
    )


def _cmd_simulate(args) -> int:
    if args.grid < 200:
        raise _UsageError("--grid must be at least 200")
    if not (args.rel_tol > 0 and args.abs_tol > 0):
        raise _UsageError("--rel-tol and --abs-tol must be positive")
    if args.horizon is not None and not (args.horizon > 0):
        raise _UsageError("--horizon must be positive")
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phases = _Phases()

    system = _load_model(args.model)
    phases.mark("parse")
    config = SolverConfig(rel_tol=args.rel_tol, abs_tol=args.abs_tol)
    horizon = system.time_horizon if args.horizon is None else args.horizon
    x0 = system.initial_conditions[0]

    settings = {
        "model": args.model,
        "seed": seed,
        "horizon": horizon,
        "rel_tol": args.rel_tol,
        "abs_tol": args.abs_tol,
        "grid": args.grid,
        "lumping": args.lumping,
    }

    if args.lumping is None:
        trajectory = integrate(lambda x: evaluate_drift(system, x), x0, horizon, config)
        ts = np.linspace(0.0, horizon, args.grid)
        X = trajectory.sample(ts)
        phases.mark("integrate")
        write_series_csv(
            out / "original.csv",
            ts,
            {name: X[:, j] for j, name in enumerate(system.var_names)},
        )
        _write_manifest(out, "simulate", settings, phases.timings)
        print(f"integrated to t={horizon:g} ({trajectory.times.size - 1} steps)")
        return 0

    lump = _load_lumping(args.lumping, system.dim)
    report = reduction_report(
        system,
        lump,
        x0=x0,
        horizon=horizon,
        config=config,
        grid_points=args.grid,
        seed=seed,
    )
    phases.mark("integrate")

    write_series_csv(
        out / "original.csv",
        report.times,
        {name: report.original_states[:, j] for j, name in enumerate(system.var_names)},
    )
    write_series_csv(
        out / "reduced.csv",
        report.times,
        {f"y{j + 1}": report.reduced_states[:, j] for j in range(lump.dim)},
    )
    write_series_csv(out / "error.csv", report.times, {"error": report.errors})
    write_series_csv(out / "deviation.csv", report.times, {"deviation": report.deviations})
    _write_json(out / "report.json", report.to_json_dict())
    _write_manifest(out, "simulate", settings, phases.timings)
    rel = "n/a" if report.e_rel_at_T is None else f"{report.e_rel_at_T:.6g}"
    print(f"e(T)={report.e_at_T:.6g} e_max={report.e_max:.6g} e_rel(T)={rel}")
    print(f"eta={report.eta:.6g} bound={report.bound:.6g}")
    return 0


def _cmd_sweep(args) -> int:
    if args.grid < 2:
        raise _UsageError("--grid must be at least 2")
    seed = _resolve_seed(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    phases = _Phases()

    system = _load_model(args.model)
    phases.mark("parse")

    domain = default_domain(system, seed=seed, confirmations=args.confirmations)
    basis = sample_jacobian_basis(system, domain)
    phases.mark("basis")

    eps_mx = epsilon_max(basis, system.observables)
    grid = np.linspace(0.0, eps_mx, args.grid)
    pairs = staircase(basis, system.observables, grid)
    phases.mark("sweep")

    times = [eps for eps, _ in pairs]
    ratios = np.array([eps / eps_mx if eps_mx > 0 else 0.0 for eps, _ in pairs])
    sizes = np.array([size for _, size in pairs], dtype=float)
    with open(out / "staircase.csv", "w", newline="") as fh:
        fh.write("epsilon,epsilon_over_epsilon_max,reduced_size\n")
        for eps, ratio, size in zip(times, ratios, sizes):
            fh.write(
                f"{format(float(eps), '.17g')},{format(float(ratio), '.17g')},{int(size)}\n"
            )
    _write_manifest(
        out,
        "sweep",
        {
            "model": args.model,
            "seed": seed,
            "confirmations": args.confirmations,
            "grid": args.grid,
        },
        phases.timings,
    )
    print(f"epsilon_max: {eps_mx:.17g}")
    print(f"sizes: {sizes[0]:.0f} down to {sizes[-1]:.0f} over {args.grid} tolerances")
    return 0


_COMMANDS = {
    "lump": _cmd_lump,
    "find-epsilon": _cmd_find_epsilon,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _PARSE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _NUMERIC_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except LumpkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
