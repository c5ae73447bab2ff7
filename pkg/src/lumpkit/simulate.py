"""Trajectory integration and reduction quality reports.

The integrator is an embedded Dormand-Prince 5(4) pair with proportional
step control and the pair's quartic dense-output interpolant. It is explicit
on purpose: stiffness is reported (step underflow after repeated
rejections), not worked around.

:func:`reduction_report` integrates the full and the reduced system side by
side on a shared output grid and summarizes the observable error, the drift
deviation along the trajectory, and an a-priori error bound built from an
estimated Lipschitz constant.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EvaluationError,
    IntegrationError,
    PseudoinverseError,
    SamplingError,
)
from .jacobian import SamplingDomain
from .lumping import LumpingMatrix, deviation
from .model import OdeSystem, evaluate_drift, evaluate_drift_dual

__all__ = [
    "SolverConfig",
    "Trajectory",
    "ReductionReport",
    "integrate",
    "build_reduced_drift",
    "reduction_report",
    "error_bound_constant",
    "estimate_lipschitz",
    "write_series_csv",
]

# Dormand-Prince 5(4) tableau
_A = (
    np.array([], dtype=float),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
# difference between the 5th and the embedded 4th order weights
_E = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# dense-output polynomial coefficients, one row per stage, powers theta..theta^4
_P = np.array(
    [
        [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
        [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
        [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
        [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_SAFETY = 0.9


@dataclass(frozen=True)
class SolverConfig:
    """Adaptive step control settings. ``initial_step=None`` picks the first
    step automatically from the local derivative scale."""

    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    initial_step: float | None = None
    max_step: float = math.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.initial_step is not None and not (self.initial_step > 0):
            raise ValueError("initial_step must be positive")
        if not (self.max_step > 0):
            raise ValueError("max_step must be positive")
        if self.initial_step is not None and self.initial_step > self.max_step:
            raise ValueError("initial_step must not exceed max_step")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")


@dataclass(frozen=True)
class _Segment:
    t0: float
    h: float
    y0: np.ndarray
    stages: np.ndarray  # 7 x n

    def interpolate(self, t: float) -> np.ndarray:
        theta = (t - self.t0) / self.h
        powers = theta ** np.arange(1, 5)
        return self.y0 + self.h * (self.stages.T @ (_P @ powers))


@dataclass(frozen=True)
class Trajectory:
    """Accepted solver steps plus a dense interpolant between them.

    ``times`` is strictly increasing, starts at 0 and ends exactly at the
    requested horizon; ``states[k]`` is the state at ``times[k]``.
    """

    times: np.ndarray
    states: np.ndarray
    segments: tuple[_Segment, ...]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def at(self, t: float) -> np.ndarray:
        """Dense-output state at any time in [0, horizon]."""
        if not (0.0 <= t <= self.horizon):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")
        k = int(np.searchsorted(self.times, t, side="right") - 1)
        if k >= len(self.segments):
            return self.states[-1].copy()
        if t == self.times[k]:
            return self.states[k].copy()
        return self.segments[k].interpolate(t)

    def sample(self, times) -> np.ndarray:
        return np.vstack([self.at(float(t)) for t in times])


def _call_drift(drift, y: np.ndarray, t: float) -> np.ndarray:
    try:
        f = np.asarray(drift(y), dtype=float)
    except EvaluationError as exc:
        raise IntegrationError(
            f"drift evaluation failed at t={t!r}, state={y.tolist()}: {exc}",
            time_reached=t,
        ) from exc
    if f.shape != y.shape:
        raise DimensionMismatchError("drift returned a vector of the wrong length")
    return f


def _initial_step(drift, y0, f0, horizon, cfg: SolverConfig) -> float:
    """Standard two-probe guess for the first step size."""
    scale = cfg.abs_tol + cfg.rel_tol * np.abs(y0)
    d0 = float(np.linalg.norm(y0 / scale)) / math.sqrt(y0.size)
    d1 = float(np.linalg.norm(f0 / scale)) / math.sqrt(y0.size)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, horizon)
    f1 = _call_drift(drift, y0 + h0 * f0, h0)
    d2 = float(np.linalg.norm((f1 - f0) / scale)) / math.sqrt(y0.size) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, cfg.max_step, horizon)


def integrate(drift: Callable, x0, horizon: float, config: SolverConfig | None = None) -> Trajectory:
    """Integrate x' = drift(x) from t=0 to t=horizon.

    Accepts a step when the embedded error estimate, scaled per component by
    max(abs_tol, rel_tol * |x_i|), has RMS at most one. Steps land exactly on
    the horizon. Raises :class:`~lumpkit.errors.IntegrationError` on step
    underflow (stiffness suspected) or when max_steps step attempts are
    spent, naming the time reached.
    """
    cfg = config or SolverConfig()
    if not (horizon > 0):
        raise ValueError("horizon must be positive")
    y = np.asarray(x0, dtype=float).copy()
    if y.ndim != 1 or y.size == 0:
        raise DimensionMismatchError("initial state must be a non-empty vector")
    n = y.size

    t = 0.0
    f_cur = _call_drift(drift, y, t)
    h = cfg.initial_step if cfg.initial_step is not None else _initial_step(drift, y, f_cur, horizon, cfg)
    h = min(h, cfg.max_step, horizon)

    times = [0.0]
    states = [y.copy()]
    segments: list[_Segment] = []
    stages = np.empty((7, n))
    attempts = 0
    rejected_streak = 0

    while t < horizon:
        if attempts >= cfg.max_steps:
            raise IntegrationError(
                f"step budget ({cfg.max_steps}) exhausted at t={t!r}", time_reached=t
            )
        attempts += 1
        final_step = h >= horizon - t
        if final_step:
            h = horizon - t
        if h <= 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise IntegrationError(
                f"step size underflow at t={t!r} after {rejected_streak} rejections; "
                "the system looks stiff for an explicit solver",
                time_reached=t,
            )

        stages[0] = f_cur
        for s in range(1, 7):
            y_stage = y + h * (stages[:s].T @ _A[s])
            stages[s] = _call_drift(drift, y_stage, t + _C[s] * h)
        y_new = y + h * (stages[:6].T @ _A[6])
        # stage 7 is the FSAL evaluation at (t+h, y_new)
        stages[6] = _call_drift(drift, y_new, t + h)

        err_vec = h * (stages.T @ _E)
        scale = np.maximum(cfg.abs_tol, cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new)))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))

        if err <= 1.0:
            segments.append(_Segment(t, h, y.copy(), stages.copy()))
            t = horizon if final_step else t + h
            y = y_new
            f_cur = stages[6].copy()
            times.append(t)
            states.append(y.copy())
            factor = _MAX_FACTOR if err == 0.0 else min(_MAX_FACTOR, _SAFETY * err**-0.2)
            if rejected_streak > 0:
                factor = min(factor, 1.0)
            rejected_streak = 0
        else:
            factor = max(_MIN_FACTOR, _SAFETY * err**-0.2)
            rejected_streak += 1
        h = min(h * factor, cfg.max_step)

    return Trajectory(
        times=np.array(times), states=np.vstack(states), segments=tuple(segments)
    )


def build_reduced_drift(system: OdeSystem, L, Lbar=None) -> Callable[[np.ndarray], np.ndarray]:
    """Closure computing the reduced drift y -> L f(Lbar y).

    With ``Lbar=None`` the rows of L must be orthonormal and the transpose is
    used. An explicit Lbar must satisfy L @ Lbar = I within 1e-8.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if L.shape[1] != system.dim:
        raise DimensionMismatchError("L columns must match the system dimension")
    if Lbar is None:
        Lbar = L.T
    else:
        Lbar = np.asarray(Lbar, dtype=float)
        if Lbar.shape != (L.shape[1], L.shape[0]):
            raise DimensionMismatchError("Lbar must have the transposed shape of L")
    defect = np.max(np.abs(L @ Lbar - np.eye(L.shape[0])))
    if defect > 1e-8:
        raise PseudoinverseError(
            f"L @ Lbar deviates from the identity by {defect:.3e}"
        )

    def reduced(y: np.ndarray) -> np.ndarray:
        return L @ evaluate_drift(system, Lbar @ y)

    return reduced


def error_bound_constant(C: float, norm_L: float, norm_Lbar: float, horizon: float) -> float:
    """Growth factor K such that the reduced-state error stays below
    eta * K when the deviation along the trajectory stays below eta:
    K = (exp(beta*T) - 1) / beta with beta = C * ||L|| * ||Lbar||.

    Uses the series limit T * (1 + beta*T/2) for beta*T < 1e-8 and saturates
    to inf (with a warning) for beta*T > 700, where exp overflows anyway.
    """
    if C < 0 or norm_L < 0 or norm_Lbar < 0:
        raise ValueError("norms and the Lipschitz constant must be non-negative")
    if not (horizon > 0):
        raise ValueError("horizon must be positive")
    beta = C * norm_L * norm_Lbar
    bt = beta * horizon
    if bt < 1e-8:
        return horizon * (1.0 + 0.5 * bt)
    if bt > 700.0:
        warnings.warn(
            "error bound overflows (beta*T > 700); reporting inf", RuntimeWarning
        )
        return math.inf
    return math.expm1(bt) / beta


def estimate_lipschitz(
    system: OdeSystem, domain: SamplingDomain, n_samples: int = 64
) -> float:
    """Estimate a Lipschitz constant of the drift over the domain as the
    largest spectral norm of J(x) at random sample points, times a 1.1
    safety factor. Each spectral norm comes from 50 rounds of power
    iteration on J.T @ J. Singular sample points are skipped."""
    if domain.dim != system.dim:
        raise DimensionMismatchError("domain dimension does not match the system")
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    rng = np.random.Generator(np.random.PCG64(domain.seed))
    limit = domain.max_resamples if domain.max_resamples is not None else 100 * system.dim
    worst = 0.0
    collected = 0
    failures = 0
    while collected < n_samples:
        x = rng.uniform(domain.lower, domain.upper)
        try:
            _, J = evaluate_drift_dual(system, x)
        except EvaluationError:
            failures += 1
            if failures > limit:
                raise SamplingError(
                    "could not find enough non-singular points for the Lipschitz estimate"
                ) from None
            continue
        failures = 0
        collected += 1
        v = rng.uniform(-1.0, 1.0, system.dim)
        norm_v = np.linalg.norm(v)
        if norm_v == 0.0:
            v = np.ones(system.dim)
            norm_v = np.linalg.norm(v)
        v /= norm_v
        sigma = 0.0
        for _ in range(50):
            w = J.T @ (J @ v)
            norm_w = float(np.linalg.norm(w))
            if norm_w == 0.0:
                break
            v = w / norm_w
        else:
            sigma = float(np.linalg.norm(J @ v))
        worst = max(worst, sigma)
    return 1.1 * worst


@dataclass(frozen=True)
class ReductionReport:
    """Side-by-side comparison of a system and its reduction on one grid.

    ``errors[k] = ||reduced(t_k) - L x(t_k)||_2``; ``deviations`` is the
    drift deviation along the original trajectory. ``e_rel_at_T`` divides by
    the norm of the original trajectory's observable at the horizon and is
    None when that norm falls below 1e-12. ``bound`` is eta times the growth
    factor from :func:`error_bound_constant`.
    """

    times: np.ndarray
    original_states: np.ndarray
    reduced_states: np.ndarray
    errors: np.ndarray
    deviations: np.ndarray
    e_at_T: float
    e_max: float
    e_rel_at_T: float | None
    eta: float
    lipschitz_constant: float
    bound: float
    bound_satisfied: bool

    def to_json_dict(self) -> dict:
        return {
            "grid_points": int(self.times.size),
            "e_at_T": self.e_at_T,
            "e_max": self.e_max,
            "e_rel_at_T": self.e_rel_at_T,
            "eta": self.eta,
            "lipschitz_constant": self.lipschitz_constant,
            "bound": self.bound,
            "bound_satisfied": self.bound_satisfied,
        }


def reduction_report(
    system: OdeSystem,
    lump: LumpingMatrix,
    x0=None,
    horizon: float | None = None,
    config: SolverConfig | None = None,
    grid_points: int = 200,
    lipschitz_samples: int = 64,
    seed: int = 0,
) -> ReductionReport:
    """Integrate the original and the reduced system and report the error
    e(t) = ||y(t) - L x(t)|| on a shared grid of at least 200 points.

    The Lipschitz constant is estimated over the bounding box of the original
    trajectory and its projection onto rsp(L). e(0) is zero by construction
    since the reduced run starts from L x0.
    """
    if lump.state_dim != system.dim:
        raise DimensionMismatchError("lumping matrix does not match the system")
    if grid_points < 200:
        raise ValueError("grid_points must be at least 200")
    x0 = system.initial_conditions[0] if x0 is None else np.asarray(x0, dtype=float)
    T = system.time_horizon if horizon is None else float(horizon)
    L = lump.matrix

    full = integrate(lambda x: evaluate_drift(system, x), x0, T, config)
    reduced_drift = build_reduced_drift(system, L)
    reduced = integrate(reduced_drift, L @ x0, T, config)

    ts = np.linspace(0.0, T, grid_points)
    X = full.sample(ts)
    Y = reduced.sample(ts)
    errors = np.linalg.norm(Y - X @ L.T, axis=1)
    deviations = np.array([deviation(system, lump, x) for x in X])

    eta = float(np.max(deviations))
    e_at_T = float(errors[-1])
    e_max = float(np.max(errors))

    obs_at_T = system.observables @ X[-1]
    obs_norm = float(np.linalg.norm(obs_at_T))
    e_rel_at_T = e_at_T / obs_norm if obs_norm >= 1e-12 else None

    # Lipschitz estimate over the box visited by the trajectory and its
    # projection; degenerate axes get a small pad to keep lower < upper
    cloud = np.vstack([X, X @ L.T @ L])
    lower = cloud.min(axis=0)
    upper = cloud.max(axis=0)
    pad = np.maximum(1e-9, 1e-6 * (np.abs(lower) + np.abs(upper)))
    degenerate = upper - lower < pad
    lower = np.where(degenerate, lower - pad, lower)
    upper = np.where(degenerate, upper + pad, upper)
    box = SamplingDomain(lower=lower, upper=upper, seed=seed)
    C = estimate_lipschitz(system, box, lipschitz_samples)

    K = error_bound_constant(
        C, float(np.linalg.norm(L, 2)), float(np.linalg.norm(L.T, 2)), T
    )
    bound = eta * K
    bound_satisfied = bool(np.all(errors <= bound * (1 + 1e-9) + 1e-15))
    if not bound_satisfied:
        warnings.warn(
            "observed error exceeds the a-priori bound; the Lipschitz constant "
            "was probably underestimated",
            RuntimeWarning,
        )

    return ReductionReport(
        times=ts,
        original_states=X,
        reduced_states=Y,
        errors=errors,
        deviations=deviations,
        e_at_T=e_at_T,
        e_max=e_max,
        e_rel_at_T=e_rel_at_T,
        eta=eta,
        lipschitz_constant=C,
        bound=bound,
        bound_satisfied=bound_satisfied,
    )


def write_series_csv(path, times, columns: dict[str, np.ndarray]):
    """Write a time series as CSV with 17 significant digits, '.' decimal
    separator and LF line endings. Column order: t, then the given columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *columns.keys()])
        series = list(columns.values())
        for k, t in enumerate(times):
            writer.writerow([format(float(t), ".17g")] + [
                format(float(col[k]), ".17g") for col in series
            ])
