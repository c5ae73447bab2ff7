"""Spanning sets for the space of drift Jacobians.

For a polynomial or rational drift f, the Jacobians {J(x)} span a
finite-dimensional matrix space. A basis for that span is what the lumping
algorithm consumes. We build one by evaluating J at random points and keeping
the matrices whose flattened form is numerically independent of what was
kept so far (modified Gram-Schmidt with one reorthogonalization pass).
Sampling stops once a run of consecutive draws adds nothing new.

Randomness comes from numpy's PCG64 generator seeded explicitly, so a given
seed reproduces the same basis on any platform.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, EvaluationError, SamplingError
from .model import OdeSystem, evaluate_drift_dual

__all__ = [
    "RANK_RTOL",
    "SamplingDomain",
    "JacobianBasis",
    "default_domain",
    "sample_jacobian_basis",
    "basis_from_points",
    "basis_from_matrices",
    "membership_residual",
]

# relative tolerance of the numerical rank test: a sample counts as new when
# its residual exceeds RANK_RTOL * ||vec(J)||
RANK_RTOL = 1e-9


@dataclass(frozen=True)
class SamplingDomain:
    """Axis-aligned box to draw sample points from, plus sampling knobs.

    ``confirmations`` is the number of consecutive dependent samples required
    before the basis is declared complete. ``max_resamples`` bounds the run of
    consecutive singular evaluations tolerated before giving up (default
    100 * m, resolved at sampling time).
    """

    lower: np.ndarray
    upper: np.ndarray
    seed: int = 0
    max_resamples: int | None = None
    confirmations: int = 3

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float).copy()
        upper = np.asarray(self.upper, dtype=float).copy()
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise DimensionMismatchError("domain bounds must be vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("domain requires lower < upper in every coordinate")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.max_resamples is not None and self.max_resamples < 1:
            raise ValueError("max_resamples must be positive")
        if self.confirmations < 1:
            raise ValueError("confirmations must be positive")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def default_domain(system: OdeSystem, seed: int = 0, confirmations: int = 3) -> SamplingDomain:
    """The box [0, max(1, 2 max_i |x0_i|)]^m around the first initial
    condition."""
    x0 = system.initial_conditions[0]
    hi = max(1.0, 2.0 * float(np.max(np.abs(x0))))
    return SamplingDomain(
        lower=np.zeros(system.dim),
        upper=np.full(system.dim, hi),
        seed=seed,
        confirmations=confirmations,
    )


@dataclass(frozen=True)
class JacobianBasis:
    """Numerically independent Jacobian samples spanning span{J(x)}.

    ``ortho_flat`` holds the orthonormalized flattened matrices, one row per
    basis member, and is what residual computations project against.
    """

    state_dim: int
    matrices: tuple[np.ndarray, ...]
    sample_points: tuple[np.ndarray | None, ...]
    ortho_flat: np.ndarray

    def __post_init__(self):
        if len(self.matrices) != len(self.sample_points):
            raise DimensionMismatchError("one sample point slot per matrix required")
        if self.ortho_flat.shape != (len(self.matrices), self.state_dim**2):
            raise DimensionMismatchError("ortho_flat shape mismatch")

    @property
    def dimension(self) -> int:
        return len(self.matrices)

    def to_json_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "dimension": self.dimension,
            "rank_rtol": RANK_RTOL,
            "matrices": [J.tolist() for J in self.matrices],
            "sample_points": [
                None if x is None else x.tolist() for x in self.sample_points
            ],
        }


class _OrthoAccumulator:
    """Growing orthonormal set of flattened matrices. Residuals use modified
    Gram-Schmidt with one reorthogonalization pass, which keeps the set
    orthonormal to working precision even for nearly dependent inputs."""

    def __init__(self, length: int):
        self.length = length
        self.rows: list[np.ndarray] = []

    def residual(self, vec: np.ndarray) -> np.ndarray:
        r = vec.astype(float).copy()
        for _ in range(2):
            for q in self.rows:
                r -= (r @ q) * q
        return r

    def add(self, direction: np.ndarray):
        self.rows.append(direction)

    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.empty((0, self.length))
        return np.vstack(self.rows)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=float).copy()
    out.setflags(write=False)
    return out


def _build_basis(system_dim: int, candidates) -> JacobianBasis:
    """Filter (J, point) candidates through the incremental rank test."""
    acc = _OrthoAccumulator(system_dim * system_dim)
    mats: list[np.ndarray] = []
    pts: list[np.ndarray | None] = []
    for J, point in candidates:
        if J.shape != (system_dim, system_dim):
            raise DimensionMismatchError("Jacobian sample has wrong shape")
        vec = J.ravel()
        scale = float(np.linalg.norm(vec))
        r = acc.residual(vec)
        rnorm = float(np.linalg.norm(r))
        if scale > 0.0 and rnorm > RANK_RTOL * scale:
            acc.add(r / rnorm)
            mats.append(_freeze(J))
            pts.append(None if point is None else _freeze(point))
    return JacobianBasis(
        state_dim=system_dim,
        matrices=tuple(mats),
        sample_points=tuple(pts),
        ortho_flat=acc.matrix(),
    )


def basis_from_matrices(matrices, sample_points=None, state_dim=None) -> JacobianBasis:
    """Build a basis from explicit matrices, keeping the independent ones."""
    mats = [np.asarray(J, dtype=float) for J in matrices]
    if state_dim is None:
        if not mats:
            raise ValueError("state_dim required for an empty matrix list")
        state_dim = mats[0].shape[0]
    if sample_points is None:
        sample_points = [None] * len(mats)
    return _build_basis(state_dim, zip(mats, sample_points))


def basis_from_points(system: OdeSystem, points) -> JacobianBasis:
    """Build a basis from Jacobians at explicit sample points, in the given
    order, with no termination rule. Used for reproducible reference runs."""

    def candidates():
        for x in points:
            x = np.asarray(x, dtype=float)
            _, J = evaluate_drift_dual(system, x)
            yield J, x

    return _build_basis(system.dim, candidates())


def sample_jacobian_basis(
    system: OdeSystem, domain: SamplingDomain, initial_points=()
) -> JacobianBasis:
    """Sample Jacobians at uniform random points of ``domain`` until
    ``domain.confirmations`` consecutive samples are dependent on the basis
    collected so far (or the span reaches its m^2 cap).

    ``initial_points`` are consumed before any random draw and go through the
    same independence test. Points where the drift is singular are skipped;
    more than ``max_resamples`` consecutive failures abort.
    """
    m = system.dim
    if domain.dim != m:
        raise DimensionMismatchError("domain dimension does not match the system")
    limit = domain.max_resamples if domain.max_resamples is not None else 100 * m
    rng = np.random.Generator(np.random.PCG64(domain.seed))
    queue = deque(np.asarray(x, dtype=float) for x in initial_points)

    acc = _OrthoAccumulator(m * m)
    mats: list[np.ndarray] = []
    pts: list[np.ndarray | None] = []
    dependent_run = 0
    failures = 0
    while dependent_run < domain.confirmations and len(mats) < m * m:
        x = queue.popleft() if queue else rng.uniform(domain.lower, domain.upper)
        try:
            _, J = evaluate_drift_dual(system, x)
        except EvaluationError:
            failures += 1
            if failures > limit:
                raise SamplingError(
                    f"{failures} consecutive singular samples; shrink or move the domain"
                ) from None
            continue
        failures = 0
        vec = J.ravel()
        scale = float(np.linalg.norm(vec))
        r = acc.residual(vec)
        rnorm = float(np.linalg.norm(r))
        if scale > 0.0 and rnorm > RANK_RTOL * scale:
            acc.add(r / rnorm)
            mats.append(_freeze(J))
            pts.append(_freeze(x))
            dependent_run = 0
        else:
            dependent_run += 1
    return JacobianBasis(
        state_dim=m,
        matrices=tuple(mats),
        sample_points=tuple(pts),
        ortho_flat=acc.matrix(),
    )


def membership_residual(basis: JacobianBasis, J) -> float:
    """Distance ||vec(J) - proj_basis(vec(J))||_2; zero (up to roundoff) iff
    J lies in the span of the basis."""
    J = np.asarray(J, dtype=float)
    if J.shape != (basis.state_dim, basis.state_dim):
        raise DimensionMismatchError("matrix shape does not match the basis")
    r = J.ravel().copy()
    for _ in range(2):
        for q in basis.ortho_flat:
            r -= (r @ q) * q
    return float(np.linalg.norm(r))
