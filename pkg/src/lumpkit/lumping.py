"""Constrained lumping of ODE systems up to a tolerance.

A lumping matrix L (orthonormal rows) maps the full state x to a reduced
state y = Lx while keeping every requested observable row inside rsp(L).
Exact lumpings leave rsp(L) invariant under every drift Jacobian; the
approximate variant tolerates invariance defects up to a tolerance epsilon.

The central routine is :func:`approximate_lump`: starting from the
orthonormalized observable rows it sweeps each row against each basis
Jacobian and appends the normalized defect whenever the row's image sticks
out of the current row space by more than epsilon. :func:`epsilon_max` gives
the smallest tolerance that collapses the result back to the observables
alone, and :func:`find_epsilon` bisects between the two extremes to hit a
target size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConvergenceError,
    DimensionMismatchError,
    MonotonicityError,
    RankDeficiencyError,
)
from .jacobian import JacobianBasis
from .model import OdeSystem, evaluate_drift

__all__ = [
    "ZERO_EPSILON_RTOL",
    "RowProvenance",
    "TraceEvent",
    "LumpingMatrix",
    "EpsilonSearchConfig",
    "EpsilonSearchResult",
    "SearchStep",
    "orthonormalize_rows",
    "approximate_lump",
    "deviation",
    "epsilon_max",
    "find_epsilon",
    "staircase",
]

# epsilon = 0 is implemented as this relative slack so that float noise in an
# exactly invariant row space does not trigger spurious appends
ZERO_EPSILON_RTOL = 1e-12

_ORTHONORMALITY_ATOL = 1e-10


def orthonormalize_rows(matrix, rank_rtol: float = 1e-9) -> np.ndarray:
    """Orthonormalize rows in order (modified Gram-Schmidt, one
    reorthogonalization pass). Raises
    :class:`~lumpkit.errors.RankDeficiencyError` when a row is numerically
    dependent on the rows before it."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    rows: list[np.ndarray] = []
    for i, row in enumerate(M):
        r = row.astype(float).copy()
        for _ in range(2):
            for q in rows:
                r -= (r @ q) * q
        norm = float(np.linalg.norm(r))
        if norm <= rank_rtol * max(float(np.linalg.norm(row)), 1e-300):
            raise RankDeficiencyError(f"row {i} is linearly dependent on earlier rows")
        rows.append(r / norm)
    return np.vstack(rows)


@dataclass(frozen=True)
class RowProvenance:
    """Where a row of L came from: an observable row, or the defect of
    (source row) @ (basis matrix) at the recorded distance."""

    origin: str
    source_row: int | None = None
    source_matrix: int | None = None
    distance: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "origin": self.origin,
            "source_row": self.source_row,
            "source_matrix": self.source_matrix,
            "distance": self.distance,
        }


@dataclass(frozen=True)
class TraceEvent:
    """One residual check of the sweep: row index against matrix index, the
    measured distance, and whether a row was appended for it."""

    sweep: int
    row: int
    matrix: int
    distance: float
    appended: bool


@dataclass(frozen=True)
class LumpingMatrix:
    """A reduction y = Lx with orthonormal rows.

    Rows 0..observable_rank-1 span the observable row space; later rows were
    appended by the lumping sweep. Orthonormal rows make the transpose a
    pseudoinverse, so lifting back is just L.T @ y.
    """

    matrix: np.ndarray
    epsilon: float
    observable_rank: int
    provenance: tuple[RowProvenance, ...] = ()
    trace: tuple[TraceEvent, ...] | None = None

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.matrix, dtype=float)).copy()
        l, m = L.shape
        if not (1 <= self.observable_rank <= l <= m):
            raise DimensionMismatchError(
                f"need observable_rank <= rows <= columns, got p={self.observable_rank}, "
                f"shape {L.shape}"
            )
        gram_defect = np.max(np.abs(L @ L.T - np.eye(l)))
        if gram_defect > _ORTHONORMALITY_ATOL:
            raise RankDeficiencyError(
                f"rows are not orthonormal (defect {gram_defect:.3e})"
            )
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        L.setflags(write=False)
        object.__setattr__(self, "matrix", L)
        if self.provenance and len(self.provenance) != l:
            raise DimensionMismatchError("one provenance entry per row required")

    @classmethod
    def from_rows(cls, rows, epsilon: float = 0.0, observable_rank: int | None = None):
        """Orthonormalize arbitrary full-row-rank rows into a LumpingMatrix."""
        L = orthonormalize_rows(rows)
        p = L.shape[0] if observable_rank is None else observable_rank
        return cls(matrix=L, epsilon=epsilon, observable_rank=p)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def state_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def pseudoinverse(self) -> np.ndarray:
        return self.matrix.T

    def project(self, x) -> np.ndarray:
        """Project a full state onto rsp(L): x -> L.T @ (L @ x)."""
        x = np.asarray(x, dtype=float)
        return self.matrix.T @ (self.matrix @ x)

    def to_json_dict(self) -> dict:
        return {
            "rows": self.dim,
            "cols": self.state_dim,
            "epsilon": self.epsilon,
            "observable_rank": self.observable_rank,
            "matrix": self.matrix.tolist(),
            "provenance": [pr.to_json_dict() for pr in self.provenance],
        }


def approximate_lump(
    basis: JacobianBasis,
    observables,
    epsilon: float,
    record_trace: bool = False,
) -> LumpingMatrix:
    """Reduce as far as the tolerance allows while keeping the observables.

    Starting from L = orthonormalized observable rows, sweep rows in append
    order and basis matrices in index order; for each pair compute
    v = r @ J_i and its defect against the current row space. A defect larger
    than epsilon (or the float slack when epsilon is 0) appends the
    normalized defect as a new row. New rows are swept within the same pass;
    the sweep repeats until one full pass appends nothing.

    The worst case returns all m rows, never an error.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    M = np.atleast_2d(np.asarray(observables, dtype=float))
    m = M.shape[1]
    if basis.state_dim != m:
        raise DimensionMismatchError("observables and basis have different state dims")
    ortho = orthonormalize_rows(M)
    p = ortho.shape[0]

    L = np.zeros((m, m))
    L[:p] = ortho
    count = p
    provenance: list[RowProvenance] = [RowProvenance("observable") for _ in range(p)]
    trace: list[TraceEvent] = []

    sweep = 0
    appended_in_pass = True
    while appended_in_pass:
        appended_in_pass = False
        sweep += 1
        row = 0
        while row < count:
            r = L[row]
            for k, J in enumerate(basis.matrices):
                v = r @ J
                cur = L[:count]
                defect = v - (v @ cur.T) @ cur
                distance = float(np.linalg.norm(defect))
                threshold = max(epsilon, ZERO_EPSILON_RTOL * float(np.linalg.norm(v)))
                append = distance > threshold and count < m
                if record_trace:
                    trace.append(TraceEvent(sweep, row, k, distance, append))
                if append:
                    # one extra projection pass keeps the stack orthonormal
                    defect -= (defect @ cur.T) @ cur
                    L[count] = defect / np.linalg.norm(defect)
                    count += 1
                    provenance.append(RowProvenance("appended", row, k, distance))
                    appended_in_pass = True
            row += 1

    return LumpingMatrix(
        matrix=L[:count].copy(),
        epsilon=epsilon,
        observable_rank=p,
        provenance=tuple(provenance),
        trace=tuple(trace) if record_trace else None,
    )


def deviation(system: OdeSystem, lump: LumpingMatrix, x) -> float:
    """How far the drift is from commuting with the reduction at x:
    ||L f(L.T L x) - L f(x)||_2. Zero everywhere means an exact lumping."""
    x = np.asarray(x, dtype=float)
    if lump.state_dim != system.dim:
        raise DimensionMismatchError("lumping matrix does not match the system")
    L = lump.matrix
    f_at_x = evaluate_drift(system, x)
    f_at_proj = evaluate_drift(system, lump.project(x))
    return float(np.linalg.norm(L @ f_at_proj - L @ f_at_x))


def epsilon_max(basis: JacobianBasis, observables) -> float:
    """Smallest tolerance at which :func:`approximate_lump` keeps only the
    observable rows: the largest defect of any observable row against the
    observable row space, over all basis matrices."""
    M = np.atleast_2d(np.asarray(observables, dtype=float))
    if basis.state_dim != M.shape[1]:
        raise DimensionMismatchError("observables and basis have different state dims")
    ortho = orthonormalize_rows(M)
    worst = 0.0
    for J in basis.matrices:
        for r in ortho:
            v = r @ J
            defect = v - (v @ ortho.T) @ ortho
            worst = max(worst, float(np.linalg.norm(defect)))
    return worst


@dataclass(frozen=True)
class EpsilonSearchConfig:
    """Bisection parameters: target reduction size (at most cutoff_size rows),
    bracket width d_min at which the search stops, and an iteration cap."""

    cutoff_size: int
    d_min: float = 1e-6
    max_iterations: int = 200

    def __post_init__(self):
        if self.cutoff_size < 0:
            raise ValueError("cutoff_size must be non-negative")
        if not (self.d_min > 0):
            raise ValueError("d_min must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True)
class SearchStep:
    iteration: int
    lo: float
    hi: float
    epsilon: float
    size: int


@dataclass(frozen=True)
class EpsilonSearchResult:
    epsilon: float
    lump: LumpingMatrix
    iterations: int
    history: tuple[SearchStep, ...] = ()
    # set when a boundary case short-circuits the bisection
    boundary: str | None = None


def find_epsilon(
    basis: JacobianBasis, observables, config: EpsilonSearchConfig
) -> EpsilonSearchResult:
    """Find the smallest tolerance whose reduction has at most cutoff_size
    rows, by bisection on [0, epsilon_max].

    Boundary cases resolve without bisecting: a cutoff below the observable
    rank returns epsilon_max (nothing smaller is achievable), and a cutoff at
    or above the exact-reduction size returns 0. Otherwise the bracket keeps
    size(hi) <= cutoff < size(lo) invariant and halves until its width drops
    below d_min; the returned tolerance is the hi end, whose lumping is
    returned with it.
    """
    M = np.atleast_2d(np.asarray(observables, dtype=float))
    p = orthonormalize_rows(M).shape[0]
    target = config.cutoff_size

    if target < p:
        eps = epsilon_max(basis, M)
        lump = approximate_lump(basis, M, eps)
        return EpsilonSearchResult(
            epsilon=eps, lump=lump, iterations=1, boundary="cutoff_below_observable_rank"
        )

    exact = approximate_lump(basis, M, 0.0)
    if target >= exact.dim:
        return EpsilonSearchResult(
            epsilon=0.0, lump=exact, iterations=1, boundary="exact_fits_cutoff"
        )

    lo = 0.0
    hi = epsilon_max(basis, M)
    best = approximate_lump(basis, M, hi)
    history: list[SearchStep] = []
    iterations = 0
    while hi - lo >= config.d_min:
        iterations += 1
        if iterations > config.max_iterations:
            raise ConvergenceError(
                f"bisection did not converge within {config.max_iterations} iterations"
            )
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break  # bracket is below float resolution
        candidate = approximate_lump(basis, M, mid)
        history.append(SearchStep(iterations, lo, hi, mid, candidate.dim))
        if candidate.dim <= target:
            hi = mid
            best = candidate
        else:
            lo = mid
    return EpsilonSearchResult(
        epsilon=hi, lump=best, iterations=iterations, history=tuple(history)
    )


def staircase(basis: JacobianBasis, observables, grid) -> tuple[tuple[float, int], ...]:
    """Reduction size at each tolerance of the grid, in ascending tolerance
    order. Sizes must not increase with the tolerance; a violation raises
    :class:`~lumpkit.errors.MonotonicityError` naming the offending pair."""
    eps_values = sorted(float(e) for e in grid)
    if any(e < 0 for e in eps_values):
        raise ValueError("grid tolerances must be non-negative")
    pairs: list[tuple[float, int]] = []
    for eps in eps_values:
        size = approximate_lump(basis, observables, eps).dim
        if pairs and size > pairs[-1][1]:
            raise MonotonicityError(
                f"reduction size grew with the tolerance: size {pairs[-1][1]} at "
                f"eps={pairs[-1][0]!r} but size {size} at eps={eps!r}"
            )
        pairs.append((eps, size))
    return tuple(pairs)
