"""Kernel-matrix builders for the supported observation models.

Every builder returns a :class:`~mixdecon.core.KernelMatrix` whose columns
are conditional outcome distributions given a grid cell.  Geometric models
are parametrized by the single-attempt success probability; the overall
response probability within ``max_attempts`` tries follows from
:func:`response_probability`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import binom

from .core import (
    NR,
    InvalidSpecError,
    KernelMatrix,
    OutcomeSpace,
    SupportGrid,
)

#: Default single-attempt success-probability grid: 0.1, 0.11, ..., 1.0.
DEFAULT_ATTEMPT_GRID = tuple(np.round(np.arange(10, 101) / 100.0, 2))


def response_probability(p_attempt, max_attempts: int):
    """Probability of at least one success in ``max_attempts`` Bernoulli
    attempts with per-attempt probability ``p_attempt``.

    Computed as ``-expm1(M * log1p(-p))`` so small probabilities do not
    cancel catastrophically.
    """
    p = np.asarray(p_attempt, dtype=float)
    out = np.ones_like(p)
    partial = p < 1.0
    out[partial] = -np.expm1(max_attempts * np.log1p(-p[partial]))
    if np.isscalar(p_attempt) or np.ndim(p_attempt) == 0:
        return float(out.reshape(()))
    return out


def _validate_attempt_grid(p_grid, allow_zero: bool = False) -> np.ndarray:
    p = np.asarray(p_grid, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise InvalidSpecError("success-probability grid must be a nonempty vector")
    low_ok = p.min() >= 0.0 if allow_zero else p.min() > 0.0
    if not low_ok or p.max() > 1.0:
        bound = "[0, 1]" if allow_zero else "(0, 1]"
        raise InvalidSpecError(f"success probabilities must lie in {bound}")
    if len(set(p.tolist())) != p.size:
        raise InvalidSpecError("grid values must be distinct")
    return p


@dataclass(frozen=True)
class GeometricTruncatedSpec:
    """Attempt counts observed only for responders (at most ``max_attempts``)."""

    p_attempt: tuple
    max_attempts: int

    def __post_init__(self):
        p = _validate_attempt_grid(self.p_attempt)
        if self.max_attempts < 1:
            raise InvalidSpecError("max_attempts must be a positive integer")
        object.__setattr__(self, "p_attempt", tuple(p.tolist()))


@dataclass(frozen=True)
class GeometricCensoredSpec(GeometricTruncatedSpec):
    """As the truncated spec, but exhausted attempts surface as the NR outcome."""


@dataclass(frozen=True)
class ShiftedBinomialSpec:
    """One guaranteed response plus ``trials`` further Bernoulli responses."""

    p_response: tuple
    trials: int = 3

    def __post_init__(self):
        p = _validate_attempt_grid(self.p_response)
        if self.trials < 0:
            raise InvalidSpecError("trials must be nonnegative")
        object.__setattr__(self, "p_response", tuple(p.tolist()))


@dataclass(frozen=True)
class NormalDiscretizedSpec:
    """Gaussian observations with known sigma, binned on fixed edges.

    The outermost bins extend to -inf and +inf, so ``len(edges) + 1`` bins.
    """

    locations: tuple
    sigma: float
    bin_edges: tuple

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        edges = np.asarray(self.bin_edges, dtype=float)
        if loc.ndim != 1 or loc.size < 1 or not np.all(np.isfinite(loc)):
            raise InvalidSpecError("locations must be a finite vector")
        if len(set(loc.tolist())) != loc.size:
            raise InvalidSpecError("locations must be distinct")
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise InvalidSpecError("sigma must be positive")
        if edges.ndim != 1 or edges.size < 1 or not np.all(np.isfinite(edges)):
            raise InvalidSpecError("bin edges must be a finite vector")
        if edges.size > 1 and not np.all(np.diff(edges) > 0):
            raise InvalidSpecError("bin edges must be strictly increasing")
        object.__setattr__(self, "locations", tuple(loc.tolist()))
        object.__setattr__(self, "bin_edges", tuple(edges.tolist()))


def _geometric_columns(p: np.ndarray, max_attempts: int) -> np.ndarray:
    """Rows j=1..M of (1-p)^(j-1) * p for every grid value, shape (M, K)."""
    j = np.arange(max_attempts, dtype=float)[:, None]
    cols = np.empty((max_attempts, p.size))
    partial = p < 1.0
    if partial.any():
        log1mp = np.log1p(-p[partial])[None, :]
        cols[:, partial] = np.exp(j * log1mp) * p[partial][None, :]
    if (~partial).any():
        sure = np.zeros((max_attempts, int((~partial).sum())))
        sure[0] = 1.0
        cols[:, ~partial] = sure
    return cols


def geometric_truncated_kernel(spec: GeometricTruncatedSpec) -> KernelMatrix:
    """Attempt-count distribution conditional on responding within the cap.

    Entry for attempt count j and grid value p is
    ``(1-p)^(j-1) p / (1 - (1-p)^M)``; columns sum to one.
    """
    p = np.asarray(spec.p_attempt)
    cols = _geometric_columns(p, spec.max_attempts)
    cols /= response_probability(p, spec.max_attempts)[None, :]
    outcomes = OutcomeSpace(tuple(range(1, spec.max_attempts + 1)))
    grid = SupportGrid.marginal(spec.p_attempt)
    return KernelMatrix(matrix=cols, outcomes=outcomes, grid=grid)


def geometric_censored_kernel(spec: GeometricCensoredSpec) -> KernelMatrix:
    """Attempt-count distribution with exhausted attempts pooled into NR.

    Entries ``(1-p)^(j-1) p`` for j=1..M plus a final NR row carrying
    ``(1-p)^M``; columns sum to one including NR.
    """
    p = np.asarray(spec.p_attempt)
    cols = _geometric_columns(p, spec.max_attempts)
    nr = 1.0 - response_probability(p, spec.max_attempts)
    matrix = np.vstack([cols, nr[None, :]])
    outcomes = OutcomeSpace(tuple(range(1, spec.max_attempts + 1)) + (NR,))
    grid = SupportGrid.marginal(spec.p_attempt)
    return KernelMatrix(matrix=matrix, outcomes=outcomes, grid=grid)


def shifted_binomial_kernel(spec: ShiftedBinomialSpec) -> KernelMatrix:
    """Response-count distribution 1 + Binomial(trials, p)."""
    p = np.asarray(spec.p_response)
    y = np.arange(1, spec.trials + 2)
    matrix = binom.pmf((y - 1)[:, None], spec.trials, p[None, :])
    outcomes = OutcomeSpace(tuple(int(v) for v in y))
    grid = SupportGrid.marginal(spec.p_response)
    return KernelMatrix(matrix=matrix, outcomes=outcomes, grid=grid)


def normal_discretized_kernel(spec: NormalDiscretizedSpec) -> KernelMatrix:
    """Bin probabilities Phi((e_{j+1}-theta)/sigma) - Phi((e_j-theta)/sigma)
    with infinite outer edges."""
    theta = np.asarray(spec.locations)
    edges = np.asarray(spec.bin_edges)
    z = (edges[:, None] - theta[None, :]) / spec.sigma
    cdf = ndtr(z)
    matrix = np.diff(cdf, axis=0, prepend=0.0, append=1.0)
    outcomes = OutcomeSpace(tuple(range(edges.size + 1)))
    grid = SupportGrid.marginal(spec.locations)
    return KernelMatrix(matrix=matrix, outcomes=outcomes, grid=grid)


def bin_observations(values, edges) -> np.ndarray:
    """Map continuous observations to the bin labels used by
    :func:`normal_discretized_kernel` (bin j covers (e_j, e_{j+1}])."""
    edges = np.asarray(edges, dtype=float)
    return np.searchsorted(edges, np.asarray(values, dtype=float), side="left")


def joint_kernel(base: KernelMatrix, x_levels, censored: bool = False) -> KernelMatrix:
    """Block-diagonal expansion of a base kernel over covariate levels.

    Outcome ``(x_l, y_j)`` keeps the base probability in columns of level l
    and is zero elsewhere.  When ``censored`` the base kernel's final NR row
    is shared: a single NR outcome (which does not reveal the covariate)
    carries the base NR probability in every column.
    """
    x_levels = tuple(x_levels)
    if len(x_levels) < 1 or len(set(x_levels)) != len(x_levels):
        raise InvalidSpecError("x_levels must be nonempty and distinct")
    if base.grid.is_joint:
        raise InvalidSpecError("base kernel must live on a marginal grid")
    J, K = base.matrix.shape
    if censored:
        if base.outcomes.outcomes[-1] != NR:
            raise InvalidSpecError("censored expansion requires a base kernel ending in NR")
        block = base.matrix[:-1]
        per_level = J - 1
    else:
        block = base.matrix
        per_level = J
    L = len(x_levels)
    Q = L * per_level + (1 if censored else 0)
    matrix = np.zeros((Q, L * K))
    for l in range(L):
        rows = slice(l * per_level, (l + 1) * per_level)
        cols = slice(l * K, (l + 1) * K)
        matrix[rows, cols] = block
    labels = [(x, t) for x in x_levels for t in
              (base.outcomes.outcomes[:-1] if censored else base.outcomes.outcomes)]
    if censored:
        matrix[-1] = np.tile(base.matrix[-1], L)
        labels.append(NR)
    outcomes = OutcomeSpace(tuple(labels))
    grid = SupportGrid.joint(x_levels, base.grid.values)
    return KernelMatrix(matrix=matrix, outcomes=outcomes, grid=grid)


def save_kernel_csv(kernel: KernelMatrix, path) -> None:
    """Write a kernel as CSV: header of support labels, first column outcomes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outcome"] + list(kernel.grid.labels))
        for j, outcome in enumerate(kernel.outcomes.outcomes):
            writer.writerow([outcome] + [repr(float(v)) for v in kernel.matrix[j]])


def load_kernel_csv(path, complete: bool = True) -> KernelMatrix:
    """Read a kernel from CSV (inverse of :func:`save_kernel_csv`).

    Support labels must parse as floats (they become the grid values);
    outcome labels are kept verbatim as strings.  Entries are validated as
    probabilities and, for complete kernels, as columns summing to one.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidSpecError(f"{path}: empty kernel file")
    header = rows[0]
    if len(header) < 2 or header[0] != "outcome":
        raise InvalidSpecError(f"{path}: line 1: header must be 'outcome,<support labels>'")
    try:
        support = [float(lbl) for lbl in header[1:]]
    except ValueError as exc:
        raise InvalidSpecError(f"{path}: line 1: support labels must parse as floats ({exc})") from None
    outcomes = []
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InvalidSpecError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        outcomes.append(row[0])
        try:
            entries.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise InvalidSpecError(f"{path}: line {lineno}: {exc}") from None
    grid = SupportGrid.marginal(support, labels=tuple(header[1:]))
    try:
        return KernelMatrix(
            matrix=np.asarray(entries), outcomes=OutcomeSpace(tuple(outcomes)),
            grid=grid, complete=complete,
        )
    except InvalidSpecError as exc:
        raise InvalidSpecError(f"{path}: {exc}") from None
