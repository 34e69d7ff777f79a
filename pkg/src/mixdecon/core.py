"""Shared domain types: support grids, outcome spaces, kernel matrices,
empirical frequencies, covariance estimates and mixing-density estimates.

All types are immutable after construction (arrays are stored read-only),
so instances can be shared freely across threads and processes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

#: Sentinel outcome representing an observed non-response in censored setups.
NR = "NR"

VALID_STATUSES = ("converged", "max-iterations", "infeasible-calibration")


class MixdeconError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(MixdeconError):
    """A grid, kernel or model specification violates its preconditions."""


class TabulationError(MixdeconError):
    """Observations cannot be tabulated against the outcome space."""


class EmptySampleError(TabulationError):
    """No observations were supplied."""


class SingularCovarianceError(MixdeconError):
    """The ridged multinomial covariance could not be factorised."""


class InfeasibleError(MixdeconError):
    """The constraint set of an optimization problem is empty."""


class InfeasibleEllipsoidError(InfeasibleError):
    """No density on the grid is compatible with the data at the requested
    confidence level; this signals gross misfit between kernel and data."""


class UndefinedConditionalError(MixdeconError):
    """A conditional expectation was requested at a covariate level that
    carries zero estimated mass."""


class DegenerateResponseError(UndefinedConditionalError):
    """The estimated response probability vanishes at a covariate level."""


def readonly_array(values, dtype=float) -> np.ndarray:
    """Copy ``values`` into a read-only numpy array."""
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def flatten_joint_index(l: int, k: int, K: int, L: int | None = None) -> int:
    """Row-major flat index of cell ``(l, k)`` on an ``L x K`` product grid.

    All indices are 1-based: ``(1, 1) -> 1`` and ``(l, k) -> (l-1)*K + k``,
    so the covariate level varies slowest.  ``L`` is optional and only used
    to range-check ``l``.
    """
    if K < 1:
        raise IndexError(f"grid size K must be >= 1, got {K}")
    if not 1 <= k <= K:
        raise IndexError(f"support index k={k} outside 1..{K}")
    if l < 1 or (L is not None and l > L):
        upper = L if L is not None else "L"
        raise IndexError(f"covariate index l={l} outside 1..{upper}")
    return (l - 1) * K + k


def unflatten_joint_index(index: int, K: int) -> tuple[int, int]:
    """Inverse of :func:`flatten_joint_index`; 1-based on both sides."""
    if K < 1:
        raise IndexError(f"grid size K must be >= 1, got {K}")
    if index < 1:
        raise IndexError(f"flat index must be >= 1, got {index}")
    return (index - 1) // K + 1, (index - 1) % K + 1


@dataclass(frozen=True)
class SupportGrid:
    """Fixed discrete support of the mixing distribution.

    ``values`` holds scalars for marginal problems, or ``(x, s)`` pairs for
    joint problems, flattened row-major with the covariate level varying
    slowest.  Joint grids are full products of ``x_levels`` with a common
    base support.
    """

    labels: tuple[str, ...]
    values: tuple
    x_levels: tuple | None = None

    def __post_init__(self):
        if len(self.values) < 1:
            raise InvalidSpecError("support grid must contain at least one point")
        if len(self.labels) != len(self.values):
            raise InvalidSpecError("labels and values must have equal length")
        if len(set(self.values)) != len(self.values):
            raise InvalidSpecError("support values must be distinct")
        if self.x_levels is None:
            arr = np.asarray(self.values, dtype=float)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise InvalidSpecError("marginal support values must be finite scalars")
        else:
            if len(set(self.x_levels)) != len(self.x_levels):
                raise InvalidSpecError("covariate levels must be distinct")
            L = len(self.x_levels)
            if len(self.values) % L != 0:
                raise InvalidSpecError("joint grid size is not a multiple of the level count")
            K = len(self.values) // L
            base = [v[1] for v in self.values[:K]]
            if not np.all(np.isfinite(np.asarray(base, dtype=float))):
                raise InvalidSpecError("joint support values must be finite")
            for l, x in enumerate(self.x_levels):
                for k in range(K):
                    v = self.values[l * K + k]
                    if not (isinstance(v, tuple) and len(v) == 2):
                        raise InvalidSpecError("joint grid values must be (x, s) pairs")
                    if v[0] != x or v[1] != base[k]:
                        raise InvalidSpecError(
                            "joint grid must be the row-major product of "
                            "x_levels with a common base support"
                        )

    @classmethod
    def marginal(cls, support, labels=None) -> "SupportGrid":
        values = tuple(float(s) for s in support)
        if labels is None:
            labels = tuple(repr(v) for v in values)
        return cls(labels=tuple(labels), values=values, x_levels=None)

    @classmethod
    def joint(cls, x_levels, support, labels=None) -> "SupportGrid":
        x_levels = tuple(x_levels)
        base = tuple(float(s) for s in support)
        values = tuple((x, s) for x in x_levels for s in base)
        if labels is None:
            labels = tuple(f"({x!r},{s!r})" for x, s in values)
        return cls(labels=tuple(labels), values=values, x_levels=x_levels)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def is_joint(self) -> bool:
        return self.x_levels is not None

    @property
    def num_levels(self) -> int:
        return 1 if self.x_levels is None else len(self.x_levels)

    @property
    def points_per_level(self) -> int:
        return self.size // self.num_levels

    @cached_property
    def base_support(self) -> np.ndarray:
        """The distinct latent support points (length K)."""
        if self.is_joint:
            return readonly_array([v[1] for v in self.values[: self.points_per_level]])
        return readonly_array(self.values)

    @cached_property
    def theta(self) -> np.ndarray:
        """Latent support value of every grid cell (length ``size``)."""
        if self.is_joint:
            return readonly_array(np.tile(self.base_support, self.num_levels))
        return self.base_support

    @cached_property
    def level_index(self) -> np.ndarray:
        """0-based covariate-level index of every grid cell."""
        return readonly_array(
            np.repeat(np.arange(self.num_levels), self.points_per_level), dtype=int
        )

    def level_position(self, x) -> int:
        if not self.is_joint:
            raise InvalidSpecError("marginal grids carry no covariate levels")
        try:
            return self.x_levels.index(x)
        except ValueError:
            raise UndefinedConditionalError(f"covariate level {x!r} not on the grid") from None

    def level_mask(self, x) -> np.ndarray:
        return self.level_index == self.level_position(x)


@dataclass(frozen=True)
class OutcomeSpace:
    """Ordered outcome labels; the reduced problem always drops the last."""

    outcomes: tuple

    def __post_init__(self):
        if len(self.outcomes) < 2:
            raise InvalidSpecError("outcome space needs at least two outcomes")
        if len(set(self.outcomes)) != len(self.outcomes):
            raise InvalidSpecError("outcome labels must be distinct")

    @property
    def size(self) -> int:
        return len(self.outcomes)

    @property
    def dropped_index(self) -> int:
        return len(self.outcomes) - 1

    @cached_property
    def _index(self) -> dict:
        return {t: j for j, t in enumerate(self.outcomes)}

    def index_of(self, outcome) -> int:
        try:
            return self._index[outcome]
        except (KeyError, TypeError):
            raise TabulationError(f"unknown outcome label {outcome!r}") from None


@dataclass(frozen=True)
class KernelMatrix:
    """Conditional outcome probabilities; rows index outcomes, columns index
    grid cells.  ``complete`` kernels have columns summing to one."""

    matrix: np.ndarray
    outcomes: OutcomeSpace
    grid: SupportGrid
    complete: bool = True

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape != (self.outcomes.size, self.grid.size):
            raise InvalidSpecError(
                f"kernel shape {m.shape} does not match {self.outcomes.size} outcomes "
                f"x {self.grid.size} grid cells"
            )
        if not np.all(np.isfinite(m)):
            raise InvalidSpecError("kernel entries must be finite")
        if m.min() < -1e-12 or m.max() > 1 + 1e-12:
            raise InvalidSpecError("kernel entries must lie in [0, 1]")
        m = np.clip(m, 0.0, 1.0)
        if self.complete:
            sums = m.sum(axis=0)
            bad = np.nonzero(np.abs(sums - 1.0) > 1e-12)[0]
            if bad.size:
                raise InvalidSpecError(
                    f"column {bad[0]} of a complete kernel sums to {sums[bad[0]]!r}, not 1"
                )
        object.__setattr__(self, "matrix", readonly_array(m))

    @property
    def reduced(self) -> np.ndarray:
        """All rows but the dropped (last) outcome."""
        return self.matrix[:-1]


@dataclass(frozen=True)
class EmpiricalFrequencies:
    """Observed outcome counts with the derived proportion vectors."""

    counts: np.ndarray
    space: OutcomeSpace

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (self.space.size,):
            raise InvalidSpecError("counts length must equal the outcome count")
        if not np.issubdtype(counts.dtype, np.integer):
            as_int = counts.astype(np.int64)
            if not np.array_equal(as_int, counts):
                raise InvalidSpecError("counts must be integers")
            counts = as_int
        if counts.min() < 0:
            raise InvalidSpecError("counts must be nonnegative")
        if counts.sum() < 1:
            raise EmptySampleError("sample size must be at least one")
        object.__setattr__(self, "counts", readonly_array(counts, dtype=np.int64))

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @cached_property
    def fhat(self) -> np.ndarray:
        return readonly_array(self.counts / self.n)

    @property
    def fhat_star(self) -> np.ndarray:
        """Proportions with the dropped (last) coordinate removed."""
        return self.fhat[:-1]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Per-draw multinomial covariance of the reduced proportions, its ridge
    and the inverse of the ridged matrix."""

    matrix: np.ndarray
    ridge: float
    inverse: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        inv = np.asarray(self.inverse, dtype=float)
        d = mat.shape[0]
        if mat.shape != (d, d) or inv.shape != (d, d):
            raise InvalidSpecError("covariance and inverse must be square with equal shape")
        if self.ridge < 0:
            raise InvalidSpecError("ridge must be nonnegative")
        if np.abs(mat - mat.T).max(initial=0.0) > 1e-10:
            raise InvalidSpecError("covariance estimate must be symmetric")
        ridged = mat + self.ridge * np.eye(d)
        resid = np.abs(inv @ ridged - np.eye(d)).max(initial=0.0)
        if resid > 1e-8:
            raise InvalidSpecError(f"inverse residual {resid:.3e} exceeds 1e-8")
        try:
            np.linalg.cholesky(inv)
        except np.linalg.LinAlgError:
            raise InvalidSpecError("inverse must be symmetric positive definite") from None
        object.__setattr__(self, "matrix", readonly_array(mat))
        object.__setattr__(self, "inverse", readonly_array(inv))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class CalibrationConstraint:
    """Known linear functional of the mixing density, imposed as equality."""

    coefficients: np.ndarray
    target: float
    name: str = ""

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.ndim != 1 or not np.all(np.isfinite(coef)):
            raise InvalidSpecError("calibration coefficients must be a finite vector")
        if not np.isfinite(self.target):
            raise InvalidSpecError("calibration target must be finite")
        object.__setattr__(self, "coefficients", readonly_array(coef))

    @classmethod
    def from_rule(cls, grid: SupportGrid, rule: Callable, target: float,
                  name: str = "") -> "CalibrationConstraint":
        if grid.is_joint:
            coef = [rule(x, s) for x, s in grid.values]
        else:
            coef = [rule(s) for s in grid.values]
        return cls(coefficients=np.asarray(coef, dtype=float), target=float(target), name=name)


@dataclass(frozen=True)
class Functional:
    """Values of a target function evaluated on the grid cells."""

    h: np.ndarray
    name: str = ""

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 1 or not np.all(np.isfinite(h)):
            raise InvalidSpecError("functional values must be a finite vector")
        object.__setattr__(self, "h", readonly_array(h))

    @classmethod
    def from_rule(cls, grid: SupportGrid, rule: Callable, name: str = "") -> "Functional":
        if grid.is_joint:
            values = [rule(x, s) for x, s in grid.values]
        else:
            values = [rule(s) for s in grid.values]
        return cls(h=np.asarray(values, dtype=float), name=name)


@dataclass(frozen=True)
class MixingEstimate:
    """Estimated mixing density over a grid, with solve diagnostics.

    Entries of ``g`` down to -1e-10 are clamped to zero and the vector is
    renormalized; anything more negative is treated as a solver failure.
    """

    g: np.ndarray
    grid: SupportGrid
    objective: float
    kkt_residual: float
    status: str
    calibrations: tuple = ()

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.shape != (self.grid.size,):
            raise InvalidSpecError("density length must equal the grid size")
        if self.status not in VALID_STATUSES:
            raise InvalidSpecError(f"unknown status {self.status!r}")
        if g.min(initial=0.0) < -1e-10:
            raise InvalidSpecError(
                f"density has entry {g.min():.3e} below the -1e-10 clamp tolerance"
            )
        total = g.sum()
        if abs(total - 1.0) > 1e-9:
            raise InvalidSpecError(f"density sums to {total!r}, outside 1 +/- 1e-9")
        g = np.clip(g, 0.0, None)
        g = g / g.sum()
        for constraint in self.calibrations:
            gap = abs(float(constraint.coefficients @ g) - constraint.target)
            if gap > 1e-8:
                raise InvalidSpecError(
                    f"calibration {constraint.name or constraint.target} violated by {gap:.3e}"
                )
        object.__setattr__(self, "g", readonly_array(g))


@dataclass(frozen=True)
class SurveyRecord:
    """One sampled unit: covariate level, observed response statistic and
    the response indicator."""

    x: object
    y: object
    responded: bool

    def __post_init__(self):
        if not self.responded and not (self.y is None or self.y == NR):
            raise InvalidSpecError("non-responding records must carry y=NR or no y")
        if self.responded and (self.y is None or self.y == NR):
            raise InvalidSpecError("responding records must carry an observed y")
