"""Inverse-probability survey estimators under non-response.

Responding units carry a covariate level and an attempt/response count;
the count's conditional law identifies the joint distribution of covariate
and response probability, which is estimated by deconvolution.  Weights
then replace the unknown 1/p of a classical inverse-probability total:

* truncated setup (non-responders invisible): weight ``E(1/p | X=x)``
  under the fit to responders only;
* censored setup (non-response observed as NR): weight ``1 / E(p | X=x)``
  under the fit that includes the NR cell.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import (
    NR,
    InvalidSpecError,
    MixdeconError,
    MixingEstimate,
    SurveyRecord,
    TabulationError,
)
from .deconvolve import conditional_mean_inv_p, conditional_mean_p, npmle
from .empirics import DEFAULT_RIDGE, multinomial_covariance, tabulate
from .kernels import (
    GeometricCensoredSpec,
    GeometricTruncatedSpec,
    ShiftedBinomialSpec,
    geometric_censored_kernel,
    geometric_truncated_kernel,
    joint_kernel,
    response_probability,
    shifted_binomial_kernel,
)

MODES = ("truncated", "censored")


@dataclass(frozen=True)
class SurveyDataset:
    """Survey records plus the response-model parameter.

    ``max_attempts`` applies to the geometric attempt-count model;
    ``trials`` to the shifted-binomial response-count model.  Exactly one
    must be set.  Truncated datasets contain only responders.
    """

    records: tuple
    mode: str
    max_attempts: int | None = None
    trials: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidSpecError(f"mode must be one of {MODES}, got {self.mode!r}")
        if (self.max_attempts is None) == (self.trials is None):
            raise InvalidSpecError("set exactly one of max_attempts or trials")
        if self.max_attempts is not None and self.max_attempts < 1:
            raise InvalidSpecError("max_attempts must be positive")
        if self.trials is not None and self.trials < 0:
            raise InvalidSpecError("trials must be nonnegative")
        records = tuple(self.records)
        for rec in records:
            if not isinstance(rec, SurveyRecord):
                raise InvalidSpecError("records must be SurveyRecord instances")
            if self.mode == "truncated" and not rec.responded:
                raise InvalidSpecError("truncated datasets cannot contain non-responders")
        object.__setattr__(self, "records", records)

    @property
    def responders(self) -> tuple:
        return tuple(r for r in self.records if r.responded)

    def covariate_levels(self) -> tuple:
        return tuple(sorted({r.x for r in self.responders}))


@dataclass(frozen=True)
class SurveyWeights:
    """Per-covariate-level inverse-probability weights and the underlying fit."""

    mode: str
    levels: tuple
    per_level: dict
    estimate: MixingEstimate

    def __getitem__(self, x) -> float:
        try:
            return self.per_level[x]
        except KeyError:
            raise MixdeconError(f"no weight available for covariate level {x!r}") from None


def _joint_fit(data: SurveyDataset, grid, calibrations, censored: bool,
               ridge: float) -> tuple[MixingEstimate, tuple, np.ndarray]:
    levels = data.covariate_levels()
    if not levels:
        raise InvalidSpecError("dataset has no responding records")
    grid = np.asarray(grid, dtype=float)
    if censored:
        base = geometric_censored_kernel(
            GeometricCensoredSpec(p_attempt=tuple(grid), max_attempts=data.max_attempts))
    else:
        base = geometric_truncated_kernel(
            GeometricTruncatedSpec(p_attempt=tuple(grid), max_attempts=data.max_attempts))
    kernel = joint_kernel(base, levels, censored=censored)
    observations = [
        (r.x, r.y) if r.responded else NR
        for r in data.records
        if r.responded or censored
    ]
    freq = tabulate(observations, kernel.outcomes)
    cov = multinomial_covariance(freq, ridge=ridge)
    estimate = npmle(freq, kernel, cov, calibrations=calibrations)
    p_cells = response_probability(estimate.grid.theta, data.max_attempts)
    return estimate, levels, p_cells


def estimate_weights_truncated(data: SurveyDataset, grid, calibrations=(),
                               ridge: float = DEFAULT_RIDGE) -> SurveyWeights:
    """Weights ``E(1/p | X=x)`` from the responders-only (truncated) fit.

    ``grid`` holds single-attempt success probabilities; the weight uses
    the overall response probability within ``max_attempts`` tries.
    """
    if data.mode != "truncated":
        raise InvalidSpecError("dataset mode must be 'truncated'")
    if data.max_attempts is None:
        raise InvalidSpecError("the geometric attempt model requires max_attempts")
    estimate, levels, p_cells = _joint_fit(data, grid, calibrations, censored=False, ridge=ridge)
    per_level = {x: conditional_mean_inv_p(estimate, x, response_prob=p_cells) for x in levels}
    return SurveyWeights(mode="truncated", levels=levels, per_level=per_level, estimate=estimate)


def estimate_weights_censored(data: SurveyDataset, grid, calibrations=(),
                              ridge: float = DEFAULT_RIDGE) -> SurveyWeights:
    """Weights ``1 / E(p | X=x)`` from the censored fit (NR cells included)."""
    if data.mode != "censored":
        raise InvalidSpecError("dataset mode must be 'censored'")
    if data.max_attempts is None:
        raise InvalidSpecError("the geometric attempt model requires max_attempts")
    estimate, levels, p_cells = _joint_fit(data, grid, calibrations, censored=True, ridge=ridge)
    per_level = {}
    for x in levels:
        mean_p = conditional_mean_p(estimate, x, response_prob=p_cells)
        if mean_p <= 0.0:
            raise MixdeconError(f"estimated response probability at level {x!r} is zero")
        per_level[x] = 1.0 / mean_p
    return SurveyWeights(mode="censored", levels=levels, per_level=per_level, estimate=estimate)


def estimate_total(data: SurveyDataset, weights: SurveyWeights, value_of_x=None) -> float:
    """Weighted responder total ``sum value(x_i) * weight(x_i)``."""
    value_of_x = value_of_x or (lambda x: float(x))
    return float(sum(value_of_x(r.x) * weights[r.x] for r in data.responders))


def mixture_total(weights: SurveyWeights, population_size: int, value_of_x=None) -> float:
    """Model-based total ``N * E(value(X))`` under the censored fit.

    Asymptotically this agrees with the weighted responder total; it is the
    natural plug-in when the population size is known.
    """
    if weights.mode != "censored":
        raise InvalidSpecError("the model-based total requires a censored-mode fit")
    value_of_x = value_of_x or (lambda x: float(x))
    est = weights.estimate
    total = 0.0
    for x in est.grid.x_levels:
        total += value_of_x(x) * float(est.g[est.grid.level_mask(x)].sum())
    return population_size * total


def _proportions_from(weight_of, counted) -> dict:
    weighted = {x: m * weight_of(x) for x, m in counted.items()}
    denom = sum(weighted.values())
    if denom <= 0.0:
        raise MixdeconError("all weighted level counts vanish; proportions undefined")
    return {x: w / denom for x, w in sorted(weighted.items())}


def estimate_proportions(data: SurveyDataset, weights: SurveyWeights) -> dict:
    """Weighted share of every covariate level among responders; sums to one."""
    counted: dict = {}
    for r in data.responders:
        counted[r.x] = counted.get(r.x, 0) + 1
    return _proportions_from(lambda x: weights[x], counted)


def oracle_proportions(x_values, response_probs, responded) -> dict:
    """Benchmark proportions using the true per-unit response probabilities
    (available only inside simulations)."""
    x_values = np.asarray(x_values)
    p = np.asarray(response_probs, dtype=float)
    responded = np.asarray(responded, dtype=bool)
    if p[responded].min(initial=1.0) <= 0.0:
        raise MixdeconError("oracle weights undefined: a responder has p=0")
    totals: dict = {}
    for x, pi in zip(x_values[responded], p[responded]):
        key = x.item() if hasattr(x, "item") else x
        totals[key] = totals.get(key, 0.0) + 1.0 / pi
    denom = sum(totals.values())
    return {x: t / denom for x, t in sorted(totals.items())}


def hybrid_estimate(current_counts: dict, pooled_history: SurveyDataset, grid,
                    calibrations=(), ridge: float = DEFAULT_RIDGE) -> dict:
    """Inflate current-period level counts by inverse-probability weights
    fitted on pooled historical response counts.

    The history follows the shifted-binomial response-count model (one
    guaranteed response plus ``trials`` Bernoulli ones); records with zero
    responses are dropped as unreliable.  Weights are ``E(1/p | X=x)``
    under the truncated fit, with p the per-period response probability.
    """
    if pooled_history.mode != "truncated":
        raise InvalidSpecError("pooled history must be a truncated-mode dataset")
    if pooled_history.trials is None:
        raise InvalidSpecError("the hybrid estimator requires the shifted-binomial model (trials)")
    grid = np.asarray(grid, dtype=float)
    kept = [r for r in pooled_history.records if r.y != 0]
    if not kept:
        raise InvalidSpecError("pooled history has no usable (nonzero-response) records")
    levels = tuple(sorted({r.x for r in kept}))
    base = shifted_binomial_kernel(
        ShiftedBinomialSpec(p_response=tuple(grid), trials=pooled_history.trials))
    kernel = joint_kernel(base, levels, censored=False)
    freq = tabulate([(r.x, r.y) for r in kept], kernel.outcomes)
    cov = multinomial_covariance(freq, ridge=ridge)
    estimate = npmle(freq, kernel, cov, calibrations=calibrations)
    weights = {x: conditional_mean_inv_p(estimate, x) for x in levels}
    missing = [x for x in current_counts if x not in weights]
    if missing:
        raise MixdeconError(f"no historical responses at covariate level {missing[0]!r}")
    return _proportions_from(lambda x: weights[x], dict(current_counts))


# ---------------------------------------------------------------------------
# file interfaces
# ---------------------------------------------------------------------------

def _parse_level(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_survey_records(path) -> list[SurveyRecord]:
    """Read records from CSV with columns (id, x, y, responded).

    Non-response is encoded as ``responded=0`` with empty ``y`` (and
    optionally empty ``x``).
    """
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", "x", "y", "responded"}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise InvalidSpecError(f"{path}: missing column {sorted(missing)[0]!r}")
        for lineno, row in enumerate(reader, start=2):
            flag = row["responded"].strip()
            if flag not in {"0", "1"}:
                raise InvalidSpecError(f"{path}: line {lineno}: responded must be 0 or 1")
            responded = flag == "1"
            y_text = row["y"].strip()
            x_text = row["x"].strip()
            if responded:
                if not y_text or not x_text:
                    raise InvalidSpecError(f"{path}: line {lineno}: responders need both x and y")
                try:
                    y = int(y_text)
                except ValueError:
                    raise InvalidSpecError(f"{path}: line {lineno}: y must be an integer") from None
                records.append(SurveyRecord(x=_parse_level(x_text), y=y, responded=True))
            else:
                if y_text and y_text != NR:
                    raise InvalidSpecError(
                        f"{path}: line {lineno}: non-responders must leave y empty or NR")
                records.append(SurveyRecord(x=_parse_level(x_text) if x_text else None,
                                            y=NR, responded=False))
    if not records:
        raise TabulationError(f"{path}: no records")
    return records


def weights_report(data: SurveyDataset, weights: SurveyWeights) -> dict:
    """JSON-ready report: proportions, weights, fit summary, diagnostics."""
    proportions = estimate_proportions(data, weights)
    est = weights.estimate
    marginals = {str(x): float(est.g[est.grid.level_mask(x)].sum())
                 for x in (est.grid.x_levels or ())}
    return {
        "mode": weights.mode,
        "proportions": {str(x): v for x, v in proportions.items()},
        "weights": {str(x): v for x, v in weights.per_level.items()},
        "mixture_summary": {
            "level_mass": marginals,
            "objective": est.objective,
            "kkt_residual": est.kkt_residual,
            "status": est.status,
        },
        "diagnostics": {
            "n_records": len(data.records),
            "n_responders": len(data.responders),
        },
    }
