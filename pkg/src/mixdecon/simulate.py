"""Monte-Carlo harness for the survey estimators and the Gaussian demo.

Populations carry a binary covariate X and a per-unit single-attempt
response probability drawn from one of three prior families; attempt
counts are geometric and a unit responds when its count stays within the
attempt cap.  The group with X=0 receives the gamma-shifted (harder to
reach) prior, which is what the reported simulation tables reflect, so the
naive responder share of X=0 is biased downward and grows more biased with
gamma.

Replications use independent counter-derived substreams of one master
seed, so any single replication can be reproduced in isolation and results
do not depend on scheduling.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Functional, MixdeconError, SurveyRecord, readonly_array
from .deconvolve import functional_value, npmle
from .empirics import multinomial_covariance, tabulate
from .kernels import (
    DEFAULT_ATTEMPT_GRID,
    NormalDiscretizedSpec,
    bin_observations,
    normal_discretized_kernel,
    response_probability,
)
from .qp import single_thread_blas
from .survey import (
    SurveyDataset,
    estimate_proportions,
    estimate_weights_censored,
    estimate_weights_truncated,
    oracle_proportions,
)

FAMILY_KINDS = ("TwoPoints", "UniformMix", "TruncNormal")
#: Column labels used in the results table for each family kind.
FAMILY_LABELS = {"TwoPoints": "TwoPts", "UniformMix": "Uniform", "TruncNormal": "Normal"}
ALL_ESTIMATORS = ("naive", "alpha1", "alpha2", "oracle")

#: The estimated target: expected share of the X=0 group.
TRUE_SHARE = 0.5


@dataclass(frozen=True)
class PriorFamily:
    """Two response-probability priors indexed by the contamination gamma.

    ``TwoPoints``: equal mass at 0.5 and 0.9; the shifted prior translates
    both points down by gamma.  ``UniformMix``: uniform on (0.1, 1); the
    shifted prior mixes in a point mass at 0.1 with weight gamma.
    ``TruncNormal``: N(0.5, 0.1) clamped to [0.1, 1]; the shifted prior
    recentres at 0.5 - gamma before clamping.
    """

    kind: str
    gamma: float

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise MixdeconError(f"unknown prior family {self.kind!r}")
        if not 0.0 <= self.gamma < 0.5:
            raise MixdeconError("gamma must lie in [0, 0.5) to keep probabilities positive")

    def sample(self, rng: np.random.Generator, size: int, shifted: bool) -> np.ndarray:
        shift = self.gamma if shifted else 0.0
        if self.kind == "TwoPoints":
            points = np.array([0.5 - shift, 0.9 - shift])
            return points[rng.integers(0, 2, size)]
        if self.kind == "UniformMix":
            draws = rng.uniform(0.1, 1.0, size)
            if shifted and self.gamma > 0.0:
                draws = np.where(rng.random(size) < self.gamma, 0.1, draws)
            return draws
        draws = rng.normal(0.5 - shift, 0.1, size)
        return np.clip(draws, 0.1, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    population: int
    max_attempts: int
    family: PriorFamily
    replications: int
    seed: int
    attempt_grid: tuple = DEFAULT_ATTEMPT_GRID
    estimators: tuple = ALL_ESTIMATORS

    def __post_init__(self):
        if self.population < 1 or self.max_attempts < 1 or self.replications < 1:
            raise MixdeconError("population, max_attempts and replications must be positive")
        unknown = set(self.estimators) - set(ALL_ESTIMATORS)
        if unknown:
            raise MixdeconError(f"unknown estimator {sorted(unknown)[0]!r}")


@dataclass(frozen=True)
class PopulationDraw:
    x: np.ndarray        # 0/1 covariate
    p_attempt: np.ndarray
    attempts: np.ndarray  # geometric attempt count, support 1, 2, ...

    def __post_init__(self):
        object.__setattr__(self, "x", readonly_array(self.x, dtype=np.int64))
        object.__setattr__(self, "p_attempt", readonly_array(self.p_attempt))
        object.__setattr__(self, "attempts", readonly_array(self.attempts, dtype=np.int64))


def geometric_attempts(rng: np.random.Generator, p_attempt: np.ndarray) -> np.ndarray:
    """Exact inverse-CDF geometric sampling: 1 + floor(log U / log(1-p))."""
    p = np.asarray(p_attempt, dtype=float)
    u = 1.0 - rng.random(p.size)  # in (0, 1]
    out = np.ones(p.size, dtype=np.int64)
    partial = p < 1.0
    out[partial] = 1 + np.floor(np.log(u[partial]) / np.log1p(-p[partial])).astype(np.int64)
    return out


def _rep_rng(seed: int, replication: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, replication)))


def draw_population(config: ExperimentConfig, replication: int = 0) -> PopulationDraw:
    """One synthetic population; deterministic given (seed, replication)."""
    rng = _rep_rng(config.seed, replication)
    n = config.population
    x = np.where(rng.random(n) < 0.5, 0, 1)
    p = np.empty(n)
    p[x == 0] = config.family.sample(rng, int((x == 0).sum()), shifted=True)
    p[x == 1] = config.family.sample(rng, int((x == 1).sum()), shifted=False)
    attempts = geometric_attempts(rng, p)
    return PopulationDraw(x=x, p_attempt=p, attempts=attempts)


def _replicate(config: ExperimentConfig, replication: int) -> dict:
    with single_thread_blas():
        return _replicate_inner(config, replication)


def _replicate_inner(config: ExperimentConfig, replication: int) -> dict:
    draw = draw_population(config, replication)
    responded = draw.attempts <= config.max_attempts
    out: dict = {"failed": False, "error": "", "kkt": []}
    if not responded.any():
        return {"failed": True, "error": "no responders", "kkt": []}
    if "naive" in config.estimators:
        out["naive"] = float(np.mean(draw.x[responded] == 0))
    if "oracle" in config.estimators:
        p_resp = response_probability(draw.p_attempt, config.max_attempts)
        out["oracle"] = oracle_proportions(draw.x, p_resp, responded).get(0, 0.0)
    try:
        if "alpha1" in config.estimators:
            records = tuple(
                SurveyRecord(x=int(xi), y=int(yi), responded=True)
                for xi, yi in zip(draw.x[responded], draw.attempts[responded])
            )
            data = SurveyDataset(records=records, mode="truncated",
                                 max_attempts=config.max_attempts)
            weights = estimate_weights_truncated(data, config.attempt_grid)
            out["alpha1"] = estimate_proportions(data, weights).get(0, 0.0)
            out["kkt"].append(weights.estimate.kkt_residual)
        if "alpha2" in config.estimators:
            records = tuple(
                SurveyRecord(
                    x=int(xi) if resp else None,
                    y=int(yi) if resp else None,
                    responded=bool(resp),
                )
                for xi, yi, resp in zip(draw.x, draw.attempts, responded)
            )
            data = SurveyDataset(records=records, mode="censored",
                                 max_attempts=config.max_attempts)
            weights = estimate_weights_censored(data, config.attempt_grid)
            out["alpha2"] = estimate_proportions(data, weights).get(0, 0.0)
            out["kkt"].append(weights.estimate.kkt_residual)
    except MixdeconError as exc:
        return {"failed": True, "error": str(exc), "kkt": out["kkt"]}
    return out


def _replicate_job(args) -> dict:
    config, replication = args
    return _replicate(config, replication)


@dataclass(frozen=True)
class ExperimentResult:
    config: ExperimentConfig
    means: dict
    root_mse: dict
    failed_reps: int
    mean_kkt_residual: float

    def to_row(self) -> dict:
        row = {
            "family": FAMILY_LABELS[self.config.family.kind],
            "m0": self.config.max_attempts,
            "gamma": self.config.family.gamma,
            "n_population": self.config.population,
            "replications": self.config.replications,
            "seed": self.config.seed,
        }
        for name in ("naive", "alpha1", "alpha2"):
            row[f"m_{name}"] = self.means.get(name, "")
        for name in ("naive", "oracle", "alpha1", "alpha2"):
            row[f"s_{name}"] = self.root_mse.get(name, "")
        row["failed_reps"] = self.failed_reps
        row["mean_kkt_residual"] = self.mean_kkt_residual
        return row


RESULT_COLUMNS = (
    "family", "m0", "gamma", "n_population", "replications", "seed",
    "m_naive", "m_alpha1", "m_alpha2",
    "s_naive", "s_oracle", "s_alpha1", "s_alpha2",
    "failed_reps", "mean_kkt_residual",
)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run all replications and aggregate means and root mean squared errors
    of every estimator of the X=0 share against the true value 0.5.

    Replications with solver failures are excluded and counted; more than
    one percent of failures aborts the experiment.
    """
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(
                _replicate_job,
                ((config, r) for r in range(config.replications)),
                chunksize=max(1, config.replications // (4 * jobs)),
            ))
    else:
        results = [_replicate(config, r) for r in range(config.replications)]
    failed = sum(1 for r in results if r["failed"])
    if failed > 0.01 * config.replications:
        examples = [r["error"] for r in results if r["failed"]][:3]
        raise MixdeconError(
            f"{failed}/{config.replications} replications failed; first errors: {examples}"
        )
    kept = [r for r in results if not r["failed"]]
    means: dict = {}
    root_mse: dict = {}
    for name in config.estimators:
        values = np.array([r[name] for r in kept])
        means[name] = float(values.mean())
        root_mse[name] = float(np.sqrt(np.mean((values - TRUE_SHARE) ** 2)))
    kkts = [v for r in kept for v in r["kkt"]]
    mean_kkt = float(np.mean(kkts)) if kkts else 0.0
    return ExperimentResult(config=config, means=means, root_mse=root_mse,
                            failed_reps=failed, mean_kkt_residual=mean_kkt)


def write_results_csv(results, path) -> None:
    """Table-schema CSV plus diagnostics columns; float text round-trips."""
    write_result_rows([result.to_row() for result in results], path)


def write_result_rows(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow([
                row[col] if isinstance(row[col], (str, int)) else repr(float(row[col]))
                for col in RESULT_COLUMNS
            ])


def read_result_rows(path) -> list[dict]:
    """Read a results CSV back into row dicts (text-preserving)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != RESULT_COLUMNS:
            raise MixdeconError(f"{path}: unexpected results header")
        rows = []
        for raw in reader:
            row = dict(zip(RESULT_COLUMNS, raw))
            for col in ("m0", "n_population", "replications", "seed", "failed_reps"):
                row[col] = int(row[col])
            rows.append(row)
        return rows


def results_to_json(results) -> list[dict]:
    """JSON mirror of the CSV rows."""
    payload = []
    for result in results:
        row = result.to_row()
        payload.append({col: row[col] for col in RESULT_COLUMNS})
    return payload


# ---------------------------------------------------------------------------
# Gaussian location demo
# ---------------------------------------------------------------------------

#: Location support 0.5, 0.55, ..., 3.0 used by the demo.
DEMO_SUPPORT = tuple(np.round(np.arange(10, 61) * 0.05, 2))
#: Integer bin edges -3, -2, ..., 5 (outer bins reach to +-inf).
DEMO_EDGES = tuple(float(e) for e in range(-3, 6))


def naive_inverse_mean(values) -> float:
    """Plug-in average of 1/theta using the floored point estimates
    max(0.5, y)."""
    values = np.asarray(values, dtype=float)
    return float(np.mean(1.0 / np.maximum(0.5, values)))


@dataclass(frozen=True)
class Example1Result:
    naive: float
    eb: float
    sample_size: int
    seed: int


def example1_demo(n: int, seed: int = 0) -> Example1Result:
    """Gaussian location demo: observations N(theta, 1) with all mass at
    theta=1.  The plug-in average of 1/max(0.5, Y) is biased upward (about
    1.19 in the large-sample limit) while the deconvolution estimate of
    E(1/theta) stays near 1.
    """
    if n < 1:
        raise MixdeconError("sample size must be positive")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    y = rng.normal(1.0, 1.0, n)
    naive = naive_inverse_mean(y)
    kernel = normal_discretized_kernel(
        NormalDiscretizedSpec(locations=DEMO_SUPPORT, sigma=1.0, bin_edges=DEMO_EDGES))
    freq = tabulate(bin_observations(y, DEMO_EDGES).tolist(), kernel.outcomes)
    cov = multinomial_covariance(freq)
    estimate = npmle(freq, kernel, cov)
    h = Functional.from_rule(kernel.grid, lambda s: 1.0 / s, name="inverse_location")
    return Example1Result(naive=naive, eb=functional_value(estimate, h),
                          sample_size=n, seed=seed)
