"""Batch command-line interface.

Subcommands::

    mixdecon deconvolve   fit the mixing density from tabulated outcomes
    mixdecon ci           confidence interval for a linear functional
    mixdecon adjust       survey proportions under non-response
    mixdecon simulate     Monte-Carlo experiment table rows

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
that mirror the long flags; explicit flags override the file.  Exit codes:
0 success, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .confidence import functional_ci
from .core import (
    NR,
    CalibrationConstraint,
    Functional,
    InvalidSpecError,
    MixdeconError,
    TabulationError,
)
from .deconvolve import dump_json, npmle, save_estimate_csv, save_estimate_json
from .empirics import DEFAULT_RIDGE, multinomial_covariance, tabulate
from .kernels import (
    GeometricCensoredSpec,
    GeometricTruncatedSpec,
    NormalDiscretizedSpec,
    ShiftedBinomialSpec,
    bin_observations,
    geometric_censored_kernel,
    geometric_truncated_kernel,
    joint_kernel,
    load_kernel_csv,
    normal_discretized_kernel,
    shifted_binomial_kernel,
)
from .simulate import (
    ALL_ESTIMATORS,
    ExperimentConfig,
    PriorFamily,
    results_to_json,
    run_experiment,
    write_results_csv,
)
from .survey import (
    SurveyDataset,
    estimate_proportions,
    estimate_weights_censored,
    estimate_weights_truncated,
    hybrid_estimate,
    load_survey_records,
    weights_report,
)

_FAMILY_ALIASES = {
    "twopoints": "TwoPoints", "twopts": "TwoPoints",
    "uniform": "UniformMix", "uniformmix": "UniformMix",
    "normal": "TruncNormal", "truncnormal": "TruncNormal",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # input errors exit 1, not argparse's 2
        raise _UsageError(message)


def parse_grid(text: str) -> tuple:
    """Parse 'start:stop:step' (inclusive endpoints) or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InvalidSpecError(f"grid spec {text!r} must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise InvalidSpecError(f"grid spec {text!r} has an empty range")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        return tuple(np.round(start + step * np.arange(count), 12))
    return tuple(float(p) for p in text.split(","))


def _parse_level(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def load_config_tokens(path) -> list[str]:
    """Turn 'key = value' lines into CLI tokens (prepended before flags)."""
    tokens: list[str] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidSpecError(f"{path}: line {lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise InvalidSpecError(f"{path}: line {lineno}: empty key")
            flag = "--" + key.replace("_", "-")
            if value.lower() in {"true", "false"}:
                if value.lower() == "true":
                    tokens.append(flag)
            else:
                tokens.extend([flag, value])
    return tokens


def _apply_config(argv: list[str]) -> list[str]:
    if not argv:
        return argv
    rest = argv[1:]
    path = None
    cleaned = []
    i = 0
    while i < len(rest):
        token = rest[i]
        if token == "--config":
            if i + 1 >= len(rest):
                raise _UsageError("--config needs a file argument")
            path = rest[i + 1]
            i += 2
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
            i += 1
        else:
            cleaned.append(token)
            i += 1
    if path is None:
        return argv
    return [argv[0]] + load_config_tokens(path) + cleaned


# ---------------------------------------------------------------------------
# shared input plumbing
# ---------------------------------------------------------------------------

def _load_calibrations(path, grid_size: int) -> tuple:
    if path is None:
        return ()
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, list):
        raise InvalidSpecError(f"{path}: calibration file must hold a JSON list")
    constraints = []
    for idx, entry in enumerate(payload):
        try:
            coef = np.asarray(entry["coefficients"], dtype=float)
            target = float(entry["target"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpecError(f"{path}: entry {idx}: {exc}") from None
        if coef.size != grid_size:
            raise InvalidSpecError(
                f"{path}: entry {idx}: {coef.size} coefficients for a grid of {grid_size}")
        constraints.append(CalibrationConstraint(
            coefficients=coef, target=target, name=str(entry.get("name", f"calibration-{idx}"))))
    return tuple(constraints)


def _build_kernel(args):
    """Returns (kernel, outcome_parser, needs_x)."""
    model = args.model
    x_levels = tuple(_parse_level(t) for t in args.x_levels.split(",")) if args.x_levels else None
    if model == "csv":
        if not args.kernel_csv:
            raise InvalidSpecError("--model csv requires --kernel-csv")
        if x_levels is not None:
            raise InvalidSpecError(
                "--x-levels does not apply to --model csv; supply a joint kernel file")
        kernel = load_kernel_csv(args.kernel_csv)
        return kernel, (lambda x, y: y), False
    if not args.grid:
        raise InvalidSpecError(f"--model {model} requires --grid")
    grid = parse_grid(args.grid)
    if model in {"geometric-truncated", "geometric-censored"}:
        if args.m0 is None:
            raise InvalidSpecError(f"--model {model} requires --m0")
        if model == "geometric-truncated":
            base = geometric_truncated_kernel(
                GeometricTruncatedSpec(p_attempt=grid, max_attempts=args.m0))
        else:
            base = geometric_censored_kernel(
                GeometricCensoredSpec(p_attempt=grid, max_attempts=args.m0))

        def parse_plain(x, y):
            if y == NR:
                return NR
            return int(y)

    elif model == "shifted-binomial":
        if args.trials is None:
            raise InvalidSpecError("--model shifted-binomial requires --trials")
        base = shifted_binomial_kernel(ShiftedBinomialSpec(p_response=grid, trials=args.trials))

        def parse_plain(x, y):
            return int(y)

    elif model == "normal-discretized":
        if args.sigma is None or not args.edges:
            raise InvalidSpecError("--model normal-discretized requires --sigma and --edges")
        edges = parse_grid(args.edges)
        base = normal_discretized_kernel(
            NormalDiscretizedSpec(locations=grid, sigma=args.sigma, bin_edges=edges))

        def parse_plain(x, y):
            return int(bin_observations([float(y)], edges)[0])

    else:
        raise InvalidSpecError(f"unknown model {model!r}")
    if x_levels is None:
        return base, parse_plain, False
    if model == "normal-discretized":
        raise InvalidSpecError("joint grids are not supported for the normal model")
    kernel = joint_kernel(base, x_levels, censored=(model == "geometric-censored"))

    def parse_joint(x, y):
        if y == NR:
            return NR
        if x is None or x == "":
            raise TabulationError("responding rows need a covariate level")
        return (_parse_level(x), int(y))

    return kernel, parse_joint, True


def _read_observations(path, parser_fn, needs_x):
    observations = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = set(reader.fieldnames or ())
        if "y" not in fields:
            raise InvalidSpecError(f"{path}: missing column 'y'")
        if needs_x and "x" not in fields:
            raise InvalidSpecError(f"{path}: missing column 'x'")
        for lineno, row in enumerate(reader, start=2):
            y = row.get("y")
            if y is None:
                raise InvalidSpecError(f"{path}: line {lineno}: short row, no 'y' field")
            try:
                observations.append(parser_fn(row.get("x"), y.strip()))
            except (ValueError, TabulationError) as exc:
                raise InvalidSpecError(f"{path}: line {lineno}: {exc}") from None
    if not observations:
        raise TabulationError(f"{path}: no observations")
    return observations


def _read_functional(path, size: int) -> Functional:
    values = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if "value" not in set(reader.fieldnames or ()):
            raise InvalidSpecError(f"{path}: missing column 'value'")
        for lineno, row in enumerate(reader, start=2):
            try:
                values.append(float(row["value"]))
            except ValueError as exc:
                raise InvalidSpecError(f"{path}: line {lineno}: {exc}") from None
    if len(values) != size:
        raise InvalidSpecError(f"{path}: {len(values)} values for a grid of {size}")
    return Functional(h=np.asarray(values), name=path)


def _read_counts(path) -> dict:
    counts = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"x", "count"} - set(reader.fieldnames or ())
        if missing:
            raise InvalidSpecError(f"{path}: missing column {sorted(missing)[0]!r}")
        for lineno, row in enumerate(reader, start=2):
            try:
                counts[_parse_level(row["x"].strip())] = int(row["count"])
            except ValueError as exc:
                raise InvalidSpecError(f"{path}: line {lineno}: {exc}") from None
    if not counts:
        raise InvalidSpecError(f"{path}: no counts")
    return counts


# ---------------------------------------------------------------------------
# subcommand handlers
# ---------------------------------------------------------------------------

def cmd_deconvolve(args) -> int:
    kernel, parser_fn, needs_x = _build_kernel(args)
    observations = _read_observations(args.observations, parser_fn, needs_x)
    freq = tabulate(observations, kernel.outcomes)
    cov = multinomial_covariance(freq, ridge=args.ridge)
    calibrations = _load_calibrations(args.calibration, kernel.grid.size)
    estimate = npmle(freq, kernel, cov, calibrations=calibrations)
    if args.out_csv:
        save_estimate_csv(estimate, args.out_csv)
    if args.out_json:
        save_estimate_json(estimate, args.out_json)
    print(f"objective={estimate.objective!r} kkt_residual={estimate.kkt_residual!r} "
          f"status={estimate.status}")
    return 0 if estimate.status == "converged" else 2


def cmd_ci(args) -> int:
    kernel, parser_fn, needs_x = _build_kernel(args)
    observations = _read_observations(args.observations, parser_fn, needs_x)
    freq = tabulate(observations, kernel.outcomes)
    cov = multinomial_covariance(freq, ridge=args.ridge)
    calibrations = _load_calibrations(args.calibration, kernel.grid.size)
    h = _read_functional(args.h_file, kernel.grid.size)
    interval = functional_ci(h, freq, kernel, cov, alpha=args.alpha,
                             calibrations=calibrations)
    if args.out:
        dump_json(interval.to_dict(), args.out)
    print(f"T_L={interval.lower!r} T_U={interval.upper!r} alpha={interval.alpha!r}")
    return 0


def cmd_adjust(args) -> int:
    grid = parse_grid(args.grid)
    records = tuple(load_survey_records(args.data))
    if args.mode in {"truncated", "censored"}:
        if args.m0 is None:
            raise InvalidSpecError(f"--mode {args.mode} requires --m0")
        if args.mode == "truncated" and any(not r.responded for r in records):
            raise InvalidSpecError(
                "truncated mode cannot accept non-responding rows; use --mode censored")
        data = SurveyDataset(records=records, mode=args.mode, max_attempts=args.m0)
        if args.mode == "truncated":
            weights = estimate_weights_truncated(data, grid)
        else:
            weights = estimate_weights_censored(data, grid)
        report = weights_report(data, weights)
        proportions = estimate_proportions(data, weights)
    elif args.mode == "hybrid":
        if args.trials is None:
            raise InvalidSpecError("--mode hybrid requires --trials")
        if args.current_counts is None:
            raise InvalidSpecError("--mode hybrid requires --current-counts")
        history = SurveyDataset(records=records, mode="truncated", trials=args.trials)
        counts = _read_counts(args.current_counts)
        proportions = hybrid_estimate(counts, history, grid)
        report = {
            "mode": "hybrid",
            "proportions": {str(x): v for x, v in proportions.items()},
            "current_counts": {str(x): counts[x] for x in sorted(counts)},
        }
    else:
        raise InvalidSpecError(f"unknown mode {args.mode!r}")
    if args.out:
        dump_json(report, args.out)
    for x, share in proportions.items():
        print(f"proportion[{x}]={share!r}")
    return 0


def cmd_simulate(args) -> int:
    kind = _FAMILY_ALIASES.get(args.family.lower())
    if kind is None:
        raise InvalidSpecError(f"unknown family {args.family!r}")
    reps = 1000 if args.full else args.reps
    estimators = tuple(args.estimators.split(",")) if args.estimators else ALL_ESTIMATORS
    config = ExperimentConfig(
        population=args.n,
        max_attempts=args.m0,
        family=PriorFamily(kind=kind, gamma=args.gamma),
        replications=reps,
        seed=args.seed,
        attempt_grid=parse_grid(args.grid),
        estimators=estimators,
    )
    result = run_experiment(config, jobs=args.jobs)
    write_results_csv([result], args.out)
    if args.out_json:
        dump_json({"rows": results_to_json([result])}, args.out_json)
    row = result.to_row()
    print(" ".join(f"{key}={row[key]}" for key in
                   ("family", "m0", "gamma", "m_naive", "m_alpha2", "s_naive", "s_alpha2")
                   if row.get(key) != ""))
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def _add_model_options(sub):
    sub.add_argument("--observations", required=True, help="CSV of observed outcomes")
    sub.add_argument("--model", required=True,
                     choices=["geometric-truncated", "geometric-censored",
                              "shifted-binomial", "normal-discretized", "csv"])
    sub.add_argument("--grid", help="support grid, start:stop:step or comma list")
    sub.add_argument("--m0", type=int, help="attempt cap for geometric models")
    sub.add_argument("--trials", type=int, help="extra trials for shifted-binomial")
    sub.add_argument("--sigma", type=float, help="known sigma for the normal model")
    sub.add_argument("--edges", help="bin edges for the normal model")
    sub.add_argument("--x-levels", help="comma list of covariate levels (joint fit)")
    sub.add_argument("--kernel-csv", help="kernel file for --model csv")
    sub.add_argument("--calibration", help="JSON file of calibration constraints")
    sub.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    sub.add_argument("--config", help="key=value defaults file")


def _build_parser() -> _Parser:
    parser = _Parser(prog="mixdecon", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    subs = parser.add_subparsers(dest="command", required=True)

    dec = subs.add_parser("deconvolve", help="fit the mixing density")
    _add_model_options(dec)
    dec.add_argument("--out-csv", help="write the density as CSV")
    dec.add_argument("--out-json", help="write the density with metadata as JSON")
    dec.set_defaults(handler=cmd_deconvolve)

    ci = subs.add_parser("ci", help="confidence interval for a functional")
    _add_model_options(ci)
    ci.add_argument("--h-file", required=True, help="CSV with a 'value' column per grid cell")
    ci.add_argument("--alpha", type=float, default=0.05)
    ci.add_argument("--out", help="write the interval report as JSON")
    ci.set_defaults(handler=cmd_ci)

    adj = subs.add_parser("adjust", help="survey proportions under non-response")
    adj.add_argument("--data", required=True, help="survey CSV (id,x,y,responded)")
    adj.add_argument("--mode", required=True, choices=["truncated", "censored", "hybrid"])
    adj.add_argument("--m0", type=int, help="attempt cap (geometric modes)")
    adj.add_argument("--trials", type=int, help="extra trials (hybrid mode)")
    adj.add_argument("--grid", default="0.1:1:0.01")
    adj.add_argument("--current-counts", help="CSV (x,count) for hybrid mode")
    adj.add_argument("--out", help="write the report as JSON")
    adj.add_argument("--config", help="key=value defaults file")
    adj.set_defaults(handler=cmd_adjust)

    sim = subs.add_parser("simulate", help="Monte-Carlo experiment row")
    sim.add_argument("--family", required=True, help="twopoints | uniform | normal")
    sim.add_argument("--gamma", type=float, required=True)
    sim.add_argument("--m0", type=int, required=True)
    sim.add_argument("--n", type=int, required=True, help="population size")
    sim.add_argument("--reps", type=int, default=200)
    sim.add_argument("--full", action="store_true", help="run the full 1000 replications")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--grid", default="0.1:1:0.01")
    sim.add_argument("--estimators", help="comma subset of naive,alpha1,alpha2,oracle")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--out", required=True, help="results CSV path")
    sim.add_argument("--out-json", help="also write the rows as JSON")
    sim.add_argument("--config", help="key=value defaults file")
    sim.set_defaults(handler=cmd_simulate)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(argv)
        args = _build_parser().parse_args(argv)
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (InvalidSpecError, TabulationError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except MixdeconError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
