"""Weighted least-squares estimation of the mixing density and derived
functionals.

The estimate minimises ``(f* - P*g)' W (f* - P*g)`` over the simplex (plus
any calibration equalities), where ``f*`` are the reduced observed
proportions, ``P*`` the reduced kernel and ``W`` the inverse of the ridged
multinomial covariance.  With growing samples this matches the maximum
likelihood fit of the mixing density on the fixed grid.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .core import (
    CovarianceEstimate,
    EmpiricalFrequencies,
    Functional,
    InfeasibleError,
    InvalidSpecError,
    KernelMatrix,
    MixingEstimate,
    UndefinedConditionalError,
)
from .qp import SimplexQP, solve_qp


def assemble_problem(freq: EmpiricalFrequencies, kernel: KernelMatrix,
                     cov: CovarianceEstimate, calibrations=()) -> tuple[SimplexQP, float]:
    """Build the quadratic program and the constant term of the misfit.

    The misfit ``(f* - P*g)' W (f* - P*g)`` expands to
    ``0.5 g' (2 P*'WP*) g + (-2 P*'W f*)' g + f*'W f*``; the returned
    constant is that last term.
    """
    if freq.space.size != kernel.outcomes.size or freq.space.outcomes != kernel.outcomes.outcomes:
        raise InvalidSpecError("frequencies and kernel must share one outcome space")
    p_star = kernel.reduced
    if cov.dim != p_star.shape[0]:
        raise InvalidSpecError(
            f"covariance dimension {cov.dim} does not match the reduced outcome count {p_star.shape[0]}"
        )
    for constraint in calibrations:
        if constraint.coefficients.size != kernel.grid.size:
            raise InvalidSpecError(
                f"calibration {constraint.name or constraint.target} has wrong length"
            )
    f_star = freq.fhat_star
    weighted = cov.inverse @ p_star
    quad = 2.0 * (p_star.T @ weighted)
    quad = 0.5 * (quad + quad.T)
    lin = -2.0 * (weighted.T @ f_star)
    const = float(f_star @ cov.inverse @ f_star)
    equalities = tuple((c.coefficients, c.target) for c in calibrations)
    return SimplexQP(Q=quad, c=lin, equalities=equalities), const


def quadratic_misfit(freq: EmpiricalFrequencies, kernel: KernelMatrix,
                     cov: CovarianceEstimate, g) -> float:
    """Evaluate ``(f* - P*g)' W (f* - P*g)`` directly."""
    resid = freq.fhat_star - kernel.reduced @ np.asarray(g, dtype=float)
    return float(resid @ cov.inverse @ resid)


def npmle(freq: EmpiricalFrequencies, kernel: KernelMatrix, cov: CovarianceEstimate,
          calibrations=(), tol: float = 1e-8, max_iter: int = 200) -> MixingEstimate:
    """Estimate the mixing density over the kernel's grid.

    Parameters
    ----------
    freq : tabulated outcome proportions (reduced vector is used).
    kernel : conditional outcome probabilities over the grid.
    cov : ridged multinomial covariance of the reduced proportions.
    calibrations : known linear functionals imposed as equalities.

    Returns a :class:`MixingEstimate` whose objective is the achieved
    quadratic misfit and whose KKT residual certifies first-order
    optimality.  Infeasible calibrations raise :class:`InfeasibleError`.
    """
    for constraint in calibrations:
        lo = float(constraint.coefficients.min())
        hi = float(constraint.coefficients.max())
        span = max(1.0, abs(lo), abs(hi))
        if not lo - 1e-9 * span <= constraint.target <= hi + 1e-9 * span:
            raise InfeasibleError(
                f"calibration {constraint.name or constraint.target!r} is infeasible: "
                f"no density attains {constraint.target!r} (range [{lo!r}, {hi!r}])"
            )
    problem, _const = assemble_problem(freq, kernel, cov, calibrations)
    try:
        sol = solve_qp(problem, tol=tol, max_iter=max_iter)
    except InfeasibleError as exc:
        names = [c.name or repr(c.target) for c in calibrations]
        raise InfeasibleError(
            f"calibration constraints {names} are jointly infeasible ({exc})"
        ) from None
    objective = quadratic_misfit(freq, kernel, cov, sol.x)
    return MixingEstimate(
        g=sol.x,
        grid=kernel.grid,
        objective=objective,
        kkt_residual=sol.kkt_residual,
        status=sol.status,
        calibrations=tuple(calibrations),
    )


def functional_value(estimate: MixingEstimate, functional: Functional) -> float:
    """Expectation of the functional under the estimated mixing density."""
    if functional.h.size != estimate.g.size:
        raise InvalidSpecError(
            f"functional length {functional.h.size} does not match grid size {estimate.g.size}"
        )
    return float(functional.h @ estimate.g)


def _conditional(estimate: MixingEstimate, x, values: np.ndarray) -> float:
    mask = estimate.grid.level_mask(x)
    mass = float(estimate.g[mask].sum())
    if mass <= 0.0:
        raise UndefinedConditionalError(
            f"estimated mass at covariate level {x!r} is zero; conditional undefined"
        )
    return float((values[mask] * estimate.g[mask]).sum() / mass)


def conditional_mean_p(estimate: MixingEstimate, x, response_prob=None) -> float:
    """Conditional mean response probability given the covariate level.

    ``response_prob`` optionally supplies the per-cell response probability
    (e.g. mapped from a per-attempt grid); by default the grid's latent
    values are used directly.
    """
    values = estimate.grid.theta if response_prob is None else np.asarray(response_prob, dtype=float)
    if values.shape != (estimate.grid.size,):
        raise InvalidSpecError("response_prob must align with the grid cells")
    return _conditional(estimate, x, values)


def conditional_mean_inv_p(estimate: MixingEstimate, x, response_prob=None) -> float:
    """Conditional mean of the inverse response probability given the level."""
    values = estimate.grid.theta if response_prob is None else np.asarray(response_prob, dtype=float)
    if values.shape != (estimate.grid.size,):
        raise InvalidSpecError("response_prob must align with the grid cells")
    mask = estimate.grid.level_mask(x)
    if values[mask].min(initial=np.inf) <= 0.0:
        raise InvalidSpecError("inverse-probability weights need strictly positive grid values")
    return _conditional(estimate, x, 1.0 / values)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def estimate_rows(estimate: MixingEstimate) -> list[tuple[str, str, str]]:
    """Rows (x_level, support_value, mass) with round-trippable float text."""
    rows = []
    grid = estimate.grid
    for i in range(grid.size):
        if grid.is_joint:
            x, s = grid.values[i]
            rows.append((str(x), repr(float(s)), repr(float(estimate.g[i]))))
        else:
            rows.append(("", repr(float(grid.values[i])), repr(float(estimate.g[i]))))
    return rows


def write_estimate_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_level", "support_value", "mass"])
        writer.writerows(rows)


def save_estimate_csv(estimate: MixingEstimate, path) -> None:
    write_estimate_csv(estimate_rows(estimate), path)


def read_estimate_csv(path) -> list[tuple[str, str, str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x_level", "support_value", "mass"]:
            raise InvalidSpecError(f"{path}: expected header x_level,support_value,mass")
        return [tuple(row) for row in reader]


def estimate_to_dict(estimate: MixingEstimate) -> dict:
    grid = estimate.grid
    return {
        "grid": {
            "labels": list(grid.labels),
            "values": [list(v) if isinstance(v, tuple) else v for v in grid.values],
            "x_levels": None if grid.x_levels is None else list(grid.x_levels),
        },
        "objective": estimate.objective,
        "kkt_residual": estimate.kkt_residual,
        "status": estimate.status,
        "calibrations": [
            {"name": c.name, "target": c.target, "coefficients": c.coefficients.tolist()}
            for c in estimate.calibrations
        ],
        "g": estimate.g.tolist(),
    }


def dump_json(payload: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_estimate_json(estimate: MixingEstimate, path) -> None:
    dump_json(estimate_to_dict(estimate), path)
