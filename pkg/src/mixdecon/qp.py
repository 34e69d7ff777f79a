"""Convex quadratic programming over the probability simplex.

Solves  min  0.5 x'Qx + c'x   subject to   sum(x) = 1,  extra linear
equalities,  and 0 <= x <= 1,  for positive-semidefinite Q.

The solver runs a primal-dual interior-point iteration (Mehrotra
predictor-corrector on the box-constrained KKT system) followed by an
active-set polish that solves the equality-constrained problem on the
identified face exactly.  Solutions are certified by :func:`kkt_residual`,
an independent check computable from the problem and the point alone, so
callers never have to trust solver-internal bookkeeping.  Everything is
deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve, lstsq
from scipy.optimize import linprog
from threadpoolctl import threadpool_limits

from .core import InfeasibleError, InvalidSpecError, readonly_array

_DUAL_RELEASE = 0.25   # fraction of tol below which a pinned coordinate is freed

_BLAS_GUARD = threading.local()


@contextmanager
def single_thread_blas():
    """Run dense linear algebra single-threaded within the block.

    The solver's factorizations are far too small to gain from BLAS
    threading; on oversubscribed machines the thread wake-ups dominate the
    arithmetic by an order of magnitude.  Re-entry is free, so wrapping a
    driver loop once covers all inner solves.
    """
    if getattr(_BLAS_GUARD, "active", False):
        yield
        return
    _BLAS_GUARD.active = True
    try:
        with threadpool_limits(limits=1, user_api="blas"):
            yield
    finally:
        _BLAS_GUARD.active = False


@dataclass(frozen=True)
class SimplexQP:
    """Quadratic program over the simplex with optional extra equalities.

    The simplex constraint (coefficients all one, target one) is implicit
    and must not be listed in ``equalities``.  Bounds are fixed at
    ``0 <= x <= 1`` per coordinate.
    """

    Q: np.ndarray
    c: np.ndarray
    equalities: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise InvalidSpecError("linear term must be a nonempty vector")
        if Q.shape != (c.size, c.size):
            raise InvalidSpecError(f"quadratic term shape {Q.shape} does not match dimension {c.size}")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(c))):
            raise InvalidSpecError("problem data must be finite")
        qmax = np.abs(Q).max(initial=0.0)
        if np.abs(Q - Q.T).max(initial=0.0) > 1e-10 * max(1.0, qmax):
            raise InvalidSpecError("quadratic term must be symmetric")
        eqs = []
        for coef, target in self.equalities:
            a = np.asarray(coef, dtype=float)
            if a.shape != (c.size,) or not np.all(np.isfinite(a)) or not np.isfinite(target):
                raise InvalidSpecError("equality constraints must be finite vectors of problem dimension")
            eqs.append((readonly_array(a), float(target)))
        object.__setattr__(self, "Q", readonly_array(0.5 * (Q + Q.T)))
        object.__setattr__(self, "c", readonly_array(c))
        object.__setattr__(self, "equalities", tuple(eqs))

    @property
    def dim(self) -> int:
        return self.c.size


@dataclass(frozen=True)
class QPSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    status: str  # "converged" | "max-iterations"

    def __post_init__(self):
        object.__setattr__(self, "x", readonly_array(self.x))


def _equality_system(problem: SimplexQP) -> tuple[np.ndarray, np.ndarray]:
    m = problem.dim
    rows = [np.ones(m)] + [a for a, _ in problem.equalities]
    rhs = [1.0] + [t for _, t in problem.equalities]
    return np.vstack(rows), np.asarray(rhs, dtype=float)


def _require_psd(Q: np.ndarray) -> None:
    ridge = 1e-8 * max(1.0, np.abs(Q).max(initial=0.0))
    try:
        np.linalg.cholesky(Q + ridge * np.eye(Q.shape[0]))
    except np.linalg.LinAlgError:
        raise InvalidSpecError("quadratic term is not positive semidefinite") from None


def _check_vertex_ranges(problem: SimplexQP) -> None:
    # over the simplex, a'x spans exactly [min a, max a]
    for idx, (a, target) in enumerate(problem.equalities):
        lo, hi = a.min(), a.max()
        span = max(1.0, abs(lo), abs(hi))
        if target < lo - 1e-9 * span or target > hi + 1e-9 * span:
            raise InfeasibleError(
                f"equality {idx} target {target!r} outside the achievable range [{lo!r}, {hi!r}]"
            )


def objective_value(problem: SimplexQP, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(0.5 * x @ problem.Q @ x + problem.c @ x)


def _complementarity(x, grad, E, lam) -> float:
    r = grad - E.T @ lam
    xc = np.clip(x, 0.0, 1.0)
    comp = xc * np.maximum(r, 0.0) + (1.0 - xc) * np.maximum(-r, 0.0)
    return float(comp.max(initial=0.0))


def _wls_multipliers(E, grad, weights) -> np.ndarray:
    sw = np.sqrt(np.clip(weights, 0.0, None))
    lam, *_ = np.linalg.lstsq(E.T * sw[:, None], grad * sw, rcond=None)
    return lam


def _lp_multipliers(x, grad, E) -> np.ndarray | None:
    # minimize the max compensated-complementarity term over multipliers
    m = x.size
    p = E.shape[0]
    xc = np.clip(x, 0.0, 1.0)
    rows = np.empty((2 * m, p + 1))
    rhs = np.empty(2 * m)
    rows[:m, :p] = -xc[:, None] * E.T
    rows[:m, p] = -1.0
    rhs[:m] = -xc * grad
    rows[m:, :p] = (1.0 - xc)[:, None] * E.T
    rows[m:, p] = -1.0
    rhs[m:] = (1.0 - xc) * grad
    objective = np.append(np.zeros(p), 1.0)
    res = linprog(
        objective, A_ub=rows, b_ub=rhs,
        bounds=[(None, None)] * p + [(0.0, None)], method="highs",
    )
    if not res.success:
        return None
    return res.x[:p]


def kkt_residual(problem: SimplexQP, x) -> float:
    """Independent first-order optimality residual at ``x``.

    Combines primal feasibility (equalities and box bounds) with a
    compensated complementarity measure
    ``max_i [ x_i max(r_i, 0) + (1 - x_i) max(-r_i, 0) ]`` where
    ``r = grad - E'lam`` is the reduced gradient under estimated equality
    multipliers.  Multipliers come from support-weighted least squares; if
    that estimate looks loose, a small linear program searches for better
    ones so degenerate vertex solutions are not penalised spuriously.
    """
    x = np.asarray(x, dtype=float)
    E, b = _equality_system(problem)
    feas = max(
        float(np.abs(E @ x - b).max(initial=0.0)),
        float(np.maximum(-x, 0.0).max(initial=0.0)),
        float(np.maximum(x - 1.0, 0.0).max(initial=0.0)),
    )
    grad = problem.Q @ x + problem.c
    lam = _wls_multipliers(E, grad, np.clip(x, 0.0, None))
    comp = _complementarity(x, grad, E, lam)
    if comp > 5e-9:
        lam_lp = _lp_multipliers(x, grad, E)
        if lam_lp is not None:
            comp = min(comp, _complementarity(x, grad, E, lam_lp))
    return max(feas, comp)


def _ratio_step(v, dv) -> float:
    mask = dv < 0
    if not mask.any():
        return np.inf
    return float((v[mask] / -dv[mask]).min())


def _ipm(Q, c, E, b, max_iter):
    """Infeasible-start Mehrotra predictor-corrector on the box QP."""
    m = c.size
    p = b.size
    scale = 1.0 + np.abs(Q).max(initial=0.0) + np.abs(c).max(initial=0.0)
    b_scale = 1.0 + np.abs(b).max(initial=0.0)
    x = np.full(m, 1.0 / m)
    lam = np.zeros(p)
    z = np.ones(m)
    w = np.ones(m)
    best_x, best_lam, best_merit = x.copy(), lam.copy(), np.inf
    delta0 = 1e-12 * max(1.0, np.abs(E).max(initial=0.0))
    iters = 0
    for _ in range(max_iter):
        iters += 1
        s = 1.0 - x
        grad = Q @ x + c
        rd = grad - E.T @ lam - z + w
        rp = E @ x - b
        mu = (x @ z + s @ w) / (2 * m)
        rp_inf = float(np.abs(rp).max(initial=0.0))
        rd_inf = float(np.abs(rd).max(initial=0.0))
        merit = max(mu / scale, rp_inf / b_scale, rd_inf / scale)
        if merit < best_merit:
            best_x, best_lam, best_merit = x.copy(), lam.copy(), merit
        if mu <= 1e-12 * scale and rp_inf <= 1e-10 * b_scale and rd_inf <= 1e-9 * scale:
            break
        d = np.clip(z / x + w / s, 1e-14, 1e16)
        kkt = np.zeros((m + p, m + p))
        kkt[:m, :m] = Q
        kkt[np.arange(m), np.arange(m)] += d
        kkt[:m, m:] = E.T
        kkt[m:, :m] = E
        lu = None
        delta = delta0
        for _attempt in range(5):
            kkt[m + np.arange(p), m + np.arange(p)] = -delta
            try:
                lu = lu_factor(kkt)
                break
            except (np.linalg.LinAlgError, ValueError):
                delta = max(delta * 1e3, 1e-10)
        if lu is None:
            break
        # predictor
        rhs = np.concatenate([-rd - z + w, -rp])
        sol = lu_solve(lu, rhs)
        dxa = sol[:m]
        dza = -z - (z / x) * dxa
        dwa = -w + (w / s) * dxa
        ap = min(1.0, _ratio_step(x, dxa), _ratio_step(s, -dxa))
        ad = min(1.0, _ratio_step(z, dza), _ratio_step(w, dwa))
        mu_aff = ((x + ap * dxa) @ (z + ad * dza) + (s - ap * dxa) @ (w + ad * dwa)) / (2 * m)
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 1e-8, 0.9999))
        # corrector
        rcx = x * z + dxa * dza - sigma * mu
        rcs = s * w - dxa * dwa - sigma * mu
        rhs = np.concatenate([-rd - rcx / x + rcs / s, -rp])
        sol = lu_solve(lu, rhs)
        dx = sol[:m]
        dnu = sol[m:]
        dz = (-rcx - z * dx) / x
        dw = (-rcs + w * dx) / s
        tau = 0.995 if mu > 1e-6 * scale else 0.99995
        ap = min(1.0, tau * _ratio_step(x, dx), tau * _ratio_step(s, -dx))
        ad = min(1.0, tau * _ratio_step(z, dz), tau * _ratio_step(w, dw))
        if ap < 1e-11 and ad < 1e-11:
            break
        x = np.clip(x + ap * dx, 1e-250, 1.0 - 1e-16)
        lam = lam - ad * dnu
        z = np.maximum(z + ad * dz, 1e-250)
        w = np.maximum(w + ad * dw, 1e-250)
    s = 1.0 - x
    grad = Q @ x + c
    final_merit = max(
        (x @ z + s @ w) / (2 * m) / scale,
        float(np.abs(E @ x - b).max(initial=0.0)) / b_scale,
        float(np.abs(grad - E.T @ lam - z + w).max(initial=0.0)) / scale,
    )
    if final_merit <= best_merit:
        best_x, best_lam = x, lam
    rp_best = float(np.abs(E @ best_x - b).max(initial=0.0))
    return best_x, best_lam, iters, rp_best


def _solve_eqp(Qff, Ef, rhs1, rhs2, scale):
    """Solve the face-restricted KKT system; returns (xf, nu) or None."""
    nf = rhs1.size
    p = rhs2.size
    kkt = np.zeros((nf + p, nf + p))
    kkt[:nf, :nf] = Qff
    kkt[:nf, nf:] = Ef.T
    kkt[nf:, :nf] = Ef
    rhs = np.concatenate([rhs1, rhs2])
    sol = None
    try:
        cand = np.linalg.solve(kkt, rhs)
        if np.all(np.isfinite(cand)):
            sol = cand
    except np.linalg.LinAlgError:
        sol = None
    if sol is None or np.abs(kkt @ sol - rhs).max(initial=0.0) > 1e-9 * scale * (1 + np.abs(sol).max(initial=0.0)):
        cand, *_ = lstsq(kkt, rhs, lapack_driver="gelsy")
        if not np.all(np.isfinite(cand)):
            return None
        if np.abs(kkt @ cand - rhs).max(initial=0.0) > 1e-7 * scale * (1 + np.abs(cand).max(initial=0.0)):
            return None  # inconsistent face (unbounded restricted problem)
        sol = cand
    return sol[:nf], sol[nf:]


def _refine(Q, c, E, b, x0, tol, max_rounds=60):
    """Active-set polish: pin near-bound coordinates, solve the face exactly,
    then exchange pins until primal and dual feasibility hold."""
    m = x0.size
    p = b.size
    scale = 1.0 + np.abs(Q).max(initial=0.0) + np.abs(c).max(initial=0.0)
    dual_tol = max(_DUAL_RELEASE * tol, 4e-13 * scale)
    act0 = x0 <= 1e-7
    act1 = (x0 >= 1.0 - 1e-7) & ~act0
    seen = set()
    rounds = 0
    while rounds < max_rounds:
        rounds += 1
        key = (act0.tobytes(), act1.tobytes())
        if key in seen:
            return None, rounds
        seen.add(key)
        free = ~act0 & ~act1
        x = np.zeros(m)
        x[act1] = 1.0
        if free.any():
            rhs1 = -(c[free] + Q[np.ix_(free, act1)].sum(axis=1))
            rhs2 = b - E[:, act1].sum(axis=1)
            eqp = _solve_eqp(Q[np.ix_(free, free)], E[:, free], rhs1, rhs2, scale)
            if eqp is None:
                return None, rounds
            xf, nu = eqp
            x[free] = xf
            lam = -nu
        else:
            lam = _wls_multipliers(E, Q @ x + c, np.clip(x, 0.0, None))
        low = free & (x < -1e-10)
        high = free & (x > 1.0 + 1e-10)
        if low.any() or high.any():
            low_mag = -x[low].min() if low.any() else 0.0
            high_mag = (x[high] - 1.0).max() if high.any() else 0.0
            if low_mag >= high_mag:
                act0[np.flatnonzero(low)[np.argmin(x[low])]] = True
            else:
                act1[np.flatnonzero(high)[np.argmax(x[high])]] = True
            continue
        r = Q @ x + c - E.T @ lam
        rel0 = act0 & (r < -dual_tol)
        rel1 = act1 & (r > dual_tol)
        if rel0.any() or rel1.any():
            mag0 = -r[rel0].min() if rel0.any() else 0.0
            mag1 = r[rel1].max() if rel1.any() else 0.0
            if mag0 >= mag1:
                act0[np.flatnonzero(rel0)[np.argmin(r[rel0])]] = False
            else:
                act1[np.flatnonzero(rel1)[np.argmax(r[rel1])]] = False
            continue
        return np.clip(x, 0.0, 1.0), rounds
    return None, rounds


def solve_qp(problem: SimplexQP, tol: float = 1e-8, max_iter: int = 200) -> QPSolution:
    """Minimise the quadratic over the constrained simplex.

    Returns the best point found together with its independently computed
    KKT residual; ``status`` is ``converged`` only when that residual is at
    most ``tol``.  Inconsistent equality constraints raise
    :class:`InfeasibleError`.
    """
    with single_thread_blas():
        _require_psd(problem.Q)
        _check_vertex_ranges(problem)
        E, b = _equality_system(problem)
        m = problem.dim
        if m == 1:
            x = np.ones(1)
            if np.abs(E @ x - b).max(initial=0.0) > 1e-9 * (1.0 + np.abs(b).max(initial=0.0)):
                raise InfeasibleError("equality constraints exclude the single grid point")
            res = kkt_residual(problem, x)
            return QPSolution(x=x, objective=objective_value(problem, x), kkt_residual=res,
                              iterations=0, status="converged" if res <= tol else "max-iterations")
        x_ipm, _lam, iters, rp = _ipm(problem.Q, problem.c, E, b, max_iter)
        if rp > 1e-7 * (1.0 + np.abs(b).max(initial=0.0)):
            raise InfeasibleError(
                f"equality constraints appear jointly infeasible (primal residual {rp:.2e})"
            )
        refined, rounds = _refine(problem.Q, problem.c, E, b, x_ipm, tol)
        candidates = [x_ipm] if refined is None else [refined, x_ipm]
        best = None
        for xc in candidates:
            res = kkt_residual(problem, xc)
            obj = objective_value(problem, xc)
            entry = (res > tol, obj if res <= tol else res, res, obj, xc)
            if best is None or entry[:3] < best[:3]:
                best = entry
        res, obj, x = best[2], best[3], best[4]
        return QPSolution(
            x=x, objective=obj, kkt_residual=res, iterations=iters + rounds,
            status="converged" if res <= tol else "max-iterations",
        )


def _extreme_face_solution(problem, h, level, mask, tol, max_iter):
    """Restrict to the coordinates attaining an extreme functional value."""
    idx = np.flatnonzero(mask)
    aug = replace(problem, equalities=problem.equalities + ((h, float(level)),))
    if idx.size == 1:
        x = np.zeros(problem.dim)
        x[idx[0]] = 1.0
        E, b = _equality_system(aug)
        if np.abs(E @ x - b).max(initial=0.0) > 1e-8 * (1.0 + np.abs(b).max(initial=0.0)):
            raise InfeasibleError("level constraint pins an infeasible vertex")
        res = kkt_residual(aug, x)
        return QPSolution(x=x, objective=objective_value(problem, x), kkt_residual=res,
                          iterations=0, status="converged" if res <= tol else "max-iterations")
    sub_eqs = tuple((a[idx], t) for a, t in problem.equalities)
    sub = SimplexQP(Q=problem.Q[np.ix_(idx, idx)], c=problem.c[idx], equalities=sub_eqs)
    inner = solve_qp(sub, tol=tol, max_iter=max_iter)
    x = np.zeros(problem.dim)
    x[idx] = inner.x
    res = kkt_residual(aug, x)
    return QPSolution(x=x, objective=objective_value(problem, x), kkt_residual=res,
                      iterations=inner.iterations,
                      status="converged" if res <= tol else "max-iterations")


def min_quadratic_given_level(problem: SimplexQP, h, level: float,
                              tol: float = 1e-8, max_iter: int = 200) -> QPSolution:
    """Solve the same program with the extra equality ``h'x = level``.

    Levels outside the achievable range ``[min h, max h]`` raise
    :class:`InfeasibleError`.  Levels exactly at an extreme are solved on
    the face of coordinates attaining it, which keeps the interior-point
    iteration away from empty-interior degeneracies.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (problem.dim,) or not np.all(np.isfinite(h)):
        raise InvalidSpecError("level functional must be a finite vector of problem dimension")
    lo, hi = float(h.min()), float(h.max())
    span = max(1.0, abs(lo), abs(hi))
    if level < lo - 1e-9 * span or level > hi + 1e-9 * span:
        raise InfeasibleError(
            f"level {level!r} outside the achievable range [{lo!r}, {hi!r}]"
        )
    if hi - lo <= 1e-12 * span:
        return solve_qp(problem, tol=tol, max_iter=max_iter)
    if abs(level - lo) <= 1e-12 * span:
        return _extreme_face_solution(problem, h, level, h <= lo + 1e-12 * span, tol, max_iter)
    if abs(level - hi) <= 1e-12 * span:
        return _extreme_face_solution(problem, h, level, h >= hi - 1e-12 * span, tol, max_iter)
    aug = replace(problem, equalities=problem.equalities + ((h, float(level)),))
    return solve_qp(aug, tol=tol, max_iter=max_iter)
