"""Continuous design weights over experimental units.

Two solvers are provided. :func:`mixed_model_weights` is a fixed-point
iteration on the generalised-least-squares estimation weights: the
current weights define the observation covariance, the covariance defines
the estimation weights of the best linear unbiased estimator, and the
Cauchy-Schwarz inequality turns those back into design weights. At
cluster-period (or observation) granularity only the residual part of the
covariance is weight-dependent and the update is ``phi = |a| / sum|a|``;
at sequence granularity whole independent unit blocks scale with their
weight and the update becomes ``phi ∝ phi * sqrt(y' A_k y)``.

:func:`simplex_weight_descent` minimises the same criterion for mutually
uncorrelated units by projected gradient descent over the probability
simplex, serving as a generic cross-check on the fixed point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .covariance import CovarianceSpec, ModelSpec
from .designspace import DesignSpace
from .errors import ConvergenceError, InfeasibleError, ValidationError
from .glscore import (_cell_weights, _entry_matrix, treatment_contrast,
                      unit_information_blocks)

# Cells whose weight falls below this bound are dropped for good.
WEIGHT_FLOOR = 1e-7
# A full update may not increase the criterion by more than this
# (relative); larger increases indicate a broken fixed point.
MONOTONE_SLACK = 1e-9


@dataclass(frozen=True)
class WeightedDesign:
    """A probability measure over the units of a design space."""

    weights: np.ndarray
    value: float
    iterations: int
    total_budget: float | None = None

    def __post_init__(self):
        s = float(np.sum(self.weights))
        if abs(s - 1.0) > 1e-10 or np.any(np.asarray(self.weights) < 0):
            raise ValidationError("weights must form a probability vector")


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    holds = u + (1.0 - css) / idx > 0
    rho = idx[holds][-1]
    lam = (1.0 - css[rho - 1]) / rho
    return np.maximum(v + lam, 0.0)


def _rank_solve(m: np.ndarray, c: np.ndarray) -> np.ndarray | None:
    """Solve ``M y = c`` through the eigendecomposition used by the
    criterion; ``None`` when the contrast is not identified."""
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    wmax = w[-1] if w.size else 0.0
    if wmax <= 0:
        return None
    keep = w > 1e-10 * wmax
    coef = v[:, keep].T @ c
    if np.linalg.norm(c - v[:, keep] @ coef) > 1e-8 * np.linalg.norm(c):
        return None
    return v[:, keep] @ (coef / w[keep])


def mixed_model_weights(space: DesignSpace, cov: CovarianceSpec,
                        model: ModelSpec | None = None,
                        contrast: np.ndarray | None = None,
                        total_obs: float | None = None,
                        tolerance: float = 1e-6,
                        max_iter: int = 10000) -> WeightedDesign:
    """Optimal design weights by fixed-point iteration.

    At cluster-period or observation granularity ``total_obs`` sets the
    target number of observations ``N`` and the covariance of a cell mean
    is its random-effect part plus ``1 / (N w phi)``; two safeguards keep
    the iteration stable: cells dropping below ``1e-7`` weight are removed
    permanently, and period columns whose total weight reaches zero leave
    the linear predictor. At sequence granularity the weights are cluster
    proportions and ``total_obs`` only annotates the result.

    Raises :class:`ConvergenceError` past ``max_iter`` iterations (the
    error carries the last iterate) or if an update increases the
    criterion beyond tolerance, and :class:`InfeasibleError` when the
    contrast is not identified by the full space.
    """
    model = model or ModelSpec()
    if tolerance <= 0:
        raise ValidationError("tolerance must be positive")
    p = space.n_periods + 1
    c = (np.asarray(contrast, dtype=float) if contrast is not None
         else treatment_contrast(p))
    if c.shape != (p,):
        raise ValidationError(f"contrast must have length {p}")
    if space.granularity == "sequence":
        return _block_fixed_point(space, cov, model, c, total_obs,
                                  tolerance, max_iter)
    if total_obs is None or total_obs <= 0:
        raise ValidationError("cluster-period weights need a positive total_obs")
    return _cell_fixed_point(space, cov, model, c, float(total_obs),
                             tolerance, max_iter)


def _block_fixed_point(space, cov, model, c, total_obs, tolerance, max_iter):
    blocks = unit_information_blocks(space, cov, model)
    j = space.n_units
    phi = np.full(j, 1.0 / j)
    active = np.ones(j, dtype=bool)
    f_prev = math.inf
    converged = False
    for it in range(1, max_iter + 2):
        m = np.tensordot(phi, blocks, axes=1)
        y = _rank_solve(m, c)
        if y is None:
            raise InfeasibleError("contrast is not identified by the design space")
        f = float(c @ y)
        if converged:
            # one extra pass so the reported value belongs to the final weights
            return WeightedDesign(phi, f, it - 1, total_budget=total_obs)
        if it > max_iter:
            break
        if f > f_prev * (1.0 + MONOTONE_SLACK):
            raise ConvergenceError(
                f"criterion increased at iteration {it}: {f_prev} -> {f}",
                weights=phi.copy(), iterations=it)
        f_prev = f
        gain = np.einsum("i,kij,j->k", y, blocks, y)
        gain[~active] = 0.0
        q = phi * np.sqrt(np.maximum(gain, 0.0))
        total = q.sum()
        if total <= 0:
            raise InfeasibleError("all units carry zero estimation weight")
        phi_new = q / total
        delta = np.abs(phi - phi_new).max()
        phi = phi_new
        dropped = active & (phi < WEIGHT_FLOOR)
        if dropped.any():
            active &= ~dropped
            phi[dropped] = 0.0
            phi /= phi.sum()
            f_prev = math.inf  # dropping re-baselines the monitor
        elif delta <= tolerance:
            converged = True
    raise ConvergenceError(f"no convergence in {max_iter} iterations",
                           weights=phi, iterations=max_iter)


def _cell_fixed_point(space, cov, model, c, total_obs, tolerance, max_iter):
    for unit in space.units:
        if len(unit.cells) != 1:
            raise ValidationError(
                "cluster-period weights need single-cell experimental units")
    j = space.n_units
    periods = np.array([u.cells[0].period for u in space.units])
    treated = np.array([u.cells[0].treated for u in space.units])
    clusters = np.array([u.cluster_id for u in space.units])
    w = _cell_weights(model, cov, periods, treated, space.n_periods)

    x = np.zeros((j, space.n_periods + 1))
    x[np.arange(j), periods - 1] = 1.0
    x[:, space.n_periods] = treated

    cluster_ids = sorted(set(clusters.tolist()))
    members = [np.flatnonzero(clusters == cid) for cid in cluster_ids]
    bases = []
    for idx in members:
        lags = np.abs(periods[idx][:, None] - periods[idx][None, :])
        bases.append(_entry_matrix(cov, lags))

    phi = np.full(j, 1.0 / j)
    active = np.ones(j, dtype=bool)
    col_active = np.ones(space.n_periods + 1, dtype=bool)
    f_prev = math.inf
    converged = False

    for it in range(1, max_iter + 2):
        cols = np.flatnonzero(col_active)
        p_act = cols.size
        m = np.zeros((p_act, p_act))
        solves = []
        for idx, base in zip(members, bases):
            sel = active[idx]
            if not sel.any():
                solves.append(None)
                continue
            rows = idx[sel]
            block = base[np.ix_(sel, sel)] + np.diag(
                1.0 / (total_obs * w[rows] * phi[rows]))
            xa = x[np.ix_(rows, cols)]
            solved = np.linalg.solve(block, xa)
            solves.append((rows, solved))
            m += xa.T @ solved
        y = _rank_solve(m, c[cols])
        if y is None:
            raise InfeasibleError("contrast is not identified by the design space")
        f = float(c[cols] @ y)
        if converged:
            # one extra pass so the reported value belongs to the final weights
            return WeightedDesign(phi, f, it - 1, total_budget=total_obs)
        if it > max_iter:
            break
        if f > f_prev * (1.0 + MONOTONE_SLACK):
            raise ConvergenceError(
                f"criterion increased at iteration {it}: {f_prev} -> {f}",
                weights=phi.copy(), iterations=it)
        f_prev = f

        a = np.zeros(j)
        for entry in solves:
            if entry is None:
                continue
            rows, solved = entry
            a[rows] = solved @ y
        abs_a = np.abs(a[active])
        total = abs_a.sum()
        if total <= 0:
            raise InfeasibleError("all cells carry zero estimation weight")
        phi_new = np.zeros(j)
        phi_new[active] = abs_a / total
        delta = np.abs(phi - phi_new).max()
        phi = phi_new

        dropped = active & (phi < WEIGHT_FLOOR)
        rebased = False
        if dropped.any():
            active &= ~dropped
            if not active.any():
                raise InfeasibleError("all cells were dropped")
            phi[dropped] = 0.0
            phi /= phi.sum()
            rebased = True
        # retire period columns whose cells carry no weight
        for t in range(space.n_periods):
            if col_active[t] and phi[active & (periods == t + 1)].sum() == 0.0:
                col_active[t] = False
                rebased = True
        if rebased:
            f_prev = math.inf
        elif delta <= tolerance:
            converged = True
    raise ConvergenceError(f"no convergence in {max_iter} iterations",
                           weights=phi, iterations=max_iter)


def simplex_weight_descent(space: DesignSpace, cov: CovarianceSpec,
                           model: ModelSpec | None = None,
                           contrast: np.ndarray | None = None,
                           tolerance: float = 1e-8,
                           max_iter: int = 100000) -> WeightedDesign:
    """Minimise the weighted-design criterion by projected gradient descent.

    Requires mutually uncorrelated units (sequence granularity), for which
    the information matrix is the weight-combination of per-unit blocks.
    Backtracking with step doubling keeps every accepted move a descent
    step; convergence is declared when the unit-step projected-gradient
    residual falls below ``tolerance``.
    """
    model = model or ModelSpec()
    if space.granularity != "sequence":
        raise ValidationError(
            "simplex descent requires mutually uncorrelated (sequence) units")
    p = space.n_periods + 1
    c = (np.asarray(contrast, dtype=float) if contrast is not None
         else treatment_contrast(p))
    if c.shape != (p,):
        raise ValidationError(f"contrast must have length {p}")
    blocks = unit_information_blocks(space, cov, model)
    j = space.n_units
    phi = np.full(j, 1.0 / j)

    def f_grad(pvec):
        m = np.tensordot(pvec, blocks, axes=1)
        y = _rank_solve(m, c)
        if y is None:
            return math.inf, None
        return float(c @ y), -np.einsum("i,kij,j->k", y, blocks, y)

    fval, grad = f_grad(phi)
    if not math.isfinite(fval):
        raise InfeasibleError(
            "criterion is infinite for every weighting of this space")
    step = 1.0
    prev_phi = prev_grad = None
    for it in range(1, max_iter + 1):
        residual = np.abs(phi - project_to_simplex(phi - grad)).max()
        if residual <= tolerance:
            return WeightedDesign(phi, fval, it)
        if prev_phi is not None:
            # Barzilai-Borwein step, safeguarded by the backtracking below
            dphi = phi - prev_phi
            dgrad = grad - prev_grad
            denom = float(dphi @ dgrad)
            if denom > 0:
                step = min(max(float(dphi @ dphi) / denom, 1e-12), 1e12)
        cand = project_to_simplex(phi - step * grad)
        fc, gc = f_grad(cand)
        while (not math.isfinite(fc)
               or fc > fval - 1e-4 * float(grad @ (phi - cand))) and step > 1e-16:
            step *= 0.5
            cand = project_to_simplex(phi - step * grad)
            fc, gc = f_grad(cand)
        if np.abs(cand - phi).max() == 0.0:
            # descent has hit numerical precision; the iterate is stationary
            # to the accuracy the arithmetic supports
            return WeightedDesign(phi, fval, it)
        prev_phi, prev_grad = phi, grad
        phi, fval, grad = cand, fc, gc
    raise ConvergenceError(
        f"no convergence in {max_iter} iterations", weights=phi,
        iterations=max_iter)
