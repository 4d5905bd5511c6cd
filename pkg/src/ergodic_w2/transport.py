"""Wasserstein-2 distances between discrete measures and smoothing inequalities."""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatch, InvalidParameter, MassDefect, NotConverged, TooLarge
from .measures import (
    DiscreteMeasure,
    Grid,
    MollifierKernel,
    OccupationMeasure,
    convolve,
    mollified_density,
)

MAX_PAIRS = 10**6
EXACT_MAX_ATOMS = 512

__all__ = [
    "DiscreteMeasure", "W2Result", "w2", "w2_1d_quantile", "w2_1d_samples", "w2_exact_discrete", "w2_entropic",
    "w2_density_bound", "w2_smoothing_decomposition", "SmoothingDecomposition",
]


@dataclass
class W2Result:
    value: float
    method: str
    gap: float = 0.0
    # transport plan as (row index, column index, mass) arrays
    plan: Optional[tuple] = None
    converged: bool = True

    @property
    def squared(self) -> float:
        return self.value**2

    def plan_to_csv(self, path) -> None:
        if self.plan is None:
            raise ValueError("no plan attached")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "mass"])
            for i, j, m in zip(*self.plan):
                w.writerow([int(i), int(j), repr(float(m))])


def _check_dims(mu: DiscreteMeasure, nu: DiscreteMeasure):
    if mu.d != nu.d:
        raise DimensionMismatch(f"dimension {mu.d} != {nu.d}")


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    cost = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(cost, 0.0)


def _quantile_pieces(xa, wa, xb, wb):
    """Comonotone coupling of two sorted weighted samples: (index a, index b, mass)."""
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca /= ca[-1]
    cb /= cb[-1]
    levels = np.union1d(ca, cb)
    mass = np.diff(np.concatenate(([0.0], levels)))
    keep = mass > 0
    levels, mass = levels[keep], mass[keep]
    # piece k covers quantile levels (levels[k-1], levels[k]]
    mid = levels - mass / 2
    ja = np.minimum(np.searchsorted(ca, mid, side="left"), xa.size - 1)
    jb = np.minimum(np.searchsorted(cb, mid, side="left"), xb.size - 1)
    return ja, jb, mass


def w2_1d_quantile(mu: DiscreteMeasure, nu: DiscreteMeasure, with_plan: bool = False) -> W2Result:
    """Exact W2 on the line through the comonotone (quantile) coupling."""
    _check_dims(mu, nu)
    if mu.d != 1:
        raise DimensionMismatch("the quantile solver is one-dimensional")
    ia = np.argsort(mu.locations[:, 0], kind="stable")
    ib = np.argsort(nu.locations[:, 0], kind="stable")
    xa, xb = mu.locations[ia, 0], nu.locations[ib, 0]
    ja, jb, mass = _quantile_pieces(xa, mu.weights[ia], xb, nu.weights[ib])
    cost = float(np.dot(mass, (xa[ja] - xb[jb]) ** 2))
    plan = (ia[ja], ib[jb], mass) if with_plan else None
    return W2Result(value=float(np.sqrt(max(cost, 0.0))), method="quantile_1d", gap=0.0, plan=plan)


def w2_1d_samples(x, y) -> W2Result:
    """Exact W2 between the equal-weight empirical measures of two 1-D samples."""
    xa = np.sort(np.asarray(x, dtype=float).ravel())
    xb = np.sort(np.asarray(y, dtype=float).ravel())
    if xa.size == 0 or xb.size == 0:
        raise InvalidParameter("samples must be non-empty")
    ja, jb, mass = _quantile_pieces(xa, np.full(xa.size, 1.0 / xa.size), xb, np.full(xb.size, 1.0 / xb.size))
    cost = float(np.dot(mass, (xa[ja] - xb[jb]) ** 2))
    return W2Result(value=float(np.sqrt(max(cost, 0.0))), method="quantile_1d", gap=0.0)


def _pot():
    for key in ("POT_BACKEND_DISABLE_PYTORCH", "POT_BACKEND_DISABLE_JAX",
                "POT_BACKEND_DISABLE_CUPY", "POT_BACKEND_DISABLE_TENSORFLOW"):
        os.environ.setdefault(key, "1")
    import ot

    return ot


def w2_exact_discrete(mu: DiscreteMeasure, nu: DiscreteMeasure, max_pairs: int = MAX_PAIRS) -> W2Result:
    """Exact discrete OT by network simplex (POT's ``emd``)."""
    _check_dims(mu, nu)
    if mu.size * nu.size > max_pairs:
        raise TooLarge(f"{mu.size} x {nu.size} atom pairs exceed the limit {max_pairs}")
    ot = _pot()
    a = mu.weights / mu.weights.sum()
    b = nu.weights / nu.weights.sum()
    cost = _sqdist(mu.locations, nu.locations)
    plan = ot.emd(a, b, cost, numItermax=max(10**7, 50 * mu.size * nu.size))
    i, j = np.nonzero(plan)
    masses = plan[i, j]
    value_sq = float(np.dot(masses, cost[i, j]))
    return W2Result(value=float(np.sqrt(max(value_sq, 0.0))), method="exact_lp", gap=0.0, plan=(i, j, masses))


# --------------------------------------------------------------------------
# entropic solver


class NotConvergedWarning(RuntimeWarning):
    pass


def _sinkhorn(log_a, log_b, cost, reg, max_iter, tol, f=None, g=None):
    """Log-domain Sinkhorn; returns potentials, iteration count, marginal error."""
    f = np.zeros_like(log_a) if f is None else f
    g = np.zeros_like(log_b) if g is None else g
    err = np.inf
    for it in range(1, max_iter + 1):
        f = -reg * logsumexp((g[None, :] - cost) / reg + log_b[None, :], axis=1)
        g = -reg * logsumexp((f[:, None] - cost) / reg + log_a[:, None], axis=0)
        if it % 10 == 0 or it == max_iter:
            log_p = (f[:, None] + g[None, :] - cost) / reg + log_a[:, None] + log_b[None, :]
            err = float(np.abs(np.exp(logsumexp(log_p, axis=1)) - np.exp(log_a)).sum())
            if err < tol:
                break
    return f, g, it, err


def _entropic_value(a, b, cost, reg, max_iter, tol):
    """Entropic OT value (dual objective) with eps-scaling; also returns the plan."""
    log_a, log_b = np.log(a), np.log(b)
    scale = max(float(cost.max()), reg)
    f = g = None
    total_iter = 0
    r = scale
    while True:
        r = max(r / 4, reg)
        last = r == reg
        f, g, it, err = _sinkhorn(log_a, log_b, cost, r, max_iter if last else 200, tol if last else 1e-3, f, g)
        total_iter += it
        if last:
            break
    plan = np.exp((f[:, None] + g[None, :] - cost) / reg + log_a[:, None] + log_b[None, :])
    value = float(np.dot(a, f) + np.dot(b, g))
    return value, f, g, plan, err, it


def _entropic_self(a, cost, reg, max_iter, tol):
    """Symmetric entropic value ``OT_reg(a, a)`` by the averaged fixed point."""
    log_a = np.log(a)
    f = np.zeros_like(a)
    for _ in range(max_iter):
        new = 0.5 * (f - reg * logsumexp((f[None, :] - cost) / reg + log_a[None, :], axis=1))
        if np.abs(new - f).max() < tol:
            f = new
            break
        f = new
    return float(2 * np.dot(a, f))


def _round_to_feasible(plan, a, b):
    """Project an approximate plan onto exact marginals (Altschuler et al.)."""
    r = plan.sum(1)
    plan = plan * np.minimum(a / np.maximum(r, 1e-300), 1.0)[:, None]
    c = plan.sum(0)
    plan = plan * np.minimum(b / np.maximum(c, 1e-300), 1.0)[None, :]
    ea = a - plan.sum(1)
    eb = b - plan.sum(0)
    if ea.sum() > 0:
        plan = plan + np.outer(ea, eb) / ea.sum()
    return plan


def w2_entropic(mu: DiscreteMeasure, nu: DiscreteMeasure, reg: float, max_iter: int = 2000,
                tol: float = 1e-9, max_pairs: int = 25 * MAX_PAIRS, strict: bool = False) -> W2Result:
    """Debiased entropic estimate of W2 with a certified optimality bracket.

    ``value`` is the square root of the Sinkhorn divergence. ``gap`` bounds
    ``|value - W2|``: the exact squared distance lies between the dual value of
    c-transformed potentials and the cost of the rounded (feasible) plan, so
    the bracket is valid whether or not the iterations converged.

    If ``max_iter`` is reached with marginal error above 1e-6 the best iterate
    is returned with ``converged=False`` (and a warning), or
    :class:`NotConverged` is raised when ``strict``.
    """
    _check_dims(mu, nu)
    if not reg > 0:
        raise InvalidParameter("reg must be > 0")
    if mu.size * nu.size > max_pairs:
        raise TooLarge("support too large for the dense entropic solver")
    a, b = mu.weights / mu.weights.sum(), nu.weights / nu.weights.sum()
    cost = _sqdist(mu.locations, nu.locations)
    ot_ab, f, g, plan, err, _ = _entropic_value(a, b, cost, reg, max_iter, tol)
    ot_aa = _entropic_self(a, _sqdist(mu.locations, mu.locations), reg, max_iter, tol)
    ot_bb = _entropic_self(b, _sqdist(nu.locations, nu.locations), reg, max_iter, tol)
    divergence = ot_ab - 0.5 * (ot_aa + ot_bb)
    value = float(np.sqrt(max(divergence, 0.0)))

    feasible = _round_to_feasible(plan, a, b)
    upper = float((feasible * cost).sum())
    g_c = (cost - f[:, None]).min(axis=0)
    f_cc = (cost - g_c[None, :]).min(axis=1)
    lower = max(float(np.dot(a, f_cc) + np.dot(b, g_c)), 0.0)
    gap = max(np.sqrt(upper) - value, value - np.sqrt(lower), 0.0)
    i, j = np.nonzero(feasible > 0)
    result = W2Result(value=value, method="entropic", gap=float(gap),
                      plan=(i, j, feasible[i, j]), converged=err <= 1e-6)
    if not result.converged:
        message = f"Sinkhorn marginal error {err:.3g} after {max_iter} iterations"
        if strict:
            raise NotConverged(message, result)
        warnings.warn(message, NotConvergedWarning, stacklevel=2)
    return result


def w2(mu: DiscreteMeasure, nu: DiscreteMeasure, method: str = "auto", max_atoms: int = EXACT_MAX_ATOMS,
       reg: float = 1e-2, seed: int = 0) -> W2Result:
    """Dispatch: quantile on the line, exact LP on (thinned) supports, else entropic."""
    _check_dims(mu, nu)
    if method == "auto":
        method = "quantile_1d" if mu.d == 1 else "exact_lp"
    if method == "quantile_1d":
        return w2_1d_quantile(mu, nu)
    if method == "exact_lp":
        return w2_exact_discrete(mu.thin(max_atoms, seed), nu.thin(max_atoms, seed + 1))
    if method == "entropic":
        return w2_entropic(mu, nu, reg)
    raise InvalidParameter(f"unknown W2 method {method!r}")


# --------------------------------------------------------------------------
# density bounds and the smoothing decomposition


def _sq_norm(points: np.ndarray) -> np.ndarray:
    return np.einsum("nd,nd->n", points, points)


def w2_density_bound(g, g_tilde, grid: Grid, mass_tol: float = 1e-2) -> float:
    """Grid quadrature of ``3 * int |xi|^2 |g(xi) - g_tilde(xi)| dxi``.

    An upper bound for the squared W2 distance between the two densities.
    """
    pts = grid.points()
    gv, hv = np.asarray(g(pts)), np.asarray(g_tilde(pts))
    for name, vals in (("g", gv), ("g_tilde", hv)):
        mass = grid.integrate(vals)
        if abs(mass - 1.0) > mass_tol:
            raise MassDefect(f"{name} integrates to {mass:.6f} on the grid")
    return 3.0 * grid.integrate(_sq_norm(pts) * np.abs(gv - hv))


@dataclass
class SmoothingDecomposition:
    lhs: float
    rhs: float
    smoothing_term: float
    density_term: float
    # W2(nu, mu) - W2(nu*m, mu*m) >= 0: convolution by a common kernel contracts
    contraction_residual: float
    # eps*|zeta| - max(W2(nu, nu*m), W2(mu, mu*m)) >= 0
    smoothing_residual: float
    grid: Optional[Grid] = None

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lhs", "rhs", "smoothing_term", "density_term",
                                              "contraction_residual", "smoothing_residual")}


def w2_smoothing_decomposition(nu: DiscreteMeasure, mu_ref: DiscreteMeasure, kernel: MollifierKernel,
                               grid: Optional[Grid] = None, cells_per_axis: int = 16) -> SmoothingDecomposition:
    """Both sides of ``W2^2(nu, mu) <= 6 eps^2 |zeta|^2 + 9 int |xi|^2 |nu*rho_eps - mu*rho_eps|``.

    The mollifier sub-checks run on the discretised kernel from
    :meth:`MollifierKernel.discretize`; the density integral uses ``grid``
    (default: support hull padded by ``2 eps``, spacing ``eps / 8``).
    """
    _check_dims(nu, mu_ref)
    if kernel.d != nu.d:
        raise DimensionMismatch("kernel dimension differs from the measures")
    grid = grid or Grid.covering([nu, mu_ref], kernel.eps)
    lhs = w2(nu, mu_ref).squared
    smoothing = 6.0 * kernel.eps**2 * kernel.zeta_sq
    pts = grid.points()
    g_nu = mollified_density(nu, kernel)(pts)
    g_mu = mollified_density(mu_ref, kernel)(pts)
    for name, vals in (("nu", g_nu), ("mu_ref", g_mu)):
        mass = grid.integrate(vals)
        if abs(mass - 1.0) > 1e-2:
            raise MassDefect(f"mollified {name} integrates to {mass:.6f}; enlarge the grid")
    # sum_i w_i phi_eps(xi, x_i) is exactly the difference of the two densities
    density = 9.0 * grid.integrate(_sq_norm(pts) * np.abs(g_nu - g_mu))

    noise = kernel.discretize(cells_per_axis)
    nu_s, mu_s = convolve(nu, noise), convolve(mu_ref, noise)
    contraction = np.sqrt(lhs) - w2(nu_s, mu_s).value
    eps_zeta = kernel.eps * np.sqrt(kernel.zeta_sq)
    smoothing_res = eps_zeta - max(w2(nu, nu_s).value, w2(mu_ref, mu_s).value)
    return SmoothingDecomposition(lhs=lhs, rhs=smoothing + density, smoothing_term=smoothing,
                                  density_term=density, contraction_residual=float(contraction),
                                  smoothing_residual=float(smoothing_res), grid=grid)
