"""Monte Carlo solutions of the Poisson equation ``L w = mu(f) - f``.

The coboundary ``w_f(x) = int_0^inf (P_t f(x) - mu(f)) dt`` is estimated from
synchronously coupled differences ``f(X^x_t) - f(Y_t)``, where ``Y`` starts at
stationarity and shares the Brownian path of every ``X^x``. The variance of the
integrand then decays with the coupling, and the partner's noise cancels
exactly in differences across ``x`` (so finite differences of the estimate are
far less noisy than the estimate itself).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RBFInterpolator

from . import rng
from .errors import (
    InvalidParameter,
    MissingIncrements,
    NoiseDominates,
    TailToleranceUnreachable,
)
from .fitting import RateFitResult, fit_rate
from .models import SDEModel, model_alpha, reference_invariant
from .simulate import IntegratorConfig, Trajectory, _n_steps, check_stability, em_steps, regularized_model, warm_start


# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class LipschitzFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    lip: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.fn(x.reshape(-1, x.shape[-1]) if x.ndim > 1 else x.reshape(-1, 1))

    def scaled(self, c: float) -> "LipschitzFunction":
        base = self.fn
        return LipschitzFunction(f"{c:g}*{self.name}", lambda x: c * base(x), abs(c) * self.lip)


def test_function(name: str, index: int = 0, value: float = 1.0) -> LipschitzFunction:
    """Named Lipschitz test functions on ``(n, d)`` state arrays."""
    if name in ("id", "coordinate"):
        return LipschitzFunction(name if name == "id" else f"coordinate({index})", lambda x: x[:, index], 1.0)
    if name == "tanh":
        return LipschitzFunction(name, lambda x: np.tanh(x[:, index]), 1.0)
    if name == "abs_smooth":
        return LipschitzFunction(name, lambda x: np.sqrt(1.0 + x[:, index] ** 2) - 1.0, 1.0)
    if name == "constant":
        return LipschitzFunction(f"constant({value:g})", lambda x: np.full(x.shape[0], float(value)), 0.0)
    if name == "square":
        # not globally Lipschitz; used with analytic coboundaries only
        return LipschitzFunction(name, lambda x: (x * x).sum(axis=1), math.inf)
    raise InvalidParameter(f"unknown test function {name!r}")


test_function.__test__ = False


def invariant_expectation(model: SDEModel, f, n_ref: int = 10_000, seed: int = 0, order: int = 60) -> float:
    """``mu(f)``: Gauss-Hermite quadrature when the invariant law is Gaussian, else a reference sample mean."""
    if model.analytic_invariant_known and model.d <= 3:
        nodes, weights = np.polynomial.hermite_e.hermegauss(order)
        weights = weights / weights.sum()
        grids = np.meshgrid(*([nodes] * model.d), indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        w = np.prod(np.stack(np.meshgrid(*([weights] * model.d), indexing="ij")), axis=0).ravel()
        chol = np.linalg.cholesky(model.invariant_cov)
        pts = model.invariant_mean + z @ chol.T
        return float(np.dot(w, f(pts)))
    ref = reference_invariant(model, n_ref, seed=seed)
    return float(np.dot(ref.weights, f(ref.locations)))


# --------------------------------------------------------------------------
# estimation


def step_grid(n_final: int, growth: float = 0.02) -> np.ndarray:
    """Geometric grid of step indices ``0, 1, ..., n_final`` (every step early on)."""
    steps = [0]
    while steps[-1] < n_final:
        last = steps[-1]
        steps.append(min(n_final, max(last + 1, math.ceil(last * (1 + growth)))))
    return np.asarray(steps)


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    h = np.diff(times)
    w = np.zeros_like(times)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass
class CoboundaryEstimate:
    f: LipschitzFunction
    horizon: float
    reps: int
    x_points: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    mu_f_hat: float
    # model actually simulated (regularised when the input was not elliptic)
    model: SDEModel
    config: IntegratorConfig
    alpha: float
    tail_tol: float
    regularization_eps: Optional[float]
    partner_start: np.ndarray = field(repr=False)
    # per-replication integrals at x_points, shape (reps, n_points)
    samples: np.ndarray = field(repr=False, default=None)
    _interp: object = field(init=False, repr=False, default=None)

    def __post_init__(self):
        d = self.x_points.shape[1]
        if self.x_points.shape[0] == 1:
            v = float(self.values[0])
            self._interp = lambda pts: np.full(pts.shape[0], v)
        elif d == 1:
            order = np.argsort(self.x_points[:, 0])
            xs, ys = self.x_points[order, 0], self.values[order]
            spline = CubicSpline(xs, ys, bc_type="natural")
            lo, hi = xs[0], xs[-1]
            slo, shi = float(spline(lo, 1)), float(spline(hi, 1))

            def interp(pts):
                x = pts[:, 0]
                out = spline(np.clip(x, lo, hi))
                return np.where(x < lo, ys[0] + slo * (x - lo), np.where(x > hi, ys[-1] + shi * (x - hi), out))

            self._interp = interp
        else:
            self._interp = RBFInterpolator(self.x_points, self.values, kernel="thin_plate_spline", degree=1)

    @property
    def d(self) -> int:
        return self.x_points.shape[1]

    def __call__(self, x) -> np.ndarray:
        """Smooth interpolant of the fitted values (linear beyond the fitted range in 1-D)."""
        pts = np.asarray(x, dtype=float).reshape(-1, self.d)
        return np.asarray(self._interp(pts))

    def evaluate_direct(self, x):
        """Re-run the coupled estimator at new points on the same noise.

        Returns ``(mean, stderr, samples)`` with per-replication samples of
        shape ``(reps, n)``; differences across points share all randomness.
        """
        pts = np.asarray(x, dtype=float).reshape(-1, self.d)
        samples = _coupled_integrals(self.model, self.f, pts, self.partner_start, self.horizon, self.config)
        return samples.mean(0), samples.std(0, ddof=1) / np.sqrt(self.reps), samples

    def to_dict(self) -> dict:
        return {
            "f": self.f.name, "lip_f": self.f.lip, "horizon": self.horizon, "reps": self.reps,
            "x_points": self.x_points.tolist(), "values": self.values.tolist(), "stderr": self.stderr.tolist(),
            "mu_f_hat": self.mu_f_hat, "alpha": self.alpha, "tail_tol": self.tail_tol,
            "regularization_eps": self.regularization_eps, "dt": self.config.dt, "seed": self.config.seed,
        }


class AnalyticCoboundary:
    """Closed-form coboundary with the same call interface as an estimate."""

    def __init__(self, model: SDEModel, f: LipschitzFunction, omega: Callable, mu_f_hat: float):
        self.model = model
        self.f = f
        self.omega = omega
        self.mu_f_hat = float(mu_f_hat)
        self.reps = 1
        self.tail_tol = 0.0
        self.config = None

    @property
    def d(self) -> int:
        return self.model.d

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.omega(np.asarray(x, dtype=float).reshape(-1, self.d)), dtype=float)

    def evaluate_direct(self, x):
        v = self(x)
        return v, np.zeros_like(v), v[None]


def _coupled_integrals(model, f, points, partner_start, horizon, config) -> np.ndarray:
    """Per-replication trapezoid integrals of ``f(X^x_t) - f(Y_t)``, shape ``(R, n_points)``."""
    R = partner_start.shape[0]
    n_pts, d = points.shape
    n_steps = _n_steps(horizon, config.dt) if horizon > 0 else 0
    if n_steps == 0:
        return np.zeros((R, n_pts))
    steps = step_grid(n_steps)
    weights = dict(zip(steps.tolist(), (_trapezoid_weights(steps * config.dt)).tolist()))
    noise_keys = [rng.path_key(config.seed, r, rng.PARTNER) for r in range(R)]
    # row layout: point-major blocks of R replications, then the R partners
    x0 = np.concatenate([np.repeat(points, R, axis=0), partner_start])
    keys = noise_keys * n_pts + noise_keys
    acc = np.zeros((n_pts, R))
    for step, x, _ in em_steps(model, x0, n_steps, config.dt, keys):
        w = weights.get(step)
        if w is None:
            continue
        fx = f(x)
        acc += w * (fx[:-R].reshape(n_pts, R) - fx[-R:][None, :])
    return acc.T


def estimate_coboundary(model: SDEModel, f: LipschitzFunction, x_points, tail_tol: float = 1e-3, reps: int = 200,
                        config: Optional[IntegratorConfig] = None, burn_in: Optional[float] = None,
                        horizon_cap: float = 1e3, regularization_eps: float = 0.1, n_ref: int = 10_000
                        ) -> CoboundaryEstimate:
    """Estimate ``w_f`` at ``x_points`` by coupled differences truncated at ``T_max``.

    ``T_max = (2/alpha) log(Lip(f) M1 / tail_tol)`` with ``M1`` the largest mean
    distance between a fitted point and the stationary partner starts, so the
    neglected integrand is at most ``tail_tol``.
    """
    config = config or IntegratorConfig()
    if not tail_tol > 0:
        raise InvalidParameter("tail_tol must be > 0")
    if reps < 2:
        raise InvalidParameter("reps must be >= 2")
    alpha = model_alpha(model)
    eps_used = None
    if not model.sigma_elliptic:
        model = regularized_model(model, regularization_eps)
        eps_used = regularization_eps
    check_stability(model, config.dt)
    pts = np.asarray(x_points, dtype=float).reshape(-1, model.d)
    if burn_in is None and not model.analytic_invariant_known:
        burn_in = 10.0 / alpha
    partner = warm_start(model, config, burn_in=burn_in, n=reps, stream=rng.WARM)
    m1 = max(float(np.linalg.norm(p - partner, axis=1).mean()) for p in pts)
    scale = f.lip * m1 / tail_tol
    horizon = (2.0 / alpha) * math.log(scale) if scale > 1 else 0.0
    if horizon > horizon_cap:
        raise TailToleranceUnreachable(f"T_max = {horizon:.4g} exceeds the cap {horizon_cap:g}")
    if horizon > 0:
        horizon = config.dt * math.ceil(horizon / config.dt)
    samples = _coupled_integrals(model, f, pts, partner, horizon, config)
    mu_f = invariant_expectation(model, f, n_ref=n_ref, seed=config.seed)
    return CoboundaryEstimate(
        f=f, horizon=horizon, reps=reps, x_points=pts, values=samples.mean(0),
        stderr=samples.std(0, ddof=1) / np.sqrt(reps), mu_f_hat=mu_f, model=model, config=config,
        alpha=alpha, tail_tol=tail_tol, regularization_eps=eps_used, partner_start=partner, samples=samples,
    )


def lipschitz_ratio(estimate, x_grid):
    """Largest difference quotient of the estimate over grid pairs, with its stderr."""
    pts = np.asarray(x_grid, dtype=float).reshape(-1, estimate.d)
    _, _, samples = estimate.evaluate_direct(pts)
    i, j = np.triu_indices(pts.shape[0], k=1)
    dist = np.linalg.norm(pts[i] - pts[j], axis=1)
    quot = np.abs(samples[:, i] - samples[:, j]) / dist
    means = np.abs(samples.mean(0)[i] - samples.mean(0)[j]) / dist
    k = int(np.argmax(means))
    se = float(quot[:, k].std(ddof=1) / np.sqrt(samples.shape[0])) if samples.shape[0] > 1 else 0.0
    return float(means[k]), se


# --------------------------------------------------------------------------
# generator identity


@dataclass
class GeneratorResidual:
    max_residual: float
    residuals: np.ndarray
    stderr: np.ndarray
    fd_step: float
    fd_truncation: float
    discretization: float
    budget: float

    def __float__(self) -> float:
        return self.max_residual

    def to_dict(self) -> dict:
        return {"max_residual": self.max_residual, "residuals": self.residuals.tolist(),
                "stderr": self.stderr.tolist(), "fd_step": self.fd_step, "fd_truncation": self.fd_truncation,
                "discretization": self.discretization, "budget": self.budget}


def _stencil(pts: np.ndarray, h: float):
    """Stencil points for central gradients and Hessians; returns points and an applier."""
    n, d = pts.shape
    offsets = [np.zeros(d)]
    for i in range(d):
        e = np.eye(d)[i] * h
        offsets += [e, -e]
    for i in range(d):
        for j in range(i + 1, d):
            ei, ej = np.eye(d)[i] * h, np.eye(d)[j] * h
            offsets += [ei + ej, ei - ej, -ei + ej, -ei - ej]
    offsets = np.asarray(offsets)
    stencil = (pts[:, None, :] + offsets[None]).reshape(-1, d)

    def apply(values):
        # values: (..., n * n_offsets) -> gradient (..., n, d), Hessian (..., n, d, d)
        v = values.reshape(values.shape[:-1] + (n, len(offsets)))
        grad = np.empty(v.shape[:-1] + (d,))
        hess = np.empty(v.shape[:-1] + (d, d))
        for i in range(d):
            plus, minus = v[..., 1 + 2 * i], v[..., 2 + 2 * i]
            grad[..., i] = (plus - minus) / (2 * h)
            hess[..., i, i] = (plus - 2 * v[..., 0] + minus) / h**2
        k = 1 + 2 * d
        for i in range(d):
            for j in range(i + 1, d):
                pp, pm, mp, mm = (v[..., k + m] for m in range(4))
                hess[..., i, j] = hess[..., j, i] = (pp - pm - mp + mm) / (4 * h * h)
                k += 4
        return grad, hess

    return stencil, apply


def _apply_generator(model: SDEModel, pts: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    b = model.drift(pts)
    sig = model.diffusion(pts)
    a = np.einsum("nik,njk->nij", sig, sig)
    return np.einsum("...ni,ni->...n", grad, b) + 0.5 * np.einsum("...nij,nij->...n", hess, a)


def generator_of(model: SDEModel, func, pts, h: float = 1e-4) -> np.ndarray:
    """``L func`` at ``pts`` by central differences of a deterministic function."""
    pts = np.asarray(pts, dtype=float).reshape(-1, model.d)
    stencil, apply = _stencil(pts, h)
    grad, hess = apply(np.asarray(func(stencil), dtype=float))
    return _apply_generator(model, pts, grad, hess)


def generator_residual(model: SDEModel, estimate, x_grid, fd_step: Optional[float] = None,
                       signal_floor: float = 1e-12) -> GeneratorResidual:
    """Max over ``x_grid`` of ``|L w(x) - (mu(f) - f(x))|`` by central differences.

    Monte Carlo estimates are differenced per replication on common noise, so
    the reported stderr is that of the residual itself. The default step is
    ``max(1e-3, s^(1/3))`` with ``s`` the stderr of ``w(x) - w(x_0)`` across
    the grid. The error budget is
    ``5 (stderr + fd truncation + tail_tol + dt max|L f|)``, where the last
    term covers the O(dt) weak error of an Euler-based estimate.
    """
    sim_model = getattr(estimate, "model", model) or model
    pts = np.asarray(x_grid, dtype=float).reshape(-1, sim_model.d)
    f = estimate.f
    target = estimate.mu_f_hat - f(pts)
    signal = max(float(np.abs(target).max()), signal_floor)

    if fd_step is None:
        _, _, base = estimate.evaluate_direct(pts)
        diff = base - base[:, :1]
        se = diff.std(0, ddof=1).max() / np.sqrt(base.shape[0]) if base.shape[0] > 1 else 0.0
        fd_step = max(1e-3, float(se) ** (1.0 / 3.0))

    def residual_samples(h):
        stencil, apply = _stencil(pts, h)
        _, _, samples = estimate.evaluate_direct(stencil)
        grad, hess = apply(samples)
        return _apply_generator(sim_model, pts, grad, hess) - target[None, :]

    res_h = residual_samples(fd_step)
    res_2h = residual_samples(2 * fd_step)
    mean_h = res_h.mean(0)
    n = res_h.shape[0]
    stderr = res_h.std(0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(pts.shape[0])
    # Richardson: central differences are O(h^2), so error(h) ~ (r(2h) - r(h)) / 3
    truncation = float(np.abs(res_2h.mean(0) - mean_h).max() / 3.0)
    if float(stderr.max()) > signal:
        raise NoiseDominates(f"residual stderr {stderr.max():.3g} exceeds the signal scale {signal:.3g}; "
                             f"increase reps or fd_step")
    config = getattr(estimate, "config", None)
    disc = 0.0
    if config is not None:
        disc = float(config.dt * np.abs(generator_of(sim_model, f, pts)).max())
    budget = 5.0 * (float(stderr.max()) + truncation + estimate.tail_tol + disc)
    return GeneratorResidual(max_residual=float(np.abs(mean_h).max()), residuals=mean_h, stderr=stderr,
                             fd_step=float(fd_step), fd_truncation=truncation, discretization=disc, budget=budget)


# --------------------------------------------------------------------------
# decomposition of the time-average error


@dataclass
class DecompositionReport:
    time_avg: float
    boundary_term: float
    martingale_term: float
    residual: float
    horizon: float
    dt: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("time_avg", "boundary_term", "martingale_term", "residual",
                                              "horizon", "dt")}


def decomposition_residual(model: SDEModel, estimate, traj: Trajectory, fd_step: float = 1e-4) -> DecompositionReport:
    """Split the path's time-average error into boundary and martingale parts.

    ``time_avg`` uses the left-point rule of the occupation measure; the
    martingale term is ``(1/t) sum grad w(X_k) Sigma(X_k) dW_k`` with
    central-difference gradients of the estimate's interpolant.
    """
    if traj.increments is None:
        raise MissingIncrements("the trajectory was recorded without Brownian increments")
    states = traj.states
    t = traj.horizon
    dts = np.diff(traj.times)
    left = states[:-1]
    f = estimate.f
    time_avg = float(np.dot(f(left) - estimate.mu_f_hat, dts) / t)
    ends = estimate(np.stack([states[0], states[-1]]))
    boundary = float((ends[0] - ends[1]) / t)
    d = model.d
    grad = np.empty_like(left)
    for i in range(d):
        e = np.zeros(d)
        e[i] = fd_step
        grad[:, i] = (estimate(left + e) - estimate(left - e)) / (2 * fd_step)
    if traj.increments.shape[-1] != model.q:
        raise MissingIncrements(f"increments have {traj.increments.shape[-1]} columns, model noise has {model.q}")
    noise = np.einsum("nij,nj->ni", model.diffusion(left), traj.increments)
    martingale = float(np.einsum("ni,ni->", grad, noise) / t)
    return DecompositionReport(time_avg=time_avg, boundary_term=boundary, martingale_term=martingale,
                               residual=time_avg - boundary - martingale, horizon=t, dt=float(dts[0]))


# --------------------------------------------------------------------------
# time-average error


@dataclass
class TimeAverageReport:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    # per-replication |nu_t(f) - mu(f)|, shape (reps, len(t))
    samples: np.ndarray = field(repr=False)
    mu_f_hat: float = 0.0
    fit: Optional[RateFitResult] = None

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "mean": self.mean.tolist(), "stderr": self.stderr.tolist(),
                "mu_f_hat": self.mu_f_hat, "fit": None if self.fit is None else self.fit.to_dict()}


def time_average_error(model: SDEModel, f: LipschitzFunction, t_grid, reps: int = 200,
                       config: Optional[IntegratorConfig] = None, burn_in: Optional[float] = None,
                       mu_f_hat: Optional[float] = None, n_ref: int = 10_000) -> TimeAverageReport:
    """Monte Carlo ``E|nu_t(f) - mu(f)|`` over warm-started replications.

    The time averages accumulate on the fly (left-point rule), so memory does
    not grow with the horizon. The slope of ``log mean`` against ``log t`` is
    fitted whenever three or more positive means are available.
    """
    config = config or IntegratorConfig()
    alpha = model_alpha(model)
    check_stability(model, config.dt)
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if t_grid.size == 0 or t_grid[0] < config.dt:
        raise InvalidParameter("t_grid must be non-empty with entries >= dt")
    if burn_in is None and not model.analytic_invariant_known:
        burn_in = 10.0 / alpha
    mu_f = invariant_expectation(model, f, n_ref=n_ref, seed=config.seed) if mu_f_hat is None else float(mu_f_hat)
    x0 = warm_start(model, config, burn_in=burn_in, n=reps)
    marks = {_n_steps(t, config.dt): k for k, t in enumerate(t_grid)}
    n_steps = max(marks)
    keys = [rng.path_key(config.seed, r) for r in range(reps)]
    acc = np.zeros(reps)
    out = np.zeros((reps, t_grid.size))
    for step, x, _ in em_steps(model, x0, n_steps, config.dt, keys):
        k = marks.get(step)
        if k is not None:
            out[:, k] = np.abs(acc / (step * config.dt) - mu_f)
        acc += f(x) * config.dt
    mean = out.mean(0)
    stderr = out.std(0, ddof=1) / np.sqrt(reps) if reps > 1 else np.zeros_like(mean)
    fit = fit_rate(t_grid, mean) if t_grid.size >= 3 and np.all(mean > 0) else None
    return TimeAverageReport(t=t_grid, mean=mean, stderr=stderr, samples=out, mu_f_hat=mu_f, fit=fit)
