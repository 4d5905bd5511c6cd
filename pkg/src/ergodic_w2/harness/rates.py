"""W2 rate experiments, single-path envelope studies and displacement decay."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .. import rng
from ..errors import InvalidParameter, TooLarge
from ..fitting import RateFitResult, fit_rate
from ..measures import A_LADDER, DiscreteMeasure, empirical_moment
from ..models import SDEModel, model_alpha, reference_invariant
from ..simulate import IntegratorConfig, _n_steps, check_stability, em_steps, integrate_batch, warm_start
from ..transport import EXACT_MAX_ATOMS, w2, w2_1d_samples
from .exponents import theoretical_exponents

ETA = 0.1
RATE_COLUMNS = ("t", "w2_mean", "w2_sq_mean", "stderr", "w2_method", "w2_gap")


def geometric_grid(lo: float, hi: float, n: int, unit: Optional[float] = None) -> np.ndarray:
    """``n`` geometric points from ``lo`` to ``hi``, rounded to multiples of ``unit`` if given."""
    if not (0 < lo < hi) or n < 2:
        raise InvalidParameter("need 0 < lo < hi and n >= 2")
    t = np.geomspace(lo, hi, n)
    if unit is not None:
        t = np.unique(np.maximum(np.round(t / unit), 1) * unit)
    return t


def _check_grid(t_grid, config: IntegratorConfig, min_points: int) -> np.ndarray:
    t = np.asarray([float(x) for x in t_grid])
    if t.size < min_points:
        raise InvalidParameter(f"need at least {min_points} time points, got {t.size}")
    if np.any(np.diff(t) <= 0):
        raise InvalidParameter("time points must be strictly increasing")
    if t[0] <= 0:
        raise InvalidParameter("time points must be > 0")
    unit = config.dt * config.record_stride
    counts = t / unit
    if np.any(np.abs(counts - np.round(counts)) > 1e-6 * np.maximum(counts, 1)) or np.any(np.round(counts) < 1):
        raise InvalidParameter(f"time points must be positive multiples of dt * record_stride = {unit:g}")
    return t


def default_reference_size(model: SDEModel) -> int:
    return 100_000 if model.analytic_invariant_known else 10_000


@dataclass
class Reference:
    """Reference sample of the invariant law and its own W2 sampling floor."""

    samples: np.ndarray
    floor: float
    measure: DiscreteMeasure = field(repr=False)

    @classmethod
    def build(cls, model: SDEModel, n_ref: int, seed: int, burn_in: Optional[float] = None, dt: float = 1e-2):
        mu = reference_invariant(model, n_ref, burn_in=burn_in, seed=seed, dt=dt)
        pts = np.repeat(mu.locations, np.maximum(np.round(mu.weights * n_ref).astype(int), 1), axis=0)
        perm = rng.generator(seed, rng.AUX, 1).permutation(pts.shape[0])
        half = pts.shape[0] // 2
        if half >= 1:
            a, b = pts[perm[:half]], pts[perm[half:2 * half]]
            split = _w2_samples(a, b, seed)
            # two independent halves sit about twice as far apart as the full sample from the law
            floor = split.value / 2
        else:
            floor = 0.0
        return cls(samples=pts, floor=float(floor), measure=mu)


def _w2_samples(x: np.ndarray, y: np.ndarray, seed: int, method: str = "auto", reg: float = 1e-2,
                max_atoms: int = EXACT_MAX_ATOMS):
    if x.shape[1] == 1 and method in ("auto", "quantile_1d"):
        return w2_1d_samples(x[:, 0], y[:, 0])
    mu, nu = DiscreteMeasure.from_samples(x), DiscreteMeasure.from_samples(y)
    if method == "entropic":
        mu, nu = mu.thin(max_atoms, seed), nu.thin(max_atoms, seed + 1)
    return w2(mu, nu, method="exact_lp" if method == "auto" else method, max_atoms=max_atoms, reg=reg, seed=seed)


@dataclass
class RateTable:
    t: np.ndarray
    w2_mean: np.ndarray
    w2_sq_mean: np.ndarray
    stderr: np.ndarray
    w2_method: list
    w2_gap: np.ndarray
    floor: float = 0.0
    replications: int = 0
    # per-replication W2 values, shape (R, len(t))
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def rms(self) -> np.ndarray:
        return np.sqrt(self.w2_sq_mean)

    @property
    def rms_corrected(self) -> np.ndarray:
        """RMS with the reference floor removed in quadrature (raw value where that would vanish)."""
        diff = self.w2_sq_mean - self.floor**2
        return np.where(diff > 0, np.sqrt(np.maximum(diff, 0.0)), self.rms)

    def rows(self):
        for k in range(self.t.size):
            yield (float(self.t[k]), float(self.w2_mean[k]), float(self.w2_sq_mean[k]), float(self.stderr[k]),
                   self.w2_method[k], float(self.w2_gap[k]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RATE_COLUMNS)
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


@dataclass
class RateExperiment:
    table: RateTable
    fit: RateFitResult
    a_certified: float
    exponents: dict
    bound_checks: dict

    def to_dict(self) -> dict:
        return {"fit": self.fit.to_dict(), "a_certified": self.a_certified, "exponents": self.exponents,
                "bound_checks": self.bound_checks, "floor": self.table.floor,
                "replications": self.table.replications}


def _bound_checks(fit: RateFitResult, d: int, a: float, sigma_bounded: bool) -> dict:
    rates = theoretical_exponents(d, a)
    hw = fit.half_width
    out = {"l2": {"exponent": rates.l2_exponent, "a": a, "holds": bool(fit.slope <= -rates.l2_exponent + hw)}}
    if sigma_bounded:
        out["exp_l2"] = {"exponent": rates.exp_l2_exponent,
                         "holds": bool(fit.slope <= -rates.exp_l2_exponent + hw)}
    return out


def rate_experiment(model: SDEModel, t_grid: Sequence[float], replications: int = 64, w2_spec: str = "auto",
                    config: Optional[IntegratorConfig] = None, burn_in: Optional[float] = None,
                    n_ref: Optional[int] = None, reference: Optional[Reference] = None,
                    synthetic: Optional[Union[Callable, float]] = None, chunk: int = 16,
                    max_atoms: int = EXACT_MAX_ATOMS, reg: float = 1e-2, a: Optional[float] = None,
                    max_points: int = 5 * 10**8) -> RateExperiment:
    """Monte Carlo ``W2(nu_t, mu)`` over warm-started replications at each ``t``.

    The occupation measure at ``t`` is the left-point prefix of one recorded
    path, so all ``t`` of a replication share the path. ``synthetic`` (a
    callable ``t -> W2`` or an exponent ``p`` standing for ``t^p``) bypasses
    simulation entirely. The fit uses the RMS with the reference's own
    sampling floor removed in quadrature.
    """
    config = config or IntegratorConfig()
    t = _check_grid(t_grid, config, 4)
    if synthetic is not None:
        law = synthetic if callable(synthetic) else (lambda s, p=float(synthetic): s**p)
        vals = np.asarray([float(law(s)) for s in t])
        table = RateTable(t=t, w2_mean=vals, w2_sq_mean=vals**2, stderr=np.zeros_like(vals),
                          w2_method=["synthetic"] * t.size, w2_gap=np.zeros_like(vals), replications=0)
        fit = fit_rate(t, vals)
        return RateExperiment(table=table, fit=fit, a_certified=float("nan"), exponents={}, bound_checks={})

    alpha = model_alpha(model)
    check_stability(model, config.dt)
    if replications < 2:
        raise InvalidParameter("replications must be >= 2")
    n_steps = _n_steps(t[-1], config.dt)
    if replications * (n_steps // config.record_stride) * model.d > max_points:
        raise TooLarge("replications x recorded points exceed the memory budget")
    if burn_in is None and not model.analytic_invariant_known:
        burn_in = 10.0 / alpha
    if reference is None:
        reference = Reference.build(model, n_ref or default_reference_size(model), config.seed, dt=config.dt)
    prefix = np.round(t / (config.dt * config.record_stride)).astype(int)
    values = np.zeros((replications, t.size))
    gaps = np.zeros((replications, t.size))
    methods = [""] * t.size
    starts = warm_start(model, config, burn_in=burn_in, n=replications)
    for lo in range(0, replications, chunk):
        hi = min(lo + chunk, replications)
        x0 = starts[lo:hi]
        keys = [rng.path_key(config.seed, r) for r in range(lo, hi)]
        _, states, _ = integrate_batch(model, x0, t[-1], config, keys=keys)
        for i in range(hi - lo):
            for k, n in enumerate(prefix):
                res = _w2_samples(states[i, :n], reference.samples, config.seed + lo + i, w2_spec, reg, max_atoms)
                values[lo + i, k] = res.value
                gaps[lo + i, k] = res.gap
                methods[k] = res.method
        del states
    table = RateTable(t=t, w2_mean=values.mean(0), w2_sq_mean=(values**2).mean(0),
                      stderr=values.std(0, ddof=1) / np.sqrt(replications), w2_method=methods,
                      w2_gap=gaps.max(0), floor=reference.floor, replications=replications, samples=values)
    fit = fit_rate(t, table.rms_corrected)
    if a is None:
        a = empirical_moment(reference.measure, 2).a_certified
    if a <= 0:
        # no ladder order certified; fall back to the weakest one
        a = A_LADDER[0]
    checks = _bound_checks(fit, model.d, a, model.sigma_bounded)
    return RateExperiment(table=table, fit=fit, a_certified=float(a),
                          exponents=theoretical_exponents(model.d, a).to_dict(), bound_checks=checks)


# --------------------------------------------------------------------------
# running-max envelope checks


def running_max_peak(t, ratio, settle_t: float):
    """Time at which the ratio's running maximum over ``t >= settle_t`` is attained."""
    t = np.asarray(t)
    ratio = np.asarray(ratio)
    mask = (t >= settle_t) & np.isfinite(ratio)
    if not mask.any():
        raise InvalidParameter(f"no checkpoint at or beyond settle_t = {settle_t:g}")
    idx = np.flatnonzero(mask)
    return float(t[idx[int(np.argmax(ratio[idx]))]])


@dataclass
class EnvelopeTable:
    t: np.ndarray
    statistic: np.ndarray
    ratio: np.ndarray
    exponent: float
    log_power: float
    settle_t: float
    peak_before: float

    @property
    def running_max(self) -> np.ndarray:
        return np.fmax.accumulate(self.ratio)

    @property
    def peak_t(self) -> float:
        return running_max_peak(self.t, self.ratio, self.settle_t)

    @property
    def passes(self) -> bool:
        return self.peak_t <= self.peak_before

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "statistic": self.statistic.tolist(), "ratio": self.ratio.tolist(),
                "exponent": self.exponent, "log_power": self.log_power, "settle_t": self.settle_t,
                "peak_t": self.peak_t, "peak_before": self.peak_before, "passes": self.passes}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "statistic", "envelope_ratio", "running_max"])
            for row in zip(self.t, self.statistic, self.ratio, self.running_max):
                w.writerow([repr(float(v)) for v in row])


def _envelope(t, exponent: float, log_power: float) -> np.ndarray:
    """``t^-exponent log(t)^log_power``; undefined (nan) for ``t <= 1``."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, np.nan)
    ok = t > 1
    out[ok] = t[ok] ** (-exponent) * np.log(t[ok]) ** log_power
    return out


def as_path_study(model: SDEModel, horizon: float, checkpoints: Sequence[float],
                  config: Optional[IntegratorConfig] = None, eta: float = ETA, zeta: Optional[float] = None,
                  settle_t: float = 1e2, peak_before: float = 1e3, replication: int = 0,
                  burn_in: Optional[float] = None, n_ref: Optional[int] = None,
                  reference: Optional[Reference] = None, w2_spec: str = "auto") -> EnvelopeTable:
    """Single-path ``W2(nu_t, mu) t^zeta / log(t)^(1/2 + eta)`` at checkpoints.

    ``zeta`` defaults to the bounded-diffusion exponent when the diffusion is
    bounded, else to the moment-class exponent at ``a = a_certified``. The
    almost-sure statement is checked through the finite-horizon surrogate
    ``peak_t <= peak_before`` on the running maximum beyond ``settle_t``.
    """
    config = config or IntegratorConfig()
    cps = _check_grid(checkpoints, config, 4)
    if cps[-1] > horizon + 1e-9:
        raise InvalidParameter("checkpoints must not exceed the horizon")
    if cps[0] <= 1:
        raise InvalidParameter("checkpoints must exceed 1 so that log(t) > 0")
    alpha = model_alpha(model)
    check_stability(model, config.dt)
    if burn_in is None and not model.analytic_invariant_known:
        burn_in = 10.0 / alpha
    if reference is None:
        reference = Reference.build(model, n_ref or default_reference_size(model), config.seed, dt=config.dt)
    if zeta is None:
        if model.sigma_bounded:
            zeta = theoretical_exponents(model.d, 1.0).exp_as_exponent
        else:
            a = empirical_moment(reference.measure, 2).a_certified or A_LADDER[0]
            zeta = theoretical_exponents(model.d, a).as_exponent
    x0 = warm_start(model, config, burn_in=burn_in, n=replication + 1)[replication:]
    _, states, _ = integrate_batch(model, x0, cps[-1], config, keys=[rng.path_key(config.seed, replication)])
    path = states[0]
    prefix = np.round(cps / (config.dt * config.record_stride)).astype(int)
    stat = np.asarray([_w2_samples(path[:n], reference.samples, config.seed, w2_spec).value for n in prefix])
    log_power = 0.5 + eta
    ratio = stat / _envelope(cps, zeta, log_power)
    return EnvelopeTable(t=cps, statistic=stat, ratio=ratio, exponent=float(zeta), log_power=log_power,
                         settle_t=settle_t, peak_before=peak_before)


@dataclass
class DisplacementReport:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    fit: RateFitResult
    envelope: EnvelopeTable
    a_prime: float

    @property
    def slope_ok(self) -> bool:
        return abs(self.fit.slope + 1.0) <= 0.05

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "mean": self.mean.tolist(), "stderr": self.stderr.tolist(),
                "fit": self.fit.to_dict(), "a_prime": self.a_prime, "envelope": self.envelope.to_dict(),
                "slope_ok": self.slope_ok}


def displacement_decay_check(model: SDEModel, t_grid: Sequence[float], replications: int = 400,
                             config: Optional[IntegratorConfig] = None, burn_in: Optional[float] = None,
                             eta: float = ETA, a: Optional[float] = None, settle_t: float = 1e2,
                             peak_before: Optional[float] = None, n_ref: int = 10_000) -> DisplacementReport:
    """``E|X_t - X_0| / t`` over stationary replications plus a single-path envelope.

    The single path (replication 0) is normalised by
    ``t^(-(1+a')/(2+a')) log(t)^(1/(1+a'/2) + eta)`` with ``a' = min(a, 2)``.
    """
    config = config or IntegratorConfig()
    t = _check_grid(t_grid, config, 3)
    alpha = model_alpha(model)
    check_stability(model, config.dt)
    if burn_in is None and not model.analytic_invariant_known:
        burn_in = 10.0 / alpha
    if a is None:
        ref = reference_invariant(model, n_ref, seed=config.seed, dt=config.dt)
        a = empirical_moment(ref, 2).a_certified
    a_prime = min(float(a), 2.0)
    x0 = warm_start(model, config, burn_in=burn_in, n=replications)
    keys = [rng.path_key(config.seed, r) for r in range(replications)]
    marks = {_n_steps(s, config.dt): k for k, s in enumerate(t)}
    disp = np.zeros((replications, t.size))
    for step, x, _ in em_steps(model, x0, max(marks), config.dt, keys):
        k = marks.get(step)
        if k is not None:
            disp[:, k] = np.linalg.norm(x - x0, axis=1) / t[k]
    mean = disp.mean(0)
    stderr = disp.std(0, ddof=1) / np.sqrt(replications)
    fit = fit_rate(t, mean)
    exponent = (1 + a_prime) / (2 + a_prime)
    log_power = 1 / (1 + a_prime / 2) + eta
    ratio = disp[0] / _envelope(t, exponent, log_power)
    env = EnvelopeTable(t=t, statistic=disp[0], ratio=ratio, exponent=exponent, log_power=log_power,
                        settle_t=settle_t, peak_before=math.inf if peak_before is None else peak_before)
    return DisplacementReport(t=t, mean=mean, stderr=stderr, fit=fit, envelope=env, a_prime=a_prime)
