"""Euler–Maruyama paths, synchronous couplings, warm starts, regularised models.

All routines are vectorised over replications: a batch of ``R`` paths with
stream keys ``keys[r]`` evolves as one ``(R, d)`` array. Increments come from
:mod:`ergodic_w2.rng`, so a replication's path depends only on its key.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from . import rng
from .errors import DegenerateStart, InvalidParameter, NonFiniteState, PreconditionError, Unstable
from .models import SDEModel, model_alpha


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-2
    seed: int = 0
    record_stride: int = 1
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameter("dt must be > 0")
        if self.record_stride < 1:
            raise InvalidParameter("record_stride must be >= 1")
        if self.scheme != "euler_maruyama":
            raise InvalidParameter(f"unsupported scheme {self.scheme!r}")
        if self.seed < 0:
            raise InvalidParameter("seed must be a non-negative 64-bit integer")

    def to_dict(self) -> dict:
        return {"dt": self.dt, "seed": self.seed, "record_stride": self.record_stride, "scheme": self.scheme}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    model_name: str
    config: IntegratorConfig
    # Brownian increments aggregated over each recorded interval, shape (n-1, q)
    increments: Optional[np.ndarray] = None

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
            for t, x in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


@dataclass
class CouplingRecord:
    times: np.ndarray
    ratios: np.ndarray
    # per-replication ratios, shape (R, n_times), when several replications ran
    samples: Optional[np.ndarray] = None

    def rms(self) -> np.ndarray:
        s = self.samples if self.samples is not None else self.ratios[None]
        return np.sqrt(np.mean(s**2, axis=0))

    def rms_stderr(self) -> np.ndarray:
        """Delta-method stderr of the RMS ratio across replications."""
        s = self.samples if self.samples is not None else self.ratios[None]
        sq = s**2
        rms = np.sqrt(sq.mean(axis=0))
        if s.shape[0] < 2:
            return np.zeros_like(rms)
        se_sq = sq.std(axis=0, ddof=1) / np.sqrt(s.shape[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(rms > 0, se_sq / (2 * rms), 0.0)


def check_stability(model: SDEModel, dt: float) -> float:
    alpha = model_alpha(model)
    if dt * alpha >= 0.5:
        raise Unstable(f"dt * alpha = {dt * alpha:.4g} >= 0.5; reduce dt below {0.5 / alpha:.4g}")
    return alpha


def _keys(config: IntegratorConfig, n: int, keys=None, offset: int = 0, stream: int = rng.PATH):
    if keys is None:
        return [rng.path_key(config.seed, offset + r, stream) for r in range(n)]
    keys = [tuple(k) for k in keys]
    if len(keys) != n:
        raise InvalidParameter(f"{len(keys)} keys for {n} replications")
    return keys


def em_steps(model: SDEModel, x0: np.ndarray, n_steps: int, dt: float, keys: Sequence[tuple],
             record_stride: int = 1, increments: Optional[np.ndarray] = None,
             with_increments: bool = False) -> Iterator[tuple]:
    """Yield ``(step, x, dW)`` at step 0 and every ``record_stride`` steps.

    ``x`` has shape ``(R, d)`` and is a fresh array at every yield; ``dW`` is the
    increment summed since the previous record (``None`` unless requested).
    ``increments`` of shape ``(R, n_steps, q)`` overrides the keyed streams.
    """
    x = np.array(x0, dtype=float, copy=True)
    R, d = x.shape
    q = model.q
    if increments is not None and increments.shape != (R, n_steps, q):
        raise InvalidParameter(f"increments must have shape {(R, n_steps, q)}, got {increments.shape}")
    drift, diffusion = model.drift, model.diffusion
    const = model.constant_diffusion
    acc = np.zeros((R, q)) if with_increments else None
    yield 0, x.copy(), (acc.copy() if with_increments else None)
    block_len = rng.BLOCK
    for start in range(0, n_steps, block_len):
        n = min(block_len, n_steps - start)
        if increments is None:
            dw = rng.brownian_increments(keys, start, n, q, dt)
        else:
            dw = increments[:, start:start + n]
        noise = dw @ const.T if const is not None else None
        for k in range(n):
            step = start + k + 1
            if noise is not None:
                x = x + drift(x) * dt + noise[:, k]
            else:
                x = x + drift(x) * dt + np.einsum("rij,rj->ri", diffusion(x), dw[:, k])
            if with_increments:
                acc += dw[:, k]
            if not np.isfinite(x).all():
                raise NonFiniteState(f"non-finite state at step {step}", last_finite_index=step - 1)
            if step % record_stride == 0 or step == n_steps:
                yield step, x.copy(), (acc.copy() if with_increments else None)
                if with_increments:
                    acc[:] = 0.0


def _n_steps(horizon: float, dt: float) -> int:
    n = int(round(horizon / dt))
    if n < 1 or abs(n * dt - horizon) > 1e-9 * max(horizon, 1.0):
        if horizon < dt * (1 - 1e-12):
            raise InvalidParameter("horizon must be >= dt")
        n = int(np.ceil(horizon / dt - 1e-9))
    return n


def integrate_batch(model: SDEModel, x0, horizon: float, config: IntegratorConfig, keys=None,
                    increments: Optional[np.ndarray] = None, keep_increments: bool = False):
    """Record ``R`` paths; returns ``(times, states (R, n, d), increments or None)``."""
    check_stability(model, config.dt)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n_steps = _n_steps(horizon, config.dt)
    keys = _keys(config, x0.shape[0], keys)
    times, states, incs = [], [], []
    for step, x, dw in em_steps(model, x0, n_steps, config.dt, keys, config.record_stride,
                                increments=increments, with_increments=keep_increments):
        times.append(step * config.dt)
        states.append(x)
        if keep_increments and step > 0:
            incs.append(dw)
    states = np.stack(states, axis=1)
    inc = np.stack(incs, axis=1) if keep_increments else None
    return np.asarray(times), states, inc


def integrate(model: SDEModel, x0, horizon: float, config: IntegratorConfig, replication: int = 0,
              keep_increments: bool = False, increments: Optional[np.ndarray] = None) -> Trajectory:
    """Euler–Maruyama path of ``model`` from ``x0`` over ``[0, horizon]``.

    Deterministic in ``(model, x0, horizon, config, replication)``.
    ``increments`` (shape ``(n_steps, q)``) replaces the keyed Brownian stream.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, model.d)
    inc = None if increments is None else np.asarray(increments, dtype=float)[None]
    times, states, dws = integrate_batch(model, x0, horizon, config,
                                         keys=[rng.path_key(config.seed, replication)],
                                         increments=inc, keep_increments=keep_increments)
    return Trajectory(times=times, states=states[0], model_name=model.name, config=config,
                      increments=None if dws is None else dws[0])


def endpoints(model: SDEModel, x0, horizon: float, config: IntegratorConfig, keys=None) -> np.ndarray:
    """Final states of a batch of paths, without recording anything else."""
    check_stability(model, config.dt)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n_steps = _n_steps(horizon, config.dt)
    keys = _keys(config, x0.shape[0], keys)
    last = x0
    for _, x, _ in em_steps(model, x0, n_steps, config.dt, keys, record_stride=n_steps):
        last = x
    return last


def simulate_coupled(model: SDEModel, x0, y0, horizon: float, config: IntegratorConfig,
                     replications: int = 1) -> CouplingRecord:
    """Synchronously coupled paths from ``x0`` and ``y0``; ratio of separations.

    Both members of replication ``r`` consume the same Brownian increments.
    ``ratios`` is the RMS over replications (the single ratio when ``R = 1``).
    """
    x0 = np.asarray(x0, dtype=float).reshape(model.d)
    y0 = np.asarray(y0, dtype=float).reshape(model.d)
    dist0 = np.linalg.norm(x0 - y0)
    if dist0 == 0:
        raise DegenerateStart("x0 and y0 coincide")
    check_stability(model, config.dt)
    keys = _keys(config, replications)
    both = np.concatenate([np.tile(x0, (replications, 1)), np.tile(y0, (replications, 1))])
    n_steps = _n_steps(horizon, config.dt)
    # rows r and R + r carry the same key, hence the same increments
    times, ratios = [], []
    for step, x, _ in em_steps(model, both, n_steps, config.dt, keys + keys, config.record_stride):
        times.append(step * config.dt)
        ratios.append(np.linalg.norm(x[:replications] - x[replications:], axis=1) / dist0)
    samples = np.stack(ratios, axis=1)
    rec = CouplingRecord(times=np.asarray(times), ratios=np.empty(0), samples=samples)
    rec.ratios = rec.rms()
    return rec


def warm_start(model: SDEModel, config: IntegratorConfig, burn_in: Optional[float] = None,
               n: int = 1, x_init=None, stream: int = rng.WARM, offset: int = 0) -> np.ndarray:
    """``n`` approximately stationary states, shape ``(n, d)``.

    Exact invariant draws when the law is known; otherwise Euler paths from
    ``x_init`` (default 0) run for ``burn_in >= 10/alpha``.
    """
    alpha = model_alpha(model)
    if model.analytic_invariant_known:
        gen = rng.generator(config.seed, stream, offset, n)
        return model.sample_invariant(gen, n)
    if burn_in is None:
        raise PreconditionError("burn_in is required when the invariant law is not known in closed form")
    if burn_in < 10.0 / alpha - 1e-12:
        raise PreconditionError(f"burn_in must be >= 10/alpha = {10 / alpha:.4g}, got {burn_in}")
    start = np.zeros((n, model.d)) if x_init is None else np.broadcast_to(
        np.asarray(x_init, dtype=float), (n, model.d))
    keys = [rng.path_key(config.seed, offset + r, stream) for r in range(n)]
    return endpoints(model, start, burn_in, config, keys=keys)


def regularized_model(model: SDEModel, eps: float) -> SDEModel:
    """Same drift, diffusion ``[Sigma | eps I]`` with noise dimension ``q + d``."""
    eps = float(eps)
    if not 0 < eps < 1:
        raise InvalidParameter("eps must lie in (0, 1)")
    d, q = model.d, model.q
    extra = eps * np.eye(d)
    base = model.diffusion

    def diffusion(x):
        sig = base(x)
        return np.concatenate([sig, np.broadcast_to(extra, (x.shape[0], d, d))], axis=2)

    const = None
    if model.constant_diffusion is not None:
        const = np.concatenate([model.constant_diffusion, extra], axis=1)
    cov = None
    if model.analytic_invariant_known:
        # linear drift: the extra noise adds eps^2 I to the Lyapunov right-hand side
        from scipy import linalg

        A = -model.drift(np.eye(d)).T
        cov = linalg.solve_continuous_lyapunov(A, const @ const.T)
        cov = 0.5 * (cov + cov.T)
    sup = None if model.sigma_sup is None else float(np.sqrt(model.sigma_sup**2 + d * eps**2))
    return replace(
        model,
        name=f"{model.name}+eps{eps:g}",
        q=q + d,
        diffusion=diffusion,
        sigma_elliptic=True,
        constant_diffusion=const,
        invariant_cov=cov,
        sigma_sup=sup,
        params={**model.params, "regularization_eps": eps},
    )
