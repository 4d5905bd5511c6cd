"""Empirical tails of Brownian stochastic integrals against exponential and polynomial bounds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .. import rng
from ..errors import InvalidParameter, UnboundedZ
from ..models import SDEModel
from ..simulate import IntegratorConfig, _n_steps, check_stability, em_steps, warm_start

KINDS = ("bounded", "polynomial")


@dataclass(frozen=True)
class ZSpec:
    """Integrand ``Z_s = z(X_s)`` against the first driving Brownian coordinate."""

    name: str
    z: Callable[[np.ndarray], np.ndarray]
    sup: float = math.inf
    model: Optional[SDEModel] = None

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup)


def z_spec(name: str, model: Optional[SDEModel] = None, c: float = 1.0) -> ZSpec:
    if name == "constant":
        return ZSpec(f"constant({c:g})", lambda x: np.full(x.shape[0], float(c)), abs(float(c)), model)
    if model is None:
        raise InvalidParameter(f"z_spec {name!r} needs a model")
    if name == "sin_of_state":
        return ZSpec(name, lambda x: np.sin(x[:, 0]), 1.0, model)
    if name == "state_linear":
        return ZSpec(name, lambda x: x[:, 0], math.inf, model)
    raise InvalidParameter(f"unknown z_spec {name!r}")


def psi_function(spec: Union[str, float, Callable]) -> Callable[[float], float]:
    """``"sqrt"`` for ``sqrt(t)``, a number ``p`` for ``t^p``, or any callable."""
    if callable(spec):
        return spec
    if spec == "sqrt":
        return math.sqrt
    p = float(spec)
    return lambda t: t**p


def bdg_constant(p: float) -> float:
    """``C`` with ``E|M_t|^p <= C E<M>_t^(p/2)`` for continuous martingales, ``p >= 2``.

    From Ito's formula for ``|M|^p``, Hoelder, and Doob's maximal inequality:
    ``C = (p(p-1)/2 (p/(p-1))^(p-2))^(p/2)``.
    """
    if p < 2:
        raise InvalidParameter("the moment order must be >= 2")
    return (p * (p - 1) / 2 * (p / (p - 1)) ** (p - 2)) ** (p / 2)


@dataclass
class ConcentrationReport:
    ell_grid: np.ndarray
    empirical_tail: np.ndarray
    bound: np.ndarray
    part: str
    stderr: np.ndarray
    t: float
    replications: int
    z_name: str
    constants: dict = field(default_factory=dict)

    @property
    def passes(self) -> bool:
        return bool(np.all(self.empirical_tail <= self.bound + 3 * self.stderr))

    def to_dict(self) -> dict:
        return {"ell_grid": self.ell_grid.tolist(), "empirical_tail": self.empirical_tail.tolist(),
                "bound": self.bound.tolist(), "stderr": self.stderr.tolist(), "part": self.part, "t": self.t,
                "replications": self.replications, "z": self.z_name, "constants": self.constants,
                "passes": self.passes}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ell", "empirical_tail", "stderr", "bound"])
            for row in zip(self.ell_grid, self.empirical_tail, self.stderr, self.bound):
                w.writerow([repr(float(v)) for v in row])


def stochastic_integrals(spec: ZSpec, t: float, replications: int, config: IntegratorConfig,
                         burn_in: Optional[float] = None):
    """Ito sums ``sum Z(X_k) dW_k`` up to ``t`` and the largest time-slice ``E|Z|^p`` sampler.

    Returns ``(integrals, z_paths_moment)`` where the second item maps ``p`` to
    ``max_k mean_r |Z(X_k)|^p`` along the simulated paths.
    """
    n_steps = _n_steps(t, config.dt)
    keys = [rng.path_key(config.seed, r, rng.AUX) for r in range(replications)]
    if spec.model is None:
        dw = np.zeros(replications)
        for start in range(0, n_steps, rng.BLOCK):
            n = min(rng.BLOCK, n_steps - start)
            dw += rng.brownian_increments(keys, start, n, 1, config.dt)[:, :, 0].sum(axis=1)
        zc = float(spec.z(np.zeros((1, 1)))[0])
        return zc * dw, (lambda p: abs(zc) ** p)
    model = spec.model
    check_stability(model, config.dt)
    x0 = warm_start(model, config, burn_in=burn_in, n=replications)
    acc = np.zeros(replications)
    slices = []
    z_prev = spec.z(x0)
    for step, x, dw in em_steps(model, x0, n_steps, config.dt, keys, with_increments=True):
        if step == 0:
            slices.append(z_prev)
            continue
        acc += z_prev * dw[:, 0]
        z_prev = spec.z(x)
        if step % max(n_steps // 50, 1) == 0:
            slices.append(z_prev)
    z_slices = np.stack(slices)
    return acc, (lambda p: float(np.max(np.mean(np.abs(z_slices) ** p, axis=1))))


def concentration_check(kind: str, z: ZSpec, t: float, psi_spec: Union[str, float, Callable] = "sqrt",
                        ell_grid: Sequence[float] = (0.5, 1.0, 2.0, 3.0, 4.0), replications: int = 10_000,
                        config: Optional[IntegratorConfig] = None, a: float = 2.0,
                        burn_in: Optional[float] = None, moment: Optional[float] = None) -> ConcentrationReport:
    """Exceedance frequencies of ``|int_0^t Z dW| > ell psi(t)`` and the matching bound.

    ``bounded``: ``2 exp(-ell^2 psi^2 / (2 |Z|_inf^2 t))``.
    ``polynomial``: ``C t^((a+2)/2) / (ell psi)^(a+2)`` with
    ``C = bdg_constant(a+2) * sup_s E|Z_s|^(a+2)``; the moment is measured on
    the simulated paths unless ``moment`` is supplied.
    """
    if kind not in KINDS:
        raise InvalidParameter(f"kind must be one of {KINDS}")
    if kind == "bounded" and not z.bounded:
        raise UnboundedZ(f"{z.name} has no finite sup norm")
    if replications < 1000:
        raise InvalidParameter("replications must be >= 1000")
    if not t > 0:
        raise InvalidParameter("t must be > 0")
    if a <= 0:
        raise InvalidParameter("a must be > 0")
    config = config or IntegratorConfig()
    ell = np.asarray([float(e) for e in ell_grid])
    if np.any(ell < 0):
        raise InvalidParameter("ell values must be >= 0")
    psi = float(psi_function(psi_spec)(t))
    integrals, moments = stochastic_integrals(z, t, replications, config, burn_in=burn_in)
    level = ell * psi
    freq = (np.abs(integrals)[None, :] > level[:, None]).mean(axis=1)
    stderr = np.sqrt(freq * (1 - freq) / replications)
    constants = {"psi": psi}
    with np.errstate(divide="ignore"):
        if kind == "bounded":
            sup = z.sup
            bound = 2 * np.exp(-(level**2) / (2 * sup**2 * t)) if sup > 0 else np.where(level > 0, 0.0, 2.0)
            constants["z_sup"] = sup
        else:
            p = a + 2
            m = moments(p) if moment is None else float(moment)
            c = bdg_constant(p) * m
            bound = np.where(level > 0, c * t ** (p / 2) / np.where(level > 0, level, 1.0) ** p, np.inf)
            constants.update({"a": a, "moment": m, "bdg": bdg_constant(p), "C": c})
    return ConcentrationReport(ell_grid=ell, empirical_tail=freq, bound=bound, part=kind, stderr=stderr, t=float(t),
                               replications=replications, z_name=z.name, constants=constants)
