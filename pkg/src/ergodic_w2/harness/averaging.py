"""Numerical Cesaro and Kronecker averages in continuous time."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate

from .. import rng
from ..errors import InvalidParameter, SpecViolation

KINDS = ("cesaro", "kronecker", "stochastic_kronecker")


@dataclass(frozen=True)
class Weight:
    """Weight ``g`` on ``[lower, inf)``; ``power`` is ``rho`` when ``g(s) = s^(-rho)``."""

    g: Callable[[float], float]
    power: Optional[float] = None
    name: str = "g"


def weight_spec(spec: Union[str, float, tuple, Callable, Weight] = "constant") -> Weight:
    """``"constant"`` (g = 1), ``("power", rho)`` (g = s^-rho), a number ``rho``, or a callable."""
    if isinstance(spec, Weight):
        return spec
    if callable(spec):
        return Weight(spec, None, getattr(spec, "__name__", "g"))
    if spec == "constant":
        return Weight(lambda s: 1.0, 0.0, "1")
    if isinstance(spec, tuple) and spec[0] == "power":
        spec = spec[1]
    rho = float(spec)
    return Weight(lambda s, r=rho: s ** (-r), rho, f"s^-{rho:g}")


def integrand_spec(spec: Union[str, float, tuple, Callable] = 1.0) -> Callable[[float], float]:
    """A number ``c`` (constant), ``("power", p)`` for ``s^p``, or a callable."""
    if callable(spec):
        return spec
    if isinstance(spec, tuple) and spec[0] == "power":
        p = float(spec[1])
        return lambda s: s**p
    if isinstance(spec, tuple) and spec[0] == "constant":
        spec = spec[1]
    c = float(spec)
    return lambda s: c


def _quad(func, a: float, b: float) -> float:
    if b <= a:
        return 0.0
    val, _ = integrate.quad(func, a, b, limit=400, epsabs=1e-14, epsrel=1e-12)
    return float(val)


def _cumulative(func, points: np.ndarray) -> np.ndarray:
    """``int_{points[0]}^{points[k]} func`` for every k, piecewise on the checkpoints."""
    pieces = [_quad(func, points[k], points[k + 1]) for k in range(points.size - 1)]
    return np.concatenate(([0.0], np.cumsum(pieces)))


@dataclass
class AveragingTable:
    kind: str
    t: np.ndarray
    ratio: np.ndarray
    limit: float
    # stochastic kind: RMS over replications with delta-method stderr and the Ito-isometry value
    stderr: Optional[np.ndarray] = None
    expected: Optional[np.ndarray] = None
    replications: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> float:
        return float(self.ratio[-1])

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "t": self.t.tolist(), "ratio": self.ratio.tolist(), "limit": self.limit,
               "final": self.final, "replications": self.replications, **self.extra}
        if self.stderr is not None:
            out["stderr"] = self.stderr.tolist()
            out["expected"] = self.expected.tolist()
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["t", "ratio"] + (["stderr", "expected"] if self.stderr is not None else [])
            w.writerow(header)
            for k in range(self.t.size):
                row = [self.t[k], self.ratio[k]]
                if self.stderr is not None:
                    row += [self.stderr[k], self.expected[k]]
                w.writerow([repr(float(v)) for v in row])


def check_divergent(weight: Weight, lower: float, T: float, factor: float = 1.5) -> None:
    """Finite-horizon test that ``int g`` diverges: ``G(T) >= factor * G(sqrt T)``."""
    mid = math.sqrt(T) if math.sqrt(T) > lower else 0.5 * (lower + T)
    g_mid = _quad(weight.g, lower, mid)
    g_T = g_mid + _quad(weight.g, mid, T)
    if not g_T >= factor * g_mid:
        raise SpecViolation(f"int g over [{lower:g}, {T:g}] = {g_T:.4g} is not growing "
                            f"(int up to {mid:.4g} is {g_mid:.4g}); g does not look divergent")


def averaging_lemma_check(kind: str, g_spec="constant", u_spec=1.0, T: float = 1e4, lower: float = 0.0,
                          checkpoints: Optional[Sequence[float]] = None, n_checkpoints: int = 9,
                          limit: Optional[float] = None, replications: int = 10_000, seed: int = 0) -> AveragingTable:
    """Averages of ``u`` against ``g`` up to geometric checkpoints ``<= T``.

    cesaro: ``int_a^t g U / int_a^t g`` with limit ``lim U`` (pass ``limit``;
    defaults to ``U(T)``).
    kronecker: ``int_a^t g u / N(t)``, limit 0.
    stochastic_kronecker: RMS over replications of ``int_a^t g u dW / N(t)``,
    limit 0; the Gaussian cell integrals are drawn exactly, and ``expected``
    holds ``sqrt(int_a^t (g u)^2) / N(t)``.

    ``N(t) = t^(1 - rho)`` for power weights ``g = s^-rho`` and
    ``N(t) = int_a^t g`` otherwise.
    """
    if kind not in KINDS:
        raise InvalidParameter(f"kind must be one of {KINDS}")
    weight = weight_spec(g_spec)
    u = integrand_spec(u_spec)
    if not T > max(lower, 0.0):
        raise InvalidParameter("T must exceed the lower limit")
    if lower < 0:
        raise InvalidParameter("the lower limit must be >= 0")
    check_divergent(weight, lower, T)
    if checkpoints is None:
        start = max(lower, min(1.0, T / 2))
        if start <= lower:
            start = lower + 1e-3 * (T - lower)
        cps = np.geomspace(start, T, n_checkpoints)
    else:
        cps = np.asarray(sorted(float(c) for c in checkpoints))
    cps = cps[(cps > lower) & (cps <= T)]
    if cps.size == 0:
        raise InvalidParameter("no checkpoint lies in (lower, T]")
    points = np.concatenate(([lower], cps))

    def norm(tt):
        if weight.power is not None:
            return np.asarray(tt, dtype=float) ** (1 - weight.power)
        return None

    if kind in ("cesaro", "kronecker"):
        num = _cumulative(lambda s: weight.g(s) * u(s), points)[1:]
        if kind == "cesaro":
            den = _cumulative(weight.g, points)[1:]
            lim = float(u(T)) if limit is None else float(limit)
        else:
            den = norm(cps) if weight.power is not None else _cumulative(weight.g, points)[1:]
            lim = 0.0
        return AveragingTable(kind=kind, t=cps, ratio=num / den, limit=lim,
                              extra={"g": weight.name, "lower": lower})

    # stochastic: independent Gaussian cells with variance int (g u)^2 over each cell
    var_cells = np.asarray([_quad(lambda s: (weight.g(s) * u(s)) ** 2, points[k], points[k + 1])
                            for k in range(cps.size)])
    gen = rng.generator(seed, rng.AUX, 2)
    cells = gen.standard_normal((replications, cps.size)) * np.sqrt(var_cells)[None, :]
    den = norm(cps) if weight.power is not None else _cumulative(weight.g, points)[1:]
    paths = np.cumsum(cells, axis=1) / den[None, :]
    sq = paths**2
    rms = np.sqrt(sq.mean(0))
    se = sq.std(0, ddof=1) / np.sqrt(replications) / (2 * np.where(rms > 0, rms, 1.0))
    expected = np.sqrt(np.cumsum(var_cells)) / den
    return AveragingTable(kind=kind, t=cps, ratio=rms, limit=0.0, stderr=se, expected=expected,
                          replications=replications, extra={"g": weight.name, "lower": lower})
