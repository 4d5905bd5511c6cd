"""Closed-form rate exponents for the occupation measure in W2."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from ..errors import InvalidParameter


@dataclass(frozen=True)
class TheoreticalRates:
    d: int
    a: float
    l2_exponent: float
    as_exponent: float
    exp_l2_exponent: float
    exp_l2_log_power: float
    exp_as_exponent: float

    def to_dict(self) -> dict:
        return asdict(self)


def theoretical_exponents(d: int, a: float) -> TheoreticalRates:
    """Rate exponents for dimension ``d`` and moment order ``2 + a``.

    ``l2_exponent`` and ``as_exponent`` apply under a finite ``2 + a`` moment;
    the ``exp_*`` entries apply when the diffusion is bounded (Gaussian-type
    moments) and are the ``a -> inf`` limits of the former.
    """
    if int(d) != d or d < 1:
        raise InvalidParameter("d must be a positive integer")
    if not (a > 0 and math.isfinite(a)):
        raise InvalidParameter("a must be a finite positive number")
    d = int(d)
    a = float(a)
    l2 = a / (2 * (2 * (d + 2) + a * (d + 3)))
    zeta = a * a / (2 * (2 + a) * (2 * (d + 2) + (d + 3) * (a + d)))
    return TheoreticalRates(
        d=d, a=a, l2_exponent=l2, as_exponent=zeta,
        exp_l2_exponent=1 / (2 * (d + 3)),
        exp_l2_log_power=(d + 2) / (2 * (d + 3)),
        exp_as_exponent=1 / (2 * (d + 3)),
    )


def smoothing_schedule(n: int, d: int, lam: float = 1.0):
    """Bandwidth and truncation radius for integer time ``n >= 2`` (bounded diffusion).

    Exploratory preset only: ``eps_n = n^(-1/(2(d+3))) (log n / (d+3))^(1/2)``
    and ``R_n = 2 (log n / (min(lam, 1) (d+3)))^(1/2)``.
    """
    if n < 2:
        raise InvalidParameter("n must be >= 2")
    if lam <= 0:
        raise InvalidParameter("lam must be > 0")
    log_n = math.log(n)
    eps = n ** (-1 / (2 * (d + 3))) * math.sqrt(log_n / (d + 3))
    radius = 2 * math.sqrt(log_n / (min(lam, 1.0) * (d + 3)))
    return eps, radius
