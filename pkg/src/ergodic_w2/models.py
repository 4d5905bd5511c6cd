"""SDE model registry, sampled assumption checks and reference invariant laws.

A model is ``dX = B(X) dt + Sigma(X) dW`` with ``X`` in R^d and ``W`` in R^q.
Drift and diffusion are *batched*: ``drift`` maps an ``(n, d)`` array to
``(n, d)`` and ``diffusion`` maps ``(n, d)`` to ``(n, d, q)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .errors import DegeneratePair, InvalidParameter, NotConfluent, PreconditionError, UnknownModel
from .measures import DiscreteMeasure
from .rng import REFERENCE, generator, path_key

DEFAULT_BOX = (-5.0, 5.0)


@dataclass(frozen=True, eq=False)
class SDEModel:
    name: str
    d: int
    q: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    sigma_bounded: bool = False
    sigma_elliptic: bool = False
    analytic_invariant_known: bool = False
    params: dict = field(default_factory=dict)
    # exact confluence constant, when it is known in closed form
    alpha: Optional[float] = None
    # state-independent diffusion matrix (d, q); enables the additive-noise fast path
    constant_diffusion: Optional[np.ndarray] = None
    invariant_mean: Optional[np.ndarray] = None
    invariant_cov: Optional[np.ndarray] = None
    # sup_x ||Sigma(x)||_F when finite
    sigma_sup: Optional[float] = None

    @property
    def metadata(self) -> dict:
        return {
            "sigma_bounded": self.sigma_bounded,
            "sigma_elliptic": self.sigma_elliptic,
            "analytic_invariant_known": self.analytic_invariant_known,
        }

    def sample_invariant(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if not self.analytic_invariant_known:
            raise PreconditionError(f"model {self.name!r} has no closed-form invariant law")
        return rng.multivariate_normal(self.invariant_mean, self.invariant_cov, size=n, method="cholesky")

    def to_dict(self) -> dict:
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"name": self.name, "d": self.d, "q": self.q, "params": params, "metadata": self.metadata}


def _points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, d) if d > 1 else x.reshape(-1, 1)
    if x.shape[-1] != d:
        raise InvalidParameter(f"expected points of dimension {d}, got shape {x.shape}")
    return x


def _const_diffusion(matrix: np.ndarray):
    matrix = np.asarray(matrix, dtype=float)

    def diffusion(x):
        return np.broadcast_to(matrix, (x.shape[0],) + matrix.shape)

    return diffusion


def _positive(name, value):
    if not np.isfinite(value) or value <= 0:
        raise InvalidParameter(f"{name} must be > 0, got {value}")
    return float(value)


def ou(theta: float = 1.0, sigma: float = 1.0, d: int = 1) -> SDEModel:
    theta, sigma = _positive("theta", theta), _positive("sigma", sigma)
    d = int(d)
    var = sigma**2 / (2 * theta)
    return SDEModel(
        name="ou", d=d, q=d,
        drift=lambda x: -theta * x,
        diffusion=_const_diffusion(sigma * np.eye(d)),
        sigma_bounded=True, sigma_elliptic=True, analytic_invariant_known=True,
        params={"theta": theta, "sigma": sigma, "d": d},
        alpha=2 * theta,
        constant_diffusion=sigma * np.eye(d),
        invariant_mean=np.zeros(d), invariant_cov=var * np.eye(d),
        sigma_sup=sigma * np.sqrt(d),
    )


def cubic(theta: float = 1.0, sigma: float = 1.0, d: int = 1) -> SDEModel:
    theta, sigma = _positive("theta", theta), _positive("sigma", sigma)
    d = int(d)
    return SDEModel(
        name="cubic", d=d, q=d,
        drift=lambda x: -theta * x - x**3,
        diffusion=_const_diffusion(sigma * np.eye(d)),
        sigma_bounded=True, sigma_elliptic=True,
        params={"theta": theta, "sigma": sigma, "d": d},
        constant_diffusion=sigma * np.eye(d),
        sigma_sup=sigma * np.sqrt(d),
    )


def anisotropic_ou(A, sigma0) -> SDEModel:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sigma0 = np.atleast_2d(np.asarray(sigma0, dtype=float))
    d = A.shape[0]
    if A.shape != (d, d) or sigma0.shape[0] != d:
        raise InvalidParameter(f"A must be square and Sigma0 must have {d} rows")
    sym_min = np.linalg.eigvalsh(0.5 * (A + A.T)).min()
    if sym_min <= 0:
        raise InvalidParameter("symmetric part of A must be positive definite")
    # stationary covariance P solves A P + P A^T = Sigma0 Sigma0^T
    cov = linalg.solve_continuous_lyapunov(A, sigma0 @ sigma0.T)
    cov = 0.5 * (cov + cov.T)
    elliptic = np.linalg.eigvalsh(sigma0 @ sigma0.T).min() > 0
    return SDEModel(
        name="anisotropic_ou", d=d, q=sigma0.shape[1],
        drift=lambda x: -x @ A.T,
        diffusion=_const_diffusion(sigma0),
        sigma_bounded=True, sigma_elliptic=bool(elliptic), analytic_invariant_known=True,
        params={"A": A, "sigma0": sigma0},
        alpha=2 * float(sym_min),
        constant_diffusion=sigma0,
        invariant_mean=np.zeros(d), invariant_cov=cov,
        sigma_sup=float(np.linalg.norm(sigma0)),
    )


def bounded_sigma(theta: float = 1.0, sigma0: float = 1.0, amplitude: float = 0.5) -> SDEModel:
    """Scalar model with ``Sigma(x) = sigma0 * (1 + amplitude * sin x)``."""
    theta, sigma0 = _positive("theta", theta), _positive("sigma0", sigma0)
    amplitude = float(amplitude)
    if not 0 <= amplitude < 1:
        raise InvalidParameter(f"amplitude must lie in [0, 1), got {amplitude}")
    if theta <= 2 * (sigma0 * amplitude) ** 2:
        raise InvalidParameter("theta must exceed 2*(sigma0*amplitude)^2 for confluence")
    return SDEModel(
        name="bounded_sigma", d=1, q=1,
        drift=lambda x: -theta * x,
        diffusion=lambda x: (sigma0 * (1.0 + amplitude * np.sin(x)))[:, :, None],
        sigma_bounded=True, sigma_elliptic=True,
        params={"theta": theta, "sigma0": sigma0, "amplitude": amplitude},
        sigma_sup=sigma0 * (1 + amplitude),
    )


REGISTRY = {
    "ou": ou,
    "cubic": cubic,
    "anisotropic_ou": anisotropic_ou,
    "bounded_sigma": bounded_sigma,
}


def build_model(kind: str, **params) -> SDEModel:
    """Instantiate a registry model, e.g. ``build_model("ou", theta=1, sigma=1)``."""
    try:
        factory = REGISTRY[kind]
    except KeyError:
        raise UnknownModel(f"unknown model {kind!r}; choose from {sorted(REGISTRY)}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise InvalidParameter(f"bad parameters for {kind!r}: {exc}") from None


# --------------------------------------------------------------------------
# sampled assumption checks


@dataclass(frozen=True)
class PairSampler:
    """Uniform pairs in ``box^d`` plus a fraction of near-diagonal pairs."""

    box: tuple = DEFAULT_BOX
    local_fraction: float = 0.1
    local_radius: float = 1e-3
    seed: int = 0

    def sample(self, d: int, n: int, attempt: int = 0):
        rng = generator(self.seed, d, n, attempt)
        lo, hi = map(float, self.box)
        n_local = int(round(self.local_fraction * n))
        x = rng.uniform(lo, hi, size=(n, d))
        y = rng.uniform(lo, hi, size=(n, d))
        if n_local:
            y[:n_local] = x[:n_local] + rng.uniform(-self.local_radius, self.local_radius, size=(n_local, d))
        return x, y


@dataclass
class ConfluenceReport:
    alpha_hat: float
    lipschitz_hat: float
    worst_pair: list
    n_pairs: int
    violation: bool
    box: list

    def to_dict(self) -> dict:
        return {
            "alpha_hat": self.alpha_hat, "lipschitz_hat": self.lipschitz_hat,
            "worst_pair": self.worst_pair, "n_pairs": self.n_pairs,
            "violation": self.violation, "box": self.box,
        }


@dataclass
class HajekReport:
    k_prime: float
    alpha_prime: float

    def to_dict(self) -> dict:
        return {"k_prime": self.k_prime, "alpha_prime": self.alpha_prime}


def _pairs(model: SDEModel, sampler, n_pairs: int):
    if n_pairs < 1:
        raise InvalidParameter("n_pairs must be >= 1")
    if isinstance(sampler, tuple):
        x, y = (_points(p, model.d) for p in sampler)
        box = [float(min(x.min(), y.min())), float(max(x.max(), y.max()))]
        keep = np.any(x != y, axis=1)
        if not keep.any():
            raise DegeneratePair("every supplied pair has x == y")
        return x[keep], y[keep], box
    sampler = sampler or PairSampler()
    for attempt in range(5):
        x, y = sampler.sample(model.d, n_pairs, attempt)
        keep = np.any(x != y, axis=1)
        if keep.all():
            break
        if keep.any():
            # resample the degenerate ones once more from a fresh stream
            xr, yr = sampler.sample(model.d, int((~keep).sum()), attempt + 100)
            x[~keep], y[~keep] = xr, yr
            keep = np.any(x != y, axis=1)
            x, y = x[keep], y[keep]
            break
    else:
        raise DegeneratePair("sampler produced only degenerate pairs")
    return x, y, [float(v) for v in sampler.box]


def _ratios(model: SDEModel, x: np.ndarray, y: np.ndarray):
    dx = x - y
    db = model.drift(x) - model.drift(y)
    ds = model.diffusion(x) - model.diffusion(y)
    dist2 = np.einsum("nd,nd->n", dx, dx)
    fro2 = np.einsum("nij,nij->n", ds, ds)
    confluence = (2 * np.einsum("nd,nd->n", db, dx) + fro2) / dist2
    lipschitz = (np.linalg.norm(db, axis=1) + np.sqrt(fro2)) / np.sqrt(dist2)
    return confluence, lipschitz


def check_confluence(model: SDEModel, sampler=None, n_pairs: int = 10_000) -> ConfluenceReport:
    """Estimate the confluence constant as minus the largest sampled ratio.

    ``sampler`` is a :class:`PairSampler` or an explicit ``(x, y)`` tuple of point
    arrays; pairs with ``x == y`` are discarded.
    """
    x, y, box = _pairs(model, sampler, n_pairs)
    confluence, lipschitz = _ratios(model, x, y)
    worst = int(np.argmax(confluence))
    alpha_hat = float(-confluence[worst])
    return ConfluenceReport(
        alpha_hat=alpha_hat,
        lipschitz_hat=float(lipschitz.max()),
        worst_pair=[x[worst].tolist(), y[worst].tolist()],
        n_pairs=int(x.shape[0]),
        violation=bool(alpha_hat <= 0),
        box=box,
    )


def check_lipschitz(model: SDEModel, sampler=None, n_pairs: int = 10_000) -> float:
    x, y, _ = _pairs(model, sampler, n_pairs)
    return float(_ratios(model, x, y)[1].max())


@lru_cache(maxsize=256)
def _sampled_alpha(model: SDEModel) -> float:
    return check_confluence(model).alpha_hat


def model_alpha(model: SDEModel) -> float:
    """Confluence constant used downstream: analytic if known, else sampled."""
    alpha = model.alpha if model.alpha is not None else _sampled_alpha(model)
    if alpha <= 0:
        raise NotConfluent(f"model {model.name!r} is not confluent (alpha_hat = {alpha:.6g})")
    return float(alpha)


def _hajek_lhs(model: SDEModel, x: np.ndarray) -> np.ndarray:
    sig = model.diffusion(x)
    return 2 * np.einsum("nd,nd->n", model.drift(x), x) + np.einsum("nij,nij->n", sig, sig)


def hajek_constants(model: SDEModel, x_grid, alpha_prime: Optional[float] = None) -> HajekReport:
    """Smallest K' on the grid such that ``2(B(x)|x) + |Sigma(x)|_F^2 <= K' - alpha' |x|^2``.

    ``alpha'`` defaults to half the confluence constant. The grid maximum is
    padded by the largest nearest-neighbour variation of the slack function so
    the bound also covers points between grid nodes.
    """
    alpha = model_alpha(model)
    alpha_prime = alpha / 2 if alpha_prime is None else float(alpha_prime)
    if not 0 < alpha_prime <= alpha:
        raise InvalidParameter("alpha_prime must lie in (0, alpha]")
    x = _points(x_grid, model.d)
    if x.shape[0] == 0:
        raise InvalidParameter("x_grid is empty")
    slack = _hajek_lhs(model, x) + alpha_prime * np.einsum("nd,nd->n", x, x)
    k_prime = float(slack.max())
    if x.shape[0] > 1:
        from scipy.spatial import cKDTree

        _, nn = cKDTree(x).query(x, k=2)
        k_prime += float(np.abs(slack - slack[nn[:, 1]]).max())
    k_prime = max(k_prime, 0.0)
    assert np.all(slack <= k_prime + 1e-12)
    return HajekReport(k_prime=k_prime, alpha_prime=alpha_prime)


def reference_invariant(model: SDEModel, n_samples: int, burn_in: Optional[float] = None,
                        seed: int = 0, dt: float = 1e-2) -> DiscreteMeasure:
    """Equal-weight sample of the invariant law.

    Exact draws when the law is known in closed form; otherwise ``n_samples``
    independent Euler endpoints after ``burn_in >= 10/alpha`` started from 0.
    """
    alpha = model_alpha(model)
    if n_samples < 1:
        raise InvalidParameter("n_samples must be >= 1")
    if model.analytic_invariant_known:
        pts = model.sample_invariant(generator(seed, 7), n_samples)
    else:
        from .simulate import IntegratorConfig, endpoints

        burn_in = 10.0 / alpha if burn_in is None else float(burn_in)
        if burn_in < 10.0 / alpha - 1e-12:
            raise PreconditionError(f"burn_in must be >= 10/alpha = {10 / alpha:.4g}")
        cfg = IntegratorConfig(dt=dt, seed=seed)
        pts = endpoints(model, np.zeros((n_samples, model.d)), burn_in, cfg,
                        keys=[path_key(seed, r, REFERENCE) for r in range(n_samples)])
    return DiscreteMeasure.from_samples(pts)
