"""Discrete and occupation measures, compactly supported mollifiers, moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyTrajectory, InvalidParameter
from .rng import generator

MERGE_TOL = 1e-12
MASS_TOL = 1e-12


def _merge(locations: np.ndarray, weights: np.ndarray):
    """Merge atoms whose coordinates agree to within ``MERGE_TOL``."""
    if locations.shape[0] < 2:
        return locations, weights
    order = np.lexsort(locations.T[::-1])
    loc, w = locations[order], weights[order]
    close = np.all(np.abs(np.diff(loc, axis=0)) <= MERGE_TOL, axis=1)
    if not close.any():
        return locations, weights
    starts = np.concatenate(([True], ~close))
    group = np.cumsum(starts) - 1
    merged_w = np.bincount(group, weights=w)
    return loc[starts], merged_w


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Atoms ``locations[i]`` (shape ``(n, d)``) carrying ``weights[i] > 0``."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if loc.shape[0] != w.shape[0] or loc.shape[0] == 0:
            raise InvalidParameter("need one positive weight per atom and at least one atom")
        if not np.all(np.isfinite(loc)):
            raise InvalidParameter("atom locations must be finite")
        if np.any(w <= 0):
            raise InvalidParameter("weights must be > 0")
        if abs(w.sum() - 1.0) > MASS_TOL * max(1.0, np.sqrt(w.size)):
            raise InvalidParameter(f"weights sum to {w.sum()!r}, not 1")
        loc, w = _merge(loc, w)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_samples(cls, samples) -> "DiscreteMeasure":
        samples = np.asarray(samples, dtype=float)
        n = samples.shape[0]
        return cls(samples, np.full(n, 1.0 / n))

    @classmethod
    def from_weights(cls, locations, weights) -> "DiscreteMeasure":
        """Build from unnormalised nonnegative weights; zero-weight atoms are dropped."""
        loc = np.asarray(locations, dtype=float)
        if loc.ndim == 1:
            loc = loc[:, None]
        w = np.asarray(weights, dtype=float).ravel()
        keep = w > 0
        return cls(loc[keep], w[keep] / w[keep].sum())

    @property
    def d(self) -> int:
        return self.locations.shape[1]

    @property
    def size(self) -> int:
        return self.locations.shape[0]

    def expect(self, f) -> float:
        return float(np.dot(self.weights, f(self.locations)))

    def shifted(self, c) -> "DiscreteMeasure":
        return DiscreteMeasure(self.locations + np.asarray(c, dtype=float), self.weights)

    def thin(self, max_atoms: int, seed: int = 0) -> "DiscreteMeasure":
        """Systematic resampling to at most ``max_atoms`` equal-mass atoms."""
        if self.size <= max_atoms:
            return self
        u = (np.arange(max_atoms) + generator(seed, 11).uniform()) / max_atoms
        cdf = np.cumsum(self.weights)
        idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), self.size - 1)
        counts = np.bincount(idx, minlength=self.size)
        keep = counts > 0
        return DiscreteMeasure(self.locations[keep], counts[keep] / max_atoms)

    def to_rows(self):
        return np.column_stack([self.locations, self.weights])


@dataclass(frozen=True, eq=False)
class OccupationMeasure(DiscreteMeasure):
    """Time average of Dirac masses along a path observed up to ``horizon``."""

    horizon: float = 0.0


def occupation_measure(traj) -> OccupationMeasure:
    """Left-point quadrature of the path's occupation measure.

    Each recorded state except the last gets weight ``dt_rec / t``.
    """
    states = np.asarray(traj.states, dtype=float)
    times = np.asarray(traj.times, dtype=float)
    if states.shape[0] < 2:
        raise EmptyTrajectory("an occupation measure needs at least two recorded points")
    steps = np.diff(times)
    horizon = float(times[-1] - times[0])
    return OccupationMeasure(states[:-1], steps / steps.sum(), horizon=horizon)


# --------------------------------------------------------------------------
# mollifiers

_BASES = ("triangle_product", "epanechnikov_product")


def _base_1d(base: str, u: np.ndarray) -> np.ndarray:
    a = np.abs(u)
    if base == "triangle_product":
        return np.clip(1.0 - a, 0.0, None)
    return 0.75 * np.clip(1.0 - u * u, 0.0, None)


def _cell_moments(base: str, a: np.ndarray, b: np.ndarray):
    """Mass and first moment of the 1-D base kernel on cells ``[a, b]`` inside [-1, 1].

    Cells must not straddle 0 (the triangle kernel has a kink there).
    """
    if base == "triangle_product":
        s = np.sign(a + b)  # density 1 - s*u on the cell
        mass = (b - a) - s * (b**2 - a**2) / 2
        first = (b**2 - a**2) / 2 - s * (b**3 - a**3) / 3
    else:
        mass = 0.75 * ((b - a) - (b**3 - a**3) / 3)
        first = 0.75 * ((b**2 - a**2) / 2 - (b**4 - a**4) / 4)
    return mass, first


@dataclass(frozen=True)
class MollifierKernel:
    """Product kernel ``rho`` on [-1, 1]^d with bandwidth ``eps``.

    ``rho_eps(u) = eps^-d rho(u / eps)``; ``zeta_sq`` is ``int |u|^2 rho(u) du``.
    """

    eps: float
    d: int = 1
    base: str = "triangle_product"

    def __post_init__(self):
        if self.base not in _BASES:
            raise InvalidParameter(f"unknown mollifier base {self.base!r}; choose from {_BASES}")
        if not self.eps > 0:
            raise InvalidParameter("eps must be > 0")
        if self.d < 1:
            raise InvalidParameter("d must be >= 1")

    @property
    def zeta_sq(self) -> float:
        per_axis = 1.0 / 6.0 if self.base == "triangle_product" else 0.2
        return self.d * per_axis

    @property
    def lip_rho(self) -> float:
        """Euclidean Lipschitz constant of the unscaled kernel."""
        if self.base == "triangle_product":
            return float(np.sqrt(self.d))
        return 1.5 * 0.75 ** (self.d - 1)

    @property
    def lip(self) -> float:
        return self.eps ** -(self.d + 1) * self.lip_rho

    @property
    def sup(self) -> float:
        peak = 1.0 if self.base == "triangle_product" else 0.75
        return self.eps ** -self.d * peak**self.d

    def rho(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.prod(_base_1d(self.base, u), axis=-1)

    def __call__(self, u) -> np.ndarray:
        """Evaluate ``rho_eps`` on points ``u`` of shape ``(..., d)``."""
        return self.eps ** -self.d * self.rho(np.asarray(u, dtype=float) / self.eps)

    def discretize(self, cells_per_axis: int = 16) -> DiscreteMeasure:
        """Cell-conditional-mean atoms of ``eps * zeta``.

        Each cell of a uniform partition of [-eps, eps] is replaced by its mass
        at its barycentre. The result is dominated by ``rho_eps`` in convex
        order, so its second moment never exceeds ``eps^2 * zeta_sq``.
        """
        if cells_per_axis < 2 or cells_per_axis % 2:
            raise InvalidParameter("cells_per_axis must be an even integer >= 2")
        edges = np.linspace(-1.0, 1.0, cells_per_axis + 1)
        mass, first = _cell_moments(self.base, edges[:-1], edges[1:])
        atoms_1d, mass_1d = first / mass, mass / mass.sum()
        grids = np.meshgrid(*([atoms_1d] * self.d), indexing="ij")
        weights = np.prod(np.meshgrid(*([mass_1d] * self.d), indexing="ij"), axis=0)
        loc = np.stack([g.ravel() for g in grids], axis=1) * self.eps
        return DiscreteMeasure(loc, weights.ravel())


def convolve(measure: DiscreteMeasure, noise: DiscreteMeasure) -> DiscreteMeasure:
    """Law of ``X + Y`` for independent ``X ~ measure`` and ``Y ~ noise``."""
    if measure.d != noise.d:
        raise DimensionMismatch("dimensions differ")
    loc = (measure.locations[:, None, :] + noise.locations[None, :, :]).reshape(-1, measure.d)
    w = np.outer(measure.weights, noise.weights).ravel()
    return DiscreteMeasure(loc, w / w.sum())


def _kernel_sum(points: np.ndarray, atoms: np.ndarray, weights: np.ndarray, kernel: MollifierKernel):
    """``sum_i w_i rho_eps(points - atoms_i)`` using only atoms within the support."""
    out = np.zeros(points.shape[0])
    if points.shape[0] == 0:
        return out
    pairs = cKDTree(points).sparse_distance_matrix(cKDTree(atoms), kernel.eps, p=np.inf, output_type="ndarray")
    if pairs.size == 0:
        return out
    i, j = pairs["i"], pairs["j"]
    vals = weights[j] * kernel(points[i] - atoms[j])
    np.add.at(out, i, vals)
    return out


def _as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        x = x.reshape(-1, d) if d > 1 or x.ndim == 0 else x.reshape(-1, 1)
    if x.shape[1] != d:
        raise DimensionMismatch(f"points have dimension {x.shape[1]}, expected {d}")
    return x


@dataclass(frozen=True, eq=False)
class MollifiedDensity:
    """Density of ``measure * rho_eps``; callable on ``(m, d)`` point arrays."""

    measure: DiscreteMeasure
    kernel: MollifierKernel

    def __call__(self, xi) -> np.ndarray:
        xi = _as_points(xi, self.measure.d)
        return _kernel_sum(xi, self.measure.locations, self.measure.weights, self.kernel)

    @property
    def lip_bound(self) -> float:
        return self.kernel.lip

    def support_box(self):
        return (self.measure.locations.min(axis=0) - self.kernel.eps,
                self.measure.locations.max(axis=0) + self.kernel.eps)


def mollified_density(measure: DiscreteMeasure, kernel: MollifierKernel) -> MollifiedDensity:
    if kernel.d != measure.d:
        raise DimensionMismatch(f"kernel dimension {kernel.d} != measure dimension {measure.d}")
    return MollifiedDensity(measure, kernel)


def phi_eps(xi, x, mu_ref: DiscreteMeasure, kernel: MollifierKernel) -> np.ndarray:
    """Centred kernel ``rho_eps(xi - x) - int rho_eps(xi - y) mu_ref(dy)``.

    ``xi`` has shape ``(m, d)``; a single ``x`` gives shape ``(m,)`` and
    ``k`` points ``x`` give ``(m, k)``.
    """
    if kernel.d != mu_ref.d:
        raise DimensionMismatch("kernel and reference measure dimensions differ")
    xi = _as_points(xi, mu_ref.d)
    x_arr = np.asarray(x, dtype=float)
    single = x_arr.ndim <= 1 and (mu_ref.d > 1 or x_arr.ndim == 0)
    x_pts = _as_points(x_arr, mu_ref.d)
    ref = _kernel_sum(xi, mu_ref.locations, mu_ref.weights, kernel)
    vals = kernel(xi[:, None, :] - x_pts[None, :, :]) - ref[:, None]
    return vals[:, 0] if single else vals


# --------------------------------------------------------------------------
# moments

A_LADDER = (0.5, 1.0, 2.0, 4.0)


@dataclass
class MomentReport:
    p_moments: dict
    exp_moment: Optional[tuple] = None
    a_certified: float = 0.0
    n_atoms: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "p_moments": {str(p): list(v) for p, v in self.p_moments.items()},
            "exp_moment": list(self.exp_moment) if self.exp_moment else None,
            "a_certified": self.a_certified,
        }


def _weighted_stats(values: np.ndarray, weights: np.ndarray, rng, n_boot: int):
    est = float(np.dot(weights, values))
    idx = rng.choice(values.size, size=(n_boot, values.size), p=weights)
    boot = values[idx].mean(axis=1)
    return est, float(boot.std(ddof=1))


def empirical_moment(measure: DiscreteMeasure, p: float, lam: Optional[float] = None,
                     n_boot: int = 200, seed: int = 0) -> MomentReport:
    """``int |y|^p`` (and optionally ``int exp(lam |y|^2)``) with bootstrap stderr.

    ``a_certified`` is the largest ``a`` in ``A_LADDER`` whose ``2 + a`` moment
    on a random half of the atoms agrees with the full estimate to 20%.
    """
    if p < 0:
        raise InvalidParameter("p must be >= 0")
    rng = generator(seed, 13)
    norms = np.linalg.norm(measure.locations, axis=1)
    w = measure.weights
    n_boot = n_boot if measure.size > 1 else 2
    if p == 0:
        moments = {p: (1.0, 0.0)}
    else:
        moments = {p: _weighted_stats(norms**p, w, rng, n_boot)}
    exp_moment = None
    if lam is not None:
        if lam <= 0:
            raise InvalidParameter("lambda must be > 0")
        est, se = _weighted_stats(np.exp(lam * norms**2), w, rng, n_boot)
        exp_moment = (float(lam), est, se)

    # atoms may be sorted after merging, so the half sample is drawn at random
    half = rng.permutation(measure.size)[:max(measure.size // 2, 1)]
    w_half = w[half] / w[half].sum()
    a_cert = 0.0
    for a in A_LADDER:
        full = float(np.dot(w, norms ** (2 + a)))
        part = float(np.dot(w_half, norms[half] ** (2 + a)))
        if full > 0 and abs(part / full - 1.0) <= 0.2:
            a_cert = a
        else:
            break
    return MomentReport(p_moments=moments, exp_moment=exp_moment, a_certified=a_cert, n_atoms=measure.size)


def default_exp_lambda(model, alpha: float) -> float:
    """Exponential-moment order used for bounded-diffusion models."""
    if model.sigma_sup is None:
        raise InvalidParameter("exponential moments need a bounded diffusion")
    return alpha / (4.0 * model.sigma_sup**2)


# --------------------------------------------------------------------------
# quadrature grids


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid of cell centres on ``[lo, hi]`` with given spacing."""

    lo: tuple
    hi: tuple
    spacing: float

    @property
    def axes(self):
        out = []
        for a, b in zip(self.lo, self.hi):
            n = max(int(np.ceil((b - a) / self.spacing)), 1)
            h = (b - a) / n
            out.append(a + h * (np.arange(n) + 0.5))
        return out

    @property
    def cell_volume(self) -> float:
        return float(np.prod([ax[1] - ax[0] if ax.size > 1 else (b - a)
                              for ax, a, b in zip(self.axes, self.lo, self.hi)]))

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(values) * self.cell_volume)

    @classmethod
    def covering(cls, measures, eps: float, spacing: Optional[float] = None, pad: Optional[float] = None):
        """Joint support hull padded by ``2 eps`` with spacing ``eps / 8``."""
        spacing = eps / 8 if spacing is None else spacing
        pad = 2 * eps if pad is None else pad
        lo = np.min([m.locations.min(axis=0) for m in measures], axis=0) - pad
        hi = np.max([m.locations.max(axis=0) for m in measures], axis=0) + pad
        return cls(tuple(lo.tolist()), tuple(hi.tolist()), float(spacing))
