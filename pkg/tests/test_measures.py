import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import integrate as quadrature

from ergodic_w2.errors import DimensionMismatch, EmptyTrajectory, InvalidParameter
from ergodic_w2.measures import (
    A_LADDER,
    DiscreteMeasure,
    Grid,
    MollifierKernel,
    convolve,
    empirical_moment,
    mollified_density,
    occupation_measure,
    phi_eps,
)
from ergodic_w2.models import ou
from ergodic_w2.simulate import IntegratorConfig, integrate

BASES = ("triangle_product", "epanechnikov_product")
finite = st.floats(-10, 10, allow_nan=False)


def test_measure_validation():
    with pytest.raises(InvalidParameter):
        DiscreteMeasure(np.zeros((2, 1)), np.array([0.5, 0.6]))
    with pytest.raises(InvalidParameter):
        DiscreteMeasure(np.zeros((2, 1)), np.array([1.5, -0.5]))
    with pytest.raises(InvalidParameter):
        DiscreteMeasure(np.array([[np.inf]]), np.array([1.0]))
    with pytest.raises(InvalidParameter):
        DiscreteMeasure(np.zeros((0, 1)), np.zeros(0))


@given(hnp.arrays(float, st.integers(1, 40), elements=st.integers(-3, 3).map(float)))
def test_duplicate_atoms_merge_and_conserve_mass(values):
    m = DiscreteMeasure.from_samples(values[:, None])
    assert m.size == np.unique(values).size
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert m.expect(lambda x: x[:, 0]) == pytest.approx(values.mean(), abs=1e-12)


@given(hnp.arrays(float, st.integers(5, 200), elements=finite), st.integers(1, 30))
def test_thin_keeps_mass_and_support(values, max_atoms):
    m = DiscreteMeasure.from_samples(values[:, None])
    t = m.thin(max_atoms, seed=1)
    assert t.size <= max_atoms or t is m
    assert t.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert set(t.locations[:, 0]).issubset(set(values))


def test_from_weights_and_shift():
    m = DiscreteMeasure.from_weights([0.0, 1.0, 2.0], [1.0, 0.0, 3.0])
    assert m.size == 2 and np.allclose(m.weights, [0.25, 0.75])
    assert m.shifted(1.0).expect(lambda x: x[:, 0]) == pytest.approx(m.expect(lambda x: x[:, 0]) + 1)


def test_occupation_measure_left_point():
    tr = integrate(ou(), [0.0], 1.0, IntegratorConfig(dt=0.1, seed=2))
    nu = occupation_measure(tr)
    assert nu.horizon == pytest.approx(1.0)
    vals = np.sort(tr.states[:-1, 0])
    assert np.allclose(np.sort(nu.locations[:, 0]), vals)
    assert np.allclose(nu.weights, 0.1)

    class Short:
        times = np.array([0.0])
        states = np.zeros((1, 1))

    with pytest.raises(EmptyTrajectory):
        occupation_measure(Short())


@pytest.mark.parametrize("base", BASES)
def test_kernel_constants_match_quadrature(base):
    k = MollifierKernel(eps=1.0, base=base)
    f = lambda u: float(k(np.array([[u]]))[0])
    mass = quadrature.quad(f, -1, 1, points=[0])[0]
    second = quadrature.quad(lambda u: u * u * f(u), -1, 1, points=[0])[0]
    assert mass == pytest.approx(1.0, abs=1e-10)
    assert second == pytest.approx(k.zeta_sq, abs=1e-10)
    u = np.linspace(-1, 1, 20001)[:, None]
    vals = k(u)
    assert vals.max() == pytest.approx(k.sup, rel=1e-6)
    slope = np.abs(np.diff(vals)) / np.diff(u[:, 0])
    assert slope.max() <= k.lip + 1e-6


@pytest.mark.parametrize("base", BASES)
def test_kernel_2d_mass_and_scaling(base):
    eps = 0.3
    k = MollifierKernel(eps=eps, d=2, base=base)
    grid = Grid((-eps, -eps), (eps, eps), eps / 200)
    assert grid.integrate(k(grid.points())) == pytest.approx(1.0, abs=1e-3)
    assert k.sup == pytest.approx((1.0 if base == "triangle_product" else 0.75) ** 2 / eps**2)


def test_kernel_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        MollifierKernel(eps=0)
    with pytest.raises(InvalidParameter):
        MollifierKernel(eps=1, base="gauss")
    with pytest.raises(InvalidParameter):
        MollifierKernel(eps=1).discretize(3)


@pytest.mark.parametrize("base", BASES)
@pytest.mark.parametrize("d", [1, 2])
def test_discretized_kernel_is_convex_order_dominated(base, d):
    k = MollifierKernel(eps=0.4, d=d, base=base)
    m = k.discretize(8)
    assert m.weights.sum() == pytest.approx(1.0)
    assert np.allclose(m.weights @ m.locations, 0.0, atol=1e-14)
    second = float(m.weights @ np.sum(m.locations**2, axis=1))
    assert second <= k.eps**2 * k.zeta_sq
    # refinement approaches the continuous second moment
    fine = k.discretize(64)
    assert float(fine.weights @ np.sum(fine.locations**2, axis=1)) > second


@given(hnp.arrays(float, st.integers(1, 20), elements=finite), hnp.arrays(float, st.integers(1, 5),
                                                                          elements=finite))
def test_convolution_mass_and_mean(a, b):
    ma, mb = DiscreteMeasure.from_samples(a[:, None]), DiscreteMeasure.from_samples(b[:, None])
    c = convolve(ma, mb)
    assert c.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert c.expect(lambda x: x[:, 0]) == pytest.approx(a.mean() + b.mean(), abs=1e-9)


def test_convolve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        convolve(DiscreteMeasure.from_samples(np.zeros((2, 1))), DiscreteMeasure.from_samples(np.zeros((2, 2))))


def test_mollified_density_and_phi(gen):
    x = gen.normal(size=(50, 1))
    nu = DiscreteMeasure.from_samples(x)
    mu = DiscreteMeasure.from_samples(gen.normal(size=(80, 1)) + 0.5)
    k = MollifierKernel(eps=0.25)
    grid = Grid.covering([nu, mu], k.eps)
    g = mollified_density(nu, k)
    assert grid.integrate(g(grid.points())) == pytest.approx(1.0, abs=1e-3)
    assert g.lip_bound == k.lip
    pts = grid.points()
    phi = phi_eps(pts, x[:, 0], mu, k)
    assert phi.shape == (pts.shape[0], 50)
    # averaging phi over the atoms of nu gives the density difference; each column integrates to 0
    assert np.allclose(phi @ nu.weights, g(pts) - mollified_density(mu, k)(pts), atol=1e-10)
    assert np.allclose(grid.cell_volume * phi.sum(axis=0), 0.0, atol=1e-3)
    assert phi_eps(pts, 0.1, mu, k).shape == (pts.shape[0],)
    with pytest.raises(DimensionMismatch):
        mollified_density(nu, MollifierKernel(eps=0.2, d=2))


def test_empirical_moment_gaussian(gen):
    m = DiscreteMeasure.from_samples(gen.normal(size=(20000, 1)))
    rep = empirical_moment(m, 2, lam=0.25)
    est, se = rep.p_moments[2]
    assert abs(est - 1) < 4 * se + 1e-3 and se > 0
    lam, e_exp, se_exp = rep.exp_moment
    # E exp(Z^2 / 4) = (1 - 1/2)^(-1/2)
    assert abs(e_exp - np.sqrt(2)) < 5 * se_exp
    assert rep.a_certified in (0.0,) + A_LADDER and rep.a_certified >= 1.0
    with pytest.raises(InvalidParameter):
        empirical_moment(m, -1)
    with pytest.raises(InvalidParameter):
        empirical_moment(m, 2, lam=0)


def test_grid_integrates_polynomials():
    g = Grid((0.0,), (2.0,), 0.001)
    pts = g.points()
    assert g.integrate(np.ones(pts.shape[0])) == pytest.approx(2.0)
    assert g.integrate(pts[:, 0] ** 2) == pytest.approx(8 / 3, rel=1e-6)


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.1])
@pytest.mark.parametrize("base", BASES)
def test_kernel_lipschitz_law(eps, base):
    k = MollifierKernel(eps=eps, base=base)
    u = np.linspace(-eps, eps, 200001)[:, None]
    vals = k(u)
    slope = np.max(np.abs(np.diff(vals)) / (u[1, 0] - u[0, 0]))
    assert slope == pytest.approx(k.lip, rel=0.05)
    assert k.lip == pytest.approx(eps ** -2 * k.lip_rho)


@pytest.mark.parametrize("f", [lambda x: x[:, 0], lambda x: x[:, 0] ** 2])
def test_record_stride_changes_time_average_by_order_dt(f):
    m, dt = ou(), 1e-3
    fine = occupation_measure(integrate(m, [0.5], 20.0, IntegratorConfig(dt=dt, record_stride=1)))
    for stride in (2, 4):
        coarse = occupation_measure(integrate(m, [0.5], 20.0, IntegratorConfig(dt=dt, record_stride=stride)))
        assert abs(coarse.expect(f) - fine.expect(f)) < 20 * stride * dt
