import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from ergodic_w2.errors import DegeneratePair, InvalidParameter, NotConfluent, PreconditionError, UnknownModel
from ergodic_w2.models import (
    PairSampler,
    SDEModel,
    anisotropic_ou,
    bounded_sigma,
    build_model,
    check_confluence,
    check_lipschitz,
    cubic,
    hajek_constants,
    model_alpha,
    ou,
    reference_invariant,
)

thetas = st.floats(0.1, 5.0)


@given(theta=thetas, sigma=st.floats(0.1, 3.0), d=st.integers(1, 3))
def test_ou_confluence_is_exact(theta, sigma, d):
    # linear drift with additive noise: every pair has ratio exactly -2 theta
    rep = check_confluence(ou(theta, sigma, d), n_pairs=500)
    assert rep.alpha_hat == pytest.approx(2 * theta, rel=1e-10)
    assert not rep.violation
    assert check_lipschitz(ou(theta, sigma, d), n_pairs=500) == pytest.approx(theta, rel=1e-10)


def test_cubic_confluence_at_least_linear_part():
    rep = check_confluence(cubic(1.0, 1.0))
    assert rep.alpha_hat >= 2.0 - 1e-9
    # near-diagonal pairs around 0 make the bound nearly tight
    assert rep.alpha_hat < 2.01


def test_anisotropic_alpha_and_covariance():
    A = np.array([[2.0, 0.5], [0.0, 1.0]])
    s0 = np.array([[1.0, 0.0], [0.3, 0.7]])
    m = anisotropic_ou(A, s0)
    lam = np.linalg.eigvalsh(0.5 * (A + A.T)).min()
    assert m.alpha == pytest.approx(2 * lam)
    assert check_confluence(m).alpha_hat >= m.alpha - 1e-9
    P = m.invariant_cov
    assert np.allclose(A @ P + P @ A.T, s0 @ s0.T, atol=1e-12)
    with pytest.raises(InvalidParameter):
        anisotropic_ou(-A, s0)


def test_bounded_sigma_confluence_and_domain():
    m = bounded_sigma(1.0, 1.0, 0.5)
    rep = check_confluence(m)
    # 2(B(x)-B(y))(x-y) + (s0 a)^2 (sin x - sin y)^2 <= (-2 + 0.25)|x-y|^2
    assert rep.alpha_hat >= 2 - 0.25 - 1e-9
    with pytest.raises(InvalidParameter):
        bounded_sigma(0.4, 1.0, 0.5)
    with pytest.raises(InvalidParameter):
        bounded_sigma(1.0, 1.0, 1.0)


@given(seed=st.integers(0, 1000))
def test_confluence_symmetric_in_pairs(seed):
    g = np.random.default_rng(seed)
    x, y = g.uniform(-3, 3, (50, 1)), g.uniform(-3, 3, (50, 1))
    m = bounded_sigma()
    a = check_confluence(m, (x, y)).alpha_hat
    b = check_confluence(m, (y, x)).alpha_hat
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)


def test_explicit_pairs_and_degenerate():
    m = ou()
    x = np.zeros((3, 1))
    with pytest.raises(DegeneratePair):
        check_confluence(m, (x, x))


def test_non_confluent_model():
    m = SDEModel(name="repulsive", d=1, q=1, drift=lambda x: x,
                 diffusion=lambda x: np.ones((x.shape[0], 1, 1)))
    rep = check_confluence(m, n_pairs=200)
    assert rep.violation and rep.alpha_hat < 0
    with pytest.raises(NotConfluent):
        model_alpha(m)


def test_registry():
    assert build_model("ou", theta=2.0).params["theta"] == 2.0
    with pytest.raises(UnknownModel):
        build_model("nope")
    with pytest.raises(InvalidParameter):
        build_model("ou", bogus=1)
    with pytest.raises(InvalidParameter):
        ou(theta=0.0)


def test_pair_sampler_reproducible():
    s = PairSampler(seed=4)
    a, b = s.sample(2, 100), s.sample(2, 100)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    x, y = a
    assert np.all(np.abs(x) <= 5) and np.all(np.abs(y[:10] - x[:10]) <= 1e-3)


def test_hajek_constants_ou():
    # 2(B(x)|x) + |Sigma|_F^2 + theta |x|^2 = sigma^2 d - theta |x|^2: max sigma^2 d at x = 0
    m = ou(1.0, 1.5)
    grid = np.linspace(-5, 5, 1001)[:, None]
    rep = hajek_constants(m, grid)
    assert rep.alpha_prime == pytest.approx(1.0)
    assert rep.k_prime >= 1.5**2
    # padding is the largest neighbour variation of the slack, theta (5^2 - 4.99^2) ~ 0.1
    assert rep.k_prime <= 1.5**2 + 0.1 + 1e-9
    with pytest.raises(InvalidParameter):
        hajek_constants(m, grid, alpha_prime=5.0)


def test_reference_invariant_exact_and_simulated():
    ref = reference_invariant(ou(1.0, 1.0), 20000, seed=1)
    assert abs(np.dot(ref.weights, ref.locations[:, 0] ** 2) - 0.5) < 0.03
    m = cubic()
    with pytest.raises(PreconditionError):
        reference_invariant(m, 10, burn_in=1.0)
    sim = reference_invariant(m, 2000, seed=0)
    assert sim.size == 2000 and abs(np.dot(sim.weights, sim.locations[:, 0])) < 0.1


def test_sample_invariant_requires_closed_form():
    with pytest.raises(PreconditionError):
        cubic().sample_invariant(np.random.default_rng(0), 10)


@pytest.mark.parametrize("model", [ou(), cubic(), anisotropic_ou([[1.0, 0.2], [0.0, 2.0]], np.eye(2)),
                                   bounded_sigma()], ids=lambda m: m.name)
def test_every_registry_model_certifies_confluence(model):
    rep = check_confluence(model, n_pairs=10_000)
    assert rep.alpha_hat > 0 and rep.box == [-5.0, 5.0] and rep.n_pairs == 10_000


def test_lipschitz_symmetric_in_pairs(gen):
    x, y = gen.uniform(-5, 5, (300, 1)), gen.uniform(-5, 5, (300, 1))
    m = cubic()
    assert check_lipschitz(m, (x, y)) == pytest.approx(check_lipschitz(m, (y, x)), rel=1e-12)


@pytest.mark.parametrize("model", [cubic(), bounded_sigma()], ids=lambda m: m.name)
def test_hajek_bound_holds_on_fresh_points(model, gen):
    rep = hajek_constants(model, np.linspace(-5, 5, 2001)[:, None])
    x = gen.uniform(-5, 5, (10_000, 1))
    sig = model.diffusion(x)
    lhs = 2 * np.sum(model.drift(x) * x, axis=1) + np.einsum("nij,nij->n", sig, sig)
    assert np.all(lhs <= rep.k_prime - rep.alpha_prime * x[:, 0] ** 2)
