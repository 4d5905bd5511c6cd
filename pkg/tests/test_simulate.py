import numpy as np
import pytest

from ergodic_w2 import rng
from ergodic_w2.errors import DegenerateStart, InvalidParameter, NonFiniteState, PreconditionError, Unstable
from ergodic_w2.models import SDEModel, bounded_sigma, check_confluence, cubic, ou
from ergodic_w2.simulate import (
    IntegratorConfig,
    em_steps,
    endpoints,
    integrate,
    integrate_batch,
    regularized_model,
    simulate_coupled,
    warm_start,
)


def test_config_validation():
    with pytest.raises(InvalidParameter):
        IntegratorConfig(dt=0)
    with pytest.raises(InvalidParameter):
        IntegratorConfig(record_stride=0)
    with pytest.raises(InvalidParameter):
        IntegratorConfig(scheme="milstein")


def test_integrate_is_deterministic_and_batch_independent():
    m, cfg = bounded_sigma(), IntegratorConfig(dt=1e-2, seed=3)
    a = integrate(m, [0.2], 5.0, cfg, replication=2)
    b = integrate(m, [0.2], 5.0, cfg, replication=2)
    assert np.array_equal(a.states, b.states)
    _, batch, _ = integrate_batch(m, np.full((4, 1), 0.2), 5.0, cfg)
    assert np.array_equal(batch[2], a.states)


def test_record_stride_subsamples_the_same_path():
    m = cubic()
    full = integrate(m, [1.0], 2.0, IntegratorConfig(dt=1e-2))
    thin = integrate(m, [1.0], 2.0, IntegratorConfig(dt=1e-2, record_stride=10))
    assert np.array_equal(thin.states, full.states[::10])
    assert np.allclose(thin.times, full.times[::10])


def test_ou_euler_moments_match_recursion():
    # Euler OU is the AR(1) x <- (1 - theta dt) x + sigma dW
    theta, sigma, dt, n, R = 1.0, 0.8, 0.05, 40, 20000
    m = ou(theta, sigma)
    x_end = endpoints(m, np.full((R, 1), 2.0), n * dt, IntegratorConfig(dt=dt, seed=1))[:, 0]
    c = 1 - theta * dt
    mean = 2.0 * c**n
    var = sigma**2 * dt * (1 - c ** (2 * n)) / (1 - c**2)
    assert abs(x_end.mean() - mean) < 4 * np.sqrt(var / R)
    assert abs(x_end.var(ddof=1) / var - 1) < 4 * np.sqrt(2 / R)


def test_supplied_increments_drive_the_path():
    m, cfg = ou(), IntegratorConfig(dt=1e-2)
    tr = integrate(m, [0.0], 1.0, cfg, keep_increments=True)
    again = integrate(m, [0.0], 1.0, cfg, increments=tr.increments)
    assert np.array_equal(tr.states, again.states)
    expect = rng.brownian_increments([rng.path_key(0, 0)], 0, 100, 1, 1e-2)[0]
    assert np.allclose(tr.increments, expect)
    with pytest.raises(InvalidParameter):
        integrate(m, [0.0], 1.0, cfg, increments=tr.increments[:50])


def test_stability_guard():
    with pytest.raises(Unstable):
        integrate(ou(theta=10.0), [0.0], 1.0, IntegratorConfig(dt=0.05))


def test_non_finite_state_reported():
    # confluent near the origin in the sampled box, explosive further out
    m = SDEModel(name="blowup", d=1, q=1, drift=lambda x: x**3, diffusion=lambda x: np.zeros((x.shape[0], 1, 1)),
                 alpha=1.0)
    with pytest.raises(NonFiniteState) as exc, np.errstate(over="ignore", invalid="ignore"):
        integrate(m, [10.0], 10.0, IntegratorConfig(dt=0.1))
    assert exc.value.last_finite_index >= 0


def test_coupled_ou_ratio_is_deterministic():
    m, dt = ou(1.0), 1e-3
    rec = simulate_coupled(m, [1.0], [-1.0], 1.0, IntegratorConfig(dt=dt), replications=3)
    steps = np.round(rec.times / dt)
    assert np.allclose(rec.ratios, (1 - dt) ** steps, rtol=1e-10)
    assert np.allclose(rec.rms_stderr(), 0.0, atol=1e-12)
    with pytest.raises(DegenerateStart):
        simulate_coupled(m, [1.0], [1.0], 1.0, IntegratorConfig(dt=dt))


def test_warm_start():
    cfg = IntegratorConfig(dt=1e-2)
    x = warm_start(ou(1.0, 1.0), cfg, n=5000)
    assert abs(x.var() - 0.5) < 0.05
    with pytest.raises(PreconditionError):
        warm_start(cubic(), cfg)
    with pytest.raises(PreconditionError):
        warm_start(cubic(), cfg, burn_in=1.0)
    y = warm_start(cubic(), cfg, burn_in=5.0, n=3)
    assert y.shape == (3, 1)


def test_regularized_model_adds_noise_columns():
    m = regularized_model(bounded_sigma(), 0.1)
    assert m.q == 2 and m.sigma_elliptic
    s = m.diffusion(np.zeros((2, 1)))
    assert s.shape == (2, 1, 2) and np.allclose(s[:, 0, 1], 0.1)


def test_em_steps_record_increments():
    m = ou()
    keys = [rng.path_key(0, 0)]
    got = [dw for _, _, dw in em_steps(m, np.zeros((1, 1)), 10, 0.1, keys, record_stride=5, with_increments=True)]
    total = rng.brownian_increments(keys, 0, 10, 1, 0.1)[0]
    assert np.allclose(got[1][0], total[:5].sum(0)) and np.allclose(got[2][0], total[5:].sum(0))


def test_trajectory_csv(tmp_path):
    tr = integrate(ou(d=2), [0.0, 1.0], 0.05, IntegratorConfig(dt=1e-2))
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,x1,x2" and len(rows) == 7


def test_deterministic_ode_matches_exponential():
    m = SDEModel(name="decay", d=1, q=1, drift=lambda x: -x, diffusion=lambda x: np.zeros((x.shape[0], 1, 1)),
                 alpha=2.0)
    tr = integrate(m, [1.0], 5.0, IntegratorConfig(dt=1e-3))
    assert abs(tr.states[-1, 0] - np.exp(-5)) < 5e-3


def test_single_step_horizon_and_uniform_spacing():
    tr = integrate(ou(), [0.0], 1e-2, IntegratorConfig(dt=1e-2))
    assert tr.states.shape == (2, 1)
    tr = integrate(ou(), [0.0], 1.0, IntegratorConfig(dt=1e-2, record_stride=4))
    gaps = np.diff(tr.times)
    assert np.allclose(gaps[:-1], 0.04) and np.all(np.isfinite(tr.states))
    with pytest.raises(InvalidParameter):
        integrate(ou(), [0.0], 1e-3, IntegratorConfig(dt=1e-2))


def test_coupling_ratios_start_at_one_and_stay_nonnegative():
    rec = simulate_coupled(bounded_sigma(), [1.0], [0.0], 2.0, IntegratorConfig(dt=1e-2), replications=20)
    assert rec.times[0] == 0 and np.allclose(rec.samples[:, 0], 1.0) and np.all(rec.samples >= 0)
    # mean-square envelope with the sampled confluence constant, up to Monte Carlo error
    alpha = check_confluence(bounded_sigma()).alpha_hat
    assert np.all(rec.rms()[1:] <= np.exp(-alpha * rec.times[1:] / 2) * (1 + 3 * rec.rms_stderr()[1:]) + 1e-2)


def test_regularized_ou_keeps_confluence_and_moves_invariant_little():
    base = ou(1.0, 1.0)
    reg = regularized_model(base, 0.5)
    assert check_confluence(reg).alpha_hat == pytest.approx(2.0, rel=1e-12)
    assert reg.invariant_cov[0, 0] == pytest.approx(1.25 / 2)
    # both laws are centred Gaussians, so W2 is the difference of standard deviations
    w2 = np.sqrt(1.25 / 2) - np.sqrt(0.5)
    assert w2 == pytest.approx(0.0835, abs=1e-4) and w2 <= 0.5 / np.sqrt(2.0)
    x = endpoints(reg, np.zeros((20000, 1)), 10.0, IntegratorConfig(dt=1e-2))
    assert abs(x.var() - 0.625) < 0.03
    with pytest.raises(InvalidParameter):
        regularized_model(base, 0.0)


def test_warm_start_bias_from_origin():
    # Euler paths from 0 after burn-in 10/alpha: the start bias is at most mean|mu| e^-5
    m, cfg = bounded_sigma(), IntegratorConfig(dt=1e-2)
    alpha = check_confluence(m).alpha_hat
    x = warm_start(m, cfg, burn_in=10 / alpha, n=4000)
    stationary = warm_start(m, cfg, burn_in=40 / alpha, n=4000, stream=rng.AUX)
    from ergodic_w2.transport import w2_1d_samples

    # both are finite samples; their W2 is sampling noise plus a bias below mean|x| e^-5 ~ 5e-3
    assert w2_1d_samples(x[:, 0], stationary[:, 0]).value < 0.05
