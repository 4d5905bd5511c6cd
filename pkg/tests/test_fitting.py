import numpy as np
import pytest
from hypothesis import given, strategies as st

from ergodic_w2.errors import InvalidParameter, NonPositiveValue
from ergodic_w2.fitting import fit_rate


@given(slope=st.floats(-3, 3), c=st.floats(0.01, 100))
def test_exact_power_law(slope, c):
    t = np.geomspace(1, 1e4, 6)
    fit = fit_rate(t, c * t**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.intercept == pytest.approx(np.log(c), abs=1e-8)
    assert fit.half_width == pytest.approx(0.0, abs=1e-8)


def test_ci_matches_scipy_linregress(gen):
    from scipy import stats

    t = np.geomspace(10, 1e4, 8)
    y = t**-0.5 * np.exp(gen.normal(scale=0.1, size=t.size))
    fit = fit_rate(t, y, level=0.9)
    ref = stats.linregress(np.log(t), np.log(y))
    half = stats.t.ppf(0.95, t.size - 2) * ref.stderr
    assert fit.slope == pytest.approx(ref.slope)
    assert fit.r_squared == pytest.approx(ref.rvalue**2)
    assert fit.slope_ci[1] - fit.slope == pytest.approx(half)
    assert set(fit.to_dict()) == {"slope", "intercept", "r_squared", "slope_ci", "n_points"}


def test_input_errors():
    with pytest.raises(InvalidParameter):
        fit_rate([1, 2], [1, 2])
    with pytest.raises(NonPositiveValue):
        fit_rate([1, 2, 3], [1, 0, 2])
    with pytest.raises(InvalidParameter):
        fit_rate([2, 2, 2], [1, 2, 3])
    with pytest.raises(InvalidParameter):
        fit_rate([1, 2, 3], [1, 2])
