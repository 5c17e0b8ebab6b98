import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from composcene.errors import NumericError, ParameterError, ShapeError
from composcene.schedule import NoiseSample, make_linear_schedule, noise_image


def test_default_schedule_shape():
    sched = make_linear_schedule(1000)
    assert sched.step_count == 1000
    assert sched.betas[0] == 1e-4
    assert sched.betas[-1] == 2e-2
    assert len(sched.alpha_bars) == 1000


def test_single_step_schedule():
    sched = make_linear_schedule(1, 0.1, 0.1)
    assert sched.alpha_bar(1) == pytest.approx(0.9, abs=0)


def test_alpha_bar_matches_direct_product():
    sched = make_linear_schedule(1000)
    # independent oracle: plain running product in a Python loop
    prod = 1.0
    for i in range(1000):
        prod *= 1.0 - sched.betas[i]
    assert sched.alpha_bars[-1] == pytest.approx(prod, rel=1e-10)


@pytest.mark.parametrize("kwargs,field", [
    (dict(step_count=0), "step_count"),
    (dict(step_count=10, beta_start=0.0), "beta_start"),
    (dict(step_count=10, beta_start=1e-4, beta_end=1.0), "beta_end"),
    (dict(step_count=10, beta_start=0.5, beta_end=0.1), "beta_start"),
])
def test_invalid_schedule_names_field(kwargs, field):
    with pytest.raises(ParameterError, match=field):
        make_linear_schedule(**kwargs)


@settings(max_examples=40, deadline=None)
@given(
    steps=st.integers(min_value=2, max_value=400),
    b0=st.floats(min_value=1e-6, max_value=0.4),
    spread=st.floats(min_value=1e-6, max_value=0.5),
)
def test_schedule_invariants(steps, b0, spread):
    b1 = min(0.95, b0 + spread)
    sched = make_linear_schedule(steps, b0, b1)
    assert np.all(sched.betas > 0) and np.all(sched.betas < 1)
    assert np.all(np.diff(sched.betas) >= 0)
    assert np.all(np.diff(sched.alpha_bars) < 0)
    assert 0 < sched.alpha_bars[-1] < sched.alpha_bars[0] < 1
    ratio = sched.alpha_bars[1:] / sched.alpha_bars[:-1]
    assert np.allclose(ratio, sched.alphas[1:], rtol=1e-12)


def test_noise_image_zero_noise():
    sched = make_linear_schedule(50)
    x0 = np.linspace(0, 1, 12).reshape(3, 4)
    out = noise_image(x0, NoiseSample(np.zeros((3, 4)), 17), sched)
    s, _ = sched.coeffs(17)
    assert np.array_equal(out, s * x0)


def test_noise_image_zero_signal():
    sched = make_linear_schedule(50)
    eps = np.random.default_rng(0).standard_normal((3, 4))
    out = noise_image(np.zeros((3, 4)), NoiseSample(eps, 30), sched)
    _, w = sched.coeffs(30)
    assert np.array_equal(out, w * eps)


def test_noise_image_norm():
    sched = make_linear_schedule(80)
    x0 = np.random.default_rng(1).standard_normal((5, 5))
    for t in (1, 40, 80):
        out = noise_image(x0, NoiseSample(np.zeros((5, 5)), t), sched)
        s, _ = sched.coeffs(t)
        assert np.linalg.norm(out) == pytest.approx(s * np.linalg.norm(x0), rel=1e-12)


def test_noise_image_round_trip():
    sched = make_linear_schedule(100)
    gen = np.random.default_rng(2)
    x0 = gen.uniform(0, 1, (8, 8))
    eps = gen.standard_normal((8, 8))
    for t in (1, 13, 55, 100):
        xt = noise_image(x0, NoiseSample(eps, t), sched)
        s, w = sched.coeffs(t)
        back = (xt - w * eps) / s
        assert np.allclose(back, x0, rtol=1e-10)


def test_noise_image_errors():
    sched = make_linear_schedule(10)
    with pytest.raises(ShapeError):
        noise_image(np.zeros((2, 2)), NoiseSample(np.zeros(3), 1), sched)
    with pytest.raises(ParameterError):
        noise_image(np.zeros(3), NoiseSample(np.zeros(3), 11), sched)
    with pytest.raises(NumericError):
        noise_image(np.full(3, np.nan), NoiseSample(np.zeros(3), 1), sched)


def test_noise_variance_monte_carlo():
    sched = make_linear_schedule(60)
    t = 25
    gen = np.random.default_rng(3)
    x0 = gen.uniform(0, 1, (2, 2))
    n = 100_000
    eps = gen.standard_normal((n, 2, 2))
    s, w = sched.coeffs(t)
    xt = s * x0[None] + w * eps
    var = xt.var(axis=0, ddof=1)
    want = 1.0 - sched.alpha_bar(t)
    se = want * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(var - want) < 3 * se)
