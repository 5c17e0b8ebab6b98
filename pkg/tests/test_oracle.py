import numpy as np
import pytest

from composcene.concepts import ConceptSet, coordinate_concept
from composcene.errors import ParameterError, ShapeError
from composcene.infer import denoising_error
from composcene.oracle import GaussianBlobOracle, analytic_gaussian_denoiser
from composcene.schedule import make_linear_schedule


@pytest.fixture(scope="module")
def sched():
    return make_linear_schedule(200)


def test_inverts_forward_map(sched):
    gen = np.random.default_rng(0)
    mu = gen.uniform(0, 1, (5, 5))
    e = gen.standard_normal((5, 5))
    for t in (1, 60, 200):
        s, w = sched.coeffs(t)
        xt = s * mu + w * e
        got = analytic_gaussian_denoiser(mu, 0.0, xt, t, sched)
        assert np.allclose(got, e, rtol=1e-12, atol=1e-13)


def test_mean_input_gives_zero(sched):
    mu = np.random.default_rng(1).uniform(0, 1, (4, 4))
    for t in (3, 120):
        s, _ = sched.coeffs(t)
        out = analytic_gaussian_denoiser(mu, 0.0, s * mu, t, sched)
        assert np.array_equal(out, np.zeros((4, 4)))


def test_validation(sched):
    with pytest.raises(ParameterError):
        analytic_gaussian_denoiser(np.zeros(3), -0.1, np.zeros(3), 1, sched)
    with pytest.raises(ShapeError):
        analytic_gaussian_denoiser(np.zeros(3), 0.0, np.zeros(4), 1, sched)


def test_posterior_regression_monte_carlo(sched):
    """Regress eps on x^t under x0 ~ N(mu, sigma0^2): slope and intercept
    must match the oracle's linear form within 3 standard errors."""
    sigma0 = 0.5
    t = 80
    mu_val = 0.4
    s, w = sched.coeffs(t)
    ab = sched.alpha_bar(t)
    denom = ab * sigma0 ** 2 + (1 - ab)
    gen = np.random.default_rng(2)
    n = 1_000_000
    x0 = gen.normal(mu_val, sigma0, n)
    eps = gen.standard_normal(n)
    xt = s * x0 + w * eps
    X = np.stack([np.ones(n), xt], axis=1)
    beta, *_ = np.linalg.lstsq(X, eps, rcond=None)
    resid = eps - X @ beta
    sigma2 = resid @ resid / (n - 2)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    want_slope = w / denom
    want_intercept = -w * s * mu_val / denom
    assert abs(beta[1] - want_slope) < 3 * se[1]
    assert abs(beta[0] - want_intercept) < 3 * se[0]


def test_wrong_mean_residual_closed_form(sched):
    """At sigma0=0 the residual is deterministic given t: the accumulated
    denoising error equals sum_t ab/(1-ab) * ||mu - mu'||^2 exactly."""
    oracle = GaussianBlobOracle((8, 8, 1), sched, radius=0.4)
    truth = np.array([[0.5, 0.5]])
    wrong = np.array([[0.3, 0.7]])
    x = oracle.scene(truth)
    table = denoising_error(oracle, x, [ConceptSet((coordinate_concept(wrong[0]),))],
                            sched, 40, seed=7)
    d2 = float(((oracle.mean_flat(truth) - oracle.mean_flat(wrong)) ** 2).sum())
    want = sum(sched.alpha_bar(t) / (1.0 - sched.alpha_bar(t)) * d2
               for t in table.timesteps)
    assert table.entries[0].error == pytest.approx(want, rel=1e-12)


def test_exact_fit_residual_is_exactly_zero(sched):
    oracle = GaussianBlobOracle((8, 8, 1), sched)
    truth = np.array([[0.62, 0.38]])
    x = oracle.scene(truth)
    gen = np.random.default_rng(3)
    for t in (1, 50, 200):
        eps = gen.standard_normal((8, 8, 1))
        res = oracle.residuals(x, eps, t, truth[None])
        assert np.array_equal(res, np.zeros_like(res))


def test_composed_residual_exact_zero(sched):
    oracle = GaussianBlobOracle((8, 8, 1), sched)
    truth = np.array([[0.3, 0.3], [0.7, 0.6]])
    x = oracle.scene(truth)
    eps = np.random.default_rng(4).standard_normal((8, 8, 1))
    res = oracle.residuals(x, eps, 37, truth[None])
    assert np.array_equal(res, np.zeros_like(res))


def test_oracle_concept_grads_match_finite_differences(sched):
    oracle = GaussianBlobOracle((8, 8, 1), sched, sigma0=0.3)
    gen = np.random.default_rng(5)
    truth = np.array([[0.45, 0.55]])
    x = oracle.scene(truth)
    eps = gen.standard_normal((8, 8, 1))
    sets = np.array([[[0.35, 0.6], [0.6, 0.4]]])
    grads, losses = oracle.concept_grads(x, eps, 23, sets)

    def loss_at(c_sets):
        r = oracle.residuals(x, eps, 23, c_sets)
        return float((r * r).sum())

    assert losses[0] == pytest.approx(loss_at(sets), rel=1e-12)
    h = 1e-6
    for k in range(2):
        for j in range(2):
            sp, sm = sets.copy(), sets.copy()
            sp[0, k, j] += h
            sm[0, k, j] -= h
            fd = (loss_at(sp) - loss_at(sm)) / (2 * h)
            assert grads[0, k, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_predict_terms_matches_analytic_denoiser(sched):
    oracle = GaussianBlobOracle((6, 6, 1), sched, sigma0=0.2)
    gen = np.random.default_rng(6)
    center = np.array([0.5, 0.4])
    x = oracle.scene(center[None])
    eps = gen.standard_normal((6, 6, 1))
    t = 44
    terms = oracle.predict_terms(x, eps, t, center[None])
    s, w = sched.coeffs(t)
    xt = s * x.reshape(-1) + w * eps.reshape(-1)
    want = analytic_gaussian_denoiser(
        oracle.mean_flat(center[None]), oracle.sigma0, xt, t, sched)
    assert np.allclose(terms[0], want, rtol=1e-12)
