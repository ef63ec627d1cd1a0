import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats
from scipy.special import digamma

from sarseg.gamma import (DegenerateDataError, EmConfig, GammaMixture, GammaMode, alternate_rate_shape,
                          em_fit_mixture, em_initialize, em_step, fit_single_gamma_ml, gamma_pdf, inverse_psi,
                          mixture_pdf, responsibilities, run_em)


def psi_series(x: float) -> float:
    """Digamma by upward recurrence to x >= 10 and the asymptotic Bernoulli series."""
    acc = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = inv2 * (1 / 12 - inv2 * (1 / 120 - inv2 * (1 / 252 - inv2 * (1 / 240 - inv2 * (1 / 132)))))
    return acc + math.log(x) - 0.5 / x - series


def test_series_oracle_matches_mpmath():
    for x in np.geomspace(1e-3, 1e3, 40):
        assert psi_series(float(x)) == pytest.approx(float(mpmath.digamma(x)), abs=1e-10, rel=1e-12)


def test_digamma_matches_oracle():
    xs = np.geomspace(1e-3, 1e3, 200)
    ref = np.array([psi_series(float(x)) for x in xs])
    np.testing.assert_allclose(digamma(xs), ref, atol=1e-10, rtol=1e-12)


def test_inverse_psi_examples():
    assert inverse_psi(-0.5772156649015329) == pytest.approx(1.0, abs=1e-8)
    assert inverse_psi(psi_series(10.0)) == pytest.approx(10.0, abs=1e-8)
    for v in (-5, -1, 0, 1, 5):
        assert psi_series(inverse_psi(v)) == pytest.approx(v, abs=1e-10)


@given(st.floats(-30, 30))
def test_inverse_psi_round_trip(v):
    x = inverse_psi(v)
    assert x > 0
    assert float(digamma(x)) == pytest.approx(v, abs=1e-10, rel=1e-12)


def test_gamma_pdf_examples():
    assert gamma_pdf(1.0, GammaMode(1.0, 1.0)) == pytest.approx(math.exp(-1))
    m = GammaMode(4.0, 0.8)
    assert m.mean == pytest.approx(5.0) and m.variance == pytest.approx(6.25)
    assert gamma_pdf(0.0, GammaMode(0.5, 1.0)) == math.inf
    assert gamma_pdf(0.0, GammaMode(1.0, 2.5)) == pytest.approx(2.5)
    assert gamma_pdf(0.0, GammaMode(3.0, 1.0)) == 0.0
    with pytest.raises(ValueError):
        gamma_pdf(float("nan"), m)
    with pytest.raises(ValueError):
        gamma_pdf(-1.0, m)


@pytest.mark.parametrize("a,lam", [(0.5, 1.0), (2.0, 3.0), (9.0, 0.5)])
def test_gamma_pdf_normalised(a, lam):
    total, _ = integrate.quad(lambda y: gamma_pdf(y, GammaMode(a, lam)), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-6)


@given(st.floats(0.2, 50), st.floats(0.05, 10), st.floats(1e-3, 100))
def test_gamma_pdf_against_scipy(a, lam, y):
    assert gamma_pdf(y, GammaMode(a, lam)) == pytest.approx(stats.gamma.pdf(y, a, scale=1 / lam), rel=1e-9)


def test_mixture_pdf_examples():
    m = GammaMode(3.0, 0.7)
    ys = np.linspace(0.1, 20, 30)
    np.testing.assert_allclose(mixture_pdf(ys, GammaMixture.single(m)), gamma_pdf(ys, m))
    np.testing.assert_allclose(mixture_pdf(ys, GammaMixture((m, m), (0.5, 0.5))), gamma_pdf(ys, m))
    mix = GammaMixture((GammaMode(2, 1), GammaMode(9, 0.5), GammaMode(0.8, 0.1)), (0.2, 0.5, 0.3))
    total, _ = integrate.quad(lambda y: mixture_pdf(y, mix), 0, np.inf, limit=400)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_mixture_validation_and_json():
    with pytest.raises(ValueError):
        GammaMixture((GammaMode(1, 1),), (0.9,))
    with pytest.raises(ValueError):
        GammaMode(-1.0, 1.0)
    mix = GammaMixture((GammaMode(2, 1), GammaMode(9, 0.5)), (0.25, 0.75))
    d = mix.to_dict()
    assert set(d) == {"modes", "weights"} and set(d["modes"][0]) == {"a", "lambda"}
    assert GammaMixture.from_dict(d) == mix


def test_single_gamma_ml_recovery():
    rng = np.random.default_rng(7)
    y = rng.gamma(3.0, 1 / 0.6, size=100_000)
    m = fit_single_gamma_ml(y)
    assert m.a == pytest.approx(3.0, rel=0.05)
    assert m.lam == pytest.approx(0.6, rel=0.05)
    # agrees with an independent generic optimiser
    a_ref, _, scale_ref = stats.gamma.fit(y, floc=0)
    assert m.a == pytest.approx(a_ref, rel=1e-4)
    e = fit_single_gamma_ml(rng.exponential(2.0, size=100_000))
    assert e.a == pytest.approx(1.0, rel=0.05)


def test_single_gamma_degenerate():
    with pytest.raises(DegenerateDataError):
        fit_single_gamma_ml(np.full(10, 3.0))
    with pytest.raises(DegenerateDataError):
        fit_single_gamma_ml([])


def test_em_initialize():
    one = em_initialize(np.linspace(2, 14, 101), 1, 0.0, 1.0)
    assert one.K == 1 and one.mean == pytest.approx(8.0)
    three = em_initialize(np.linspace(2, 14, 101), 3, 0.0, 1.0)
    np.testing.assert_allclose([m.mean for m in three.modes], [2, 8, 14])
    assert three.weights == pytest.approx((1 / 3,) * 3)
    var = np.linspace(2, 14, 101).var()
    np.testing.assert_allclose([m.variance for m in three.modes], var)
    total, _ = integrate.quad(lambda y: mixture_pdf(y, three), 0, np.inf, limit=400)
    assert total == pytest.approx(1.0, abs=1e-6)


def two_mode_samples(seed=3, n=10_000):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.gamma(4.0, 5 / 4.0, n), rng.gamma(6.0, 50 / 6.0, n)])


def test_em_two_mode_recovery():
    res = run_em(two_mode_samples(), 2)
    means = sorted(m.mean for m in res.mixture.modes)
    assert means[0] == pytest.approx(5, rel=0.05)
    assert means[1] == pytest.approx(50, rel=0.05)
    assert np.allclose(res.mixture.weights, 0.5, atol=0.05)
    assert res.converged and res.iterations <= 100
    assert np.all(np.diff(res.loglik_trace) >= -1e-8)


def test_em_single_gamma_prunes_to_dominant():
    rng = np.random.default_rng(11)
    y = rng.gamma(3.0, 2.0, 20_000)
    mix = em_fit_mixture(y, 3)
    assert mix.K <= 3
    assert mix.mean == pytest.approx(y.mean(), rel=0.03)


def test_em_step_identities():
    y = two_mode_samples(5, 2000)
    mix = em_initialize(y, 2)
    w, _ = responsibilities(y, mix)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    a, lam, weights = em_step(y, np.log(y), mix)
    np.testing.assert_allclose(weights, w.mean(axis=0))
    s0, s1, s2 = w.sum(0), (w * y[:, None]).sum(0), (w * np.log(y)[:, None]).sum(0)
    np.testing.assert_allclose(lam, a * s0 / s1)
    # the joint solve is the fixed point of the literal rate/shape alternation
    for k in range(2):
        a_alt, lam_alt = alternate_rate_shape(mix.shapes[k], s0[k], s1[k], s2[k], 500)
        assert a_alt == pytest.approx(a[k], rel=1e-8)
        assert lam_alt == pytest.approx(lam[k], rel=1e-8)


def test_em_clamps_zero_intensities():
    rng = np.random.default_rng(2)
    y = np.concatenate([rng.gamma(2.0, 1.0, 3000), np.zeros(5)])
    res = run_em(y, 2, EmConfig())
    assert np.isfinite(res.loglik_trace[-1])


def test_em_errors():
    with pytest.raises(DegenerateDataError):
        run_em([], 2)
    with pytest.raises(ValueError):
        run_em([1.0, 2.0], 0)
