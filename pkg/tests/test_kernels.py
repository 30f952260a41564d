import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qpgp import kernels as K
from qpgp.errors import InvalidInputError, InvalidParameterError
from qpgp.geometry import LagTriple
from tests.oracles import cosine_series_exact, matern_bessel

ALL_FAMILIES = sorted(K.FAMILIES)


@pytest.fixture
def circ_gauss():
    """Squared exponential in the circular angle: not positive definite on the circle."""
    fam = K.Family("circ_gauss", (K.ParamDef("c_p", draw=(0.3, 3.0)),),
                   lambda h, th, u, p: np.exp(-((th / p["c_p"]) ** 2)), "t")
    K.register_family(fam)
    yield K.KernelSpec("circ_gauss", {"c_p": 1.0})
    K.FAMILIES.pop("circ_gauss")


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------


def test_matern_at_zero_is_one():
    for nu in (0.3, 0.5, 1.5, 2.5):
        assert K.matern(0.0, 2.0, nu) == 1.0


def test_matern_half_is_exponential():
    assert_allclose(K.matern(3.0, 3.0, 0.5), math.exp(-1), rtol=1e-15)


def test_matern_three_halves_identity():
    assert_allclose(K.matern(2.0, 2.0, 1.5), 2 * math.exp(-1), rtol=1e-12)
    assert_allclose(K.matern(2.0, 2.0, 1.5), matern_bessel(2.0, 2.0, 1.5), rtol=1e-12)


@pytest.mark.parametrize("t, alpha, nu", [(0.7, 1.3, 0.3), (5.0, 2.0, 2.2), (0.01, 1.0, 1.1)])
def test_matern_matches_arbitrary_precision(t, alpha, nu):
    assert_allclose(K.matern(t, alpha, nu), matern_bessel(t, alpha, nu), rtol=1e-10)


@pytest.mark.parametrize("alpha, nu", [(0.0, 0.5), (1.0, 0.0), (-1.0, 1.0)])
def test_matern_rejects_bad_parameters(alpha, nu):
    with pytest.raises(InvalidParameterError):
        K.matern(1.0, alpha, nu)


def test_series_oracle_II_examples():
    assert_allclose(K.series_oracle_II(0.0, 1.0, 20), 1.0, atol=1e-12)
    assert_allclose(K.series_oracle_II(math.pi, 1.0, 30), math.exp(-2), atol=1e-12)
    for th in (0.0, 1.0, 3.0):
        assert_allclose(K.series_oracle_II(th, 0.0, 5), math.exp(-1), rtol=1e-15)
    with pytest.raises(InvalidInputError):
        K.series_oracle_II(0.0, 1.5, 10)


def test_series_oracle_I_examples():
    assert_allclose(K.series_oracle_I(1.234, 2.0, 0), 0.5)
    assert_allclose(K.series_oracle_I(0.0, 1.0, 10**6), 2.07667, atol=1e-5)
    with pytest.raises(InvalidParameterError):
        K.series_oracle_I(0.0, 0.0, 5)


@pytest.mark.parametrize("theta, gamma", [(0.0, 1.0), (math.pi, 1.0), (1.0, 0.3), (2.5, 7.0), (0.2, 50.0)])
def test_series_closed_form_matches_infinite_sum(theta, gamma):
    assert_allclose(K.circle_series_sum(theta, gamma), cosine_series_exact(theta, gamma), rtol=1e-12)


def test_series_closed_form_is_stable_for_large_gamma():
    v = K.circle_series_sum(np.array([0.0, 1.0, math.pi]), 1e6)
    assert np.all(np.isfinite(v))
    assert_allclose(v[0], 1 / 2e6 + math.pi / 2e3, rtol=1e-10)


def test_cos_exp_matches_oracle_grid():
    th, rho = np.meshgrid(np.linspace(0, math.pi, 25), np.linspace(-1, 1, 25))
    assert_allclose(K.cos_exp(th, rho), K.series_oracle_II(th, rho, 60), atol=1e-13)


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def test_model7_examples():
    s = K.final_model(sigma2=1.0)
    assert K.evaluate(s, (0, 0, 0)) == 1.0
    assert_allclose(K.evaluate(s, (s.params["c_s"], 0, 0)), math.exp(-1), rtol=1e-14)


def test_cos_exp_powexp_example():
    s = K.KernelSpec("cos_exp_powexp", {"c_t": 10.0, "alpha": 1.0})
    assert_allclose(K.evaluate(s, LagTriple(0.0, math.pi / 2, 0.0)), math.exp(-1) * math.cos(1), rtol=1e-14)
    assert_allclose(K.evaluate(s, (0.0, math.pi / 2, 0.0)), K.series_oracle_II(math.pi / 2, 1.0, 60), atol=1e-12)


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_zero_lag_and_bounded(family):
    s = K.default_spec(family, sigma2=2.5)
    assert_allclose(K.evaluate(s, (0, 0, 0)), 2.5, rtol=1e-12)
    h, th, u = np.meshgrid(np.linspace(0, 80, 9), np.linspace(0, math.pi, 9), np.linspace(0, 400, 9))
    c = K.covariance(s, h, th, u)
    assert np.all(np.isfinite(c))
    assert np.all(np.abs(c) <= 2.5 * (1 + 1e-12))


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_random_gram_psd(family):
    rep = K.validate_psd(K.default_spec(family), n_designs=15, n_points=30, seed=1)
    assert rep.passed, rep.failures[:2]


def test_validate_psd_known_valid_and_final():
    assert K.validate_psd(K.default_spec("matern_space"), n_designs=20).passed
    assert K.validate_psd(K.final_model(), n_designs=200).passed


def test_negative_control_detected(circ_gauss):
    rep = K.validate_psd(circ_gauss, n_designs=60, n_points=40, seed=0)
    assert not rep.passed
    assert rep.worst_ratio < -1e-3


def test_cos_two_theta_variant_stays_valid():
    # replacing cos(theta) by cos(2 theta) in the cos-exp form keeps a positive Fourier series,
    # so it cannot serve as a negative control
    fam = K.Family("cos2_probe", (K.ParamDef("c_t", draw=(1.0, 500.0)), K.ParamDef("alpha", hi=2.0, draw=(1e-3, 2.0),
                                                                                      log_draw=False)),
                   lambda h, th, u, p: K.cos_exp(2 * th, np.exp(-((u / p["c_t"]) ** p["alpha"]))), "tu")
    K.register_family(fam)
    try:
        assert K.validate_psd(K.KernelSpec("cos2_probe", {"c_t": 20.0, "alpha": 1.0}), n_designs=50).passed
    finally:
        K.FAMILIES.pop("cos2_probe")


@pytest.mark.parametrize("k", range(1, 8))
def test_compared_models_valid(k):
    s = K.compared_model(k)
    assert K.evaluate(s, (0, 0, 0)) == pytest.approx(1.0)
    assert K.validate_psd(s, n_designs=10, n_points=30).passed


def test_model1_separable_factorizes():
    s = K.KernelSpec("model1_separable", {"c_s": 7.0, "c_p": 0.8, "c_t": 30.0})
    for h, th, u in [(3.0, 1.0, 10.0), (0.5, 2.9, 100.0)]:
        lhs = K.evaluate(s, (h, th, u)) * K.evaluate(s, (0, 0, 0)) ** 2
        rhs = K.evaluate(s, (h, 0, 0)) * K.evaluate(s, (0, th, 0)) * K.evaluate(s, (0, 0, u))
        assert_allclose(lhs, rhs, rtol=1e-14)


def test_cos_exp_powexp_decays_in_u_at_zero_angle():
    s = K.KernelSpec("cos_exp_powexp", {"c_t": 20.0, "alpha": 1.5})
    u = np.linspace(0, 300, 400)
    c = K.covariance(s, 0 * u, 0 * u, u)
    assert np.all(np.diff(c) <= 1e-15)


def test_sinh_series_normalized_and_matches_series():
    s = K.KernelSpec("sinh_series", {"c_t": 50.0, "alpha": 1.0, "beta": 0.5})
    assert K.evaluate(s, (0, 0, 0)) == pytest.approx(1.0, abs=1e-14)
    g = (1 + (30.0 / 50.0)) ** 0.5
    expected = cosine_series_exact(1.1, g) / cosine_series_exact(0.0, 1.0)
    assert_allclose(K.evaluate(s, (0, 1.1, 30.0)), expected, rtol=1e-12)


def test_product_multiplies_members():
    a = K.KernelSpec("matern_space", {"alpha": 10.0, "nu": 0.5})
    b = K.KernelSpec("circ_pow_exp", {"c_p": 1.0, "alpha": 1.0})
    p = K.KernelSpec("product", {}, 3.0, (a, b))
    assert_allclose(K.evaluate(p, (5, 1, 0)), 3.0 * math.exp(-0.5) * math.exp(-1.0), rtol=1e-14)
    assert p.flat_params() == {"0.alpha": 10.0, "0.nu": 0.5, "1.c_p": 1.0, "1.alpha": 1.0}


def test_gram_examples():
    s = K.final_model(sigma2=2.0)
    assert_allclose(K.gram(s, (np.zeros((1, 2)), np.zeros(1)), nugget=0.1), [[2.1]])
    G = K.gram(s, (np.zeros((2, 2)), np.zeros(2)))
    assert_allclose(G, np.full((2, 2), 2.0))
    assert np.linalg.matrix_rank(G) == 1
    rng = np.random.default_rng(4)
    G = K.gram(K.final_model(), (rng.uniform(0, 50, (40, 2)), rng.uniform(0, 1000, 40)))
    assert K.is_psd(G)


def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        K.KernelSpec("model7_final", {"c_s": 1.0, "c_t": 1.0, "alpha": 2.5})
    with pytest.raises(InvalidParameterError):
        K.KernelSpec("model7_final", {"c_s": 1.0, "c_t": 1.0})
    with pytest.raises(InvalidParameterError):
        K.KernelSpec("nope", {})
    with pytest.raises(InvalidParameterError):
        K.final_model(sigma2=-1.0)


def test_evaluate_rejects_bad_lag():
    with pytest.raises(InvalidInputError):
        K.evaluate(K.final_model(), (0.0, 4.0, 0.0))


def test_spec_round_trip():
    for k in range(1, 8):
        s = K.compared_model(k, sigma2=1.7)
        assert K.KernelSpec.from_json(s.to_json()) == s
        assert K.KernelSpec.from_dict(s.to_dict()).flat_params() == s.flat_params()


def test_fixed_params_excluded_from_free():
    s = K.KernelSpec("matern_time", {"alpha": 5.0, "nu": 0.5}, fixed={"nu"})
    assert s.free_params() == ["alpha"]
    assert K.random_params(s, np.random.default_rng(0)).params["nu"] == 0.5
