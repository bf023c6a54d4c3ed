import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from deformed_mp.errors import ParameterError, RegimeError
from deformed_mp.extremal import (
    GaussianParams,
    WeibullParams,
    c_nu,
    ecdf_table,
    gaussian_reference,
    gaussian_report,
    ks_distance,
    ks_two_sample,
    m23_gap_check,
    order_statistic_reference,
    rescale_supercritical,
    weibull_cdf,
    weibull_params,
    weibull_report,
)
from deformed_mp.freeconv import edge

# Frozen from scipy.integrate.quad oracles.
C_NU_15 = 156.08374655507396
V_05 = 1.0979430958695404


def test_c_nu_frozen(f1):
    p = weibull_params(f1, 1.5, M=1000)
    assert p.c_nu == pytest.approx(C_NU_15, rel=1e-9)
    assert p.shape == 4.0 and p.M == 1000
    assert p.C_d == pytest.approx(edge(f1, 1.5).C_d)


def test_c_nu_regime(f1):
    with pytest.raises(RegimeError):
        c_nu(f1, 0.5, edge(f1, 0.5).d_plus)
    with pytest.raises(RegimeError):
        weibull_params(f1, 0.5)


def test_weibull_cdf_closed_form():
    p = WeibullParams(4.0, 2.0)
    assert weibull_cdf(p, -1.0) == 0.0
    assert weibull_cdf(p, 1.0) == pytest.approx(1 - math.exp(-0.5))
    assert p.cdf(p.median()) == pytest.approx(0.5)
    # scipy's weibull_min with matching scale
    scale = (4.0 / 2.0) ** 0.25
    xs = np.linspace(0, 3, 7)
    np.testing.assert_allclose(p.cdf(xs), stats.weibull_min.cdf(xs, 4.0, scale=scale), atol=1e-14)


def test_weibull_param_validation():
    with pytest.raises(ParameterError):
        WeibullParams(2.0, 1.0)
    with pytest.raises(ParameterError):
        WeibullParams(4.0, 0.0)


def test_order_statistic_reference_follows_limit_law(f1):
    # with the exact population tail, C_d M^{1/4}(1 - σ_1) is asymptotically Weibull(C_ν)
    M = 20000
    rng = np.random.default_rng(0)
    top = np.array([f1.sample(M, seed=int(s)).max() for s in rng.integers(0, 2**31, 300)])
    e = edge(f1, 1.5)
    ref = order_statistic_reference(top, e.C_d, M, f1.beta)
    assert ks_distance(ref, weibull_params(f1, 1.5).cdf) < 0.1


def test_rescale_supercritical():
    np.testing.assert_allclose(rescale_supercritical([1.0, 0.5], 1.5, 16, 3.0), [1.0, 2.0])


def test_gaussian_reference_frozen(f1):
    g = gaussian_reference(f1, 0.5)
    assert g.variance_rescaled == pytest.approx(V_05, rel=1e-9)
    assert g.tau_star == pytest.approx(edge(f1, 0.5).tau_star)
    with pytest.raises(RegimeError):
        gaussian_reference(f1, 1.5)


def test_gaussian_variance_independent_quad(f1):
    tau = edge(f1, 0.5).tau_star
    g = lambda t: t * tau / (t + tau)
    m1 = integrate.quad(lambda t: g(t) * f1.density(t), f1.l, 1)[0]
    m2 = integrate.quad(lambda t: g(t) ** 2 * f1.density(t), f1.l, 1)[0]
    assert gaussian_reference(f1, 0.5).variance_rescaled == pytest.approx((m2 - m1**2) / 0.25, rel=1e-8)


def test_gaussian_params():
    g = GaussianParams(4.0, -1.1, 2.0)
    assert g.sd == 2.0
    assert g.cdf(0.0) == 0.5
    with pytest.raises(ParameterError):
        GaussianParams(-1.0, -1.1, 2.0)


def test_ks_distance_matches_scipy():
    x = np.random.default_rng(1).normal(size=500)
    assert ks_distance(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-14)
    with pytest.raises(ParameterError):
        ks_distance([], stats.norm.cdf)


def test_ks_two_sample():
    assert ks_two_sample([1, 2, 3], [1, 2, 3]) == 0.0
    assert ks_two_sample([0, 0], [1, 1]) == 1.0
    with pytest.raises(ParameterError):
        ks_two_sample([], [1])


def test_ecdf_table():
    s, emp, ref = ecdf_table([0.3, 0.1, 0.2], lambda x: x)
    np.testing.assert_array_equal(s, [0.1, 0.2, 0.3])
    np.testing.assert_allclose(emp, [1 / 3, 2 / 3, 1.0])
    np.testing.assert_array_equal(ref, s)


def test_m23_gap():
    assert m23_gap_check([1.0, 1.2, 0.9], [1.0, 1.0, 1.0], 8) == pytest.approx(0.1 * 4)
    with pytest.raises(ParameterError):
        m23_gap_check([], [], 8)


def test_weibull_report_on_synthetic_limit(f1):
    # eigenvalues generated exactly from the limit law must pass
    M = 1000
    p = weibull_params(f1, 1.5, M)
    e = edge(f1, 1.5)
    rng = np.random.default_rng(3)
    u = rng.uniform(size=400)
    s = (-p.shape * np.log1p(-u) / p.c_nu) ** (1 / p.shape)
    lam = e.L_plus - s / M**0.25
    sig = 1 - s / (e.C_d * M**0.25)
    rep = weibull_report({1: lam}, {1: sig}, f1, 1.5, M)
    assert rep.passed
    assert rep.ks_statistic < 0.1
    assert rep.location_errors[1] < 1e-12
    assert "mode=weibull" in rep.record()


def test_gaussian_report_on_synthetic_limit(f1):
    M = 1000
    g = gaussian_reference(f1, 0.5)
    x = np.random.default_rng(4).normal(0, g.sd, 400)
    rep = gaussian_report(g.L_plus + x / math.sqrt(M), f1, 0.5, M, L_hat=np.full(400, g.L_plus))
    assert rep.passed
    assert "m23_gap" in rep.stats
    shifted = gaussian_report(g.L_plus + (x + 5) / math.sqrt(M), f1, 0.5, M)
    assert not shifted.verdicts["mean"]


@settings(max_examples=40, deadline=None)
@given(shape=st.floats(2.01, 10.0), c=st.floats(0.01, 100.0), s=st.floats(0.0, 10.0))
def test_weibull_cdf_properties(shape, c, s):
    p = WeibullParams(shape, c)
    v = p.cdf(s)
    assert 0.0 <= v <= 1.0
    assert p.cdf(s + 0.1) >= v
