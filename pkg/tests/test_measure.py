import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from deformed_mp.errors import DomainError, EvaluationError, ParameterError
from deformed_mp.measure import (
    Profile,
    build_measure,
    ks_to_tabulated,
    measure_from_spec,
)

# Independent oracle values from scipy.integrate.quad on the explicit density.
Z_F1 = 0.2195075744909176
MEAN_F1 = 0.30331489029976183
D_PLUS_F1 = 0.7039083265617139
TAIL_F1_01 = 0.00028582463581814846


def test_f1_normalization_constant(f1):
    assert f1.Z == pytest.approx(Z_F1, rel=1e-12)


def test_constant_profile_closed_form():
    m = build_measure(3.0, 0.1, "const")
    assert m.Z == pytest.approx(0.9**4 / 4, rel=1e-13)


def test_preset_parameters(f1, f2):
    assert (f1.beta, f1.l, f1.profile.kind) == (3.0, 0.1, "exp")
    assert (f2.beta, f2.l, f2.profile.kind) == (0.5, 0.1, "exp")


@pytest.mark.parametrize("t, expected", [(1.0, 0.0), (0.05, 0.0), (1.5, 0.0)])
def test_density_vanishes_at_edge_and_outside(f1, t, expected):
    assert f1.density(t) == expected


def test_density_interior_value(f1):
    assert f1.density(0.5) == pytest.approx(math.exp(0.5) * 0.5**3 / Z_F1, rel=1e-12)


def test_integrate_constant_is_one(f1, f2):
    assert f1.integrate(lambda t: 1.0) == pytest.approx(1.0, abs=1e-12)
    assert f2.integrate(lambda t: 1.0) == pytest.approx(1.0, abs=1e-12)


def test_integrate_mean(f1):
    assert f1.integrate(lambda t: t) == pytest.approx(MEAN_F1, rel=1e-12)


def test_integrate_singular_second_moment(f1):
    val = f1.integrate(lambda t: t**2 / (1 - t) ** 2, singular_power=2)
    assert val == pytest.approx(D_PLUS_F1, rel=1e-11)
    assert abs(val - 0.703908) < 1e-5


def test_integrate_rejects_non_finite(f1):
    with pytest.raises(EvaluationError):
        f1.integrate(lambda t: np.where(t > 0.5, np.inf, 1.0))


def test_quadrature_order_convergence():
    g = lambda t: t**2 / (1 - t) ** 2
    a = build_measure(3.0, 0.1, "exp", quad_order=128).integrate(g, singular_power=2)
    b = build_measure(3.0, 0.1, "exp", quad_order=256).integrate(g, singular_power=2)
    assert abs(a - b) < 1e-8


def test_singular_integral_for_beta_between_one_and_two():
    m = build_measure(1.5, 0.2, "exp")
    ref = integrate.quad(
        lambda t: t**2 * (1 - t) ** (1.5 - 2) * math.exp(t), 0.2, 1, limit=200
    )[0] / integrate.quad(lambda t: (1 - t) ** 1.5 * math.exp(t), 0.2, 1)[0]
    assert m.integrate(lambda t: t**2 / (1 - t) ** 2, singular_power=2) == pytest.approx(ref, rel=1e-8)


def test_rule_weights_sum_to_unnormalized_mass(f1):
    rule = f1.raw_rule()
    assert np.all(np.diff(rule.nodes) > 0)
    assert rule.weights.sum() == pytest.approx(0.9**4 / 4, rel=1e-10)


@pytest.mark.parametrize(
    "args, exc",
    [
        ((-1.0, 0.1, "const"), ParameterError),
        ((-2.0, 0.1, "const"), ParameterError),
        ((3.0, 0.0, "const"), ParameterError),
        ((3.0, 1.0, "const"), ParameterError),
        ((3.0, 0.1, "poly:-1,0.5"), DomainError),
    ],
)
def test_construction_errors(args, exc):
    with pytest.raises(exc):
        build_measure(*args)


def test_tail_probability_endpoints(f1):
    assert f1.tail_probability(0.0) == 0.0
    assert f1.tail_probability(0.9) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ParameterError):
        f1.tail_probability(0.95)
    with pytest.raises(ParameterError):
        f1.tail_probability(-0.1)


def test_tail_probability_value_and_power_law(f1):
    assert f1.tail_probability(0.1) == pytest.approx(TAIL_F1_01, rel=1e-10)
    ratios = [f1.tail_probability(x) / x**4 for x in (0.1, 0.05, 0.025)]
    for a, b in zip(ratios, ratios[1:]):
        assert 0.5 < a / b < 2.0


def test_tail_law_bounded_ratio(f1):
    xs = np.geomspace(1e-3, 1e-1, 30)
    r = np.array([f1.tail_probability(x) / x**4 for x in xs])
    assert r.min() > 0 and r.max() / r.min() < 2.0


def test_cdf_matches_tail(f1):
    for x in (0.01, 0.2, 0.5):
        assert f1.cdf(1 - x) == pytest.approx(1 - f1.tail_probability(x), abs=1e-13)


def test_sample_empty_and_deterministic(f1):
    assert f1.sample(0, seed=1).size == 0
    np.testing.assert_array_equal(f1.sample(100, seed=3), f1.sample(100, seed=3))
    assert not np.array_equal(f1.sample(100, seed=3), f1.sample(100, seed=4))


def test_sample_mean_within_three_standard_errors(f1):
    s = f1.sample(100_000, seed=11)
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - MEAN_F1) < 3 * se


@pytest.mark.parametrize("x", [0.05, 0.1])
def test_sample_tail_frequency_scales_like_power(f1, x):
    s = f1.sample(100_000, seed=12)
    freq = np.mean(1 - s <= x)
    assert 0.5 < freq / f1.tail_probability(x) < 2.0


def test_sample_ks_against_tabulated_cdf(f1, f2):
    assert ks_to_tabulated(f1, f1.sample(100_000, seed=13)) < 0.01
    assert ks_to_tabulated(f2, f2.sample(100_000, seed=14)) < 0.01


def test_sample_ks_cross_checked_with_scipy(f1):
    s = f1.sample(5000, seed=15)
    ours = ks_to_tabulated(f1, s)
    ref = stats.kstest(s, f1.cdf).statistic
    assert ours == pytest.approx(ref, abs=1e-12)


def test_profile_parse_round_trip():
    for text in ("const", "exp", "poly:1.0,0.5,0.25"):
        assert Profile.parse(text).spec() == text
    with pytest.raises(ParameterError):
        Profile.parse("sin")


def test_measure_from_spec_variants(tmp_path):
    assert measure_from_spec("f1").Z == pytest.approx(Z_F1, rel=1e-12)
    m = measure_from_spec({"beta": "3", "l": "0.1", "profile": "exp"})
    assert m.Z == pytest.approx(Z_F1, rel=1e-12)
    p = tmp_path / "nu.cfg"
    p.write_text("# test measure\nbeta = 3\nl = 0.1\nprofile = const\n", encoding="utf-8")
    assert measure_from_spec(str(p)).Z == pytest.approx(0.9**4 / 4, rel=1e-12)
    with pytest.raises(ParameterError):
        measure_from_spec({"beta": 3})
    with pytest.raises(ParameterError):
        measure_from_spec("no-such-preset")


@settings(max_examples=25, deadline=None)
@given(
    beta=st.floats(-0.9, 6.0),
    l=st.floats(0.01, 0.9),
    kind=st.sampled_from(["const", "exp", "poly:1,2,0.5"]),
)
def test_normalization_property(beta, l, kind):
    m = build_measure(beta, l, kind)
    assert m.integrate(lambda t: 1.0) == pytest.approx(1.0, abs=1e-10)
    assert m.cdf(1.0) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(1.1, 6.0), l=st.floats(0.01, 0.9))
def test_constant_profile_matches_scipy_quad(beta, l):
    m = build_measure(beta, l, "const")
    Z = (1 - l) ** (beta + 1) / (beta + 1)
    ref = integrate.quad(lambda t: t * (1 - t) ** beta / Z, l, 1)[0]
    assert m.mean() == pytest.approx(ref, rel=1e-10)
