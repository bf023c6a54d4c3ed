import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deformed_mp.empirical import PopulationSpectrum, hat_mfc
from deformed_mp.ensemble import (
    Collector,
    LocalLawSpec,
    SampleSpec,
    haar_orthogonal,
    linearized_probe,
    m_trace,
    run_monte_carlo,
    sample_ensemble,
    stream,
)
from deformed_mp.errors import ParameterError, RunError
from deformed_mp.freeconv import edge, solve_mfc


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(M=1, N=5),
        dict(M=5, N=5, entry_dist="cauchy"),
        dict(M=5, N=5, sigma_source="file"),
        dict(M=5, N=5, entry_dist="rademacher", sigma_source="rotated"),
        dict(M=5, N=5, seed=-1),
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ParameterError):
        SampleSpec(**kwargs)


def test_streams_are_independent_and_reproducible():
    a = stream(7, "X").standard_normal(5)
    np.testing.assert_array_equal(a, stream(7, "X").standard_normal(5))
    assert not np.array_equal(a, stream(7, "sigma").standard_normal(5))
    assert not np.array_equal(a, stream(8, "X").standard_normal(5))


def test_haar_orthogonal():
    O = haar_orthogonal(stream(1, "rotation"), 40)
    np.testing.assert_allclose(O @ O.T, np.eye(40), atol=1e-12)


def test_sample_is_deterministic(f1):
    spec = SampleSpec(100, 150, seed=4)
    a = sample_ensemble(spec, f1)
    b = sample_ensemble(spec, f1)
    np.testing.assert_array_equal(a.lambdas, b.lambdas)
    assert np.all(np.diff(a.lambdas) <= 0)
    assert a.lambdas.size == 100


@pytest.mark.parametrize("dist", ["gaussian", "rademacher", "uniform"])
def test_trace_matches_population_mean(f1, dist):
    # E tr 𝒬 / M = mean(σ) since the entries have variance 1/N
    spec = SampleSpec(300, 300, entry_dist=dist, seed=2)
    r = sample_ensemble(spec, f1)
    assert r.lambdas.sum() / 300 == pytest.approx(r.sigmas.mean(), rel=0.02)


def test_white_top_eigenvalue_near_mp_edge():
    M, N = 400, 800
    r = sample_ensemble(SampleSpec(M, N, sigma_source="explicit", seed=3), np.ones(M))
    assert r.lambdas[0] == pytest.approx((1 + math.sqrt(M / N)) ** 2, abs=0.05)


def test_rotation_preserves_spectrum_law(f1):
    # rotated and diagonal populations share the population eigenvalues
    a = sample_ensemble(SampleSpec(200, 300, seed=5), f1)
    b = sample_ensemble(SampleSpec(200, 300, seed=5, sigma_source="rotated"), f1)
    np.testing.assert_array_equal(a.sigmas, b.sigmas)
    assert a.lambdas.sum() == pytest.approx(b.lambdas.sum(), rel=0.05)


def test_explicit_population_size_checked():
    with pytest.raises(ParameterError):
        sample_ensemble(SampleSpec(10, 10, sigma_source="explicit"), np.ones(9))


def test_m_trace_includes_zero_eigenvalues(f1):
    r = sample_ensemble(SampleSpec(100, 300, seed=1), f1)
    z = 1j * 1e6
    assert m_trace(r, z) * z == pytest.approx(-1.0, abs=1e-5)


def test_m_trace_close_to_discrete_law(f1):
    spec = SampleSpec(1000, 1500, seed=6)
    r = sample_ensemble(spec, f1)
    z = complex(0.8, 0.05)
    assert abs(m_trace(r, z) - hat_mfc(r.spectrum, z)) < 0.05
    assert abs(m_trace(r, z) - solve_mfc(f1, 1.5, z)) < 0.1


@pytest.mark.parametrize("source", ["measure", "rotated"])
def test_linearized_probe_identities(f1, source):
    rec = linearized_probe(SampleSpec(120, 180, seed=2, sigma_source=source), f1, complex(0.7, 0.1))
    assert abs(rec.m_linearized - rec.m_trace) < 1e-10
    assert rec.trace_defect < 1e-10
    assert rec.schur_defect < 1e-10
    assert rec.ward_defect < 1e-10


def test_linearized_probe_size_limit(f1):
    with pytest.raises(ParameterError):
        linearized_probe(SampleSpec(300, 301), f1, 1j)


def test_collector_validation():
    with pytest.raises(ParameterError):
        Collector(top_k=0)
    with pytest.raises(ParameterError):
        Collector(hist_bins=0)


def test_monte_carlo_table(f1):
    spec = SampleSpec(60, 90, seed=100)
    tab = run_monte_carlo(spec, 6, Collector(top_k=3, hist_bins=10), f1, workers=1)
    assert [r.trial for r in tab.rows] == list(range(6))
    assert [r.seed for r in tab.rows] == list(range(100, 106))
    assert tab.column("lambda", 2).shape == (6,)
    assert np.all(tab.column("lambda", 1) >= tab.column("lambda", 2))
    assert tab.histogram.sum() == 6 * 60
    lines = tab.to_csv().splitlines()
    assert lines[0].split(",")[:3] == ["trial", "seed", "lambda1"]
    assert len(lines) == 7
    assert tab.hist_csv().startswith("bin_left,bin_right,count\n")


def test_monte_carlo_trial_matches_single_sample(f1):
    spec = SampleSpec(50, 75, seed=30)
    tab = run_monte_carlo(spec, 3, Collector(top_k=2), f1)
    single = sample_ensemble(SampleSpec(50, 75, seed=32), f1)
    np.testing.assert_array_equal(tab.rows[2].lambdas, single.lambdas[:2])


def test_supercritical_prediction_column(f1):
    spec = SampleSpec(80, 120, seed=0)
    tab = run_monte_carlo(spec, 2, Collector(top_k=1), f1)
    e = edge(f1, 1.5)
    expected = e.L_plus - e.C_d * (1 - tab.column("sigma", 1))
    np.testing.assert_allclose(tab.column("L_plus_pred"), expected, rtol=1e-14)


def test_frozen_population(f1):
    tab = run_monte_carlo(SampleSpec(40, 60, seed=9, freeze_sigma=True), 3, Collector(top_k=2), f1)
    s = tab.column("sigma", 1)
    assert s[0] == s[1] == s[2]
    l = tab.column("lambda", 1)
    assert len(set(l.tolist())) == 3


def test_local_law_column(f1):
    tab = run_monte_carlo(SampleSpec(200, 300, seed=1), 2, Collector(top_k=1, local_law=LocalLawSpec(n_energy=6, n_eta=2)), f1)
    ll = tab.column("local_law")
    assert np.all(np.isfinite(ll) | np.isnan(ll))
    assert "local_law" in tab.to_csv().splitlines()[0]


def test_worker_count_does_not_change_output(f1):
    spec = SampleSpec(40, 60, seed=11)
    a = run_monte_carlo(spec, 5, Collector(top_k=3), f1, workers=1).to_csv()
    b = run_monte_carlo(spec, 5, Collector(top_k=3), f1, workers=2).to_csv()
    assert a == b


def test_run_errors(f1):
    with pytest.raises(ParameterError):
        run_monte_carlo(SampleSpec(10, 10), 0, source=f1)
    with pytest.raises(ParameterError):
        run_monte_carlo(SampleSpec(10, 10), 1)
    bad = np.full(10, 0.5)
    bad[3] = -1.0
    with pytest.raises(RunError) as info:
        run_monte_carlo(SampleSpec(10, 10, sigma_source="explicit"), 4, source=bad)
    assert len(info.value.table.failures) == 4


@settings(max_examples=15, deadline=None)
@given(M=st.integers(2, 30), N=st.integers(2, 30), seed=st.integers(0, 2**31))
def test_spectrum_nonnegative_and_trace(M, N, seed):
    sig = np.linspace(0.1, 1.0, M)
    r = sample_ensemble(SampleSpec(M, N, sigma_source="explicit", seed=seed), sig)
    assert r.lambdas[-1] > -1e-10
    assert r.spectrum.M == M
