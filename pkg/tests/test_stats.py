import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from heteroboost import stats
from heteroboost.errors import DegenerateSeriesError, PreconditionError
from heteroboost.specfun import betainc, chi2_cdf, chi2_sf, gammainc, t_cdf

from oracles import chi2_cdf_mp, t_cdf_mp


def ar1(phi, n, rng, burn=200):
    e = rng.standard_normal(n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return x[burn:]


# --- special functions against an arbitrary-precision oracle --------------

CHI2_PROBES = [(x, df) for df in (1, 2, 5, 12, 24) for x in (0.01, 0.5, 1.0, 3.0, 7.5, 15.0, 30.0, 60.0)]
T_PROBES = [(t, df) for df in (1, 3, 7, 30) for t in (-6.0, -2.5, -1.4587, -0.3, 0.0, 0.7, 2.0, 4.5)]


@pytest.mark.parametrize("x,df", CHI2_PROBES)
def test_chi2_cdf_matches_mpmath(x, df):
    oracle = chi2_cdf_mp(x, df)
    assert abs(chi2_cdf(x, df) - oracle) < 1e-8
    assert abs(chi2_sf(x, df) - (1 - oracle)) < 1e-8


@pytest.mark.parametrize("t,df", T_PROBES)
def test_t_cdf_matches_mpmath(t, df):
    assert abs(t_cdf(t, df) - t_cdf_mp(t, df)) < 1e-8


def test_incomplete_functions_edges():
    assert gammainc(2.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    assert abs(betainc(2.0, 3.0, 0.4) - float(mpmath.betainc(2, 3, 0, 0.4, regularized=True))) < 1e-12


# --- acf / pacf -----------------------------------------------------------

def test_acf_alternating():
    x = np.tile([1.0, -1.0], 50)
    assert stats.acf(x, 1)[0] == pytest.approx(-1.0, abs=0.02)


def test_acf_iid_mostly_inside_band():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000)
    rho = stats.acf(x, 20)
    assert np.mean(np.abs(rho) < 3 / math.sqrt(1000)) >= 0.9


def test_acf_ar1():
    x = ar1(0.8, 2000, np.random.default_rng(1))
    assert stats.acf(x, 1)[0] == pytest.approx(0.8, abs=0.05)


def test_acf_fft_path_matches_direct():
    x = np.random.default_rng(2).standard_normal(300)
    d = x - x.mean()
    direct = np.array([d[:-j] @ d[j:] for j in range(1, 120)]) / (d @ d)
    assert np.allclose(stats.acf(x, 119), direct, atol=1e-12)


def test_acf_constant_raises():
    with pytest.raises(DegenerateSeriesError):
        stats.acf(np.full(30, 4.0), 3)


def test_pacf_ar1_cuts_off():
    x = ar1(0.6, 3000, np.random.default_rng(3))
    p = stats.pacf(x, 5)
    assert p[0] == pytest.approx(0.6, abs=0.05)
    assert np.all(np.abs(p[1:]) < 0.06)


def test_pacf_matches_regression_oracle():
    x = ar1(0.5, 400, np.random.default_rng(4))
    rho = stats.acf(x, 3)
    # phi_33 from solving the order-3 Yule-Walker system
    R = np.array([[1, rho[0], rho[1]], [rho[0], 1, rho[0]], [rho[1], rho[0], 1]])
    phi = np.linalg.solve(R, rho)
    assert stats.pacf(x, 3)[2] == pytest.approx(phi[2], abs=1e-12)


# --- Ljung-Box ------------------------------------------------------------

def test_ljung_box_zero_acf():
    # lag-1 sample autocorrelation of this cycle is exactly zero
    y = np.array([1, 0, -1, 0] * 25, dtype=float)
    assert abs(stats.acf(y, 1)[0]) < 1e-14
    res = stats.ljung_box(y, lags=1)
    assert res.statistic == pytest.approx(0.0, abs=1e-20)
    assert res.p_value == pytest.approx(1.0)


def test_ljung_box_matches_reference_formula_and_rejects_ar1():
    x = ar1(0.8, 200, np.random.default_rng(5))
    res = stats.ljung_box(x, lags=24)
    d = x - x.mean()
    r = np.array([d[:-j] @ d[j:] for j in range(1, 25)]) / (d @ d)
    q = 200 * 202 * np.sum(r ** 2 / (200 - np.arange(1, 25)))
    assert res.statistic == pytest.approx(q, rel=1e-12)
    assert res.p_value == pytest.approx(sps.chi2.sf(q, 24), abs=1e-12)
    assert res.p_value < 0.05


def test_ljung_box_default_lags():
    assert stats.default_lb_lags(85) == 21
    assert stats.default_lb_lags(500) == 24


def test_ljung_box_constant_is_degenerate():
    with pytest.raises(DegenerateSeriesError):
        stats.ljung_box(np.zeros(50), lags=5)


def test_ljung_box_p_uniform_under_null():
    rng = np.random.default_rng(6)
    ps = np.array([stats.ljung_box(rng.standard_normal(500), lags=24).p_value for _ in range(1000)])
    assert abs(np.mean(ps < 0.05) - 0.05) <= 0.02
    assert sps.kstest(ps, "uniform").pvalue > 0.001


# --- nonlinearity / ARCH --------------------------------------------------

def test_teraesvirta_linear_vs_nonlinear():
    med = np.median([stats.teraesvirta_stat(ar1(0.5, 500, np.random.default_rng(s))).p_value
                     for s in range(200)])
    assert med > 0.1
    hits = 0
    for s in range(50):
        rng = np.random.default_rng(100 + s)
        e = rng.standard_normal(600)
        x = np.zeros(600)
        for t in range(1, 600):
            x[t] = np.clip(0.3 * x[t - 1] + 0.6 * x[t - 1] ** 2, -3, 3) + e[t]
        hits += stats.teraesvirta_stat(x[100:]).p_value < 0.05
    assert hits >= 45


def test_teraesvirta_constant_and_short():
    with pytest.raises(DegenerateSeriesError):
        stats.teraesvirta_stat(np.ones(40))
    with pytest.raises(PreconditionError):
        stats.teraesvirta_stat(np.arange(10.0))


def test_arch_lm():
    rng = np.random.default_rng(7)
    r2 = [stats.arch_lm_stat(rng.standard_normal(400)).params["r2"] for _ in range(100)]
    assert np.mean(r2) < 0.06
    hits = 0
    for s in range(50):
        rng = np.random.default_rng(200 + s)
        z = rng.standard_normal(700)
        x = np.zeros(700)
        for t in range(1, 700):
            x[t] = z[t] * math.sqrt(0.3 + 0.7 * x[t - 1] ** 2)
        hits += stats.arch_lm_stat(x[200:]).p_value < 0.05
    assert hits >= 45
    with pytest.raises(PreconditionError):
        stats.arch_lm_stat(np.arange(10.0), lags=12)


# --- spectral entropy / lumpiness -----------------------------------------

def test_spectral_entropy_ordering():
    t = np.arange(256)
    sine = np.sin(2 * np.pi * t / 16)
    rng = np.random.default_rng(8)
    noise = rng.standard_normal(1024)
    h_sine = stats.spectral_entropy(sine)
    h_noise = stats.spectral_entropy(noise)
    h_mix = stats.spectral_entropy(sine + 0.3 * rng.standard_normal(256))
    assert h_sine < 0.05
    assert h_noise > 0.9
    assert h_sine < h_mix < h_noise


def test_lumpiness_regime_change():
    rng = np.random.default_rng(9)
    base, lumpy = [], []
    for _ in range(100):
        e = rng.standard_normal(120)
        base.append(stats.lumpiness(e, 12))
        e2 = e.copy()
        e2[48:72] *= 5
        lumpy.append(stats.lumpiness(e2, 12))
    assert np.mean(base) < 0.5
    assert np.mean(lumpy) > np.mean(base)
    assert stats.lumpiness(np.full(48, 2.0), 12) == 0.0
    with pytest.raises(PreconditionError):
        stats.lumpiness(np.arange(20.0), 12)


# --- strengths ------------------------------------------------------------

def test_strengths_ramp_and_sine():
    ramp = stats.strengths(np.arange(96.0), 12)
    assert ramp.trend_strength == pytest.approx(1.0, abs=1e-9)
    assert ramp.seasonal_strength == pytest.approx(0.0, abs=1e-9)
    sine = stats.strengths(np.sin(2 * np.pi * np.arange(96) / 12), 12)
    assert sine.seasonal_strength == pytest.approx(1.0, abs=1e-9)


def test_strengths_short_series_has_no_seasonal():
    s = stats.strengths(np.arange(10.0) ** 1.5, 12)
    assert s.seasonal_strength is None
    assert 0 <= s.trend_strength <= 1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=30, max_size=80))
def test_strengths_always_in_unit_interval(values):
    s = stats.strengths(np.array(values), 12)
    assert 0 <= s.trend_strength <= 1
    assert s.seasonal_strength is None or 0 <= s.seasonal_strength <= 1


# --- effective sample size ------------------------------------------------

def test_ess_cases():
    x = np.array([1, 0, -1, 0] * 50, dtype=float)
    # lag-1 acf is 0 -> sum truncates immediately
    assert stats.effective_sample_size(x) == pytest.approx(200.0)
    assert stats.effective_sample_size([3.0]) == 1.0
    assert stats.effective_sample_size(np.full(20, 1.0)) == 20.0


def test_ess_ar1_closed_form():
    n, phi = 2000, 0.5
    vals = [stats.effective_sample_size(ar1(phi, n, np.random.default_rng(s))) for s in range(20)]
    target = n * (1 - phi) / (1 + phi)
    assert np.mean(vals) == pytest.approx(target, rel=0.10)


# --- Friedman / Nemenyi / t -----------------------------------------------

def test_friedman_identical_columns():
    v = np.tile(np.arange(5.0)[:, None], (1, 3))
    res = stats.friedman_test(v)
    assert res.statistic == 0.0 and res.p_value == pytest.approx(1.0)


def test_friedman_hand_ranked():
    v = np.array([[1.0, 2.0, 3.0], [2.0, 1.0, 3.0], [1.0, 3.0, 2.0], [1.0, 2.0, 3.0]])
    # rank sums: 5, 8, 11 -> chi2 = 12/(4*3*4) * (25+64+121) - 3*4*4 = 4.5
    res = stats.friedman_test(v)
    assert res.statistic == pytest.approx(4.5, abs=1e-12)
    assert res.p_value == pytest.approx(math.exp(-4.5 / 2), abs=1e-12)


def test_friedman_perfect_ranking_significant():
    v = np.tile(np.arange(4.0), (8, 1))
    res = stats.friedman_test(v)
    # perfect ranking: chi2 = N (k-1) = 24
    assert res.statistic == pytest.approx(24.0)
    assert res.p_value < 0.05


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_friedman_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    v = rng.random((6, 4)) + 0.1
    a = stats.friedman_test(v)
    b = stats.friedman_test(np.exp(3 * v) - 7)
    assert a.statistic == pytest.approx(b.statistic)


def test_nemenyi_cd():
    assert stats.nemenyi_cd(2, 9, 0.05) == pytest.approx(1.960 / 3)
    # k=4, N=8: 2.569 * sqrt(20/48)
    assert stats.nemenyi_cd(4, 8, 0.05) == pytest.approx(2.569 * math.sqrt(20 / 48))
    cds = [stats.nemenyi_cd(4, n) for n in (2, 10, 100, 10_000)]
    assert all(a > b for a, b in zip(cds, cds[1:]))
    with pytest.raises(PreconditionError, match="supported"):
        stats.nemenyi_cd(4, 8, 0.01)
    # table agrees with the studentized range distribution
    assert stats.nemenyi_q(4) == pytest.approx(sps.studentized_range.ppf(0.95, 4, 1e6) / math.sqrt(2), abs=2e-3)


def test_paired_t():
    rng = np.random.default_rng(10)
    a, b = rng.random(8), rng.random(8)
    r1 = stats.paired_t_one_tail(a, b)
    r2 = stats.paired_t_one_tail(b, a)
    assert r1.p_value + r2.p_value == pytest.approx(1.0, abs=1e-12)
    assert r1.p_value == pytest.approx(sps.ttest_rel(a, b, alternative="less").pvalue, abs=1e-10)
    with pytest.raises(DegenerateSeriesError):
        stats.paired_t_one_tail(a, a + 0.3)
