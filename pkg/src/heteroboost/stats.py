"""Statistical primitives used for residual diagnostics and model comparison.

Autocorrelation, portmanteau/nonlinearity/ARCH tests, spectral features,
decomposition strengths, effective sample size, and the rank- and
t-based tests used to compare forecasting models across datasets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata, studentized_range

from .errors import DegenerateSeriesError, PreconditionError
from .specfun import chi2_sf, t_cdf

_VAR_TOL = 1e-12


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    params: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting this class


@dataclass(frozen=True)
class DecompositionStrengths:
    trend_strength: float
    seasonal_strength: float | None  # None when the series is too short


def _as_1d(x):
    arr = np.asarray(x, dtype=float).ravel()
    if not np.all(np.isfinite(arr)):
        raise PreconditionError("series contains non-finite values")
    return arr


def is_degenerate(x) -> bool:
    """True when the series has (numerically) zero variance."""
    arr = np.asarray(x, dtype=float)
    if arr.size < 2:
        return True
    scale = max(1.0, float(np.max(np.abs(arr))))
    return float(np.var(arr)) <= _VAR_TOL * scale * scale


def acf(x, max_lag: int) -> np.ndarray:
    """Biased sample autocorrelations rho(1..max_lag)."""
    x = _as_1d(x)
    n = x.size
    if not 1 <= max_lag < n:
        raise PreconditionError(f"need 1 <= max_lag < n, got max_lag={max_lag}, n={n}")
    if is_degenerate(x):
        raise DegenerateSeriesError("autocorrelation undefined for a constant series")
    d = x - x.mean()
    denom = float(d @ d)
    if max_lag <= 50:
        return np.array([float(d[:-j] @ d[j:]) / denom for j in range(1, max_lag + 1)])
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    full = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return full[1:max_lag + 1] / denom


def pacf(x, max_lag: int) -> np.ndarray:
    """Partial autocorrelations phi_jj, j = 1..max_lag, by Durbin-Levinson."""
    rho = acf(x, max_lag)
    out = np.empty(max_lag)
    phi = np.zeros(0)
    for k in range(1, max_lag + 1):
        if k == 1:
            phikk = rho[0]
        else:
            num = rho[k - 1] - phi @ rho[k - 2::-1]
            den = 1.0 - phi @ rho[:k - 1]
            phikk = num / den if abs(den) > 1e-15 else 0.0
        phi = np.append(phi - phikk * phi[::-1], phikk)
        out[k - 1] = phikk
    return out


def default_lb_lags(n: int) -> int:
    """Ljung-Box lag count: two yearly cycles of monthly data, capped at n/4."""
    return max(1, min(24, n // 4))


def ljung_box(residuals, lags: int | None = None) -> TestResult:
    """Ljung-Box portmanteau test for residual autocorrelation.

    Q = n(n+2) sum_{j<=lags} rho_j^2 / (n-j), referred to chi-square(lags).
    Raises DegenerateSeriesError for constant residuals.
    """
    x = _as_1d(residuals)
    n = x.size
    if lags is None:
        lags = default_lb_lags(n)
    if lags >= n:
        raise PreconditionError(f"Ljung-Box needs n > lags (n={n}, lags={lags})")
    rho = acf(x, lags)
    j = np.arange(1, lags + 1)
    q = float(n * (n + 2) * np.sum(rho ** 2 / (n - j)))
    return TestResult(q, chi2_sf(q, lags), {"df": lags, "n": n})


def _ols_rss(X, y, ridge=0.0):
    xtx = X.T @ X
    if ridge:
        xtx = xtx + ridge * np.eye(X.shape[1])
    beta = np.linalg.solve(xtx, X.T @ y)
    resid = y - X @ beta
    return float(resid @ resid)


def teraesvirta_stat(x) -> TestResult:
    """Terasvirta neural-network nonlinearity test with one lag.

    The standardized series is regressed on its first lag; the residuals
    are then regressed on the lag plus its square and cube.  The statistic
    is n * R^2 of that auxiliary regression, chi-square with 2 df.
    """
    x = _as_1d(x)
    if x.size < 30:
        raise PreconditionError("Terasvirta test needs at least 30 observations")
    if is_degenerate(x):
        raise DegenerateSeriesError("Terasvirta test undefined for a constant series")
    z = (x - x.mean()) / x.std()
    y, lag = z[1:], z[:-1]
    n = y.size
    ones = np.ones(n)
    X0 = np.column_stack([ones, lag])
    beta = np.linalg.lstsq(X0, y, rcond=None)[0]
    u = y - X0 @ beta
    ssr0 = float(u @ u)
    if ssr0 <= _VAR_TOL * n:
        raise DegenerateSeriesError("linear fit is exact; nonlinearity test undefined")
    X1 = np.column_stack([ones, lag, lag ** 2, lag ** 3])
    try:
        ssr1 = _ols_rss(X1, u)
    except np.linalg.LinAlgError:
        ssr1 = _ols_rss(X1, u, ridge=1e-8)
    r2 = max(0.0, 1.0 - ssr1 / ssr0)
    stat = n * r2
    return TestResult(stat, chi2_sf(stat, 2), {"df": 2, "r2": r2})


def arch_lm_stat(x, lags: int = 12) -> TestResult:
    """Engle's ARCH Lagrange-multiplier test.

    Squared demeaned values are regressed on ``lags`` of themselves;
    statistic = n * R^2 ~ chi-square(lags).  ``params['r2']`` is the
    R^2 used as a clustering feature.
    """
    x = _as_1d(x)
    if lags < 1 or x.size <= lags + 1:
        raise PreconditionError(f"ARCH-LM needs n > lags + 1 (n={x.size}, lags={lags})")
    if is_degenerate(x):
        raise DegenerateSeriesError("ARCH-LM undefined for a constant series")
    e2 = (x - x.mean()) ** 2
    y = e2[lags:]
    n = y.size
    X = np.column_stack([np.ones(n)] + [e2[lags - j:-j] for j in range(1, lags + 1)])
    yc = y - y.mean()
    tss = float(yc @ yc)
    if tss <= 0.0:
        r2 = 0.0
    else:
        beta = np.linalg.lstsq(X, y, rcond=None)[0]
        resid = y - X @ beta
        r2 = float(np.clip(1.0 - (resid @ resid) / tss, 0.0, 1.0))
    stat = n * r2
    return TestResult(stat, chi2_sf(stat, lags), {"df": lags, "r2": r2})


def spectral_entropy(x) -> float:
    """Normalized Shannon entropy of the periodogram (1 = flat spectrum)."""
    x = _as_1d(x)
    if x.size < 16:
        raise PreconditionError("spectral entropy needs at least 16 observations")
    if is_degenerate(x):
        raise DegenerateSeriesError("spectral entropy undefined for a constant series")
    spec = np.abs(np.fft.rfft(x - x.mean())) ** 2
    spec = spec[1:]  # drop the zero frequency (removed by demeaning)
    total = spec.sum()
    p = spec / total
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum() / math.log(p.size))


def lumpiness(x, tile: int = 12) -> float:
    """Variance of the variances across non-overlapping tiles of the standardized series."""
    x = _as_1d(x)
    if tile < 2 or x.size < 2 * tile:
        raise PreconditionError(f"lumpiness needs at least two tiles of width {tile}")
    if is_degenerate(x):
        return 0.0
    z = (x - x.mean()) / x.std()
    ntiles = z.size // tile
    tiles = z[:ntiles * tile].reshape(ntiles, tile)
    return float(np.var(tiles.var(axis=1, ddof=1), ddof=1))


def _centered_ma(x, order):
    """Centered moving average; a 2 x order MA when order is even."""
    if order % 2 == 1:
        w = np.full(order, 1.0 / order)
    else:
        w = np.full(order + 1, 1.0 / order)
        w[0] = w[-1] = 0.5 / order
    half = (w.size - 1) // 2
    out = np.full(x.size, np.nan)
    out[half:x.size - half] = np.convolve(x, w, mode="valid")
    return out


def _strength(rem, part):
    v_sum = np.var(part + rem)
    if v_sum <= _VAR_TOL * max(1.0, float(np.mean(part ** 2 + rem ** 2))):
        return 0.0
    return float(np.clip(1.0 - np.var(rem) / v_sum, 0.0, 1.0))


def decompose(x, frequency: int):
    """Classical additive decomposition; returns (trend, seasonal, remainder).

    Entries outside the moving-average support are NaN.  ``seasonal`` is
    None when the series has fewer than two full cycles.
    """
    x = _as_1d(x)
    n = x.size
    if frequency > 1 and n >= 2 * frequency:
        trend = _centered_ma(x, frequency)
        detr = x - trend
        pos = np.arange(n) % frequency
        idx = np.array([np.nanmean(detr[pos == k]) for k in range(frequency)])
        idx -= idx.mean()
        seasonal = idx[pos]
        return trend, seasonal, x - trend - seasonal
    if n < 8:
        raise PreconditionError("decomposition needs at least 8 observations")
    order = max(3, (n // 4) | 1)
    trend = _centered_ma(x, order)
    return trend, None, x - trend


def strengths(x, frequency: int = 12) -> DecompositionStrengths:
    """Trend and seasonal strength from a moving-average decomposition.

    strength = max(0, 1 - Var(R) / Var(component + R)), clamped to [0, 1].
    """
    values = getattr(x, "values", x)
    frequency = getattr(x, "frequency", frequency)
    trend, seasonal, rem = decompose(values, frequency)
    ok = ~np.isnan(trend)
    t_str = _strength(rem[ok], trend[ok])
    s_str = None if seasonal is None else _strength(rem[ok], seasonal[ok])
    return DecompositionStrengths(t_str, s_str)


def effective_sample_size(x) -> float:
    """Autocorrelation-adjusted sample size n / sum_j (1 - |j|/n) rho(j).

    The sum is truncated before the first lag with |rho| < 2/sqrt(n);
    result is clamped to [1, n].  Constant series return n.
    """
    x = _as_1d(x)
    n = x.size
    if n < 2:
        return float(n)
    if is_degenerate(x):
        return float(n)
    rho = acf(x, n - 1)
    thresh = 2.0 / math.sqrt(n)
    below = np.nonzero(np.abs(rho) < thresh)[0]
    cut = below[0] if below.size else rho.size
    j = np.arange(1, cut + 1)
    total = 1.0 + 2.0 * float(np.sum((1.0 - j / n) * rho[:cut]))
    if total <= 0:
        return float(n)
    return float(np.clip(n / total, 1.0, n))


def friedman_test(values) -> TestResult:
    """Friedman rank test over a datasets x models matrix (lower value = better rank).

    Ties get mid-ranks.  ``params['mean_ranks']`` holds the average rank
    of each column.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 2:
        raise PreconditionError("Friedman test needs at least 2 datasets and 2 models")
    N, k = v.shape
    ranks = np.apply_along_axis(rankdata, 1, v)
    mean_ranks = ranks.mean(axis=0)
    stat = 12.0 * N / (k * (k + 1)) * (np.sum(mean_ranks ** 2) - k * (k + 1) ** 2 / 4.0)
    stat = max(0.0, float(stat))
    return TestResult(stat, chi2_sf(stat, k - 1), {"df": k - 1, "mean_ranks": mean_ranks})


# Studentized range / sqrt(2) at infinite df (two-tailed Nemenyi constants).
_NEMENYI_Q = {
    0.05: [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164],
    0.10: [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920],
}


def nemenyi_q(k: int, alpha: float = 0.05) -> float:
    key = _alpha_key(alpha)
    if k < 2:
        raise PreconditionError("need at least two models")
    table = _NEMENYI_Q[key]
    if k - 2 < len(table):
        return table[k - 2]
    # beyond the table: studentized range quantile with a large df
    return float(studentized_range.ppf(1 - key, k, 1e6) / math.sqrt(2))


def _alpha_key(alpha):
    for key in _NEMENYI_Q:
        if abs(alpha - key) < 1e-12:
            return key
    raise PreconditionError(f"unsupported alpha {alpha}; supported: {sorted(_NEMENYI_Q)}")


def nemenyi_cd(k: int, N: int, alpha: float = 0.05) -> float:
    """Nemenyi critical difference q_alpha * sqrt(k(k+1) / (6N))."""
    if N < 2:
        raise PreconditionError("need at least two datasets")
    return nemenyi_q(k, alpha) * math.sqrt(k * (k + 1) / (6.0 * N))


def paired_t_one_tail(a, b) -> TestResult:
    """Paired t-test of H1: mean(a - b) < 0."""
    a = _as_1d(a)
    b = _as_1d(b)
    if a.size != b.size or a.size < 2:
        raise PreconditionError("paired t-test needs equal lengths >= 2")
    d = a - b
    n = d.size
    sd = float(np.std(d, ddof=1))
    if sd <= 1e-14 * max(1.0, float(np.max(np.abs(d)))):
        raise DegenerateSeriesError("differences have zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return TestResult(t, t_cdf(t, n - 1), {"df": n - 1, "mean_diff": float(d.mean())})
