"""Per-series local models: ARIMA by conditional sum of squares, and naive references.

Parametrisation (intercept form, on the differenced series w):

    phi(B) Phi(B^s) w_t = c + theta(B) Theta(B^s) e_t

with phi(B) = 1 - sum phi_j B^j and theta(B) = 1 + sum theta_j B^j, so an
AR(1) forecast is c + phi * x_T.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .errors import ConvergenceError, PreconditionError

logger = logging.getLogger(__name__)

ROOT_MARGIN = 1e-6
# optima whose roots come this close to the unit circle are treated as barrier hits:
# with zero pre-sample innovations CSS can exploit near-unit MA roots
BARRIER_TOL = 1e-2
_PENALTY = 1e20


@dataclass(frozen=True)
class ArimaModel:
    order: tuple
    seasonal: tuple = (0, 0, 0, 0)
    ar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sar: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    const: float = 0.0
    include_const: bool = True
    sigma2: float = math.nan
    css: float = math.nan
    aicc: float = math.nan
    n_fit: int = 0
    n_eff: int = 0

    @property
    def s(self):
        return self.seasonal[3]

    def n_coef(self):
        return self.ar.size + self.ma.size + self.sar.size + self.sma.size + int(self.include_const)

    def min_history(self):
        p, d, _ = self.order
        P, D, _, s = self.seasonal
        return d + s * D + p + s * P + 1

    def label(self):
        p, d, q = self.order
        P, D, Q, s = self.seasonal
        base = f"ARIMA({p},{d},{q})"
        return base + (f"({P},{D},{Q})[{s}]" if s and (P or D or Q) else "")

    def to_dict(self):
        return {
            "order": list(self.order), "seasonal": list(self.seasonal),
            "ar": self.ar.tolist(), "ma": self.ma.tolist(), "sar": self.sar.tolist(), "sma": self.sma.tolist(),
            "const": self.const, "include_const": self.include_const, "sigma2": self.sigma2,
            "css": self.css, "aicc": self.aicc, "n_fit": self.n_fit, "n_eff": self.n_eff,
        }

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        kw["order"] = tuple(kw["order"])
        kw["seasonal"] = tuple(kw["seasonal"])
        for k in ("ar", "ma", "sar", "sma"):
            kw[k] = np.asarray(kw[k], dtype=float)
        return cls(**kw)


@dataclass
class LocalForecast:
    series_id: str
    model: str
    time_index: np.ndarray
    forecasts: np.ndarray


# --- polynomial helpers ---------------------------------------------------------

def _expand(coefs, step, sign):
    """1 + sign*sum(coef_j B^(j*step)) as an ascending coefficient array."""
    out = np.zeros(len(coefs) * step + 1)
    out[0] = 1.0
    for j, c in enumerate(coefs, start=1):
        out[j * step] = sign * c
    return out


def _ar_poly(ar, sar, s):
    return np.convolve(_expand(ar, 1, -1.0), _expand(sar, max(s, 1), -1.0))


def _ma_poly(ma, sma, s):
    return np.convolve(_expand(ma, 1, 1.0), _expand(sma, max(s, 1), 1.0))


def _diff_poly(d, D, s):
    poly = np.array([1.0])
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    for _ in range(D):
        seas = np.zeros(s + 1)
        seas[0], seas[s] = 1.0, -1.0
        poly = np.convolve(poly, seas)
    return poly


def _stable(coefs, sign, radius=1.0 + ROOT_MARGIN):
    """True when 1 + sign*sum c_j B^j has every root of modulus > ``radius``.

    Schur-Cohn step-down on the radius-scaled coefficients: the roots lie
    outside the unit circle exactly when every reflection coefficient has
    modulus below one.
    """
    a = [sign * float(c) * radius ** j for j, c in enumerate(coefs, start=1)]
    while a and a[-1] == 0.0:
        a.pop()
    while a:
        k = a[-1]
        if not abs(k) < 1.0:
            return False
        m = len(a) - 1
        den = 1.0 - k * k
        a = [(a[j] - k * a[m - 1 - j]) / den for j in range(m)]
    return True


def min_root_modulus(coefs, sign):
    """Smallest root modulus of 1 + sign*sum c_j B^j (inf for an empty polynomial)."""
    coefs = np.asarray(coefs, dtype=float)
    if coefs.size == 0 or not np.any(coefs):
        return math.inf
    poly = _expand(coefs, 1, sign)
    return float(np.min(np.abs(np.roots(poly[::-1]))))


def difference(x, d, D, s):
    x = np.asarray(x, dtype=float)
    poly = _diff_poly(d, D, s)
    k = poly.size - 1
    if x.size <= k:
        return np.empty(0)
    return np.convolve(x, poly, mode="valid") if k else x.copy()


# --- conditional sum of squares -----------------------------------------------

def _residuals(w, ar, ma, sar, sma, s, c, ncond):
    phi = _ar_poly(ar, sar, s)
    u = np.convolve(w, phi, mode="valid")[ncond - (phi.size - 1):] - c
    if len(ma) == 0 and len(sma) == 0:
        return u
    return signal.lfilter([1.0], _ma_poly(ma, sma, s), u)


def _unpack(theta, p, q, P, Q, with_c):
    i = 0
    ar = theta[i:i + p]; i += p
    ma = theta[i:i + q]; i += q
    sar = theta[i:i + P]; i += P
    sma = theta[i:i + Q]; i += Q
    c = theta[i] if with_c else 0.0
    return ar, ma, sar, sma, c


def _aicc(css, n, k):
    if n - k - 1 <= 0 or css <= 0:
        return math.inf
    neg2ll = n * (math.log(2 * math.pi * css / n) + 1.0)
    return neg2ll + 2 * k + 2 * k * (k + 1) / (n - k - 1)


def _ols_ar(w, p, ncond, with_c):
    """Least-squares AR(p) start values on the conditioning span."""
    if p == 0:
        return np.zeros(0), (float(np.mean(w[ncond:])) if with_c else 0.0)
    rows = np.column_stack([w[ncond - j: w.size - j] for j in range(1, p + 1)])
    y = w[ncond:]
    X = np.column_stack([np.ones(len(y)), rows]) if with_c else rows
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    if with_c:
        return beta[1:], float(beta[0])
    return beta, 0.0


def arima_fit(series, order, seasonal=(0, 0, 0, 0), include_const=None, ncond=None,
              maxiter=None) -> ArimaModel:
    """Fit an ARIMA by minimising the conditional sum of squares with Nelder-Mead.

    ``ncond`` fixes how many differenced values are used only as
    conditioning lags (defaults to the AR span p + s*P); a shared value
    makes AICc comparable across candidate orders.
    """
    x = np.asarray(series, dtype=float)
    p, d, q = map(int, order)
    P, D, Q, s = map(int, seasonal)
    if s == 0:
        P = D = Q = 0
    need = p + q + d + s * (P + Q + D) + 1
    if x.size <= need:
        raise PreconditionError(f"series length {x.size} must exceed {need} for {order}x{seasonal}")
    if include_const is None:
        include_const = d == 0 and D == 0
    w = difference(x, d, D, s)
    span = p + s * P
    ncond = span if ncond is None else max(int(ncond), span)
    n_eff = w.size - ncond
    if n_eff < 2:
        raise PreconditionError("too few observations after conditioning")

    scale = float(np.var(w[ncond:])) * n_eff
    scale = scale if scale > 0 else 1.0
    k_theta = p + q + P + Q + int(include_const)

    def objective(theta):
        ar, ma, sar, sma, c = _unpack(theta, p, q, P, Q, include_const)
        if not (_stable(ar, -1.0) and _stable(sar, -1.0) and _stable(ma, 1.0) and _stable(sma, 1.0)):
            return _PENALTY
        e = _residuals(w, ar, ma, sar, sma, s, c, ncond)
        val = float(e @ e) / scale
        return val if math.isfinite(val) else _PENALTY

    ar0, c0 = _ols_ar(w, p, ncond, include_const)
    if k_theta == 0:
        best = np.zeros(0)
    elif q == P == Q == 0 and _stable(ar0, -1.0, 1.0 + BARRIER_TOL):
        # pure AR: least squares on the conditioning span is the exact CSS minimiser
        best = np.concatenate([ar0, [c0] if include_const else []])
    else:
        if not _stable(ar0, -1.0):
            ar0 = np.zeros(p)
        c_mean = float(np.mean(w[ncond:])) if include_const else 0.0
        starts = [np.concatenate([ar0, np.zeros(q + P + Q), [c0] if include_const else []]),
                  np.concatenate([np.zeros(p + q + P + Q), [c_mean] if include_const else []])]
        steps = np.full(k_theta, 0.1)
        if include_const:
            steps[-1] = 0.1 * max(float(np.std(w)), 1e-8)
        budget = maxiter or 300 * k_theta
        best, best_val, trace = None, math.inf, []
        for x0 in starts:
            simplex = np.vstack([x0, x0 + np.diag(steps)])
            res = optimize.minimize(
                objective, x0, method="Nelder-Mead",
                options={"xatol": 1e-3, "fatol": 1e-7, "maxiter": budget, "maxfev": 2 * budget,
                         "initial_simplex": simplex, "adaptive": k_theta > 2},
            )
            trace.append({"x0": x0.tolist(), "fun": float(res.fun), "nit": int(res.nit),
                          "status": int(res.status), "message": str(res.message)})
            if res.success and res.fun < best_val:
                best, best_val = res.x, res.fun
            if best is not None:
                break
        if best is None:
            raise ConvergenceError(f"CSS optimisation did not converge for {order}x{seasonal}", trace)
        ar, ma, sar, sma, _ = _unpack(best, p, q, P, Q, include_const)
        radius = 1.0 + BARRIER_TOL
        if best_val >= _PENALTY or not (_stable(ar, -1.0, radius) and _stable(sar, -1.0, radius)
                                        and _stable(ma, 1.0, radius) and _stable(sma, 1.0, radius)):
            raise ConvergenceError(f"optimum for {order}x{seasonal} lies on the stationarity/"
                                   "invertibility barrier", trace)

    ar, ma, sar, sma, c = _unpack(np.asarray(best, dtype=float), p, q, P, Q, include_const)
    e = _residuals(w, ar, ma, sar, sma, s, c, ncond)
    css = float(e @ e)
    k = k_theta + 1
    return ArimaModel(
        order=(p, d, q), seasonal=(P, D, Q, s), ar=np.array(ar), ma=np.array(ma),
        sar=np.array(sar), sma=np.array(sma), const=float(c), include_const=bool(include_const),
        sigma2=css / n_eff, css=css, aicc=_aicc(css, n_eff, k), n_fit=int(x.size), n_eff=int(n_eff),
    )


def css_at(series, model: ArimaModel, ar=None, ma=None, sar=None, sma=None, const=None, ncond=None):
    """CSS of ``series`` under the model's orders with (optionally) substituted coefficients."""
    p, d, _ = model.order
    P, D, _, s = model.seasonal
    w = difference(series, d, D, s)
    ncond = p + s * P if ncond is None else ncond
    e = _residuals(w, model.ar if ar is None else np.asarray(ar, float),
                   model.ma if ma is None else np.asarray(ma, float),
                   model.sar if sar is None else np.asarray(sar, float),
                   model.sma if sma is None else np.asarray(sma, float),
                   s, model.const if const is None else const, ncond)
    return float(e @ e)


# --- order selection ---------------------------------------------------------------

def choose_differencing(x, s=0, threshold=0.05):
    """(d, D) by the variance-reduction rule: difference once when it cuts variance by > threshold."""
    x = np.asarray(x, dtype=float)
    D = 0
    if s > 1 and x.size > s + 2:
        sd = x[s:] - x[:-s]
        if np.var(sd) < (1 - threshold) * np.var(x):
            D = 1
            x = sd
    d = 0
    if x.size > 3 and np.var(np.diff(x)) < (1 - threshold) * np.var(x):
        d = 1
    return d, D


def auto_arima(series, seasonal=False, frequency=12, max_p=3, max_q=3) -> ArimaModel:
    """Grid search over orders minimising AICc on a common conditioning span."""
    x = np.asarray(series, dtype=float)
    if x.size < 20:
        raise PreconditionError("auto_arima needs at least 20 observations")
    s = int(frequency) if seasonal and frequency and frequency > 1 and x.size >= 3 * frequency else 0
    d, D = choose_differencing(x, s)
    seas_range = (0, 1) if s else (0,)
    ncond = max_p + s * max(seas_range)
    best = None
    for p, q, P, Q in itertools.product(range(max_p + 1), range(max_q + 1), seas_range, seas_range):
        try:
            m = arima_fit(x, (p, d, q), (P, D, Q, s), ncond=ncond)
        except (ConvergenceError, PreconditionError) as exc:
            logger.debug("skip (%d,%d,%d)(%d,%d,%d): %s", p, d, q, P, D, Q, exc)
            continue
        if not math.isfinite(m.aicc):
            continue
        # strict improvement keeps the earlier (simpler) order on ties
        if best is None or m.aicc < best.aicc - 1e-12:
            best = m
    if best is None:
        best = arima_fit(x, (0, d, 0), (0, D, 0, s), include_const=True)
    return best


# --- forecasting ---------------------------------------------------------------------

def arima_forecast_one_step(model: ArimaModel, history) -> float:
    """Conditional mean of the next value given ``history`` (innovations pre-sample set to 0)."""
    x = np.asarray(history, dtype=float)
    if x.size < model.min_history():
        raise PreconditionError(f"history of {x.size} values is shorter than {model.min_history()}")
    p, d, _ = model.order
    P, D, _, s = model.seasonal
    w = difference(x, d, D, s)
    span = p + s * P
    e = _residuals(w, model.ar, model.ma, model.sar, model.sma, s, model.const, span)
    phi = _ar_poly(model.ar, model.sar, s)
    theta = _ma_poly(model.ma, model.sma, s)
    # w_{T+1} = c + sum a_j w_{T+1-j} + sum m_j e_{T+1-j}
    w_hat = model.const
    for j in range(1, phi.size):
        w_hat -= phi[j] * w[-j]
    for j in range(1, theta.size):
        if j <= e.size:
            w_hat += theta[j] * e[-j]
    delta = _diff_poly(d, D, s)
    x_hat = w_hat
    for j in range(1, delta.size):
        x_hat -= delta[j] * x[-j]
    return float(x_hat)


def arima_forecasts(model: ArimaModel, series, start, stop):
    """One-step forecasts for origins ``start..stop-1`` using all data before each origin."""
    x = np.asarray(series, dtype=float)
    return np.array([arima_forecast_one_step(model, x[:t]) for t in range(start, stop)])


def naive_baselines(series, frequency=12, start=None, stop=None, series_id=""):
    """Naive and seasonal-naive one-step forecasts over ``start..stop-1``.

    Origins default to every valid index.  The seasonal variant is
    ``None`` when the series is shorter than ``frequency + 1``.
    """
    x = np.asarray(getattr(series, "values", series), dtype=float)
    series_id = series_id or getattr(series, "id", "")
    s = int(frequency)
    stop = x.size if stop is None else stop
    out = {}
    lo = 1 if start is None else max(start, 1)
    t = np.arange(lo, stop)
    out["naive"] = LocalForecast(series_id, "naive", t, x[t - 1])
    if s >= 1 and x.size >= s + 1:
        lo = s if start is None else max(start, s)
        t = np.arange(lo, stop)
        out["snaive"] = LocalForecast(series_id, "snaive", t, x[t - s])
    else:
        out["snaive"] = None
    return out
