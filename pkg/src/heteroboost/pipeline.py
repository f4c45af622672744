"""Two-stage forecasting: a global model, residual screening, and stage-two correction.

Stage one fits a global model on every series.  Its residuals are
screened with Ljung-Box; the series that fail are corrected either by
per-series ARIMA models on additive residuals (Type-I) or by cluster
specific sub-models grown from the frozen stage-one network (Type-II).
``run_strategy`` also builds the three alternative ways of using clusters
that the Type-II model is compared against.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import stats
from .clustering import ClusterBudget, Clustering, select_clustering
from .dataset import WindowBatch, WindowSpec, make_windows, raw_windows, window_stats
from .errors import (
    HeteroBoostError, PreconditionError, ResidualModeError, StrategyError,
)
from .features import FEATURE_NAMES, build_matrix, extract_features
from .localmodels import ArimaModel, arima_forecast_one_step, auto_arima
from .neuralnet import (
    Dense, HyperGrid, NeuralForecaster, PooledAR, TrainConfig, build_network, build_sub_tsgm,
    grid_search, load_network, pooled_ar_fit, save_network, train,
)
from .parallel import pmap

logger = logging.getLogger(__name__)

MODES = ("additive", "multiplicative")
STRATEGIES = ("a", "b", "c", "d")


# --- configuration ----------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    model: str = "mlp"  # pooled-ar | mlp | lstm
    stage2: str = "type2"  # none | type1 | type2
    strategy: str = "b"
    residual: str | None = None  # None: additive for Type-I, multiplicative otherwise
    clusters: object = "auto"  # "auto" or a fixed K
    k_candidates: tuple | None = None
    alpha: float = 0.05
    lb_lags: int | None = None
    budget_u: float = 10.0
    budget_f: str = "constant"
    grid: HyperGrid = HyperGrid()
    train: TrainConfig = TrainConfig()
    stage2_train: TrainConfig = TrainConfig()
    stage2_batches: tuple = (16, 8, 4)
    stage2_extra: tuple | None = None  # hidden widths of the extra tanh layers; None = stage-one width
    kmeans_restarts: int = 10
    features: tuple = FEATURE_NAMES
    type1_seasonal: bool = True
    accept_guard: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.model not in ("pooled-ar", "mlp", "lstm"):
            raise PreconditionError(f"unknown model kind {self.model!r}")
        if self.stage2 not in ("none", "type1", "type2"):
            raise PreconditionError(f"unknown stage-two type {self.stage2!r}")
        if self.strategy not in STRATEGIES:
            raise StrategyError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.residual is not None and self.residual not in MODES:
            raise ResidualModeError(f"unknown residual mode {self.residual!r}")
        if not 0 < self.alpha < 1:
            raise PreconditionError("alpha must lie in (0, 1)")

    @property
    def residual_mode(self):
        if self.residual is not None:
            return self.residual
        return "additive" if self.stage2 in ("type1", "none") else "multiplicative"

    @property
    def budget(self):
        return ClusterBudget(self.budget_u, self.budget_f)

    def to_dict(self):
        return json.loads(json.dumps(dataclasses.asdict(self), default=list))

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- residuals and screening ---------------------------------------------------------

@dataclass(frozen=True)
class ResidualMode:
    mode: str = "additive"
    shift: float | None = None  # None: data-scaled default per series

    def __post_init__(self):
        if self.mode not in MODES:
            raise ResidualModeError(f"unknown residual mode {self.mode!r}")
        if self.shift is not None and self.shift < 0:
            raise ResidualModeError("shift must be nonnegative")


def default_shift(values):
    """max(0, -min) + 1e-3 * range: moves the series to strictly positive values."""
    v = np.asarray(values, dtype=float)
    return float(max(0.0, -v.min()) + 1e-3 * (v.max() - v.min()))


@dataclass
class SeriesResiduals:
    series_id: str
    time_index: np.ndarray
    actual: np.ndarray
    forecast: np.ndarray
    residual: np.ndarray
    shift: float = 0.0


def residual_values(actual, forecast, mode, shift=0.0, series_id=""):
    actual = np.asarray(actual, dtype=float)
    forecast = np.asarray(forecast, dtype=float)
    if mode == "additive":
        return actual - forecast
    num, den = actual + shift, forecast + shift
    if np.any(num <= 0) or np.any(den <= 0):
        bad = float(min(num.min(initial=np.inf), den.min(initial=np.inf)))
        raise ResidualModeError(
            f"series {series_id!r}: multiplicative residuals need positive values after the shift "
            f"(smallest shifted value {bad:.4g}); use a larger shift or additive mode")
    return num / den


def compute_residuals(model, tset, mode: ResidualMode | str = "additive", segment="train"):
    """Stage-one residuals on the training span (``segment="in_sample"`` adds validation).

    ``model`` is a global model or any fitted pipeline (its composite
    forecasts are used).  Returns ``{series_id: SeriesResiduals}``.
    """
    mode = ResidualMode(mode) if isinstance(mode, str) else mode
    fc = _forecaster(model).forecast(tset, segment)
    out = {}
    for i, s in enumerate(tset.series):
        if s.id not in fc:
            continue
        f = fc[s.id]
        lo, hi = tset.splits[i].bounds("train")
        shift = 0.0
        if mode.mode == "multiplicative":
            # the default shift also covers the forecasts, which can undershoot the data
            shift = mode.shift if mode.shift is not None else default_shift(np.r_[s.values[:hi], f.forecast])
        res = residual_values(f.actual, f.forecast, mode.mode, shift, s.id)
        out[s.id] = SeriesResiduals(s.id, f.time_index, f.actual, f.forecast, res, shift)
    return out


@dataclass
class HeterogeneityReport:
    tests: dict
    I_h: list
    n: int
    n_h: int
    R_h: float
    mode: str
    stage: str
    alpha: float
    lags: int | None
    degenerate: list = field(default_factory=list)

    @property
    def stage_two_needed(self):
        return self.n_h > 0

    def to_dict(self):
        return {
            "stage": self.stage, "mode": self.mode, "alpha": self.alpha, "lags": self.lags,
            "n": self.n, "n_h": self.n_h, "R_h": self.R_h, "I_h": list(self.I_h),
            "degenerate": list(self.degenerate),
            "p_values": {k: (None if v is None else v.p_value) for k, v in self.tests.items()},
        }


def heterogeneity_level(n_h, n):
    """R_h = n_h / n."""
    if n <= 0 or not 0 <= n_h <= n:
        raise PreconditionError("need 0 <= n_h <= n and n > 0")
    return n_h / n


def screen_heterogeneity(residuals: dict, alpha=0.05, lags=None, mode="additive", stage="before"):
    """Flag series whose residuals fail the Ljung-Box white-noise test at level ``alpha``.

    Constant residual series cannot be tested; they are flagged as
    heterogeneous and listed in ``degenerate``.
    """
    tests, flagged, degenerate = {}, [], []
    for sid in residuals:
        r = residuals[sid]
        h = r.residual if isinstance(r, SeriesResiduals) else np.asarray(r, dtype=float)
        try:
            res = stats.ljung_box(h, lags)
        except stats.DegenerateSeriesError:
            tests[sid] = None
            degenerate.append(sid)
            flagged.append(sid)
            continue
        tests[sid] = res
        if res.p_value < alpha:
            flagged.append(sid)
    n = len(tests)
    n_h = len(flagged)
    return HeterogeneityReport(tests, flagged, n, n_h, heterogeneity_level(n_h, n) if n else 0.0,
                               mode, stage, alpha, lags, degenerate)


# --- stage one -------------------------------------------------------------------------

@dataclass
class SeriesForecast:
    time_index: np.ndarray
    actual: np.ndarray
    forecast: np.ndarray


@dataclass
class StageOne:
    """A fitted global model with the lookback it was trained for."""
    model: object  # NeuralForecaster or PooledAR
    kind: str
    lookback: int
    cell: dict
    table: list = field(default_factory=list)
    history: object = None

    @property
    def network(self):
        return getattr(self.model, "net", None)

    def n_params(self):
        return self.model.n_params()

    def predict(self, windows, extra=None):
        return self.model.predict(windows, extra)

    def full_forecasts(self, values):
        """One-step forecasts for every target index >= lookback (NaN before)."""
        values = np.asarray(values, dtype=float)
        out = np.full(values.size, np.nan)
        win, _, idx = raw_windows(values, self.lookback, self.lookback, values.size)
        if idx.size:
            out[idx] = self.predict(win)
        return out

    def forecast(self, tset, segment="test"):
        return _segment_forecasts(tset, segment, self.lookback,
                                  lambda i, s: self.full_forecasts(s.values))


def _segment_forecasts(tset, segment, first, full_fn):
    out = {}
    for i, s in enumerate(tset.series):
        lo, hi = _segment_bounds(tset.splits[i], segment)
        lo = max(lo, first)
        if hi <= lo:
            continue
        full = full_fn(i, s)
        idx = np.arange(lo, hi)
        out[s.id] = SeriesForecast(idx, s.values[lo:hi].copy(), full[lo:hi])
    return out


def _segment_bounds(split, segment):
    if segment == "in_sample":
        return 0, split.val_end
    return split.bounds(segment)


def fit_stage_one(tset, kind="mlp", grid: HyperGrid | None = None, cfg: TrainConfig = TrainConfig()):
    """Grid-search and train the global model on every series' training span."""
    if tset is None or tset.n == 0:
        raise PreconditionError("cannot fit a global model on an empty set")
    grid = grid or HyperGrid()
    if kind == "pooled-ar":
        table, best = [], None
        for q in grid.input_len:
            model = pooled_ar_fit(tset, q)
            va = make_windows(tset, WindowSpec(q), "val")
            err = model.predict(va.raw_inputs) - va.raw_targets
            score = float(np.mean(err ** 2)) if len(va) else math.inf
            table.append({"input_len": q, "val_loss": score})
            if best is None or score < best[0]:
                best = (score, q, model)
        return StageOne(best[2], kind, best[1], {"input_len": best[1]}, table)
    if kind not in ("mlp", "lstm"):
        raise PreconditionError(f"unknown global model kind {kind!r}")

    def windows_for(q):
        return make_windows(tset, WindowSpec(q), "train"), make_windows(tset, WindowSpec(q), "val")

    res = grid_search(grid, kind, windows_for, cfg)
    q = res.best_cell["input_len"]
    return StageOne(NeuralForecaster(res.model, q), kind, q, res.best_cell, res.table, res.history)


# --- the composite model ----------------------------------------------------------------

@dataclass
class ClusterModel:
    """A stage-two model for one cluster.  ``model`` is None when it fell back to stage one."""
    model: NeuralForecaster | None
    members: list
    batch_size: int | None = None
    val_sse: float = math.nan
    train_mse: float = math.nan
    stage_one_train_mse: float = math.nan
    accepted: bool = False


@dataclass
class TwoStagePipeline:
    stage_one: StageOne | None
    config: PipelineConfig
    strategy: str = "b"
    stage2: str = "none"
    mode: str = "additive"
    shifts: dict = field(default_factory=dict)
    report_before: HeterogeneityReport | None = None
    report_after: HeterogeneityReport | None = None
    type1: dict = field(default_factory=dict)  # series id -> ArimaModel
    clustering: Clustering | None = None
    cluster_models: dict = field(default_factory=dict)  # k -> ClusterModel
    selection: object = None
    raw_models: dict = field(default_factory=dict)  # strategy (a): k -> StageOne
    notes: list = field(default_factory=list)

    @property
    def assignment(self):
        return self.clustering.assignments if self.clustering is not None else {}

    @property
    def lookback(self):
        if self.stage_one is not None:
            return self.stage_one.lookback
        return next(iter(self.raw_models.values())).lookback

    def first_target(self):
        return 2 * self.lookback if self.strategy == "c" else self.lookback

    # full one-step forecast paths -------------------------------------------------
    def full_forecasts(self, values, series_id):
        values = np.asarray(values, dtype=float)
        if self.strategy == "a":
            k = self.assignment[series_id]
            return self.raw_models[k].full_forecasts(values)
        g = self.stage_one.full_forecasts(values)
        if self.strategy == "b" and self.stage2 == "type1":
            arima = self.type1.get(series_id)
            if arima is None:
                return g
            return g + _type1_corrections(arima, values - g, self.lookback)
        k = self.assignment.get(series_id)
        cm = self.cluster_models.get(k) if k is not None else None
        if cm is None or cm.model is None:
            return g
        q = self.lookback
        out = g.copy()
        if self.strategy == "b":
            win, _, idx = raw_windows(values, q, q, values.size)
            out[idx] = cm.model.predict(win)
        elif self.strategy == "c":
            h = _residual_path(values, g, self.mode, self.shifts.get(series_id, 0.0))
            win, _, idx = raw_windows(h, q, 2 * q, values.size)
            if idx.size:
                h_hat = cm.model.predict(win)
                out[idx] = _combine(g[idx], h_hat, self.mode, self.shifts.get(series_id, 0.0))
        elif self.strategy == "d":
            win, _, idx = raw_windows(values, q, q, values.size)
            out[idx] = cm.model.predict(win, g[idx])
        return out

    def forecast(self, tset, segment="test"):
        return _segment_forecasts(tset, segment, self.lookback,
                                  lambda i, s: self.full_forecasts(s.values, s.id))

    def stage_two_params(self):
        total = sum(m.n_coef() + 1 for m in self.type1.values())
        total += sum(cm.model.n_params(trainable_only=True) for cm in self.cluster_models.values()
                     if cm.model is not None)
        return total


def _forecaster(model):
    if isinstance(model, (StageOne, TwoStagePipeline)):
        return model
    raise PreconditionError("expected a fitted StageOne or TwoStagePipeline")


def _residual_path(values, g, mode, shift):
    if mode == "additive":
        return values - g
    den = g + shift
    with np.errstate(divide="ignore", invalid="ignore"):
        h = (values + shift) / den
    return np.where(den > 0, h, 1.0)


def _combine(g, h_hat, mode, shift):
    if mode == "additive":
        return g + h_hat
    return (g + shift) * h_hat - shift


def _type1_corrections(model: ArimaModel, h, q):
    """One-step ARIMA forecasts of the residual path h (valid from index q); 0 where history is short."""
    corr = np.zeros(h.size)
    need = model.min_history()
    for t in range(q + need, h.size):
        corr[t] = arima_forecast_one_step(model, h[q:t])
    return corr


# --- training-set error ------------------------------------------------------------------

def training_mse(model, tset, per_series=False):
    """Raw-scale MSE of one-step forecasts over every series' training targets."""
    fc = _forecaster(model).forecast(tset, "train")
    if per_series:
        return {k: float(np.mean((v.forecast - v.actual) ** 2)) for k, v in fc.items()}
    err = np.concatenate([v.forecast - v.actual for v in fc.values()])
    return float(np.mean(err ** 2))


# --- stage two: Type-I ------------------------------------------------------------------------

def _base_pipeline(stage_one, config, strategy="b", stage2="none", mode=None):
    return TwoStagePipeline(stage_one, config, strategy=strategy, stage2=stage2,
                            mode=mode or config.residual_mode)


def _screen(pipe_or_model, tset, mode, config, stage):
    res = compute_residuals(pipe_or_model, tset, ResidualMode(mode), "train")
    return res, screen_heterogeneity(res, config.alpha, config.lb_lags, mode, stage)


def fit_stage_two_type1(pipeline: TwoStagePipeline, report: HeterogeneityReport, tset) -> TwoStagePipeline:
    """Per-series auto ARIMA on the additive residuals of the heterogeneous series.

    A fit is kept only when it does not raise that series' training MSE;
    failures and rejections fall back to the stage-one forecast.
    """
    if not report.I_h:
        raise PreconditionError("no heterogeneous series: stage two is not needed")
    if report.mode != "additive":
        raise ResidualModeError("Type-I correction works on additive residuals")
    cfg = pipeline.config
    g = pipeline.stage_one
    q = g.lookback

    def fit_one(sid):
        i = tset.index(sid)
        s = tset.series[i]
        hi = tset.splits[i].train_end
        values = s.values
        gf = g.full_forecasts(values)
        h = values - gf
        try:
            model = auto_arima(h[q:hi], seasonal=cfg.type1_seasonal, frequency=s.frequency)
        except (HeteroBoostError, np.linalg.LinAlgError) as exc:
            logger.warning("Type-I fit failed for %s: %s", sid, exc)
            return sid, None, f"fit failed: {exc}"
        corr = _type1_corrections(model, h[:hi], q)
        before = float(np.mean(h[q:hi] ** 2))
        after = float(np.mean((h[q:hi] - corr[q:hi]) ** 2))
        if cfg.accept_guard and after > before:
            return sid, None, f"rejected: training MSE {after:.6g} > {before:.6g}"
        return sid, model, None

    pipe = replace(pipeline, stage2="type1", mode="additive", report_before=report, type1={},
                   notes=list(pipeline.notes))
    for sid, model, note in pmap(fit_one, report.I_h):
        if model is not None:
            pipe.type1[sid] = model
        else:
            pipe.notes.append(f"{sid}: {note}")
    _, pipe.report_after = _screen(pipe, tset, "additive", cfg, "after")
    return pipe


# --- stage two: cluster models --------------------------------------------------------------------

def _seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _extra_layers(cfg, q, stage_one_width, rng):
    widths = list(cfg.stage2_extra) if cfg.stage2_extra else [stage_one_width]
    layers, d = [], q
    for w in widths:
        layers.append(Dense(d, int(w), "tanh", rng))
        d = int(w)
    layers.append(Dense(d, 1, "linear", rng))
    return layers


def _train_over_batches(make_net, tr, va, cfg: PipelineConfig, seed):
    """Train one network per stage-two batch size; keep the lowest validation loss."""
    best = None
    for b in cfg.stage2_batches:
        net = make_net(np.random.default_rng(_seed(seed, b, 1)))
        tcfg = replace(cfg.stage2_train, batch_size=int(b), seed=_seed(seed, b, 2),
                       include_initial=bool(getattr(net, "warm_started", False)))
        fitted, hist = train(net, tr, va, tcfg)
        losses = list(hist.val_loss)
        if tcfg.include_initial and math.isfinite(hist.initial_val_loss):
            losses.append(hist.initial_val_loss)
        score = min(losses)
        if best is None or score < best[0]:
            best = (score, fitted, int(b))
    return best[1], best[2]


def _batch_from_arrays(series_arrays, q, segment_bounds, extras=None, first=None):
    """Normalized windows over arbitrary per-series paths.

    ``series_arrays``: list of (series_id, path); ``segment_bounds``: list of
    (lo, hi) target ranges; ``extras``: optional list of full-length arrays
    appended (normalized with the window stats) as one more input column.
    """
    wins, tgts, ids, idxs, ext = [], [], [], [], []
    for j, (sid, path) in enumerate(series_arrays):
        lo, hi = segment_bounds[j]
        lo = max(lo, first if first is not None else q)
        win, tgt, idx = raw_windows(path, q, lo, hi)
        wins.append(win)
        tgts.append(tgt)
        idxs.append(idx)
        ids.extend([sid] * idx.size)
        if extras is not None:
            ext.append(extras[j][idx])
    win = np.concatenate(wins) if wins else np.empty((0, q))
    tgt = np.concatenate(tgts) if tgts else np.empty(0)
    if len(tgt) == 0:
        e = np.empty(0)
        width = q + (extras is not None)
        return WindowBatch(np.empty((0, width)), e, e, e, np.empty(0, dtype=object), np.empty(0, dtype=int))
    mu, sigma = window_stats(win)
    X = (win - mu[:, None]) / sigma[:, None]
    if extras is not None:
        X = np.column_stack([X, (np.concatenate(ext) - mu) / sigma])
    return WindowBatch(X, (tgt - mu) / sigma, mu, sigma, np.array(ids, dtype=object),
                       np.concatenate(idxs))


class _ClusterFitter:
    """Fits the per-cluster models of strategies (b), (c) and (d) for a given clustering."""

    def __init__(self, pipe: TwoStagePipeline, tset, strategy):
        self.pipe = pipe
        self.tset = tset
        self.strategy = strategy
        self.cfg = pipe.config
        self.g = pipe.stage_one
        self.q = self.g.lookback
        self.paths = {}
        for i, s in enumerate(tset.series):
            gf = self.g.full_forecasts(s.values)
            shift = pipe.shifts.get(s.id, 0.0)
            self.paths[s.id] = (s.values, gf, _residual_path(s.values, gf, pipe.mode, shift), shift)

    def batches(self, ids, segment):
        q = self.q
        bounds = [self.tset.splits[self.tset.index(i)].bounds(segment) for i in ids]
        if self.strategy == "c":
            arrays = [(i, self.paths[i][2]) for i in ids]
            return _batch_from_arrays(arrays, q, bounds, first=2 * q)
        arrays = [(i, self.paths[i][0]) for i in ids]
        extras = [self.paths[i][1] for i in ids] if self.strategy == "d" else None
        return _batch_from_arrays(arrays, q, bounds, extras)

    def composite(self, model, ids, segment):
        """(raw forecasts, raw actuals, stage-one forecasts) over ``ids``' targets in ``segment``."""
        q = self.q
        preds, acts, base = [], [], []
        for sid in ids:
            i = self.tset.index(sid)
            lo, hi = self.tset.splits[i].bounds(segment)
            x, gf, h, shift = self.paths[sid]
            first = 2 * q if self.strategy == "c" else q
            lo = max(lo, q)
            if hi <= lo:
                continue
            idx = np.arange(lo, hi)
            pred = gf[idx].copy()
            if model is not None:
                ok = idx >= first
                if ok.any():
                    t = idx[ok]
                    if self.strategy == "c":
                        win, _, _ = raw_windows(h, q, t[0], t[-1] + 1)
                        pred[ok] = _combine(gf[t], model.predict(win), self.pipe.mode, shift)
                    else:
                        win, _, _ = raw_windows(x, q, t[0], t[-1] + 1)
                        pred[ok] = model.predict(win, gf[t] if self.strategy == "d" else None)
            preds.append(pred)
            acts.append(x[idx])
            base.append(gf[idx])
        cat = lambda a: np.concatenate(a) if a else np.empty(0)
        return cat(preds), cat(acts), cat(base)

    def make_net(self, rng):
        g = self.g
        cell = g.cell
        if self.strategy == "b":
            extra = _extra_layers(self.cfg, self.q, cell.get("nodes", 8), rng)
            default = self.cfg.stage2_extra is None
            return build_sub_tsgm(g.network, None if default else extra, warm_start=True, rng=rng)
        width = self.q + (self.strategy == "d")
        kind = g.kind if g.kind in ("mlp", "lstm") else "mlp"
        return build_network(kind, width, cell.get("layers", 1), cell.get("nodes", 8),
                             cell.get("dropout", 0.2), rng)

    def fit_cluster(self, args):
        K, k, ids = args
        seed = _seed(self.cfg.seed, ord(self.strategy), K, k)
        tr, va = self.batches(ids, "train"), self.batches(ids, "val")
        base_val = self.composite(None, ids, "val")
        base_sse = float(np.sum((base_val[0] - base_val[1]) ** 2))
        if len(tr) == 0 or len(va) == 0:
            return ClusterModel(None, ids, val_sse=base_sse)
        net, b = _train_over_batches(self.make_net, tr, va, self.cfg, seed)
        model = NeuralForecaster(net, self.q, extra_input=self.strategy == "d")
        pred, act, g_tr = self.composite(model, ids, "train")
        mse2 = float(np.mean((pred - act) ** 2))
        mse1 = float(np.mean((g_tr - act) ** 2))
        accepted = not (self.cfg.accept_guard and self.strategy == "b" and mse2 > mse1)
        if not accepted:
            logger.info("cluster %d/%d sub-model rejected: train MSE %.6g > stage one %.6g", k, K, mse2, mse1)
            return ClusterModel(None, ids, b, base_sse, mse2, mse1, False)
        vp, va_act, _ = self.composite(model, ids, "val")
        return ClusterModel(model, ids, b, float(np.sum((vp - va_act) ** 2)), mse2, mse1, True)

    def fit_all(self, clustering: Clustering):
        jobs = [(clustering.K, k, clustering.members(k)) for k in range(clustering.K)]
        models = dict(enumerate(pmap(self.fit_cluster, jobs)))
        return sum(m.val_sse for m in models.values()), models


def _residual_features(residuals, ids, frequency, names):
    return build_matrix([extract_features(residuals[i].residual, frequency, i, names) for i in ids])


def _candidates(cfg: PipelineConfig, n_h):
    if cfg.clusters not in (None, "auto"):
        K = int(cfg.clusters)
        return [min(K, n_h)] if K > 0 else []
    cap = cfg.budget.max_k(n_h)
    cands = cfg.k_candidates or range(1, cap + 1)
    return sorted({k for k in cands if 1 <= k <= min(cap, n_h)})


def _fit_clustered(pipeline, report, tset, strategy, residuals):
    cfg = pipeline.config
    pipe = replace(pipeline, strategy=strategy, stage2="type2", report_before=report,
                   notes=list(pipeline.notes), shifts={k: v.shift for k, v in residuals.items()})
    if not report.I_h:
        pipe.notes.append("no heterogeneous series: stage two is not needed")
        pipe.report_after = report
        return pipe
    candidates = _candidates(cfg, report.n_h)
    if not candidates:
        pipe.notes.append("zero clusters requested: stage-one forecasts only")
        pipe.report_after = report
        return pipe
    freq = tset.series[0].frequency
    matrix = _residual_features(residuals, report.I_h, freq, cfg.features)
    fitter = _ClusterFitter(pipe, tset, strategy)
    selection = select_clustering(matrix, fitter.fit_all, cfg.budget, candidates,
                                  restarts=cfg.kmeans_restarts, seed=cfg.seed)
    pipe.selection = selection
    pipe.clustering = selection.clustering
    pipe.cluster_models = selection.payloads[selection.chosen_k]
    _, pipe.report_after = _screen(pipe, tset, pipe.mode, cfg, "after")
    return pipe


def fit_stage_two_type2(pipeline: TwoStagePipeline, report: HeterogeneityReport, tset,
                        budget: ClusterBudget | None = None) -> TwoStagePipeline:
    """Cluster the heterogeneous residual series and grow one sub-model per cluster."""
    if pipeline.stage_one is None or pipeline.stage_one.network is None:
        raise StrategyError("Type-II needs a network stage-one model; use Type-I or strategy (c)")
    if budget is not None:
        pipeline = replace(pipeline, config=replace(pipeline.config, budget_u=budget.U_m, budget_f=budget.f_m))
    residuals = compute_residuals(pipeline.stage_one, tset, ResidualMode(report.mode), "train")
    return _fit_clustered(replace(pipeline, mode=report.mode), report, tset, "b", residuals)


def with_clusters(pipe: TwoStagePipeline, K, tset):
    """The same pipeline using the K-cluster fit recorded during selection (refit if absent)."""
    if pipe.selection is not None and K in pipe.selection.payloads:
        out = replace(pipe, clustering=pipe.selection.clusterings[K],
                      cluster_models=pipe.selection.payloads[K], notes=list(pipe.notes))
    else:
        out = _fit_clustered(replace(pipe, config=replace(pipe.config, clusters=K)), pipe.report_before,
                             tset, pipe.strategy,
                             compute_residuals(pipe.stage_one, tset, ResidualMode(pipe.mode), "train"))
    _, out.report_after = _screen(out, tset, out.mode, out.config, "after")
    return out


# --- strategies -----------------------------------------------------------------------------------

def run_strategy(tset, strategy="b", config: PipelineConfig = PipelineConfig(), stage_one: StageOne | None = None):
    """Fit one of the four ways of combining clustering with global models.

    (a) cluster the raw series and train one global model per cluster;
    (b) the two-stage pipeline (Type-II, or Type-I when configured);
    (c) per-cluster models on the heterogeneity series, recombined with
        the stage-one forecasts;
    (d) per-cluster models whose input is the lookback window followed by
        the stage-one forecast.
    ``stage_one`` may be passed to share one fitted global model.
    """
    if strategy not in STRATEGIES:
        raise StrategyError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    config = replace(config, strategy=strategy)
    tcfg = replace(config.train, seed=config.seed)
    if strategy == "a":
        return _strategy_a(tset, config, tcfg)
    g = stage_one or fit_stage_one(tset, config.model, config.grid, tcfg)
    mode = config.residual_mode
    if strategy == "b" and config.stage2 == "type1":
        mode = "additive"
    pipe = _base_pipeline(g, config, strategy, "none", mode)
    residuals = compute_residuals(g, tset, ResidualMode(mode), "train")
    pipe.shifts = {k: v.shift for k, v in residuals.items()}
    report = screen_heterogeneity(residuals, config.alpha, config.lb_lags, mode, "before")
    pipe.report_before = report
    if strategy == "b":
        if config.stage2 == "none":
            pipe.report_after = report
            return pipe
        if not report.I_h:
            pipe.notes.append("no heterogeneous series: stage two is not needed")
            pipe.report_after = report
            return pipe
        if config.stage2 == "type1":
            return fit_stage_two_type1(pipe, report, tset)
        return fit_stage_two_type2(pipe, report, tset)
    return _fit_clustered(pipe, report, tset, strategy, residuals)


def _strategy_a(tset, config, tcfg):
    freq = tset.series[0].frequency
    ids = tset.ids
    vectors = [extract_features(tset.segment(i, "train"), freq, sid, config.features)
               for i, sid in enumerate(ids)]
    matrix = build_matrix(vectors)

    def fit_clusters(cl):
        models, sse = {}, 0.0
        for k in range(cl.K):
            members = set(cl.members(k))
            sub = tset.subset([i for i in ids if i in members])
            seed = config.seed if k == 0 else _seed(config.seed, ord("a"), cl.K, k)
            m = fit_stage_one(sub, config.model, config.grid, replace(tcfg, seed=seed))
            fc = m.forecast(sub, "val")
            sse += float(sum(np.sum((f.forecast - f.actual) ** 2) for f in fc.values()))
            models[k] = m
        return sse, models

    candidates = _candidates(config, tset.n)
    if not candidates:
        raise StrategyError("strategy (a) needs at least one cluster")
    sel = select_clustering(matrix, fit_clusters, config.budget, candidates,
                            restarts=config.kmeans_restarts, seed=config.seed)
    pipe = TwoStagePipeline(None, config, strategy="a", stage2="none", mode=config.residual_mode)
    pipe.selection = sel
    pipe.clustering = sel.clustering
    pipe.raw_models = sel.payloads[sel.chosen_k]
    return pipe


# --- generalisation-bound diagnostic -----------------------------------------------------------

@dataclass
class BoundDiagnostic:
    delta: float
    log_H: float
    log_Hk: list
    log_Phi: float
    n_eff_total: float
    n_eff_het_total: float
    term_stage_one: float
    term_stage_two: float
    bound: float
    empirical_gap: float
    note: str = "heuristic diagnostic: capacity terms are parameter-count proxies"


def bound_value(log_H, log_Hk, log_Phi, n_eff_total, n_eff_het_total, delta):
    """Two-term union bound with the given capacity proxies and effective sizes."""
    if not 0 < delta < 1:
        raise PreconditionError("delta must lie in (0, 1)")
    t1 = math.sqrt((log_H + math.log(4 / delta)) / (2 * n_eff_total))
    if n_eff_het_total <= 0:
        return t1, 0.0
    t2 = math.sqrt((log_Phi + sum(log_Hk) + math.log(4 / delta)) / (2 * n_eff_het_total))
    return t1, t2


def _normalised_mse(pipe, tset, segment):
    fc = pipe.forecast(tset, segment)
    errs = []
    q = pipe.lookback
    for sid, f in fc.items():
        x = tset.series[tset.index(sid)].values
        win, _, _ = raw_windows(x, q, f.time_index[0], f.time_index[-1] + 1)
        mu, sigma = window_stats(win)
        errs.append(((f.forecast - f.actual) / sigma) ** 2)
    return float(np.mean(np.concatenate(errs))) if errs else math.nan


def bound_diagnostic(pipe: TwoStagePipeline, tset, delta=0.05) -> BoundDiagnostic:
    if not 0 < delta < 1:
        raise PreconditionError("delta must lie in (0, 1)")
    if pipe.stage_one is None:
        raise StrategyError("the bound diagnostic applies to two-stage pipelines")
    n_eff = [stats.effective_sample_size(tset.segment(i, "train")) for i in range(tset.n)]
    I_h = pipe.report_before.I_h if pipe.report_before else []
    res = compute_residuals(pipe.stage_one, tset, ResidualMode(pipe.mode), "train") if I_h else {}
    n_eff_h = [stats.effective_sample_size(res[i].residual) for i in I_h]
    log_H = float(pipe.stage_one.n_params())
    if pipe.stage2 == "type1":
        log_Hk = [float(sum(m.order[::2]) + m.seasonal[0] + m.seasonal[2] + 2) for m in pipe.type1.values()]
        log_Phi = 0.0
    else:
        log_Hk = [float(cm.model.n_params(trainable_only=True)) for cm in pipe.cluster_models.values()
                  if cm.model is not None]
        K = pipe.clustering.K if pipe.clustering is not None else 0
        log_Phi = float(K * len(pipe.config.features)) if K else 0.0
    t1, t2 = bound_value(log_H, log_Hk, log_Phi, sum(n_eff), sum(n_eff_h), delta)
    gap = abs(_normalised_mse(pipe, tset, "train") - _normalised_mse(pipe, tset, "test"))
    return BoundDiagnostic(delta, log_H, log_Hk, log_Phi, float(sum(n_eff)), float(sum(n_eff_h)),
                           t1, t2, t1 + t2, gap)


# --- manifest ------------------------------------------------------------------------------------

def _global_to_json(stage: StageOne, directory: Path, name, config_hash):
    entry = {"kind": stage.kind, "lookback": stage.lookback, "cell": stage.cell}
    if isinstance(stage.model, PooledAR):
        entry["coef"] = stage.model.coef.tolist()
    else:
        path = f"{name}.json"
        save_network(stage.model.net, directory / path, config_hash)
        entry["checkpoint"] = path
    return entry


def _global_from_json(entry, directory: Path):
    if "coef" in entry:
        model = PooledAR(np.asarray(entry["coef"], dtype=float), entry["lookback"])
    else:
        model = NeuralForecaster(load_network(directory / entry["checkpoint"]), entry["lookback"])
    return StageOne(model, entry["kind"], entry["lookback"], entry["cell"])


def save_pipeline(pipe: TwoStagePipeline, directory):
    """Write ``manifest.json`` plus one checkpoint file per network into ``directory``."""
    directory = Path(directory)
    (directory / "models").mkdir(parents=True, exist_ok=True)
    h = pipe.config.hash()
    manifest = {
        "format": "heteroboost-pipeline", "version": 1, "config_hash": h, "seed": pipe.config.seed,
        "config": pipe.config.to_dict(), "strategy": pipe.strategy, "stage2": pipe.stage2,
        "residual_mode": pipe.mode, "shifts": pipe.shifts, "notes": pipe.notes,
        "report_before": pipe.report_before.to_dict() if pipe.report_before else None,
        "report_after": pipe.report_after.to_dict() if pipe.report_after else None,
        "stage_one": _global_to_json(pipe.stage_one, directory, "models/stage_one", h) if pipe.stage_one else None,
        "type1": {k: m.to_dict() for k, m in pipe.type1.items()},
        "clustering": None, "cluster_models": {}, "raw_models": {},
    }
    if pipe.clustering is not None:
        cl = pipe.clustering
        manifest["clustering"] = {"K": cl.K, "assignments": cl.assignments, "inertia": cl.inertia,
                                  "centroids": cl.centroids.tolist(), "seed": cl.seed, "restarts": cl.restarts}
        if pipe.selection is not None:
            manifest["clustering"]["validation_sse"] = {str(k): v for k, v in pipe.selection.sse.items()}
    for k, cm in pipe.cluster_models.items():
        entry = {"members": cm.members, "accepted": cm.accepted, "batch_size": cm.batch_size,
                 "val_sse": cm.val_sse, "train_mse": cm.train_mse, "stage_one_train_mse": cm.stage_one_train_mse}
        if cm.model is not None:
            path = f"models/cluster_{k}.json"
            save_network(cm.model.net, directory / path, h)
            entry.update(checkpoint=path, extra_input=cm.model.extra_input)
        manifest["cluster_models"][str(k)] = entry
    for k, m in pipe.raw_models.items():
        manifest["raw_models"][str(k)] = _global_to_json(m, directory, f"models/raw_{k}", h)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=float)
    return directory / "manifest.json"


def load_pipeline(directory) -> TwoStagePipeline:
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        m = json.load(fh)
    if m.get("format") != "heteroboost-pipeline":
        raise PreconditionError("not a pipeline manifest")
    cfgd = dict(m["config"])
    cfgd["grid"] = HyperGrid(**{k: tuple(v) for k, v in cfgd["grid"].items()})
    cfgd["train"] = TrainConfig(**cfgd["train"])
    cfgd["stage2_train"] = TrainConfig(**cfgd["stage2_train"])
    for key in ("stage2_batches", "features", "k_candidates", "stage2_extra"):
        if cfgd.get(key) is not None:
            cfgd[key] = tuple(cfgd[key])
    config = PipelineConfig(**cfgd)
    stage_one = _global_from_json(m["stage_one"], directory) if m["stage_one"] else None
    pipe = TwoStagePipeline(stage_one, config, m["strategy"], m["stage2"], m["residual_mode"],
                            shifts=m["shifts"], notes=m["notes"])
    pipe.type1 = {k: ArimaModel.from_dict(v) for k, v in m["type1"].items()}
    if m["clustering"] is not None:
        c = m["clustering"]
        ids = list(c["assignments"])
        pipe.clustering = Clustering(c["K"], ids, np.array([c["assignments"][i] for i in ids]),
                                     np.asarray(c["centroids"]), c["inertia"], c["seed"], c["restarts"])
    for k, e in m["cluster_models"].items():
        model = None
        if "checkpoint" in e:
            model = NeuralForecaster(load_network(directory / e["checkpoint"]), stage_one.lookback,
                                     extra_input=e["extra_input"])
        pipe.cluster_models[int(k)] = ClusterModel(model, e["members"], e["batch_size"], e["val_sse"],
                                                   e["train_mse"], e["stage_one_train_mse"], e["accepted"])
    for k, e in m["raw_models"].items():
        pipe.raw_models[int(k)] = _global_from_json(e, directory)
    return pipe
