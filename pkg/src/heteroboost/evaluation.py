"""Cumulative one-step-ahead error metrics, per-series reports and model comparison."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .errors import PreconditionError

logger = logging.getLogger(__name__)

METRICS = ("rmse", "mae", "smape")


def cumulative_metrics(actuals, forecasts):
    """Cumulative RMSE, MAE and sMAPE of one-step forecasts at consecutive origins.

    For tau = 1..n the per-horizon aggregate runs over the first tau errors;
    each metric is the mean of those aggregates.  sMAPE terms whose
    denominator |x| + |x_hat| is zero contribute 0.
    """
    x = np.asarray(actuals, dtype=float).ravel()
    f = np.asarray(forecasts, dtype=float).ravel()
    if x.size != f.size or x.size == 0:
        raise PreconditionError("actuals and forecasts need equal, nonzero lengths")
    e = x - f
    tau = np.arange(1, x.size + 1)
    rmse = float(np.mean(np.sqrt(np.cumsum(e * e) / tau)))
    mae = float(np.mean(np.cumsum(np.abs(e)) / tau))
    den = np.abs(x) + np.abs(f)
    ratio = np.divide(np.abs(e), den, out=np.zeros_like(e), where=den > 0)
    smape = float(np.mean(2.0 * np.cumsum(ratio) / tau))
    return rmse, mae, smape


@dataclass(frozen=True)
class EvalSpec:
    """Forecast origin T and test length per series (targets T..T+n_test-1)."""
    origins: dict
    lengths: dict
    metrics: tuple = METRICS

    @classmethod
    def from_set(cls, tset):
        origins, lengths = {}, {}
        for s, sp in zip(tset.series, tset.splits):
            if sp.test_end > len(s):
                raise PreconditionError(f"series {s.id}: test span exceeds the series")
            origins[s.id] = sp.val_end
            lengths[s.id] = sp.test_end - sp.val_end
        return cls(origins, lengths)


@dataclass
class MetricsReport:
    model: str
    rows: list  # dicts: series_id, rmse, mae, smape
    excluded: list = field(default_factory=list)
    dataset: str = ""

    @property
    def n(self):
        return len(self.rows)

    def column(self, metric):
        return np.array([r[metric] for r in self.rows], dtype=float)

    def aggregate(self):
        out = {}
        for m in METRICS:
            col = self.column(m)
            out[m] = {"mean": float(col.mean()) if col.size else math.nan,
                      "median": float(np.median(col)) if col.size else math.nan}
        return out

    def to_csv(self, path, meta=None):
        with open(path, "w", newline="") as fh:
            if meta:
                fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series_id", *METRICS])
            for r in self.rows:
                w.writerow([r["series_id"], *(repr(float(r[m])) for m in METRICS)])

    def to_json(self, path, meta=None):
        payload = {"model": self.model, "dataset": self.dataset, "n_series": self.n,
                   "aggregate": self.aggregate(), "excluded": self.excluded, **(meta or {})}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)


def read_metrics_csv(path, model=""):
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    for r in csv.DictReader(lines):
        rows.append({"series_id": r["series_id"], **{m: float(r[m]) for m in METRICS}})
    return MetricsReport(model or Path(path).stem, rows)


# --- simple reference forecasters ---------------------------------------------------

class Naive:
    """Last-value forecaster exposing the pipeline ``forecast(tset, segment)`` interface."""
    lookback = 1

    def forecast(self, tset, segment="test"):
        from .pipeline import SeriesForecast
        out = {}
        for s, sp in zip(tset.series, tset.splits):
            lo, hi = sp.bounds(segment)
            lo = max(lo, 1)
            if hi > lo:
                idx = np.arange(lo, hi)
                out[s.id] = SeriesForecast(idx, s.values[idx].copy(), s.values[idx - 1].copy())
        return out


class Clairvoyant:
    """Forecast equals the actual value; every metric is exactly zero."""
    lookback = 0

    def forecast(self, tset, segment="test"):
        from .pipeline import SeriesForecast
        out = {}
        for s, sp in zip(tset.series, tset.splits):
            lo, hi = sp.bounds(segment)
            if hi > lo:
                idx = np.arange(lo, hi)
                out[s.id] = SeriesForecast(idx, s.values[idx].copy(), s.values[idx].copy())
        return out


def evaluate_pipeline(model, tset, spec: EvalSpec | None = None, name="model", dataset=""):
    """Rolling-origin one-step evaluation over each series' test segment.

    Actual history is revealed after every step (the forecasts use the
    true lookback windows).  Series without test data, or whose first
    target lies before the model's lookback, are skipped and recorded.
    """
    spec = spec or EvalSpec.from_set(tset)
    fc = model.forecast(tset, "test")
    rows, excluded = [], []
    for s in tset.series:
        n_test = spec.lengths.get(s.id, 0)
        f = fc.get(s.id)
        if n_test <= 0 or f is None or f.time_index.size != n_test:
            reason = "no test data" if n_test <= 0 else "test span not forecastable"
            excluded.append({"series_id": s.id, "reason": reason})
            logger.warning("series %s skipped: %s", s.id, reason)
            continue
        rmse, mae, smape = cumulative_metrics(f.actual, f.forecast)
        rows.append({"series_id": s.id, "rmse": rmse, "mae": mae, "smape": smape})
    return MetricsReport(name, rows, excluded, dataset)


# --- comparison ------------------------------------------------------------------------

@dataclass
class RankComparison:
    models: list
    datasets: list
    values: np.ndarray  # datasets x models
    friedman: stats.TestResult
    mean_ranks: dict
    cd: float
    alpha: float
    reference: str
    pairwise: dict  # model -> TestResult or None (degenerate)
    degenerate: list

    def to_dict(self):
        return {
            "models": self.models, "datasets": self.datasets, "values": self.values.tolist(),
            "friedman": {"statistic": self.friedman.statistic, "p_value": self.friedman.p_value},
            "mean_ranks": self.mean_ranks, "critical_difference": self.cd, "alpha": self.alpha,
            "reference": self.reference,
            "paired_t_one_tail": {m: (None if r is None else {"t": r.statistic, "p_value": r.p_value})
                                  for m, r in self.pairwise.items()},
            "degenerate": self.degenerate,
        }


def scores_from_reports(reports, metric="smape"):
    """{model: {dataset: mean metric}} from MetricsReports carrying ``model`` and ``dataset``."""
    table = {}
    for r in reports:
        table.setdefault(r.model, {})[r.dataset] = r.aggregate()[metric]["mean"]
    return table


def compare_models(scores, reference=None, alpha=0.1, cd_alpha=0.05):
    """Friedman test, Nemenyi critical difference and one-tail paired t-tests.

    ``scores`` is ``{model: {dataset: value}}`` (lower is better) or a list
    of MetricsReports.  Each non-reference model is tested for a lower mean
    than ``reference`` (default: the first model).
    """
    if isinstance(scores, (list, tuple)):
        scores = scores_from_reports(scores)
    models = list(scores)
    if len(models) < 2:
        raise PreconditionError("need at least two models to compare")
    datasets = list(scores[models[0]])
    for m in models[1:]:
        if sorted(scores[m]) != sorted(datasets):
            raise PreconditionError(f"model {m!r} covers different datasets")
    reference = models[0] if reference is None else reference
    if reference not in scores:
        raise PreconditionError(f"unknown reference model {reference!r}")
    V = np.array([[scores[m][d] for m in models] for d in datasets], dtype=float)
    fr = stats.friedman_test(V)
    cd = stats.nemenyi_cd(len(models), len(datasets), cd_alpha)
    ref = V[:, models.index(reference)]
    pairwise, degenerate = {}, []
    for j, m in enumerate(models):
        if m == reference:
            continue
        try:
            pairwise[m] = stats.paired_t_one_tail(V[:, j], ref)
        except stats.DegenerateSeriesError:
            pairwise[m] = None
            degenerate.append(m)
    ranks = dict(zip(models, map(float, fr.params["mean_ranks"])))
    return RankComparison(models, datasets, V, fr, ranks, cd, alpha, reference, pairwise, degenerate)


# --- sensitivity over K --------------------------------------------------------------------

def _svg_setup():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "heteroboost"
    return plt


def sensitivity_over_k(pipeline, tset, k_values, out_dir=None, meta=None):
    """Test-set metrics of the Type-II pipeline for each K, plus the stage-one reference.

    Uses the per-K fits recorded during cluster selection where available
    and refits otherwise.  K larger than the number of heterogeneous series
    is skipped with a note.  Returns (rows, notes); with ``out_dir`` also
    writes ``sensitivity.csv`` and ``sensitivity.svg``.
    """
    from .pipeline import with_clusters

    if pipeline.stage_one is None or pipeline.report_before is None:
        raise PreconditionError("sensitivity analysis needs a fitted two-stage pipeline")
    n_h = pipeline.report_before.n_h
    rows, notes = [], []
    base = evaluate_pipeline(pipeline.stage_one, tset, name="stage_one").aggregate()
    rows.append({"K": 0, "label": "stage_one", **_flat(base)})
    for K in k_values:
        if not 1 <= K <= n_h:
            notes.append(f"K={K} skipped: only {n_h} heterogeneous series")
            continue
        p = with_clusters(pipeline, K, tset)
        agg = evaluate_pipeline(p, tset, name=f"K={K}").aggregate()
        rows.append({"K": K, "label": f"K={K}", **_flat(agg)})
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_rows_csv(rows, out_dir / "sensitivity.csv", meta)
        plot_sensitivity(rows, out_dir / "sensitivity.svg")
    return rows, notes


def _flat(agg):
    return {f"{m}_{s}": agg[m][s] for m in METRICS for s in ("mean", "median")}


def write_rows_csv(rows, path, meta=None):
    if not rows:
        raise PreconditionError("nothing to write")
    with open(path, "w", newline="") as fh:
        if meta:
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def plot_sensitivity(rows, path):
    plt = _svg_setup()
    ks = [r for r in rows if r["K"] > 0]
    ref = next(r for r in rows if r["K"] == 0)
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for ax, m in zip(axes, METRICS):
        for stat_name, style in (("mean", "-o"), ("median", "--s")):
            ax.plot([r["K"] for r in ks], [r[f"{m}_{stat_name}"] for r in ks], style, label=stat_name)
            ax.axhline(ref[f"{m}_{stat_name}"], color="grey", lw=0.8,
                       ls="-" if stat_name == "mean" else "--")
        ax.set_xlabel("K")
        ax.set_title(m.upper())
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_forecasts(series_id, time_index, actual, forecasts: dict, path):
    """Forecast-versus-actual line plot for one series."""
    plt = _svg_setup()
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(time_index, actual, "k-", lw=1.4, label="actual")
    for name, f in forecasts.items():
        ax.plot(time_index, f, lw=1.0, label=name)
    ax.set_title(str(series_id))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
