"""Command-line entry point: ``heteroboost <subcommand> [flags]``.

Every subcommand reads an experiment configuration (a plain-text
``key=value`` file given by ``--config``, overridden by flags), writes
its artifacts under ``--out`` and logs progress as one JSON object per
line on stderr.  Without ``--data`` or a ``synthetic`` spec the bundled
three-group fixture is drawn at the run seed.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    SyntheticSpec, generate_synthetic, load_csv, parse_key_values, three_group_spec, write_csv,
)
from .errors import HeteroBoostError, SpecError
from .evaluation import (
    compare_models, evaluate_pipeline, plot_forecasts, read_metrics_csv, sensitivity_over_k,
    write_rows_csv,
)
from .features import feature_table
from .neuralnet import HyperGrid, TrainConfig
from .parallel import get_threads, set_threads
from .pipeline import (
    PipelineConfig, ResidualMode, bound_diagnostic, compute_residuals, fit_stage_one, load_pipeline,
    run_strategy, save_pipeline, screen_heterogeneity,
)
from .stats import strengths

logger = logging.getLogger("heteroboost")

SEED_ENV = "HETEROBOOST_SEED"


# --- configuration ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None
    split: str | None = None
    synthetic: str | None = None  # path to a synthetic spec; None with no data = bundled fixture
    frequency: int = 12
    test_length: int = 12
    model: str = "mlp"
    stage2: str = "type2"
    strategy: str = "b"
    clusters: str = "auto"
    residual: str | None = None
    seed: int | None = None
    out: str = "heteroboost_out"
    threads: int | None = None
    alpha: float = 0.05
    lb_lags: int | None = None
    budget_u: float = 10.0
    budget_f: str = "constant"
    k_candidates: tuple | None = None
    kmeans_restarts: int = 10
    stage2_batches: tuple = (16, 8, 4)
    type1_seasonal: bool = True
    grid: HyperGrid = HyperGrid()
    train: TrainConfig = TrainConfig()
    stage2_train: TrainConfig = TrainConfig()
    delta: float = 0.05

    def pipeline_config(self):
        clusters = "auto" if str(self.clusters) == "auto" else int(self.clusters)
        return PipelineConfig(
            model=self.model, stage2=self.stage2, strategy=self.strategy, residual=self.residual,
            clusters=clusters, k_candidates=self.k_candidates, alpha=self.alpha, lb_lags=self.lb_lags,
            budget_u=self.budget_u, budget_f=self.budget_f, grid=self.grid, train=self.train,
            stage2_train=self.stage2_train, stage2_batches=self.stage2_batches,
            kmeans_restarts=self.kmeans_restarts, type1_seasonal=self.type1_seasonal,
            seed=self.seed or 0)

    def to_dict(self):
        return json.loads(json.dumps(dataclasses.asdict(self), default=list))

    def hash(self):
        """Digest of everything that affects results (output path and thread count excluded)."""
        d = self.to_dict()
        d.pop("out"), d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    return lambda t: None if str(t).strip().lower() in ("", "none", "null") else conv(t)


def _tuple(conv):
    return lambda t: tuple(conv(v) for v in str(t).replace(" ", "").split(",") if v)


_SCALARS = {
    "data": _opt(str), "split": _opt(str), "synthetic": _opt(str), "frequency": int,
    "test_length": int, "model": str, "stage2": str, "strategy": str, "clusters": str,
    "residual": _opt(str), "seed": _opt(int), "out": str, "threads": _opt(int), "alpha": float,
    "lb_lags": _opt(int), "budget_u": float, "budget_f": str, "k_candidates": _opt(_tuple(int)),
    "kmeans_restarts": int, "stage2_batches": _tuple(int), "type1_seasonal": _bool, "delta": float,
}
_GRID = {"input_len": _tuple(int), "layers": _tuple(int), "nodes": _tuple(int),
         "dropout": _tuple(float), "batch": _tuple(int)}
_TRAIN = {f.name: (_bool if f.type in (bool, "bool") else int if f.type in (int, "int") else float)
          for f in dataclasses.fields(TrainConfig)}


def known_keys():
    keys = set(_SCALARS)
    keys |= {f"grid.{k}" for k in _GRID}
    keys |= {f"{p}.{k}" for p in ("train", "stage2_train") for k in _TRAIN}
    return keys


def build_config(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``{key: text}`` on top of ``base``; unknown keys are a SpecError listing them."""
    unknown = sorted(set(values) - known_keys())
    if unknown:
        raise SpecError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = base or ExperimentConfig()
    top, grid, train, train2 = {}, {}, {}, {}
    try:
        for key, text in values.items():
            if key.startswith("grid."):
                grid[key[5:]] = _GRID[key[5:]](text)
            elif key.startswith("train."):
                train[key[6:]] = _TRAIN[key[6:]](text)
            elif key.startswith("stage2_train."):
                train2[key[13:]] = _TRAIN[key[13:]](text)
            else:
                top[key] = _SCALARS[key](text)
    except ValueError as exc:
        raise SpecError(f"bad config value: {exc}") from None
    cfg = replace(cfg, **top)
    if grid:
        cfg = replace(cfg, grid=replace(cfg.grid, **grid))
    if train:
        cfg = replace(cfg, train=replace(cfg.train, **train))
    if train2:
        cfg = replace(cfg, stage2_train=replace(cfg.stage2_train, **train2))
    return cfg


def resolve_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(parse_key_values(Path(args.config).read_text()))
    for key in ("data", "model", "stage2", "strategy", "clusters", "residual", "seed", "out", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SpecError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    cfg = build_config(values)
    if cfg.seed is None:
        env = os.environ.get(SEED_ENV)
        cfg = replace(cfg, seed=int(env) if env else 0)
    for path in (cfg.data, cfg.split, cfg.synthetic):
        if path is not None and not Path(path).exists():
            raise SpecError(f"referenced file does not exist: {path}")
    cfg.pipeline_config()  # validates model / stage-two / strategy names
    return cfg


# --- logging -----------------------------------------------------------------------------------

class JsonLines(logging.Formatter):
    def format(self, record):
        payload = {"level": record.levelname.lower(), "logger": record.name, "event": record.getMessage()}
        payload.update(getattr(record, "fields", {}))
        return json.dumps(payload, sort_keys=True, default=str)


def setup_logging(level=logging.INFO):
    root = logging.getLogger()
    for h in list(root.handlers):
        if isinstance(h.formatter, JsonLines):
            root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLines())
    root.addHandler(handler)
    root.setLevel(level)


def event(name, level=logging.INFO, **fields):
    logger.log(level, name, extra={"fields": fields})


class StageFailed(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage
        self.exc = exc


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        self.t0 = time.perf_counter()
        event("stage_start", stage=self.name)
        return self

    def __exit__(self, etype, exc, tb):
        if exc is None:
            event("stage_done", stage=self.name, seconds=round(time.perf_counter() - self.t0, 3))
            return False
        if isinstance(exc, StageFailed):
            return False
        raise StageFailed(self.name, exc) from exc


# --- shared helpers ------------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig):
    if cfg.data is not None:
        return load_csv(cfg.data, cfg.frequency, cfg.split, cfg.test_length), None
    spec = SyntheticSpec.from_file(cfg.synthetic) if cfg.synthetic else three_group_spec()
    return generate_synthetic(spec.with_seed(cfg.seed))


def _meta(cfg: ExperimentConfig):
    return {"config_hash": cfg.hash(), "seed": cfg.seed}


def _out(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")


def describe_rows(tset):
    """Table-1-style summary: count, min/max/mean length, mean trend and seasonal strength."""
    lengths = np.array([len(s) for s in tset.series])
    trend, season = [], []
    for s in tset.series:
        try:
            st = strengths(s.values, s.frequency)
        except HeteroBoostError:
            continue
        trend.append(st.trend_strength)
        if st.seasonal_strength is not None:
            season.append(st.seasonal_strength)
    clamp = lambda v: float(min(1.0, max(0.0, v)))
    return {
        "n_series": int(tset.n), "min_length": int(lengths.min()), "max_length": int(lengths.max()),
        "mean_length": float(lengths.mean()),
        "mean_trend_strength": clamp(np.mean(trend)) if trend else None,
        "mean_seasonal_strength": clamp(np.mean(season)) if season else None,
    }


def _write_dict_csv(path, row, meta):
    with open(path, "w", newline="") as fh:
        fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow({k: ("" if v is None else v) for k, v in row.items()})


# --- subcommands --------------------------------------------------------------------------------

def cmd_describe(cfg):
    out = _out(cfg)
    with _Stage("describe"):
        tset, _ = load_data(cfg)
        row = describe_rows(tset)
        _write_dict_csv(out / "describe.csv", row, _meta(cfg))
    print(" ".join(f"{k}={v}" for k, v in row.items()))
    return row


def cmd_synth(cfg):
    out = _out(cfg)
    with _Stage("synth"):
        tset, labels = load_data(cfg)
        write_csv(tset, out / "data.csv", out / "splits.csv")
        with open(out / "labels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series_id", "group"])
            w.writerows(sorted((labels or {}).items()))
    event("synth_written", n_series=tset.n, path=str(out / "data.csv"))
    return tset


def _stage_one(cfg, tset):
    pc = cfg.pipeline_config()
    with _Stage("fit-stage1"):
        g = fit_stage_one(tset, pc.model, pc.grid, replace(pc.train, seed=pc.seed))
        event("stage_one", kind=g.kind, lookback=g.lookback, cell=g.cell)
    return g


def _diagnose(cfg, g, tset):
    pc = cfg.pipeline_config()
    mode = "additive" if pc.stage2 == "type1" else pc.residual_mode
    with _Stage("diagnose"):
        res = compute_residuals(g, tset, ResidualMode(mode), "train")
        report = screen_heterogeneity(res, pc.alpha, pc.lb_lags, mode, "before")
        event("heterogeneity", n=report.n, n_h=report.n_h, R_h=report.R_h, mode=mode)
    return res, report


def cmd_features(cfg):
    out = _out(cfg)
    with _Stage("load"):
        tset, _ = load_data(cfg)
    g = _stage_one(cfg, tset)
    res, report = _diagnose(cfg, g, tset)
    with _Stage("features"):
        fm = feature_table({k: r.residual for k, r in res.items()}, tset.series[0].frequency,
                           cfg.pipeline_config().features)
        with open(out / "features.csv", "w", newline="") as fh:
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in _meta(cfg).items()) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series_id", *fm.names, "heterogeneous"])
            het = set(report.I_h)
            for sid, row in zip(fm.ids, fm.raw):
                w.writerow([sid, *("" if np.isnan(v) else repr(float(v)) for v in row), int(sid in het)])
    return fm


def _fit(cfg, tset, g=None):
    pc = cfg.pipeline_config()
    if g is None and pc.strategy != "a":
        g = _stage_one(cfg, tset)
    if g is not None:
        _diagnose(cfg, g, tset)
    with _Stage("fit-stage2"):
        pipe = run_strategy(tset, pc.strategy, pc, stage_one=g)
        after = pipe.report_after
        event("stage_two", strategy=pipe.strategy, stage2=pipe.stage2,
              K=pipe.clustering.K if pipe.clustering is not None else None,
              R_h_after=after.R_h if after else None, notes=pipe.notes)
    return pipe, g


def cmd_cluster(cfg):
    out = _out(cfg)
    with _Stage("load"):
        tset, _ = load_data(cfg)
    cfg = replace(cfg, stage2="type2")
    pipe, _ = _fit(cfg, tset)
    with _Stage("report"):
        meta = _meta(cfg)
        with open(out / "assignments.csv", "w", newline="") as fh:
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series_id", "cluster"])
            for sid, k in sorted(pipe.assignment.items()):
                w.writerow([sid, k])
        sel = pipe.selection
        rows = [{"K": k, "validation_sse": v} for k, v in sorted(sel.sse.items())] if sel else []
        if rows:
            write_rows_csv(rows, out / "k_sse.csv", meta)
    return pipe


def _evaluate_and_report(cfg, pipe, g, tset, out, labels=None):
    meta = _meta(cfg)
    with _Stage("evaluate"):
        report = evaluate_pipeline(pipe, tset, name=f"strategy_{pipe.strategy}")
        report.to_csv(out / "metrics.csv", meta)
        report.to_json(out / "metrics.json", meta)
        if g is not None and g is not pipe:
            ref = evaluate_pipeline(g, tset, name="stage_one")
            ref.to_csv(out / "metrics_stage_one.csv", meta)
            ref.to_json(out / "metrics_stage_one.json", meta)
    with _Stage("report"):
        summary = {**meta, "aggregate": report.aggregate(), "excluded": report.excluded,
                   "notes": pipe.notes}
        if pipe.report_before is not None:
            summary["heterogeneity_before"] = pipe.report_before.to_dict()
        if pipe.report_after is not None:
            summary["heterogeneity_after"] = pipe.report_after.to_dict()
        if pipe.stage_one is not None and pipe.stage2 != "none":
            summary["bound"] = dataclasses.asdict(bound_diagnostic(pipe, tset, cfg.delta))
        if labels and pipe.clustering is not None:
            from .clustering import cluster_recovery_score
            truth = {sid: labels[sid] for sid in pipe.clustering.ids}
            summary["cluster_recovery_ari"] = cluster_recovery_score(pipe.clustering, truth)
        _write_json(out / "report.json", summary)
        fc = pipe.forecast(tset, "test")
        if fc:
            sid = sorted(fc)[0]
            f = fc[sid]
            curves = {"pipeline": f.forecast}
            if g is not None and g is not pipe:
                curves["stage one"] = g.forecast(tset.subset([sid]), "test")[sid].forecast
            plot_forecasts(sid, f.time_index, f.actual, curves, out / "forecast.svg")
    return report


def cmd_run(cfg):
    """describe -> fit-stage1 -> diagnose -> fit-stage2 -> evaluate -> report."""
    out = _out(cfg)
    _write_json(out / "config.json", {**_meta(cfg), "config": cfg.to_dict()})
    with _Stage("load"):
        tset, labels = load_data(cfg)
    with _Stage("describe"):
        _write_dict_csv(out / "describe.csv", describe_rows(tset), _meta(cfg))
    pipe, g = _fit(cfg, tset)
    with _Stage("save"):
        save_pipeline(pipe, out / "model")
    return _evaluate_and_report(cfg, pipe, g, tset, out, labels)


def cmd_evaluate(cfg, model_dir):
    out = _out(cfg)
    with _Stage("load"):
        tset, _ = load_data(cfg)
        pipe = load_pipeline(model_dir)
    meta = {"config_hash": pipe.config.hash(), "seed": pipe.config.seed}
    with _Stage("evaluate"):
        report = evaluate_pipeline(pipe, tset, name=f"strategy_{pipe.strategy}")
        report.to_csv(out / "metrics.csv", meta)
        report.to_json(out / "metrics.json", meta)
    return report


def cmd_compare(cfg, reports, reference=None, table=None, alpha=0.1):
    """Compare models from per-dataset scores.

    ``table`` is a CSV with columns ``model,dataset,value``; otherwise each
    report argument is ``model:dataset:path`` to a metrics CSV whose mean
    sMAPE is used.
    """
    out = _out(cfg)
    with _Stage("compare"):
        scores = {}
        if table:
            with open(table, newline="") as fh:
                for r in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
                    scores.setdefault(r["model"], {})[r["dataset"]] = float(r["value"])
        for item in reports or []:
            try:
                model, dataset, path = item.split(":", 2)
            except ValueError:
                raise SpecError(f"expected model:dataset:path, got {item!r}") from None
            rep = read_metrics_csv(path, model)
            scores.setdefault(model, {})[dataset] = rep.aggregate()["smape"]["mean"]
        result = compare_models(scores, reference=reference, alpha=alpha)
        _write_json(out / "comparison.json", {"seed": cfg.seed, **result.to_dict()})
    for m, r in result.pairwise.items():
        p = "degenerate" if r is None else f"{r.p_value:.4f}"
        print(f"{m} vs {result.reference}: one-tail p = {p}")
    print(f"friedman p = {result.friedman.p_value:.4f}, CD = {result.cd:.4f}")
    return result


def cmd_sensitivity(cfg, k_values):
    out = _out(cfg)
    with _Stage("load"):
        tset, _ = load_data(cfg)
    ks = tuple(k_values)
    cfg = replace(cfg, stage2="type2", strategy="b",
                  k_candidates=tuple(sorted(set(ks) | set(cfg.k_candidates or ()))))
    pipe, _ = _fit(cfg, tset)
    with _Stage("sensitivity"):
        rows, notes = sensitivity_over_k(pipe, tset, ks, out, _meta(cfg))
        for n in notes:
            event("sensitivity_note", note=n)
    return rows


# --- argument parsing -----------------------------------------------------------------------------

def _common(p):
    p.add_argument("--data", help="long-format CSV (series_id,period,value)")
    p.add_argument("--config", help="key=value experiment file")
    p.add_argument("--model", choices=("pooled-ar", "mlp", "lstm"))
    p.add_argument("--stage2", choices=("none", "type1", "type2"))
    p.add_argument("--strategy", choices=("a", "b", "c", "d"))
    p.add_argument("--clusters", help="'auto' or a fixed K")
    p.add_argument("--residual", choices=("additive", "multiplicative"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config key (repeatable)")


def make_parser():
    parser = argparse.ArgumentParser(prog="heteroboost", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("describe", "dataset summary table"),
                       ("synth", "write a synthetic data set"),
                       ("features", "residual feature matrix"),
                       ("cluster", "cluster assignments and the K-SSE curve"),
                       ("run", "full two-stage experiment")):
        _common(sub.add_parser(name, help=text))
    p = sub.add_parser("evaluate", help="metrics of a saved pipeline")
    _common(p)
    p.add_argument("--model-dir", required=True)
    p = sub.add_parser("compare", help="Friedman / Nemenyi / paired t-tests")
    _common(p)
    p.add_argument("--table", help="CSV with columns model,dataset,value")
    p.add_argument("--report", action="append", metavar="MODEL:DATASET:CSV")
    p.add_argument("--reference")
    p.add_argument("--alpha", type=float, default=0.1)
    p = sub.add_parser("sensitivity", help="test metrics over a range of K")
    _common(p)
    p.add_argument("--k", default="1,2,3,4,5,6,7,8", help="comma-separated K values")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    setup_logging()
    try:
        cfg = resolve_config(args)
    except (HeteroBoostError, OSError) as exc:
        event("config_error", logging.ERROR, stage="config", error=str(exc))
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    set_threads(cfg.threads)
    event("start", command=args.command, threads=get_threads(), **_meta(cfg))
    try:
        if args.command == "describe":
            cmd_describe(cfg)
        elif args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "features":
            cmd_features(cfg)
        elif args.command == "cluster":
            cmd_cluster(cfg)
        elif args.command == "run":
            cmd_run(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.model_dir)
        elif args.command == "compare":
            cmd_compare(cfg, args.report, args.reference, args.table, args.alpha)
        elif args.command == "sensitivity":
            cmd_sensitivity(cfg, [int(k) for k in args.k.split(",") if k])
    except StageFailed as exc:
        event("failed", logging.ERROR, stage=exc.stage, error=f"{type(exc.exc).__name__}: {exc.exc}")
        print(f"error [{exc.stage}]: {type(exc.exc).__name__}: {exc.exc}", file=sys.stderr)
        return 1
    event("done", command=args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
