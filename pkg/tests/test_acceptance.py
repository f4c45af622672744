"""Acceptance criteria; each test prints one PASS/FAIL line (see the terminal summary)."""
from dataclasses import replace

import numpy as np
import pytest

from heteroboost import cli
from heteroboost.clustering import kmeans
from heteroboost.dataset import TimeSeriesSet, generate_synthetic, three_group_spec
from heteroboost.evaluation import Clairvoyant, compare_models, cumulative_metrics, evaluate_pipeline
from heteroboost.localmodels import ArimaModel, arima_forecast_one_step
from heteroboost.neuralnet import HyperGrid, build_network, design_matrix, pooled_ar_fit
from heteroboost.parallel import set_threads
from heteroboost.pipeline import (
    PipelineConfig, fit_stage_one, heterogeneity_level, run_strategy, screen_heterogeneity, training_mse,
    with_clusters,
)
from heteroboost.specfun import chi2_cdf, t_cdf
from heteroboost.stats import ljung_box

from oracles import brute_force_inertia, chi2_cdf_mp, metrics_loop, numeric_grad_check, t_cdf_mp

SEEDS = range(10)
K_RANGE = tuple(range(1, 9))
# one small grid cell and one stage-two batch size keep the 10-seed runs within minutes
GRID = HyperGrid(input_len=(12,), layers=(1,), nodes=(8,), dropout=(0.2,), batch=(32,))
CFG = PipelineConfig(model="mlp", grid=GRID, stage2_batches=(16,), k_candidates=K_RANGE, kmeans_restarts=3,
                     type1_seasonal=False)
STRATEGY_SMAPE = {
    "a": [0.1850, 0.1018, 0.1698, 0.0442, 0.0755, 0.0901, 0.0377, 0.1978],
    "b": [0.1672, 0.0897, 0.1696, 0.0414, 0.0722, 0.0851, 0.0366, 0.2069],
    "c": [0.1681, 0.0843, 0.1691, 0.0413, 0.0712, 0.0863, 0.0375, 0.2081],
    "d": [0.1681, 0.0900, 0.1690, 0.0421, 0.0716, 0.0854, 0.0365, 0.2073],
}


def test_c01_strategy_table_significance(criterion):
    ds = [f"d{j}" for j in range(8)]
    res = compare_models({m: dict(zip(ds, v)) for m, v in STRATEGY_SMAPE.items()}, reference="a")
    p = {m: r.p_value for m, r in res.pairwise.items()}
    target = {"b": 0.094, "c": 0.102, "d": 0.097}
    ok = all(abs(p[m] - target[m]) <= 0.005 for m in target)
    criterion(1, ok, "one-tail p vs (a): " + ", ".join(f"{m}={p[m]:.4f} (expected {target[m]})" for m in target))
    assert ok


def test_c02_heterogeneity_level(criterion):
    a, b = 100 * heterogeneity_level(186, 366), 100 * heterogeneity_level(91, 767)
    ok = round(a, 2) == 50.82 and round(b, 2) == 11.86
    criterion(2, ok, f"R_h(186,366)={a:.2f}%  R_h(91,767)={b:.2f}%")
    assert ok


@pytest.fixture(scope="module")
def fixture_runs():
    """Per seed: stage one, Type-II (b), additive Type-I, additive-screened Type-II and strategy (a)."""
    set_threads(1)
    runs = []
    for seed in SEEDS:
        tset, labels = generate_synthetic(three_group_spec(seed))
        cfg = replace(CFG, seed=seed)
        g = fit_stage_one(tset, cfg.model, cfg.grid, replace(cfg.train, seed=seed))
        b = run_strategy(tset, "b", cfg, stage_one=g)
        t1 = run_strategy(tset, "b", replace(cfg, stage2="type1"), stage_one=g)
        t2_add = run_strategy(tset, "b", replace(cfg, residual="additive"), stage_one=g)
        a = run_strategy(tset, "a", cfg)
        runs.append({"seed": seed, "tset": tset, "g": g, "b": b, "type1": t1, "type2_add": t2_add, "a": a})
    set_threads(None)
    return runs


def test_c03_stage_two_never_raises_training_mse(fixture_runs, criterion):
    worst, bad = -np.inf, []
    for r in fixture_runs:
        base = training_mse(r["g"], r["tset"])
        for name in ("type1", "type2_add", "b"):
            diff = training_mse(r[name], r["tset"]) - base
            worst = max(worst, diff)
            if diff > 1e-12 * base:
                bad.append((r["seed"], name))
    ok = not bad
    criterion(3, ok, f"max(stage-two - stage-one train MSE) = {worst:.3g} over {len(fixture_runs)} seeds; "
                     f"violations {bad}")
    assert ok


def test_c04_heterogeneity_reduced(fixture_runs, criterion):
    before = np.array([r["b"].report_before.R_h for r in fixture_runs])
    after = np.array([r["b"].report_after.R_h for r in fixture_runs])
    wins = int(np.sum(after < before))
    rel = np.median((before - after) / before)
    ok = wins >= 9 and rel >= 0.25
    criterion(4, ok, f"R_h after < before in {wins}/10 seeds (need 9); median relative reduction "
                     f"{100 * rel:.1f}% (need 25%)")
    assert ok


def test_c05_best_k_in_two_to_five(fixture_runs, criterion):
    best = []
    for r in fixture_runs:
        b, tset = r["b"], r["tset"]
        rmse = {K: evaluate_pipeline(with_clusters(b, K, tset), tset).aggregate()["rmse"]["mean"]
                for K in K_RANGE if K <= b.report_before.n_h}
        best.append(min(rmse, key=rmse.get))
    hits = sum(2 <= k <= 5 for k in best)
    ok = hits >= 6
    criterion(5, ok, f"test-RMSE argmin K per seed {best}; in [2,5] for {hits}/10 (need 6)")
    assert ok


def test_c06_strategy_b_beats_a(fixture_runs, criterion):
    sb = [evaluate_pipeline(r["b"], r["tset"]).aggregate()["smape"]["mean"] for r in fixture_runs]
    sa = [evaluate_pipeline(r["a"], r["tset"]).aggregate()["smape"]["mean"] for r in fixture_runs]
    wins = sum(x <= y for x, y in zip(sb, sa))
    ok = wins >= 7
    criterion(6, ok, f"(b) sMAPE <= (a) sMAPE in {wins}/10 seeds (need 7); mean (b) {np.mean(sb):.4f}, "
                     f"(a) {np.mean(sa):.4f}")
    assert ok


def test_c07_numerical_kernels(criterion):
    rng = np.random.default_rng(0)
    grad = {}
    for kind in ("mlp", "lstm"):
        net = build_network(kind, 6, 2, 4, 0.0, rng)
        grad[kind] = numeric_grad_check(net, rng.standard_normal((7, 6)), rng.standard_normal(7))
    arrays = [np.cumsum(rng.standard_normal(80)) for _ in range(4)]
    tset = TimeSeriesSet.from_arrays(arrays)
    model = pooled_ar_fit(tset, 3)
    W, y = [], []
    for s, sp in zip(tset.series, tset.splits):
        for t in range(3, sp.train_end):
            W.append(s.values[t - 3:t])
            y.append(s.values[t])
    X = design_matrix(np.array(W))
    oracle = np.linalg.solve(X.T @ X, X.T @ np.array(y))
    ar_err = float(np.max(np.abs(model.coef - oracle)))
    m = ArimaModel((1, 0, 0), ar=np.array([0.6]), const=1.5)
    hist = np.array([3.0, -1.0, 2.25])
    arima_ok = arima_forecast_one_step(m, hist) == 1.5 + 0.6 * 2.25
    km_ok = True
    for seed in range(5):
        r = np.random.default_rng(seed)
        P = r.standard_normal((int(r.integers(5, 11)), 2))
        km_ok &= abs(kmeans(P, 2, restarts=10, seed=seed).inertia - brute_force_inertia(P, 2)) <= 1e-10
    ok = grad["mlp"] < 1e-4 and grad["lstm"] < 1e-4 and ar_err < 1e-8 and arima_ok and km_ok
    criterion(7, ok, f"grad rel err mlp {grad['mlp']:.2e} lstm {grad['lstm']:.2e}; pooled AR |diff| "
                     f"{ar_err:.1e}; AR(1) forecast exact {arima_ok}; k-means optimum {km_ok}")
    assert ok


def test_c08_statistical_calibration(criterion):
    rng = np.random.default_rng(8)
    rep = screen_heterogeneity({i: rng.standard_normal(200) for i in range(1000)}, alpha=0.05)
    fpr = rep.R_h
    probes = [(x, df) for df in (1, 3, 8, 20, 40) for x in (0.1, 1.0, 4.0, 12.0, 45.0)]
    tprobes = [(t, df) for df in (1, 2, 5, 15, 60) for t in (-5.0, -1.3, 0.2, 1.9, 7.0)]
    cerr = max(abs(chi2_cdf(x, df) - chi2_cdf_mp(x, df)) for x, df in probes)
    terr = max(abs(t_cdf(t, df) - t_cdf_mp(t, df)) for t, df in tprobes)
    ok = abs(fpr - 0.05) <= 0.02 and cerr < 1e-8 and terr < 1e-8
    criterion(8, ok, f"Ljung-Box false-positive rate {100 * fpr:.1f}% (1000 reps, 5% +- 2%); "
                     f"max CDF error chi2 {cerr:.1e}, t {terr:.1e} over 50 probes")
    assert ok
    assert ljung_box(rng.standard_normal(200)).params["df"] == 24


def test_c09_metrics_oracle(criterion):
    cases = [([10.0, 20.0], [12.0, 18.0]), ([100.0], [90.0])]
    err = max(np.max(np.abs(np.subtract(cumulative_metrics(x, f), metrics_loop(x, f)))) for x, f in cases)
    tset, _ = generate_synthetic(three_group_spec(0, size=2))
    zero = evaluate_pipeline(Clairvoyant(), tset)
    zeros = all(r[m] == 0.0 for r in zero.rows for m in ("rmse", "mae", "smape"))
    ok = err <= 1e-10 and zeros
    criterion(9, ok, f"max |metric - loop oracle| {err:.1e}; clairvoyant exact zeros {zeros}")
    assert ok


def test_c10_cmd_run_reproducible(tmp_path, criterion):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["run", "--seed", "11", "--threads", "1", "--out", str(out)])
        assert code == 0
        outs.append(out)
    names = ("metrics.csv", "metrics_stage_one.csv")
    same = all((outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    criterion(10, same, f"cmd_run twice (seed 11, 1 thread): metric CSVs byte-identical {same}")
    assert same
