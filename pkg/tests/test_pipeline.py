import math
from dataclasses import replace

import numpy as np
import pytest

from heteroboost.dataset import (
    GroupSpec, SyntheticSpec, TimeSeriesSet, WindowSpec, generate_synthetic, make_windows,
)
from heteroboost.errors import PreconditionError, ResidualModeError, StrategyError
from heteroboost.neuralnet import HyperGrid, TrainConfig
from heteroboost.pipeline import (
    PipelineConfig, ResidualMode, StageOne, bound_diagnostic, bound_value, compute_residuals,
    default_shift, fit_stage_one, fit_stage_two_type1, heterogeneity_level, load_pipeline,
    residual_values, run_strategy, save_pipeline, screen_heterogeneity, training_mse, with_clusters,
)

GRID = HyperGrid(input_len=(12,), layers=(1,), nodes=(6,), dropout=(0.2,), batch=(32,))
TRAIN = TrainConfig(max_epochs=40)
CFG = PipelineConfig(model="mlp", grid=GRID, train=TRAIN, stage2_train=TRAIN, stage2_batches=(16,),
                     k_candidates=(1, 2, 3), kmeans_restarts=2, type1_seasonal=False)


def small_spec(seed=0):
    return SyntheticSpec(groups=(GroupSpec(8, ar=(0.7,)), GroupSpec(8, ar=(-0.5,), seasonal_amplitude=1.0),
                                 GroupSpec(8, ar=(0.3,), nonlinear=0.5, arch=True)),
                         length=96, seed=seed)


@pytest.fixture(scope="module")
def data():
    tset, labels = generate_synthetic(small_spec())
    g = fit_stage_one(tset, "mlp", GRID, TRAIN)
    return tset, g


@pytest.fixture(scope="module")
def type2(data):
    tset, g = data
    return run_strategy(tset, "b", CFG, stage_one=g)


@pytest.fixture(scope="module")
def type1(data):
    tset, g = data
    return run_strategy(tset, "b", replace(CFG, stage2="type1"), stage_one=g)


class PeriodicOracle:
    """Forecasts x_t = x_{t-4}: exact on a period-4 cycle with lookback 4."""

    def predict(self, win, extra=None):
        return np.asarray(win)[:, 0]

    def n_params(self):
        return 0


def cycle_set():
    x = np.tile([3.0, 5.0, 4.0, 6.0], 20)
    return TimeSeriesSet.from_arrays([x, x + 1.0], frequency=4)


# --- residuals ---------------------------------------------------------------------------

def test_perfect_model_residuals():
    tset = cycle_set()
    g = StageOne(PeriodicOracle(), "oracle", 4, {})
    add = compute_residuals(g, tset, "additive")
    mul = compute_residuals(g, tset, "multiplicative")
    for sid in tset.ids:
        assert np.all(add[sid].residual == 0.0)
        assert np.allclose(mul[sid].residual, 1.0, atol=1e-15)


def test_additive_reconstruction(data):
    tset, g = data
    for r in compute_residuals(g, tset, "additive", "in_sample").values():
        assert np.max(np.abs(r.residual + r.forecast - r.actual)) < 1e-10


def test_multiplicative_shift_and_error():
    x = np.array([-2.0, 0.0, 3.0])
    assert default_shift(x) == pytest.approx(2.0 + 5e-3)
    with pytest.raises(ResidualModeError, match="larger shift"):
        residual_values(x, x, "multiplicative", 0.0)
    with pytest.raises(ResidualModeError):
        ResidualMode("ratio")


def test_residuals_cover_training_span_only(data):
    tset, g = data
    res = compute_residuals(g, tset, "additive")
    for i, sid in enumerate(tset.ids):
        assert res[sid].time_index[-1] == tset.splits[i].train_end - 1
        assert res[sid].time_index[0] == g.lookback


# --- screening ----------------------------------------------------------------------------

def test_heterogeneity_level_anchor():
    assert round(100 * heterogeneity_level(186, 366), 2) == 50.82
    assert round(100 * heterogeneity_level(91, 767), 2) == 11.86
    with pytest.raises(PreconditionError):
        heterogeneity_level(3, 2)


def test_screening_arithmetic_and_degenerate():
    rng = np.random.default_rng(0)
    res = {f"w{i}": rng.standard_normal(100) for i in range(10)}
    res["ar"] = np.cumsum(rng.standard_normal(100))
    res["flat"] = np.zeros(100)
    rep = screen_heterogeneity(res)
    assert "ar" in rep.I_h and "flat" in rep.I_h and rep.degenerate == ["flat"]
    assert rep.R_h * rep.n == rep.n_h == len(rep.I_h)
    none = screen_heterogeneity({k: v for k, v in res.items() if k.startswith("w")}, alpha=1e-12)
    assert none.R_h == 0.0 and not none.stage_two_needed


def test_zero_flagged_skips_stage_two(data):
    tset, g = data
    pipe = run_strategy(tset, "b", replace(CFG, alpha=1e-300), stage_one=g)
    assert pipe.report_before.n_h == 0
    assert any("not needed" in n for n in pipe.notes)
    a, b = pipe.forecast(tset, "test"), g.forecast(tset, "test")
    assert all(np.array_equal(a[k].forecast, b[k].forecast) for k in a)


# --- Type-I ---------------------------------------------------------------------------------

def test_type1_preconditions(data, type1):
    tset, g = data
    empty = replace(type1.report_before, I_h=[], n_h=0, R_h=0.0)
    with pytest.raises(PreconditionError):
        fit_stage_two_type1(type1, empty, tset)
    with pytest.raises(ResidualModeError):
        fit_stage_two_type1(type1, replace(type1.report_before, mode="multiplicative"), tset)


def test_type1_properties(data, type1):
    tset, g = data
    assert set(type1.type1) <= set(type1.report_before.I_h)
    assert type1.type1, "planted AR structure should yield at least one accepted ARIMA"
    assert training_mse(type1, tset) < training_mse(g, tset)
    per1, per2 = training_mse(g, tset, True), training_mse(type1, tset, True)
    assert all(per2[k] <= per1[k] + 1e-12 for k in per1)
    fa, fb = type1.forecast(tset, "test"), g.forecast(tset, "test")
    for sid in tset.ids:
        if sid not in type1.type1:
            assert np.array_equal(fa[sid].forecast, fb[sid].forecast)


def test_type1_white_noise_correction_is_small():
    from heteroboost.localmodels import auto_arima
    from heteroboost.pipeline import _type1_corrections
    h = np.random.default_rng(3).standard_normal(120) * 0.01
    m = auto_arima(h)
    corr = _type1_corrections(m, h, 0)
    assert np.max(np.abs(corr)) < 0.01


# --- Type-II ---------------------------------------------------------------------------------

def test_type2_structure(data, type2):
    tset, g = data
    assert sorted(type2.assignment) == sorted(type2.report_before.I_h)
    sel = type2.selection
    assert sel.sse[sel.chosen_k] == min(sel.sse.values())
    assert training_mse(type2, tset) <= training_mse(g, tset) + 1e-12
    fa, fb = type2.forecast(tset, "test"), g.forecast(tset, "test")
    for sid in tset.ids:
        if sid not in type2.assignment:
            assert np.array_equal(fa[sid].forecast, fb[sid].forecast)
        assert np.all(np.isfinite(fa[sid].forecast))
    assert type2.report_after.stage == "after"
    assert type2.report_after.alpha == type2.report_before.alpha
    assert type2.report_after.mode == type2.report_before.mode == "multiplicative"


def test_type2_cluster_guard(data, type2):
    for cm in type2.cluster_models.values():
        if cm.accepted:
            assert cm.train_mse <= cm.stage_one_train_mse + 1e-12
        else:
            assert cm.model is None


def test_type2_needs_network(data):
    tset, _ = data
    cfg = replace(CFG, model="pooled-ar")
    with pytest.raises(StrategyError):
        run_strategy(tset, "b", cfg)


def test_zero_clusters_is_noop(data):
    tset, g = data
    pipe = run_strategy(tset, "b", replace(CFG, clusters=0), stage_one=g)
    assert any("zero clusters" in n for n in pipe.notes)
    a, b = pipe.forecast(tset, "test"), g.forecast(tset, "test")
    assert all(np.array_equal(a[k].forecast, b[k].forecast) for k in a)


def test_with_clusters_reuses_selection(data, type2):
    tset, _ = data
    for K in type2.selection.candidates:
        p = with_clusters(type2, K, tset)
        assert p.clustering.K == K
        assert p.report_after is not None


def test_global_pattern_cluster_does_not_worsen_validation():
    spec = SyntheticSpec(groups=(GroupSpec(12),), length=96, shared_ar=(0.8,), noise_scale=0.05, seed=4)
    tset, _ = generate_synthetic(spec)
    g = fit_stage_one(tset, "mlp", GRID, TRAIN)
    from heteroboost.pipeline import HeterogeneityReport, fit_stage_two_type2
    rep = HeterogeneityReport({}, list(tset.ids), tset.n, tset.n, 1.0, "multiplicative", "before", 0.05, None)
    base = run_strategy(tset, "b", replace(CFG, stage2="none"), stage_one=g)
    pipe = fit_stage_two_type2(replace(base, mode="multiplicative"), rep, tset)
    va = make_windows(tset, WindowSpec(g.lookback), "val")

    def norm_loss(model):
        return float(np.mean(((model.predict(va.raw_inputs) - va.raw_targets) / va.sigma) ** 2))
    before = norm_loss(g)
    for cm in pipe.cluster_models.values():
        if cm.model is not None:
            assert norm_loss(cm.model) <= 1.01 * before


# --- strategies --------------------------------------------------------------------------------

def test_strategy_a_k1_equals_global(data):
    tset, g = data
    pa = run_strategy(tset, "a", replace(CFG, clusters=1))
    fa, fg = pa.forecast(tset, "test"), g.forecast(tset, "test")
    for sid in tset.ids:
        assert np.max(np.abs(fa[sid].forecast - fg[sid].forecast)) < 1e-8


def test_strategy_d_input_width_and_c_runs(data):
    tset, g = data
    pd_ = run_strategy(tset, "d", replace(CFG, clusters=2), stage_one=g)
    for cm in pd_.cluster_models.values():
        if cm.model is not None:
            assert cm.model.net.input_len == g.lookback + 1
            assert cm.model.extra_input
    pc = run_strategy(tset, "c", replace(CFG, clusters=2), stage_one=g)
    fc = pc.forecast(tset, "test")
    assert all(np.all(np.isfinite(f.forecast)) for f in fc.values())


def test_unknown_strategy(data):
    tset, g = data
    with pytest.raises(StrategyError):
        run_strategy(tset, "z", CFG, stage_one=g)
    with pytest.raises(StrategyError):
        PipelineConfig(strategy="e")


# --- bound ---------------------------------------------------------------------------------------

def test_bound_formula_oracle_and_monotonicity():
    t1, t2 = bound_value(100, [50, 60], 18, 2000, 500, 0.05)
    assert t1 == pytest.approx(math.sqrt((100 + math.log(80)) / 4000), rel=1e-14)
    assert t2 == pytest.approx(math.sqrt((18 + 110 + math.log(80)) / 1000), rel=1e-14)
    seq = [sum(bound_value(100, [50], 9, n, 300, 0.1)) for n in (100, 1000, 10000)]
    assert seq[0] > seq[1] > seq[2]
    one = bound_value(100, [50], 9, 1000, 300, 0.1)[1]
    many = bound_value(100, [50] * 10, 90, 1000, 300, 0.1)[1]
    assert many > one
    with pytest.raises(PreconditionError):
        bound_value(1, [], 0, 10, 10, 1.0)


def test_bound_diagnostic_fields(data, type2, type1):
    tset, _ = data
    for pipe in (type2, type1):
        d = bound_diagnostic(pipe, tset, 0.05)
        assert d.bound >= 0 and d.empirical_gap >= 0
        assert d.n_eff_total >= 1 and d.n_eff_het_total >= 1
        assert "heuristic" in d.note
    assert bound_diagnostic(type1, tset).log_Phi == 0.0
    with pytest.raises(PreconditionError):
        bound_diagnostic(type2, tset, 0.0)


# --- manifest ------------------------------------------------------------------------------------

@pytest.mark.parametrize("which", ["type2", "type1", "a"])
def test_manifest_roundtrip(tmp_path, data, type2, type1, which):
    tset, _ = data
    pipe = {"type2": type2, "type1": type1}.get(which)
    if pipe is None:
        pipe = run_strategy(tset, "a", replace(CFG, clusters=2))
    save_pipeline(pipe, tmp_path)
    back = load_pipeline(tmp_path)
    fa, fb = pipe.forecast(tset, "test"), back.forecast(tset, "test")
    for sid in fa:
        assert np.array_equal(fa[sid].forecast, fb[sid].forecast)
    assert back.config.hash() == pipe.config.hash()


def test_fit_stage_one_preconditions_and_pooled_ar():
    with pytest.raises(PreconditionError):
        fit_stage_one(None)
    # level plus sinusoid obeys x_t = c + 2cos(w) x_{t-1} - x_{t-2} exactly (noiseless AR(2))
    t = np.arange(80.0)
    arrays = [5.0 + a * np.sin(2 * np.pi * t / 7 + p) for a, p in [(2.0, 0.0), (1.0, 1.0), (3.0, 2.0)]]
    tset = TimeSeriesSet.from_arrays(arrays)
    g = fit_stage_one(tset, "pooled-ar", HyperGrid(input_len=(2,)))
    assert training_mse(g, tset) < 1e-20
    assert g.model.coef[1] == pytest.approx(2 * np.cos(2 * np.pi / 7), abs=1e-10)


# --- cluster selection on well-separated planted groups ---------------------------------------

def separated_spec(seed):
    return SyntheticSpec(groups=(GroupSpec(20, ar=(0.9,)), GroupSpec(20, ar=(-0.8,)),
                                 GroupSpec(20, ar=(0.2,), seasonal_amplitude=3.0)),
                         level=30.0, length=120, seed=seed)


@pytest.fixture(scope="module")
def separated_runs():
    from heteroboost.clustering import cluster_recovery_score
    grid = HyperGrid(input_len=(12,), layers=(1,), nodes=(8,), dropout=(0.2,), batch=(32,))
    cfg = PipelineConfig(model="mlp", grid=grid, stage2_batches=(16,), k_candidates=tuple(range(1, 7)),
                         kmeans_restarts=5)
    out = []
    for seed in range(10):
        tset, labels = generate_synthetic(separated_spec(seed))
        c = replace(cfg, seed=seed)
        g = fit_stage_one(tset, "mlp", grid, replace(c.train, seed=seed))
        p = run_strategy(tset, "b", c, stage_one=g)
        truth = {i: labels[i] for i in p.clustering.ids}
        out.append((p.clustering.K, cluster_recovery_score(p.clustering, truth)))
    return out


@pytest.mark.slow
def test_separated_groups_recovered(separated_runs):
    ks = [k for k, _ in separated_runs]
    ari = [a for _, a in separated_runs]
    assert all(k >= 3 for k in ks)
    assert np.median(ari) >= 0.8


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="validation SSE keeps falling slightly past the planted K, so K=3 "
                                       "is chosen in about 4/10 seeds (K=3..5 otherwise); see the ledger")
def test_separated_groups_choose_k3(separated_runs):
    assert sum(k == 3 for k, _ in separated_runs) >= 7
