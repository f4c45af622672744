"""Four ways of combining clustering with global models, side by side.

(a) one global model per cluster of raw series; (b) the two-stage
pipeline; (c) sub-models forecasting the residual path; (d) sub-models
that see the global forecast as an extra input.  All share one seed and,
for (b)-(d), one fitted global model.
"""
from heteroboost import (
    PipelineConfig, compare_models, evaluate_pipeline, fit_stage_one, generate_synthetic, run_strategy,
    three_group_spec,
)
from heteroboost.neuralnet import HyperGrid, TrainConfig

scores = {m: {} for m in ("global", "a", "b", "c", "d")}
for seed in range(3):
    tset, _ = generate_synthetic(three_group_spec(seed=seed, size=10))
    cfg = PipelineConfig(model="mlp", seed=seed, k_candidates=(1, 2, 3, 4), kmeans_restarts=3, stage2_batches=(16,),
                         grid=HyperGrid(input_len=(12,), layers=(1,), nodes=(8,), dropout=(0.2,), batch=(32,)),
                         train=TrainConfig(max_epochs=50), stage2_train=TrainConfig(max_epochs=50))
    g = fit_stage_one(tset, "mlp", cfg.grid, TrainConfig(max_epochs=50, seed=seed))
    models = {"global": g, "a": run_strategy(tset, "a", cfg)}
    for s in "bcd":
        models[s] = run_strategy(tset, s, cfg, stage_one=g)
    for name, model in models.items():
        scores[name][f"seed{seed}"] = evaluate_pipeline(model, tset).aggregate()["smape"]["mean"]
    print(f"seed {seed}: " + "  ".join(f"{k}={v[f'seed{seed}']:.4f}" for k, v in scores.items()))

res = compare_models(scores, reference="global")
print("mean ranks:", {k: round(v, 2) for k, v in res.mean_ranks.items()})
print(f"Friedman p={res.friedman.p_value:.3f}; with three runs this is a demonstration, not evidence")
