"""Score forecasts and test whether one method ranks above another.

Cumulative RMSE, MAE and sMAPE over a test span, reference forecasters,
and a Friedman test with Nemenyi critical difference plus one-tail paired
t-tests against a reference, on a small table of published-style scores.
"""
import tempfile
from pathlib import Path

import numpy as np

from heteroboost import TimeSeriesSet, compare_models, cumulative_metrics, evaluate_pipeline
from heteroboost.evaluation import Clairvoyant, Naive, plot_forecasts

print("metrics of [10, 20] vs [12, 18]:", cumulative_metrics([10, 20], [12, 18]))

rng = np.random.default_rng(0)
tset = TimeSeriesSet.from_arrays([50 + rng.standard_normal(60).cumsum() for _ in range(8)], test_length=12)
for model in (Naive(), Clairvoyant()):
    rep = evaluate_pipeline(model, tset, name=type(model).__name__)
    print(f"{rep.model:>11}: " + "  ".join(f"{m}={v['mean']:.3f}" for m, v in rep.aggregate().items()))

out = Path(tempfile.mkdtemp())
rep.to_csv(out / "metrics.csv", {"seed": 0})
f = Naive().forecast(tset, "test")["s0"]
plot_forecasts("s0", f.time_index, f.actual, {"naive": f.forecast}, out / "s0.svg")
print("wrote", sorted(p.name for p in out.iterdir()), "to", out)

# mean sMAPE of four methods on eight collections
table = {
    "a": [0.1850, 0.1018, 0.1698, 0.0442, 0.0755, 0.0901, 0.0377, 0.1978],
    "b": [0.1672, 0.0897, 0.1696, 0.0414, 0.0722, 0.0851, 0.0366, 0.2069],
    "c": [0.1681, 0.0843, 0.1691, 0.0413, 0.0712, 0.0863, 0.0375, 0.2081],
    "d": [0.1681, 0.0900, 0.1690, 0.0421, 0.0716, 0.0854, 0.0365, 0.2073],
}
scores = {m: {f"set{i}": v for i, v in enumerate(vals)} for m, vals in table.items()}
res = compare_models(scores, reference="a")
print(f"Friedman chi2={res.friedman.statistic:.3f} p={res.friedman.p_value:.3f}  CD={res.cd:.3f}")
for m, t in res.pairwise.items():
    print(f"  {m} better than a: one-tail p={t.p_value:.4f}")
