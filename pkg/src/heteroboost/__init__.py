"""Two-stage global forecasting with residual-heterogeneity correction."""
__version__ = "0.1.0"

from .dataset import TimeSeries, TimeSeriesSet, generate_synthetic, load_csv, three_group_spec
from .evaluation import compare_models, cumulative_metrics, evaluate_pipeline
from .pipeline import PipelineConfig, fit_stage_one, run_strategy

__all__ = [
    "TimeSeries", "TimeSeriesSet", "generate_synthetic", "load_csv", "three_group_spec",
    "compare_models", "cumulative_metrics", "evaluate_pipeline",
    "PipelineConfig", "fit_stage_one", "run_strategy",
]
