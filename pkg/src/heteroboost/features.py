"""Per-series feature vectors from residual series, and their standardized matrix."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import stats
from .errors import DegenerateSeriesError, PreconditionError

FEATURE_NAMES = (
    "acf1", "acf10_sum_sq", "pacf5_sum_sq", "teraesvirta_stat", "arch_r2",
    "spectral_entropy", "lumpiness", "trend_strength", "seasonal_strength",
)
MIN_LENGTH = 16
_STD_TOL = 1e-12


@dataclass
class FeatureVector:
    series_id: str
    names: tuple
    values: np.ndarray  # NaN where absent
    mask: np.ndarray  # True where present
    degenerate: bool = False

    def as_dict(self):
        return {n: (float(v) if m else None) for n, v, m in zip(self.names, self.values, self.mask)}


@dataclass
class FeatureMatrix:
    ids: list
    names: tuple
    raw: np.ndarray
    mask: np.ndarray
    standardized: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # columns mapped to zero because they carry no spread
    degenerate: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.ids)

    def destandardize(self, Z=None):
        Z = self.standardized if Z is None else np.asarray(Z, dtype=float)
        return Z * np.where(self.constant, 0.0, self.std) + self.mean

    def permuted(self, order):
        """Same rows with feature columns reordered (for invariance checks)."""
        order = list(order)
        return FeatureMatrix(self.ids, tuple(self.names[j] for j in order), self.raw[:, order],
                             self.mask[:, order], self.standardized[:, order], self.mean[order],
                             self.std[order], self.constant[order], list(self.degenerate))


def _one(name, x, frequency, cache):
    if name == "acf1":
        return float(stats.acf(x, 1)[0])
    if name == "acf10_sum_sq":
        return float(np.sum(stats.acf(x, 10) ** 2))
    if name == "pacf5_sum_sq":
        return float(np.sum(stats.pacf(x, 5) ** 2))
    if name == "teraesvirta_stat":
        return stats.teraesvirta_stat(x).statistic
    if name == "arch_r2":
        return stats.arch_lm_stat(x, lags=min(12, x.size // 4)).params["r2"]
    if name == "spectral_entropy":
        return stats.spectral_entropy(x)
    if name == "lumpiness":
        return stats.lumpiness(x, tile=max(frequency, 4) if frequency > 1 else 10)
    if name in ("trend_strength", "seasonal_strength"):
        if "str" not in cache:
            cache["str"] = stats.strengths(x, frequency)
        st = cache["str"]
        return st.trend_strength if name == "trend_strength" else st.seasonal_strength
    raise PreconditionError(f"unknown feature {name!r}")


def extract_features(residual, frequency=12, series_id="", names=FEATURE_NAMES) -> FeatureVector:
    """Compute the configured features of one residual series.

    Features whose own length requirement is not met (or that are undefined,
    e.g. seasonal strength without two full cycles) are masked absent.  A
    constant residual yields an all-absent vector flagged ``degenerate``.
    """
    x = np.asarray(residual, dtype=float).ravel()
    names = tuple(names)
    if x.size < MIN_LENGTH:
        raise PreconditionError(f"feature extraction needs at least {MIN_LENGTH} values, got {x.size}")
    values = np.full(len(names), np.nan)
    mask = np.zeros(len(names), dtype=bool)
    if stats.is_degenerate(x):
        return FeatureVector(series_id, names, values, mask, degenerate=True)
    cache = {}
    for j, name in enumerate(names):
        try:
            v = _one(name, x, frequency, cache)
        except (PreconditionError, DegenerateSeriesError):
            continue
        if v is not None and np.isfinite(v):
            values[j] = v
            mask[j] = True
    return FeatureVector(series_id, names, values, mask)


def build_matrix(features) -> FeatureMatrix:
    """Stack feature vectors and standardize each column over its present entries.

    Absent entries are imputed with the column mean (0 after
    standardization).  Columns without spread, including the one-row case,
    become all-zero and are flagged in ``constant``.
    """
    features = list(features)
    if not features:
        raise PreconditionError("cannot build a feature matrix from zero rows")
    names = features[0].names
    if any(f.names != names for f in features):
        raise PreconditionError("feature vectors have different feature sets")
    raw = np.vstack([f.values for f in features])
    mask = np.vstack([f.mask for f in features])
    m = raw.shape[1]
    mean = np.zeros(m)
    std = np.ones(m)
    constant = np.zeros(m, dtype=bool)
    Z = np.zeros_like(raw)
    for j in range(m):
        col = raw[mask[:, j], j]
        if col.size == 0:
            constant[j] = True
            continue
        mean[j] = col.mean()
        sd = col.std()
        scale = max(1.0, float(np.abs(col).max()))
        if sd <= _STD_TOL * scale:
            constant[j] = True
            std[j] = 0.0
            continue
        std[j] = sd
        Z[mask[:, j], j] = (col - mean[j]) / sd
    return FeatureMatrix([f.series_id for f in features], names, raw, mask, Z, mean, std, constant,
                         [f.series_id for f in features if f.degenerate])


def feature_table(residuals: dict, frequency=12, names=FEATURE_NAMES):
    """Extract features for ``{series_id: residual}`` in sorted id order and build the matrix."""
    ids = sorted(residuals)
    return build_matrix([extract_features(residuals[i], frequency, i, names) for i in ids])
