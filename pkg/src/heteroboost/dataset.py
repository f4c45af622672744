"""Time-series collections: loading, splitting, windowing, synthetic fixtures."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError, GapError, PreconditionError, SpecError

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
SEGMENTS = ("train", "val", "test")


@dataclass(frozen=True)
class TimeSeries:
    id: str
    values: np.ndarray
    start_index: int = 0
    frequency: int = 12

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise PreconditionError(f"series {self.id!r}: values must be a non-empty vector")
        if not np.all(np.isfinite(v)):
            raise PreconditionError(f"series {self.id!r}: non-finite values")
        if self.frequency < 1:
            raise PreconditionError(f"series {self.id!r}: frequency must be >= 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class Split:
    """Exclusive end offsets of the train/validation/test segments."""
    train_end: int
    val_end: int
    test_end: int

    def bounds(self, segment):
        lo = {"train": 0, "val": self.train_end, "test": self.val_end}[segment]
        hi = {"train": self.train_end, "val": self.val_end, "test": self.test_end}[segment]
        return lo, hi


def auto_split(length: int, test_length: int = 0, val_fraction: float = 0.1) -> Split:
    """Chronological split: test tail, then the last ~10% of training as validation."""
    in_sample = length - test_length
    if in_sample < 2:
        raise PreconditionError(f"series of length {length} too short for test length {test_length}")
    val = max(1, int(round(val_fraction * in_sample)))
    return Split(in_sample - val, in_sample, length)


@dataclass(frozen=True)
class TimeSeriesSet:
    series: tuple
    splits: tuple

    def __post_init__(self):
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "splits", tuple(self.splits))
        if len(self.series) != len(self.splits):
            raise PreconditionError("one split per series required")
        for s, sp in zip(self.series, self.splits):
            if not (0 < sp.train_end < sp.val_end <= sp.test_end <= len(s)):
                raise PreconditionError(f"series {s.id!r}: invalid split {sp}")
        ids = [s.id for s in self.series]
        if len(set(ids)) != len(ids):
            raise PreconditionError("duplicate series ids")

    @property
    def n(self):
        return len(self.series)

    @property
    def ids(self):
        return [s.id for s in self.series]

    def index(self, series_id):
        return self.ids.index(series_id)

    def segment(self, i, name):
        lo, hi = self.splits[i].bounds(name)
        return self.series[i].values[lo:hi]

    def subset(self, ids):
        keep = [self.index(i) for i in ids]
        return TimeSeriesSet([self.series[k] for k in keep], [self.splits[k] for k in keep])

    @classmethod
    def from_arrays(cls, arrays, frequency=12, test_length=0, ids=None):
        ids = ids or [f"s{i}" for i in range(len(arrays))]
        series = [TimeSeries(str(i), a, frequency=frequency) for i, a in zip(ids, arrays)]
        return cls(series, [auto_split(len(s), test_length) for s in series])


# --- loading ---------------------------------------------------------------

def _read_rows(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise DataFormatError(f"{path}: missing column(s) {missing}; found {header}")
        return header, list(reader)


def load_csv(path, frequency: int = 12, split_path=None, test_length: int | None = None) -> TimeSeriesSet:
    """Load a long-format CSV with columns ``series_id,period,value``.

    Periods must be contiguous integers per series.  Splits come from
    ``split_path`` (``series_id,train_end,val_end,test_end``, 1-based
    inclusive), else from an optional ``split`` column (rows marked
    ``test``), else from ``test_length``; validation is the last 10% of
    the in-sample part.
    """
    header, rows = _read_rows(path, ("series_id", "period", "value"))
    data, test_marks = {}, {}
    for lineno, row in enumerate(rows, start=2):
        sid = row["series_id"]
        try:
            period = int(row["period"])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: bad period {row['period']!r}") from exc
        try:
            value = float(row["value"])
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: non-numeric value {row['value']!r}") from exc
        if not math.isfinite(value):
            raise DataFormatError(f"{path}:{lineno}: non-finite value")
        bucket = data.setdefault(sid, {})
        if period in bucket:
            raise GapError(f"{path}:{lineno}: duplicate period {period} for series {sid!r}")
        bucket[period] = value
        if "split" in header and row["split"].strip().lower() == "test":
            test_marks[sid] = test_marks.get(sid, 0) + 1

    series = []
    for sid, bucket in data.items():
        periods = sorted(bucket)
        if periods[-1] - periods[0] + 1 != len(periods):
            raise GapError(f"{path}: series {sid!r} has non-contiguous periods")
        series.append(TimeSeries(sid, [bucket[p] for p in periods], periods[0], frequency))

    if split_path is not None:
        _, srows = _read_rows(split_path, ("series_id", "train_end", "val_end", "test_end"))
        given = {r["series_id"]: Split(int(r["train_end"]), int(r["val_end"]), int(r["test_end"])) for r in srows}
        try:
            splits = [given[s.id] for s in series]
        except KeyError as exc:
            raise DataFormatError(f"{split_path}: no split for series {exc.args[0]!r}") from None
    else:
        splits = [auto_split(len(s), test_marks.get(s.id, test_length or 0)) for s in series]
    return TimeSeriesSet(series, splits)


def write_csv(tset: TimeSeriesSet, path, split_path=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series_id", "period", "value"])
        for s in tset.series:
            for k, v in enumerate(s.values):
                w.writerow([s.id, s.start_index + k, repr(float(v))])
    if split_path is not None:
        with open(split_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series_id", "train_end", "val_end", "test_end"])
            for s, sp in zip(tset.series, tset.splits):
                w.writerow([s.id, sp.train_end, sp.val_end, sp.test_end])


# --- normalisation and windows --------------------------------------------

@dataclass(frozen=True)
class WindowSpec:
    lookback: int = 12
    horizon: int = 1

    def __post_init__(self):
        if self.lookback < 2:
            raise PreconditionError("lookback must be >= 2")
        if self.horizon != 1:
            raise PreconditionError("only one-step-ahead windows are supported")


@dataclass(frozen=True)
class NormStats:
    mu: float
    sigma: float


def window_stats(windows):
    """Row-wise mean and floored population std of a (m, q) window matrix."""
    w = np.atleast_2d(np.asarray(windows, dtype=float))
    mu = w.mean(axis=1)
    sigma = np.maximum(w.std(axis=1), SIGMA_FLOOR)
    return mu, sigma


def stationarise_window(window, next_value=None):
    """Normalise a lookback window by its own mean and standard deviation.

    Returns ``(normalized window, normalized next value, NormStats)``.
    """
    w = np.asarray(window, dtype=float)
    if w.ndim != 1 or w.size < 2:
        raise PreconditionError("window must be a vector of length >= 2")
    mu, sigma = window_stats(w[None, :])
    stats = NormStats(float(mu[0]), float(sigma[0]))
    target = None if next_value is None else (next_value - stats.mu) / stats.sigma
    return (w - stats.mu) / stats.sigma, target, stats


def denormalise(value, norm):
    """Map normalized values back: value * sigma + mu (works elementwise)."""
    mu, sigma = (norm.mu, norm.sigma) if isinstance(norm, NormStats) else norm
    return value * sigma + mu if np.isscalar(value) else np.asarray(value) * sigma + mu


@dataclass
class WindowBatch:
    """Aligned rows of normalized lookback windows and next-step targets."""
    inputs: np.ndarray
    targets: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    series_ids: np.ndarray
    time_index: np.ndarray
    excluded: list = field(default_factory=list)

    def __len__(self):
        return self.targets.size

    def norm(self, row):
        return NormStats(float(self.mu[row]), float(self.sigma[row]))

    @property
    def raw_targets(self):
        return self.targets * self.sigma + self.mu

    @property
    def raw_inputs(self):
        return self.inputs * self.sigma[:, None] + self.mu[:, None]

    def take(self, rows):
        rows = np.asarray(rows)
        return WindowBatch(self.inputs[rows], self.targets[rows], self.mu[rows], self.sigma[rows],
                           self.series_ids[rows], self.time_index[rows], list(self.excluded))

    def where_series(self, ids):
        return self.take(np.nonzero(np.isin(self.series_ids, list(ids)))[0])

    @classmethod
    def concat(cls, batches):
        batches = list(batches)
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in
                     ("inputs", "targets", "mu", "sigma", "series_ids", "time_index")),
                   excluded=[e for b in batches for e in b.excluded])


def raw_windows(values, lookback, lo, hi):
    """Raw lookback windows and targets for targets at offsets lo..hi-1 (lo >= lookback)."""
    values = np.asarray(values, dtype=float)
    lo = max(lo, lookback)
    if hi <= lo:
        return np.empty((0, lookback)), np.empty(0), np.empty(0, dtype=int)
    idx = np.arange(lo, hi)
    win = np.lib.stride_tricks.sliding_window_view(values[:hi - 1], lookback)[idx - lookback]
    return win, values[idx], idx


def make_windows(tset: TimeSeriesSet, spec: WindowSpec, segment: str = "train", ids=None) -> WindowBatch:
    """One normalized row per forecastable target inside ``segment``.

    Lookback context may reach into earlier segments but targets never
    leave the segment.  Series shorter than lookback + 1 are excluded and
    listed in ``batch.excluded``.
    """
    if segment not in SEGMENTS:
        raise PreconditionError(f"unknown segment {segment!r}")
    q = spec.lookback
    parts, excluded = [], []
    wanted = None if ids is None else set(ids)
    for s, sp in zip(tset.series, tset.splits):
        if wanted is not None and s.id not in wanted:
            continue
        if len(s) < q + 1:
            excluded.append({"series_id": s.id, "reason": f"length {len(s)} < lookback + 1 = {q + 1}"})
            logger.warning("series %s excluded: shorter than lookback + 1", s.id)
            continue
        lo, hi = sp.bounds(segment)
        win, tgt, idx = raw_windows(s.values, q, lo, hi)
        parts.append((s.id, win, tgt, idx))
    if not parts:
        empty = np.empty(0)
        return WindowBatch(np.empty((0, q)), empty, empty, empty, np.empty(0, dtype=object),
                           np.empty(0, dtype=int), excluded)
    win = np.concatenate([p[1] for p in parts])
    tgt = np.concatenate([p[2] for p in parts])
    mu, sigma = window_stats(win) if len(win) else (np.empty(0), np.empty(0))
    return WindowBatch(
        inputs=(win - mu[:, None]) / sigma[:, None] if len(win) else win,
        targets=(tgt - mu) / sigma if len(win) else tgt,
        mu=mu, sigma=sigma,
        series_ids=np.array([p[0] for p in parts for _ in range(p[2].size)], dtype=object),
        time_index=np.concatenate([p[3] for p in parts]),
        excluded=excluded,
    )


# --- synthetic fixtures ----------------------------------------------------

@dataclass(frozen=True)
class GroupSpec:
    size: int
    ar: tuple = ()
    seasonal_amplitude: float = 0.0
    seasonal_phase: float = 0.0
    trend_slope: float = 0.0
    nonlinear: float = 0.0
    arch: bool = False
    scale: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    """Generative recipe: shared global component + group component + noise.

    The shared component is a single realisation (level, seasonality,
    trend, AR path) common to every series.  Each series adds an
    independent realisation of its group's process.
    """
    groups: tuple
    length: int = 120
    frequency: int = 12
    global_weight: float = 1.0
    noise_scale: float = 0.1
    level: float = 10.0
    shared_ar: tuple = ()
    shared_seasonal_amplitude: float = 0.0
    shared_trend: float = 0.0
    test_length: int = 12
    seed: int = 0

    @property
    def n_series(self):
        return sum(g.size for g in self.groups)

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def to_text(self):
        lines = [f"n_series={self.n_series}"]
        for name in ("length", "frequency", "global_weight", "noise_scale", "level",
                     "shared_seasonal_amplitude", "shared_trend", "test_length", "seed"):
            lines.append(f"{name}={getattr(self, name)}")
        lines.append("shared_ar=" + ",".join(repr(a) for a in self.shared_ar))
        lines.append(f"groups={len(self.groups)}")
        for k, g in enumerate(self.groups):
            lines.append(f"group.{k}.size={g.size}")
            lines.append(f"group.{k}.ar=" + ",".join(repr(a) for a in g.ar))
            for name in ("seasonal_amplitude", "seasonal_phase", "trend_slope", "nonlinear", "arch", "scale"):
                lines.append(f"group.{k}.{name}={getattr(g, name)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = parse_key_values(text)
        try:
            n_groups = int(kv.pop("groups"))
            groups = []
            for k in range(n_groups):
                pre = f"group.{k}."
                groups.append(GroupSpec(
                    size=int(kv.pop(pre + "size")),
                    ar=_floats(kv.pop(pre + "ar", "")),
                    seasonal_amplitude=float(kv.pop(pre + "seasonal_amplitude", 0)),
                    seasonal_phase=float(kv.pop(pre + "seasonal_phase", 0)),
                    trend_slope=float(kv.pop(pre + "trend_slope", 0)),
                    nonlinear=float(kv.pop(pre + "nonlinear", 0)),
                    arch=kv.pop(pre + "arch", "False").strip().lower() in ("1", "true", "yes"),
                    scale=float(kv.pop(pre + "scale", 1)),
                ))
            n_series = kv.pop("n_series", None)
            spec = cls(
                groups=tuple(groups),
                length=int(kv.pop("length", 120)),
                frequency=int(kv.pop("frequency", 12)),
                global_weight=float(kv.pop("global_weight", 1.0)),
                noise_scale=float(kv.pop("noise_scale", 0.1)),
                level=float(kv.pop("level", 10.0)),
                shared_ar=_floats(kv.pop("shared_ar", "")),
                shared_seasonal_amplitude=float(kv.pop("shared_seasonal_amplitude", 0)),
                shared_trend=float(kv.pop("shared_trend", 0)),
                test_length=int(kv.pop("test_length", 12)),
                seed=int(kv.pop("seed", 0)),
            )
        except (KeyError, ValueError) as exc:
            raise SpecError(f"bad synthetic spec: {exc}") from None
        if kv:
            raise SpecError(f"unknown synthetic spec key(s): {sorted(kv)}")
        if n_series is not None and int(n_series) != spec.n_series:
            raise SpecError(f"n_series={n_series} but group sizes sum to {spec.n_series}")
        return spec

    @classmethod
    def from_file(cls, path):
        return cls.from_text(Path(path).read_text())


def _floats(text):
    text = text.strip()
    return tuple(float(t) for t in text.split(",")) if text else ()


def parse_key_values(text):
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def check_stationary(ar, what="AR"):
    ar = np.asarray(ar, dtype=float)
    if ar.size == 0:
        return
    roots = np.roots(np.r_[-ar[::-1], 1.0])
    if np.any(np.abs(roots) <= 1.0 + 1e-9):
        raise SpecError(f"{what} coefficients {tuple(ar)} are not stationary "
                        f"(root modulus {np.min(np.abs(roots)):.4f} <= 1)")


def _ar_path(ar, innov, nonlinear=0.0, burn=0):
    ar = np.asarray(ar, dtype=float)
    p = ar.size
    x = np.zeros(innov.size)
    for t in range(innov.size):
        acc = innov[t]
        for j in range(1, min(p, t) + 1):
            acc += ar[j - 1] * x[t - j]
        if nonlinear and t >= 1:
            acc += nonlinear * (np.clip(x[t - 1], -3.0, 3.0) ** 2 - 1.0)
        x[t] = acc
    return x[burn:]


def generate_synthetic(spec: SyntheticSpec):
    """Draw a TimeSeriesSet from ``spec``; returns ``(set, labels)``.

    ``labels`` maps series id to its generating group index.
    """
    if not spec.groups:
        raise SpecError("at least one group is required")
    if spec.length < 2 or spec.test_length < 0:
        raise SpecError("invalid length / test_length")
    check_stationary(spec.shared_ar, "shared AR")
    for k, g in enumerate(spec.groups):
        if g.size < 1:
            raise SpecError(f"group {k} is empty")
        check_stationary(g.ar, f"group {k} AR")

    rng = np.random.default_rng(spec.seed)
    n, f, burn = spec.length, spec.frequency, 100
    t = np.arange(n)
    shared = spec.level + spec.shared_trend * t
    if spec.shared_seasonal_amplitude:
        shared = shared + spec.shared_seasonal_amplitude * np.sin(2 * np.pi * t / f)
    if spec.shared_ar:
        shared = shared + _ar_path(spec.shared_ar, rng.standard_normal(n + burn), burn=burn)

    arrays, labels, ids = [], {}, []
    for k, g in enumerate(spec.groups):
        for j in range(g.size):
            comp = np.zeros(n)
            if g.ar or g.nonlinear:
                z = rng.standard_normal(n + burn)
                if g.arch:
                    z = _arch_innovations(z)
                comp = comp + g.scale * _ar_path(g.ar, z, g.nonlinear, burn)
            if g.seasonal_amplitude:
                comp = comp + g.seasonal_amplitude * np.sin(2 * np.pi * t / f + g.seasonal_phase)
            if g.trend_slope:
                comp = comp + g.trend_slope * t
            noise = spec.noise_scale * rng.standard_normal(n) if spec.noise_scale else 0.0
            sid = f"g{k}_s{j:03d}"
            arrays.append(spec.global_weight * shared + comp + noise)
            labels[sid] = k
            ids.append(sid)
    series = [TimeSeries(sid, a, frequency=f) for sid, a in zip(ids, arrays)]
    for s in series:
        if not np.all(np.isfinite(s.values)):
            raise SpecError(f"series {s.id} produced non-finite values")
    return TimeSeriesSet(series, [auto_split(n, spec.test_length) for _ in series]), labels


def _arch_innovations(z, omega=0.3, alpha=0.7):
    e = np.zeros_like(z)
    for t in range(z.size):
        prev = e[t - 1] if t else 0.0
        e[t] = z[t] * math.sqrt(omega + alpha * prev * prev)
    return e


def three_group_spec(seed=0, size=20, length=120, test_length=12):
    """The bundled fixture: three planted residual behaviours around a shared level.

    Group 0 is a persistent AR(1), group 1 an oscillating AR(1) with a
    seasonal cycle, group 2 a weak AR(1) with a nonlinear term and ARCH
    innovations.
    """
    return SyntheticSpec(
        groups=(GroupSpec(size, ar=(0.7,)),
                GroupSpec(size, ar=(-0.5,), seasonal_amplitude=1.0),
                GroupSpec(size, ar=(0.3,), nonlinear=0.5, arch=True)),
        length=length, test_length=test_length, seed=seed)
