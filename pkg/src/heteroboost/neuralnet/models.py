"""Forecasters built from networks: stage-one wrapper, sub-global models, pooled AR."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..dataset import window_stats
from ..errors import PreconditionError, SingularDesignError
from .layers import Dense, ReshapeAddInput
from .network import Network


class NeuralForecaster:
    """Wraps a network trained on per-window normalized data.

    ``predict`` takes raw lookback windows and returns raw forecasts.
    With ``extra_input=True`` the network expects one more column: the
    stage-one forecast, normalized with the same window statistics.
    """

    kind = "neural"

    def __init__(self, net: Network, lookback: int, extra_input=False):
        self.net = net
        self.lookback = int(lookback)
        self.extra_input = bool(extra_input)

    def normalize(self, windows, extra=None):
        w = np.atleast_2d(np.asarray(windows, dtype=float))
        mu, sigma = window_stats(w)
        X = (w - mu[:, None]) / sigma[:, None]
        if self.extra_input:
            X = np.column_stack([X, (np.asarray(extra, dtype=float) - mu) / sigma])
        return X, mu, sigma

    def predict(self, windows, extra=None):
        X, mu, sigma = self.normalize(windows, extra)
        if len(X) == 0:
            return np.empty(0)
        return self.net.predict(X) * sigma + mu

    def n_params(self, trainable_only=False):
        return self.net.n_params(trainable_only)


@dataclass
class PooledAR:
    """x_t = b0 + b1 x_{t-1} + ... + bq x_{t-q}, fitted by OLS on raw windows."""
    coef: np.ndarray
    lookback: int
    kind = "pooled_ar"

    def predict(self, windows, extra=None):
        w = np.atleast_2d(np.asarray(windows, dtype=float))
        # window columns run oldest..newest; b1 pairs with the newest value
        return self.coef[0] + w[:, ::-1] @ self.coef[1:]

    def n_params(self, trainable_only=False):
        return self.coef.size


def design_matrix(windows):
    w = np.atleast_2d(np.asarray(windows, dtype=float))
    return np.column_stack([np.ones(len(w)), w[:, ::-1]])


def pooled_ar_fit(tset, q, segment="train", include_val=False) -> PooledAR:
    """Ordinary least squares over the stacked raw windows of every series."""
    from ..dataset import raw_windows

    rows, ys = [], []
    for s, sp in zip(tset.series, tset.splits):
        lo, hi = sp.bounds(segment)
        if include_val and segment == "train":
            hi = sp.val_end
        win, tgt, _ = raw_windows(s.values, q, lo, hi)
        rows.append(win)
        ys.append(tgt)
    W = np.concatenate(rows) if rows else np.empty((0, q))
    y = np.concatenate(ys) if ys else np.empty(0)
    if len(y) <= q + 1:
        raise PreconditionError(f"pooled AR({q}) needs more than {q + 1} rows, got {len(y)}")
    X = design_matrix(W)
    names = ["intercept"] + [f"lag{j}" for j in range(1, q + 1)]
    _, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(X.shape) * np.finfo(float).eps * 1e3 if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise SingularDesignError(f"pooled AR design is rank deficient; dependent column(s): {bad}", bad)
    coef = np.linalg.lstsq(X, y, rcond=None)[0]
    return PooledAR(coef, q)


def build_sub_tsgm(g: Network, extra_layers=None, warm_start=True, rng=None) -> Network:
    """Cluster-specific sub-model: frozen trunk of ``g`` plus a trainable heterogeneity module.

    The first L-1 parameterized layers of ``g`` (and anything between
    them) are copied and frozen.  Their output feeds a new dense layer of
    width q whose output is added to the input window; ``extra_layers``
    (default: tanh layer with the stage-one width, then a linear head)
    map that sum to the forecast.

    With ``warm_start`` and extra layers shaped like ``g``'s own dense
    stack, the extra layers start from ``g``'s weights and the new dense
    layer from zero, so the sub-model initially reproduces ``g``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    plist = g.param_layers
    if len(plist) < 2:
        raise PreconditionError("stage-one model needs at least 2 parameterized layers to split")
    head = plist[-1]
    trunk = [copy.deepcopy(layer) for layer in g.layers[:head]]
    h_width = g.layers[plist[-2]].width
    q = g.input_len
    nodes = h_width
    if extra_layers is None:
        extra_layers = [Dense(q, nodes, "tanh", rng), Dense(nodes, 1, "linear", rng)]
    z1 = Dense(h_width, q, "linear", rng)
    new = [z1, ReshapeAddInput()] + list(extra_layers)

    g_dense = [g.layers[k] for k in plist]
    extra_dense = [layer for layer in extra_layers if layer.has_params]
    warm = (warm_start and all(isinstance(layer, Dense) for layer in g_dense)
            and len(g_dense) == len(extra_dense)
            and all(a.params["W"].shape == b.params["W"].shape and a.activation == b.activation
                    for a, b in zip(g_dense, extra_dense)))
    if warm:
        for src, dst in zip(g_dense, extra_dense):
            for name in dst.params:
                dst.params[name] = src.params[name].copy()
        z1.params["W"][...] = 0.0
        z1.params["b"][...] = 0.0
    net = Network(trunk + new, q, frozen=[True] * len(trunk) + [False] * len(new))
    net.warm_started = warm
    return net
