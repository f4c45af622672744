"""Feed-forward composition of layers with freezing and MSE gradients."""
from __future__ import annotations

import copy

import numpy as np

from ..errors import ShapeError
from .layers import LSTM, Dense, Dropout, Layer


class Network:
    """An ordered stack of layers mapping a lookback window to a scalar forecast.

    ``frozen[k]`` marks layer ``k`` as excluded from training; frozen
    parameters are never written by the optimiser.
    """

    def __init__(self, layers, input_len, frozen=None):
        self.layers = list(layers)
        self.input_len = int(input_len)
        self.frozen = list(frozen) if frozen is not None else [False] * len(self.layers)
        if len(self.frozen) != len(self.layers):
            raise ValueError("frozen mask length must match layer count")

    # -- structure -----------------------------------------------------------
    @property
    def param_layers(self):
        return [k for k, layer in enumerate(self.layers) if layer.has_params]

    @property
    def n_param_layers(self):
        return len(self.param_layers)

    def n_params(self, trainable_only=False):
        return sum(layer.n_params() for layer, fr in zip(self.layers, self.frozen)
                   if not (trainable_only and fr))

    def trainable_indices(self):
        return [k for k in self.param_layers if not self.frozen[k]]

    def copy(self):
        return copy.deepcopy(self)

    # -- computation ---------------------------------------------------------
    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_len:
            raise ShapeError(f"expected input of shape (m, {self.input_len}), got {X.shape}")
        return X

    def forward_range(self, h, x_input, start=0, stop=None, training=False, rng=None, keep_cache=False):
        ctx = {"x_input": x_input, "training": training, "rng": rng}
        caches = []
        for k in range(start, len(self.layers) if stop is None else stop):
            h, cache = self.layers[k].forward(h, ctx)
            if keep_cache:
                caches.append(cache)
        return h, caches

    def forward(self, X, training=False, rng=None):
        """Forecasts (normalized scale) for each row of ``X``."""
        X = self._check(X)
        out, _ = self.forward_range(X, X, training=training, rng=rng)
        return out.reshape(-1)

    def predict(self, X):
        return self.forward(X, training=False)

    def loss_and_grads(self, X, y, training=False, rng=None, start=0, h0=None):
        """MSE loss and its gradient w.r.t. every trainable parameter.

        When ``start > 0``, ``h0`` must hold the output of layers
        ``[0, start)`` (used to skip a frozen prefix).
        """
        X = self._check(X) if h0 is None else X
        y = np.asarray(y, dtype=float).reshape(-1)
        h = X if h0 is None else h0
        out, caches = self.forward_range(h, X, start=start, training=training, rng=rng, keep_cache=True)
        pred = out.reshape(-1)
        err = pred - y
        loss = float(np.mean(err * err))
        dout = (2.0 / y.size) * err.reshape(out.shape)
        grads = {}
        trainable = self.trainable_indices()
        lowest = min(trainable) if trainable else len(self.layers)
        for k in range(len(self.layers) - 1, start - 1, -1):
            if k < lowest:
                break
            dout, g = self.layers[k].backward(dout, caches[k - start])
            if g and not self.frozen[k]:
                grads[k] = g
        return loss, grads

    def frozen_prefix(self):
        """Index of the first trainable layer.

        Layers before it are evaluated once, in inference mode, during
        training (dropout inside a frozen trunk is therefore inactive).
        """
        trainable = self.trainable_indices()
        return min(trainable) if trainable else len(self.layers)


def build_network(kind, input_len, n_layers=1, nodes=8, dropout=0.0, rng=None):
    """Stage-one architecture: stacked tanh-dense or LSTM layers and a linear head."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers: list[Layer] = []
    if kind == "mlp":
        width = input_len
        for _ in range(n_layers):
            layers.append(Dense(width, nodes, "tanh", rng))
            if dropout:
                layers.append(Dropout(dropout))
            width = nodes
    elif kind == "lstm":
        width = 1
        for j in range(n_layers):
            layers.append(LSTM(width, nodes, return_sequences=j < n_layers - 1, rng=rng))
            if dropout:
                layers.append(Dropout(dropout))
            width = nodes
    else:
        raise ValueError(f"unknown network kind {kind!r}")
    layers.append(Dense(nodes, 1, "linear", rng))
    return Network(layers, input_len)
