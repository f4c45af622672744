"""Mini-batch Adam training with a halving learning-rate schedule and early stopping."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import PreconditionError, TrainingDivergedError
from .network import Network, build_network

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.002
    decay: float = 0.5
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-6
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # let the untrained (epoch-0) weights compete for "best"; used for warm starts
    include_initial: bool = False

    def __post_init__(self):
        if self.patience < 1:
            raise PreconditionError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise PreconditionError("batch_size and max_epochs must be positive")

    def lr(self, epoch):
        """Learning rate for 1-based ``epoch``: lr0 * decay**(epoch - 1)."""
        return self.lr0 * self.decay ** (epoch - 1)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, net: Network, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            params = net.layers[k].params
            for name, gp in g.items():
                key = (k, name)
                if key not in self.m:
                    self.m[key] = np.zeros_like(gp)
                    self.v[key] = np.zeros_like(gp)
                m, v = self.m[key], self.v[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * gp
                v *= self.beta2
                v += (1.0 - self.beta2) * gp * gp
                params[name] -= (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    initial_val_loss: float = math.nan
    best_epoch: int = 0
    stopped_epoch: int = 0


def _snapshot(net):
    return [{n: p.copy() for n, p in layer.params.items()} for layer in net.layers]


def _restore(net, snap):
    for layer, saved in zip(net.layers, snap):
        for n, p in saved.items():
            layer.params[n][...] = p


def mse(net, X, y):
    if len(y) == 0:
        return math.nan
    err = net.predict(X) - np.asarray(y)
    return float(np.mean(err * err))


def train(net: Network, train_batch, val_batch, cfg: TrainConfig = TrainConfig()):
    """Fit a copy of ``net`` on ``(inputs, targets)`` pairs.

    ``train_batch``/``val_batch`` are WindowBatch-like (``inputs`` and
    ``targets`` attributes) or ``(X, y)`` tuples.  Returns the model
    holding the best-validation-loss weights and a TrainHistory.
    """
    X, y = _xy(train_batch)
    Xv, yv = _xy(val_batch) if val_batch is not None else (None, None)
    if len(y) == 0:
        raise PreconditionError("empty training batch")
    has_val = Xv is not None and len(yv) > 0
    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    hist = TrainHistory()

    start = net.frozen_prefix()
    if start >= len(net.layers):
        raise PreconditionError("network has no trainable layers")
    h0_all = net.forward_range(X, X, stop=start)[0] if start else None

    def val_loss():
        return mse(net, Xv, yv) if has_val else None

    best, best_snap = math.inf, None
    if has_val:
        hist.initial_val_loss = val_loss()
        if cfg.include_initial:
            best, best_snap = hist.initial_val_loss, _snapshot(net)
    wait = 0
    m = len(y)
    for epoch in range(1, cfg.max_epochs + 1):
        lr = cfg.lr(epoch)
        order = rng.permutation(m)
        total = 0.0
        for lo in range(0, m, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            h0 = h0_all[idx] if start else None
            loss, grads = net.loss_and_grads(X[idx], y[idx], training=True, rng=rng, start=start, h0=h0)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"loss became {loss} at epoch {epoch}")
            opt.step(net, grads, lr)
            total += loss * idx.size
        hist.train_loss.append(total / m)
        hist.lr.append(lr)
        monitor = val_loss() if has_val else hist.train_loss[-1]
        if not math.isfinite(monitor):
            raise TrainingDivergedError(f"validation loss became {monitor} at epoch {epoch}")
        hist.val_loss.append(monitor)
        hist.stopped_epoch = epoch
        if monitor < best - cfg.min_delta or best_snap is None:
            best, wait = monitor, 0
            best_snap = _snapshot(net)
            hist.best_epoch = epoch
        else:
            wait += 1
            if wait >= cfg.patience:
                break
    _restore(net, best_snap)
    return net, hist


def _xy(batch):
    if isinstance(batch, tuple):
        X, y = batch
    else:
        X, y = batch.inputs, batch.targets
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


# --- hyperparameter grid ----------------------------------------------------

@dataclass(frozen=True)
class HyperGrid:
    input_len: tuple = (12, 24)
    layers: tuple = (1, 2)
    nodes: tuple = (4, 8, 16)
    dropout: tuple = (0.2, 0.5)
    batch: tuple = (32, 64)

    def cells(self):
        for q, nl, nd, dr, bs in itertools.product(self.input_len, self.layers, self.nodes,
                                                   self.dropout, self.batch):
            yield {"input_len": q, "layers": nl, "nodes": nd, "dropout": dr, "batch": bs}

    def __len__(self):
        return (len(self.input_len) * len(self.layers) * len(self.nodes)
                * len(self.dropout) * len(self.batch))


@dataclass
class GridResult:
    best_cell: dict
    model: Network
    table: list
    history: TrainHistory


def grid_search(grid: HyperGrid, kind, windows_for, cfg: TrainConfig = TrainConfig()):
    """Train one model per grid cell and keep the lowest validation loss.

    ``windows_for(q)`` returns ``(train_batch, val_batch)`` for lookback q.
    Ties keep the earlier cell.
    """
    if len(grid) == 0:
        raise PreconditionError("empty hyperparameter grid")
    cache = {}
    table, best = [], None
    for k, cell in enumerate(grid.cells()):
        q = cell["input_len"]
        if q not in cache:
            cache[q] = windows_for(q)
        tr, va = cache[q]
        seed = int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0])
        net = build_network(kind, q, cell["layers"], cell["nodes"], cell["dropout"],
                            rng=np.random.default_rng(seed))
        fitted, hist = train(net, tr, va, replace(cfg, batch_size=cell["batch"], seed=seed))
        score = min(hist.val_loss) if hist.val_loss else math.inf
        table.append({**cell, "val_loss": score, "epochs": hist.stopped_epoch})
        logger.info("grid cell %s val_loss=%.6g", cell, score)
        if best is None or score < best[0]:
            best = (score, cell, fitted, hist)
    return GridResult(best[1], best[2], table, best[3])
