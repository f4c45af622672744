"""Layers with explicit forward/backward passes (float64 numpy)."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


class Layer:
    kind = "layer"
    has_params = False

    def __init__(self):
        self.params = {}

    def forward(self, x, ctx):
        raise NotImplementedError

    def backward(self, dout, cache):
        raise NotImplementedError

    def out_dim(self, in_dim):
        return in_dim

    def spec(self):
        return {"kind": self.kind}

    def n_params(self):
        return int(sum(p.size for p in self.params.values()))


class Dense(Layer):
    has_params = True

    def __init__(self, in_dim, out_dim, activation="tanh", rng=None):
        super().__init__()
        if activation not in ("tanh", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim, self.width, self.activation = int(in_dim), int(out_dim), activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {"W": glorot(rng, self.in_dim, self.width), "b": np.zeros(self.width)}

    @property
    def kind(self):
        return "dense_tanh" if self.activation == "tanh" else "dense_linear"

    def forward(self, x, ctx):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"dense layer expects width {self.in_dim}, got shape {x.shape}")
        z = x @ self.params["W"] + self.params["b"]
        out = np.tanh(z) if self.activation == "tanh" else z
        return out, (x, out)

    def backward(self, dout, cache):
        x, out = cache
        dz = dout * (1.0 - out * out) if self.activation == "tanh" else dout
        grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["W"].T, grads

    def out_dim(self, in_dim):
        return self.width

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "width": self.width}


class LSTM(Layer):
    """LSTM over the lookback treated as a sequence; returns the last hidden state
    (or the full sequence when ``return_sequences``)."""
    kind = "recurrent"
    has_params = True

    def __init__(self, in_dim, hidden, return_sequences=False, rng=None):
        super().__init__()
        self.in_dim, self.width, self.return_sequences = int(in_dim), int(hidden), bool(return_sequences)
        rng = rng if rng is not None else np.random.default_rng(0)
        H = self.width
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget-gate bias
        self.params = {
            "Wx": glorot(rng, self.in_dim, 4 * H),
            "Wh": glorot(rng, H, 4 * H),
            "b": b,
        }

    def forward(self, x, ctx):
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[2] != self.in_dim:
            raise ShapeError(f"recurrent layer expects {self.in_dim} features, got {x.shape}")
        B, T, _ = x.shape
        H = self.width
        Wh = self.params["Wh"]
        zx = x @ self.params["Wx"] + self.params["b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs, cs, gates = [h], [c], []
        for t in range(T):
            z = zx[:, t] + h @ Wh
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = _sigmoid(z[:, 3 * H:])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            hs.append(h)
            cs.append(c)
            gates.append((i, f, g, o, tc))
        out = np.stack(hs[1:], axis=1) if self.return_sequences else h
        return out, (x, hs, cs, gates)

    def backward(self, dout, cache):
        x, hs, cs, gates = cache
        B, T, D = x.shape
        H = self.width
        Wh = self.params["Wh"]
        dz_all = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            i, f, g, o, tc = gates[t]
            dh = dh_next + (dout[:, t] if self.return_sequences else (dout if t == T - 1 else 0.0))
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cs[t]
            dz = dz_all[:, t]
            dz[:, :H] = di * i * (1.0 - i)
            dz[:, H:2 * H] = df * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dg * (1.0 - g * g)
            dz[:, 3 * H:] = do * o * (1.0 - o)
            dh_next = dz @ Wh.T
            dc_next = dc * f
        h_prev = np.stack(hs[:-1], axis=1)
        grads = {
            "Wx": np.einsum("btd,btk->dk", x, dz_all),
            "Wh": np.einsum("bth,btk->hk", h_prev, dz_all),
            "b": dz_all.sum(axis=(0, 1)),
        }
        dx = dz_all @ self.params["Wx"].T
        return (dx[:, :, 0] if D == 1 else dx), grads

    def out_dim(self, in_dim):
        return self.width

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "width": self.width,
                "return_sequences": self.return_sequences}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = float(rate)

    def forward(self, x, ctx):
        if not ctx.get("training") or self.rate == 0.0:
            return x, None
        keep = 1.0 - self.rate
        mask = (ctx["rng"].random(x.shape) < keep) / keep
        return x * mask, mask

    def backward(self, dout, cache):
        return (dout if cache is None else dout * cache), {}

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class ReshapeAddInput(Layer):
    """Adds the raw network input (the lookback window) to the incoming activations."""
    kind = "reshape_add_input"

    def forward(self, x, ctx):
        x_input = ctx["x_input"]
        z = x.reshape(x_input.shape)
        return z + x_input, x.shape

    def backward(self, dout, cache):
        return dout.reshape(cache), {}


def layer_from_spec(spec):
    kind = spec["kind"]
    if kind in ("dense_tanh", "dense_linear"):
        return Dense(spec["in_dim"], spec["width"], "tanh" if kind == "dense_tanh" else "linear")
    if kind == "recurrent":
        return LSTM(spec["in_dim"], spec["width"], spec.get("return_sequences", False))
    if kind == "dropout":
        return Dropout(spec["rate"])
    if kind == "reshape_add_input":
        return ReshapeAddInput()
    raise ValueError(f"unknown layer kind {kind!r}")
