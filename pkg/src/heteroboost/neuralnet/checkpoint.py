"""JSON checkpoint container for networks.

Tensors are stored row-major as base64 of little-endian float64 bytes,
so a reload is bit-exact.
"""
from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

from .layers import layer_from_spec
from .network import Network

FORMAT = "heteroboost-network"
VERSION = 1


def _encode(arr):
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(obj):
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(float)


def network_to_dict(net: Network, config_hash=""):
    return {
        "format": FORMAT,
        "version": VERSION,
        "endianness": "little",
        "dtype": "float64",
        "input_len": net.input_len,
        "frozen": list(net.frozen),
        "config_hash": config_hash,
        "layers": [{"spec": layer.spec(), "params": {k: _encode(v) for k, v in layer.params.items()}}
                   for layer in net.layers],
    }


def network_from_dict(obj) -> Network:
    if obj.get("format") != FORMAT:
        raise ValueError("not a network checkpoint")
    if obj.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    layers = []
    for entry in obj["layers"]:
        layer = layer_from_spec(entry["spec"])
        for k, v in entry["params"].items():
            layer.params[k] = _decode(v)
        layers.append(layer)
    return Network(layers, obj["input_len"], frozen=obj["frozen"])


def save_network(net, path, config_hash=""):
    with open(path, "w") as fh:
        json.dump(network_to_dict(net, config_hash), fh, indent=1, sort_keys=True)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def params_digest(net: Network) -> str:
    h = hashlib.sha256()
    for layer in net.layers:
        for k in sorted(layer.params):
            h.update(np.ascontiguousarray(layer.params[k], dtype="<f8").tobytes())
    return h.hexdigest()
