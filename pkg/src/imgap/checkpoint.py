"""Bit-exact parameter checkpoints: npz archives of named float64 arrays."""
from __future__ import annotations

import json

import numpy as np

from .embedding import EncoderPair
from .nn import MlpParams


def save_checkpoint(path, arrays: dict, meta: dict) -> None:
    payload = dict(arrays)
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez_compressed(path, **payload)


def load_checkpoint(path) -> tuple[dict, dict]:
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
        meta = json.loads(bytes(data["__meta__"]).decode()) if "__meta__" in data.files else {}
    return arrays, meta


def mlp_to_arrays(prefix: str, p: MlpParams) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    return out


def mlp_from_arrays(prefix: str, arrays: dict, activation: str = "tanh") -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in arrays:
        weights.append(np.asarray(arrays[f"{prefix}.w{i}"], dtype=np.float64))
        biases.append(np.asarray(arrays[f"{prefix}.b{i}"], dtype=np.float64))
        i += 1
    if not weights:
        raise KeyError(f"no arrays under prefix {prefix!r}")
    return MlpParams(weights, biases, activation)


def encoder_pair_to_arrays(enc: EncoderPair) -> dict:
    out = mlp_to_arrays("encoder_t", enc.teacher)
    out.update(mlp_to_arrays("encoder_s", enc.student))
    out["log_tau"] = np.array([enc.log_tau])
    return out


def encoder_pair_from_arrays(arrays: dict, activation: str = "tanh") -> EncoderPair:
    return EncoderPair(
        mlp_from_arrays("encoder_t", arrays, activation),
        mlp_from_arrays("encoder_s", arrays, activation),
        float(np.asarray(arrays["log_tau"]).ravel()[0]),
    )
