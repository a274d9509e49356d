"""Float64 dense-network core: explicit forward/backward, Adam, categorical ops.

Everything here is a pure function over value-like parameter containers, which
keeps runs bit-reproducible and makes finite-difference checking trivial.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class MlpParams:
    """Per-layer weight/bias arrays; hidden layers use `activation`, output is linear.

    Also doubles as the gradient container (same shapes, same flattening).
    """
    weights: list
    biases: list
    activation: str = "tanh"

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases], self.activation)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass
class MlpCache:
    params: MlpParams
    inputs: list       # input to each layer, (N, d_in)
    activations: list  # post-tanh output per hidden layer
    squeeze: bool


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix sign ambiguity for determinism
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(sizes, rng: np.random.Generator, activation: str = "tanh",
             hidden_gain: float = np.sqrt(2.0), out_gain: float = 1.0,
             bias_scale: float = 0.0) -> MlpParams:
    """Orthogonal init; `out_gain` scales the final layer (small for policy heads)."""
    weights, biases = [], []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        gain = out_gain if i == n_layers - 1 else hidden_gain
        weights.append(_orthogonal(sizes[i], sizes[i + 1], gain, rng))
        if bias_scale > 0.0:
            biases.append(rng.uniform(-bias_scale, bias_scale, sizes[i + 1]))
        else:
            biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(weights, biases, activation)


def mlp_forward(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != p.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]} != expected {p.weights[0].shape[0]}")
    inputs, activations = [], []
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            h = np.tanh(z)
            activations.append(h)
        else:
            h = z
    y = h[0] if squeeze else h
    return y, MlpCache(p, inputs, activations, squeeze)


def mlp_backward(cache: MlpCache, dy: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Exact reverse-mode gradients; returns (param grads, input grads)."""
    p = cache.params
    dh = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    if dh.shape[1] != p.weights[-1].shape[1]:
        raise ValueError("dy width does not match network output")
    d_weights = [None] * len(p.weights)
    d_biases = [None] * len(p.biases)
    for i in range(len(p.weights) - 1, -1, -1):
        if i < len(p.weights) - 1:
            dh = dh * (1.0 - cache.activations[i] ** 2)  # through tanh
        d_weights[i] = cache.inputs[i].T @ dh
        d_biases[i] = dh.sum(axis=0)
        dh = dh @ p.weights[i].T
    dx = dh[0] if cache.squeeze else dh
    return MlpParams(d_weights, d_biases, p.activation), dx


def flatten_params(p: MlpParams) -> np.ndarray:
    chunks = []
    for w, b in zip(p.weights, p.biases):
        chunks.append(w.ravel())
        chunks.append(b.ravel())
    return np.concatenate(chunks)


def unflatten_params(flat: np.ndarray, template: MlpParams) -> MlpParams:
    weights, biases = [], []
    off = 0
    for w, b in zip(template.weights, template.biases):
        weights.append(flat[off:off + w.size].reshape(w.shape).copy())
        off += w.size
        biases.append(flat[off:off + b.size].copy())
        off += b.size
    if off != flat.size:
        raise ValueError("flat vector length does not match template")
    return MlpParams(weights, biases, template.activation)


def adam_init(n_params: int, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_step(flat_params: np.ndarray, flat_grads: np.ndarray,
              s: AdamState) -> tuple[np.ndarray, AdamState]:
    """Bias-corrected Adam update; pure (returns fresh params and state)."""
    if not np.all(np.isfinite(flat_grads)):
        bad = int(np.sum(~np.isfinite(flat_grads)))
        raise ValueError(f"non-finite gradients in adam_step ({bad}/{flat_grads.size} entries)")
    t = s.t + 1
    m = s.beta1 * s.m + (1.0 - s.beta1) * flat_grads
    v = s.beta2 * s.v + (1.0 - s.beta2) * flat_grads ** 2
    m_hat = m / (1.0 - s.beta1 ** t)
    v_hat = v / (1.0 - s.beta2 ** t)
    new_params = flat_params - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)
    return new_params, replace(s, m=m, v=v, t=t)


def adam_step_mlp(p: MlpParams, grads: MlpParams,
                  s: AdamState) -> tuple[MlpParams, AdamState]:
    flat, state = adam_step(flatten_params(p), flatten_params(grads), s)
    return unflatten_params(flat, p), state


# --- categorical distribution utilities -----------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF sampling; batched over leading dim, scalar for 1-D logits."""
    probs = softmax(np.atleast_2d(logits))
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[0])
    actions = (u[:, None] > cdf).sum(axis=-1)
    actions = np.minimum(actions, probs.shape[-1] - 1)
    return int(actions[0]) if np.asarray(logits).ndim == 1 else actions


def log_prob(logits: np.ndarray, actions) -> np.ndarray:
    lp = log_softmax(logits)
    if lp.ndim == 1:
        return lp[int(actions)]
    return lp[np.arange(lp.shape[0]), np.asarray(actions, dtype=int)]


def entropy(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    return -(np.exp(lp) * lp).sum(axis=-1)


def kl_categorical(logits_p: np.ndarray, logits_q: np.ndarray) -> np.ndarray:
    """KL(p || q) from logits; q must be positive wherever p is (softmax outputs are)."""
    lp = log_softmax(logits_p)
    lq = log_softmax(logits_q)
    return (np.exp(lp) * (lp - lq)).sum(axis=-1)


@dataclass(frozen=True)
class CategoricalDist:
    logits: np.ndarray

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def sample(self, rng: np.random.Generator):
        return sample_categorical(self.logits, rng)

    def log_prob(self, action) -> np.ndarray:
        return log_prob(self.logits, action)

    def entropy(self) -> np.ndarray:
        return entropy(self.logits)


# --- normalization ---------------------------------------------------------

_ZERO_NORM_TOL = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Normalize rows (last axis) to unit length; zero vectors are an error."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < _ZERO_NORM_TOL):
        raise ValueError("cannot l2-normalize a zero vector")
    return v / norms


def l2_normalize_with_cache(v: np.ndarray):
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms < _ZERO_NORM_TOL):
        raise ValueError("cannot l2-normalize a zero vector")
    z = v / norms
    return z, (z, norms)


def l2_normalize_backward(cache, dz: np.ndarray) -> np.ndarray:
    z, norms = cache
    return (dz - z * (z * dz).sum(axis=-1, keepdims=True)) / norms


# --- gradient checking -----------------------------------------------------

def grad_check(fn, x0: np.ndarray, n_probes: int = 64,
               rng: np.random.Generator | None = None, h: float = 1e-5) -> float:
    """Max relative error between fn's analytic gradient and central differences.

    `fn(x) -> (loss, grad)` must be deterministic. Errors are probed on
    `n_probes` random coordinates.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x0 = np.asarray(x0, dtype=np.float64)
    _, grad = fn(x0)
    n = min(n_probes, x0.size)
    idx = rng.choice(x0.size, size=n, replace=False)
    max_rel = 0.0
    for i in idx:
        xp = x0.copy()
        xp[i] += h
        lp, _ = fn(xp)
        xm = x0.copy()
        xm[i] -= h
        lm, _ = fn(xm)
        numeric = (lp - lm) / (2.0 * h)
        denom = max(1e-6, abs(numeric), abs(grad[i]))
        max_rel = max(max_rel, abs(numeric - grad[i]) / denom)
    return max_rel
