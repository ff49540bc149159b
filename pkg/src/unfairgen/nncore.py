"""Small differentiable substrate: dense MLPs with manual backprop, Adam,
diagonal-Gaussian and Bernoulli helpers, and finite-difference checks.

Everything is float64. Matrices are row-major ``(batch, features)``; weights
are stored ``(in, out)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

PROB_EPS = 1e-6
LOG_2PI = math.log(2.0 * math.pi)
ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid", "softplus", "elu")


class StaleCacheError(RuntimeError):
    """Raised when backward is given a cache from an older parameter version."""


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _activate(name, h):
    if name == "tanh":
        return np.tanh(h)
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "identity":
        return h
    if name == "sigmoid":
        return sigmoid(h)
    if name == "softplus":
        return softplus(h)
    if name == "elu":
        return np.where(h > 0, h, np.expm1(np.minimum(h, 0.0)))
    raise ValueError(f"unknown activation {name!r}")


def _activation_grad(name, h, y):
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (h > 0).astype(np.float64)
    if name == "identity":
        return np.ones_like(h)
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "softplus":
        return sigmoid(h)
    if name == "elu":
        return np.where(h > 0, 1.0, y + 1.0)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    sizes: tuple
    activations: tuple
    weights: list
    biases: list
    version: int = 0

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.activations = tuple(self.activations)
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output size")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} parameter shapes do not match sizes {self.sizes}")

    @classmethod
    def init(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            limit = math.sqrt(6.0 / (n_in + n_out))
            weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(tuple(sizes), tuple(activations), weights, biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def touch(self) -> None:
        """Mark parameters as changed; caches from earlier forwards become stale."""
        self.version += 1

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.activations, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "params": [p.reshape(-1).tolist() for p in self.params()],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Mlp":
        sizes = tuple(doc["sizes"])
        flat = doc["params"]
        if len(flat) != 2 * (len(sizes) - 1):
            raise ValueError("checkpoint parameter count does not match layer sizes")
        weights = [np.array(flat[2 * i], dtype=np.float64).reshape(sizes[i], sizes[i + 1])
                   for i in range(len(sizes) - 1)]
        biases = [np.array(flat[2 * i + 1], dtype=np.float64) for i in range(len(sizes) - 1)]
        return cls(sizes, tuple(doc["activations"]), weights, biases)


@dataclass
class ForwardCache:
    inputs: list
    preacts: list
    outputs: list
    owner: int
    version: int

    @property
    def output(self):
        return self.outputs[-1]

    @property
    def final_preact(self):
        return self.preacts[-1]


def forward(mlp: Mlp, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != mlp.sizes[0]:
        raise ValueError(f"input shape {x.shape} incompatible with input size {mlp.sizes[0]}")
    inputs, preacts, outputs = [], [], []
    h = x
    for w, b, act in zip(mlp.weights, mlp.biases, mlp.activations):
        inputs.append(h)
        pre = h @ w + b
        h = _activate(act, pre)
        preacts.append(pre)
        outputs.append(h)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite MLP output")
    return h, ForwardCache(inputs, preacts, outputs, id(mlp), mlp.version)


def backward(mlp: Mlp, cache: ForwardCache, grad_output, wrt_preactivation: bool = False):
    """Reverse-mode gradients of a forward pass.

    Args:
        grad_output: gradient w.r.t. the MLP output, or w.r.t. the final
            layer's pre-activation when ``wrt_preactivation`` is set (useful
            for sigmoid heads, where ``d log p / d logit = a - p`` is exact).

    Returns:
        ``(param_grads, grad_input)`` with ``param_grads`` ordered like
        ``mlp.params()``.
    """
    if cache.owner != id(mlp) or cache.version != mlp.version:
        raise StaleCacheError("cache does not belong to the current parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    grads = [None] * (2 * mlp.n_layers)
    for i in range(mlp.n_layers - 1, -1, -1):
        if not (wrt_preactivation and i == mlp.n_layers - 1):
            g = g * _activation_grad(mlp.activations[i], cache.preacts[i], cache.outputs[i])
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ mlp.weights[i].T
    return grads, g


@dataclass
class Adam:
    """Adam with bias correction; ``step`` minimises and updates in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list, grads: list) -> list:
        if len(params) != len(grads):
            raise ValueError("one gradient per parameter required")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return params


# -- distributions -----------------------------------------------------------

def gaussian_reparam(mean, log_variance, noise):
    mean, log_variance, noise = (np.asarray(v, dtype=np.float64) for v in (mean, log_variance, noise))
    if not (mean.shape == log_variance.shape == noise.shape):
        raise ValueError("mean, log_variance and noise must share a shape")
    return mean + np.exp(0.5 * log_variance) * noise


def gaussian_reparam_backward(log_variance, noise, grad_z):
    """Gradients of a loss w.r.t. mean and log-variance, given ``dL/dz``."""
    return grad_z, grad_z * 0.5 * np.exp(0.5 * log_variance) * noise


def gaussian_logpdf(z, mean, log_variance):
    """Diagonal Gaussian log-density summed over the last axis."""
    z, mean, log_variance = (np.asarray(v, dtype=np.float64) for v in (z, mean, log_variance))
    if not (z.shape == mean.shape == log_variance.shape):
        raise ValueError("z, mean and log_variance must share a shape")
    diff = z - mean
    return np.sum(-0.5 * LOG_2PI - 0.5 * log_variance - diff * diff / (2.0 * np.exp(log_variance)), axis=-1)


def gaussian_logpdf_grad(z, mean, log_variance):
    """Elementwise partials ``(d/dz, d/dmean, d/dlog_variance)`` of the log-density."""
    inv_var = np.exp(-np.asarray(log_variance, dtype=np.float64))
    diff = np.asarray(z, dtype=np.float64) - mean
    d_mean = diff * inv_var
    return -d_mean, d_mean, -0.5 + 0.5 * diff * diff * inv_var


def kl_to_standard_normal(mean, log_variance):
    """KL(N(mean, exp(log_variance)) || N(0, I)) per row."""
    return 0.5 * np.sum(np.exp(log_variance) + mean * mean - 1.0 - log_variance, axis=-1)


def kl_to_standard_normal_grad(mean, log_variance):
    return mean, 0.5 * (np.exp(log_variance) - 1.0)


def clamp_probs(probs, eps: float = PROB_EPS):
    return np.clip(np.asarray(probs, dtype=np.float64), eps, 1.0 - eps)


def bernoulli_logpmf(a, probs, eps: float = PROB_EPS):
    """Sum of per-bit Bernoulli log-likelihoods; a float for 1-d input, else one per row."""
    a = np.asarray(a, dtype=np.float64)
    p = clamp_probs(probs, eps)
    if a.shape != p.shape:
        raise ValueError(f"attribute shape {a.shape} does not match probabilities {p.shape}")
    ll = np.sum(a * np.log(p) + (1.0 - a) * np.log1p(-p), axis=-1)
    return float(ll) if a.ndim == 1 else ll


def bernoulli_entropy(probs, eps: float = PROB_EPS):
    p = clamp_probs(probs, eps)
    return np.sum(-p * np.log(p) - (1.0 - p) * np.log1p(-p), axis=-1)


def bernoulli_sample(probs, rng: np.random.Generator) -> np.ndarray:
    probs = np.asarray(probs)
    return (rng.random(probs.shape) < probs).astype(np.uint8)


# -- verification ------------------------------------------------------------

def numerical_gradient(f: Callable[[], float], param: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + h
        fp = f()
        param[idx] = old - h
        fm = f()
        param[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Norm-wise relative error ``|a - n| / max(|a| + |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), floor))


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(path, modules: dict, lineage: Sequence = (), extra: dict | None = None) -> None:
    """Write named MLPs plus seed lineage as one JSON document."""
    doc = {"format": "unfairgen-mlp/1", "lineage": list(lineage),
           "modules": {k: m.to_dict() for k, m in modules.items()}}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[dict, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "unfairgen-mlp/1":
        raise ValueError(f"{path}: not an unfairgen checkpoint")
    return {k: Mlp.from_dict(v) for k, v in doc["modules"].items()}, doc
