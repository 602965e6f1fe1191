"""Minimal dense-network kernel on numpy.

Provides exactly what the policy, value and dynamics-model networks need:
fully-connected layers with relu/tanh/linear activations, analytic
backprop, the quantile Huber loss, and SGD/Adam optimizers. Everything is
float64 and deterministic given a seeded ``numpy.random.Generator``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")


def _act(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class DenseNet:
    """Fully-connected net. ``weights[i]`` has shape (fan_in, fan_out)."""

    sizes: list
    activations: list
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def create(cls, sizes, activations, rng: np.random.Generator) -> "DenseNet":
        """Uniform fan-in initialization: W ~ U(-1/sqrt(n_in), 1/sqrt(n_in)), b = 0."""
        net = cls(list(sizes), list(activations))
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(n_in)
            net.weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            net.biases.append(np.zeros(n_out))
        return net

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "DenseNet":
        out = DenseNet(list(self.sizes), list(self.activations))
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping per-layer inputs/pre-activations for backward().

        Accepts a single vector (d,) or a batch (B, d); output shape matches.
        """
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        h = x.reshape(1, -1) if single else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.sizes[0]}")
        inputs, preacts, acts = [], [], []
        for w, b, kind in zip(self.weights, self.biases, self.activations):
            inputs.append(h)
            z = h @ w + b
            a = _act(kind, z)
            preacts.append(z)
            acts.append(a)
            h = a
        cache = (inputs, preacts, acts, single)
        return (h[0] if single else h), cache

    def backward(self, cache, grad_out: np.ndarray):
        """Backprop an upstream dL/dy through the cached forward pass.

        Returns (grads, grad_in) where grads is a list of (dW, db) per layer,
        summed over the batch, and grad_in is dL/dx.
        """
        inputs, preacts, acts, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        if single:
            g = g.reshape(1, -1)
        grads = [None] * self.n_layers
        for i in reversed(range(self.n_layers)):
            gz = g * _act_grad(self.activations[i], preacts[i], acts[i])
            grads[i] = (inputs[i].T @ gz, gz.sum(axis=0))
            g = gz @ self.weights[i].T
        return grads, (g[0] if single else g)

    def params(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def to_dict(self) -> dict:
        return {
            "sizes": list(self.sizes),
            "activations": list(self.activations),
            "layers": [
                {"w": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenseNet":
        net = cls(list(d["sizes"]), list(d["activations"]))
        for layer in d["layers"]:
            net.weights.append(np.asarray(layer["w"], dtype=np.float64))
            net.biases.append(np.asarray(layer["b"], dtype=np.float64))
        for w, (n_in, n_out) in zip(net.weights, zip(net.sizes[:-1], net.sizes[1:])):
            if w.shape != (n_in, n_out):
                raise ValueError("shape header does not match stored parameters")
        return net

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DenseNet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class QuantileSpec:
    """Quantile targets at midpoints tau_i = (2i-1)/(2q), i = 1..q."""

    q: int
    huber_k: float = 1.0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.huber_k <= 0:
            raise ValueError("huber_k must be > 0")

    @property
    def taus(self) -> np.ndarray:
        return (2.0 * np.arange(1, self.q + 1) - 1.0) / (2.0 * self.q)

    @property
    def median_index(self) -> int:
        return (self.q - 1) // 2


def quantile_huber(u, tau, k: float):
    """Asymmetric Huber penalty rho_tau(u); minimized at the tau-quantile.

    rho_tau(u) = |tau - 1{u<=0}| * L(u) with L quadratic inside |u| <= k and
    linear outside. Continuous and once-differentiable everywhere.
    """
    u = np.asarray(u, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    au = np.abs(u)
    loss = np.where(au <= k, 0.5 * u * u, k * (au - 0.5 * k))
    weight = np.abs(tau - (u <= 0.0))
    out = weight * loss
    return float(out) if out.ndim == 0 else out


def quantile_huber_grad(u, tau, k: float):
    """d rho_tau / du. At u = 0 both one-sided derivatives are 0."""
    u = np.asarray(u, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    weight = np.abs(tau - (u <= 0.0))
    out = weight * np.clip(u, -k, k)
    return float(out) if out.ndim == 0 else out


def _check_finite(grads) -> None:
    for dw, db in grads:
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise FloatingPointError("non-finite gradient (training diverged)")


class Sgd:
    """Plain gradient descent; pass negated upstream losses to ascend."""

    def __init__(self, lr: float):
        self.lr = lr

    def step(self, net: DenseNet, grads) -> None:
        _check_finite(grads)
        for i, (dw, db) in enumerate(grads):
            net.weights[i] -= self.lr * dw
            net.biases[i] -= self.lr * db

    def state_dict(self) -> dict:
        return {"kind": "sgd", "lr": self.lr}


class Adam:
    """Adam with bias correction; moments keyed by layer order."""

    def __init__(self, net: DenseNet, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in net.params()]
        self.v = [np.zeros_like(p) for p in net.params()]

    def step(self, net: DenseNet, grads) -> None:
        _check_finite(grads)
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        flat = []
        for dw, db in grads:
            flat.extend((dw, db))
        for i, (p, g) in enumerate(zip(net.params(), flat)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p -= self.lr * (self.m[i] / b1t) / (np.sqrt(self.v[i] / b2t) + self.eps)

    def state_dict(self) -> dict:
        return {
            "kind": "adam",
            "lr": self.lr,
            "t": self.t,
            "m": [m.tolist() for m in self.m],
            "v": [v.tolist() for v in self.v],
        }

    def load_state(self, d: dict) -> None:
        self.lr = d["lr"]
        self.t = d["t"]
        self.m = [np.asarray(m, dtype=np.float64) for m in d["m"]]
        self.v = [np.asarray(v, dtype=np.float64) for v in d["v"]]
