"""Dense feed-forward networks with reverse-mode gradients and Adam.

Small enough to stay framework-free: every network here is a stack of
affine layers with relu/tanh/sigmoid/identity activations over float64
numpy arrays.  Shapes are (batch, dim) internally; single vectors are
accepted and returned as vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError

NETWORK_FORMAT = "dense-network"
NETWORK_VERSION = 1

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))
    return z


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # Derivative w.r.t. the pre-activation z; `a` is the activation output.
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray     # (out_dim,)
    activation: str

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ConfigError("layer weight/bias shapes are inconsistent")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ConfigError("layer parameters must be finite")


class Mlp:
    """Multi-layer perceptron over chained affine+activation layers."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ConfigError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weights.shape[1] != prev.weights.shape[0]:
                raise ConfigError(
                    f"layer dims do not chain: {prev.weights.shape} -> {nxt.weights.shape}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].weights.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[0]

    @classmethod
    def create(cls, sizes: Sequence[int], activations: Sequence[str], seed: int) -> "Mlp":
        """Seeded init: weights uniform in +/- 1/sqrt(fan_in), zero bias."""
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise ConfigError("need len(sizes) >= 2 and one activation per layer")
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out, act in zip(sizes, sizes[1:], activations):
            bound = 1.0 / np.sqrt(d_in)
            layers.append(
                Layer(
                    weights=rng.uniform(-bound, bound, size=(d_out, d_in)),
                    bias=np.zeros(d_out),
                    activation=act,
                )
            )
        return cls(layers)

    # -- forward / backward ---------------------------------------------------

    def _as_batch(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"expected input dim {self.input_dim}, got shape {x.shape}")
        return x, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        xb, single = self._as_batch(x)
        for layer in self.layers:
            xb = _act(layer.activation, xb @ layer.weights.T + layer.bias)
        return xb[0] if single else xb

    def backward(
        self, x: np.ndarray, upstream_gradient: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Exact gradients of sum(upstream * output) w.r.t. params and input.

        Returns (param_grads, input_grad) where param_grads is flat
        [dW0, db0, dW1, db1, ...] matching parameters().  Batch gradients are
        summed over rows; scale the upstream for mean losses.
        """
        xb, single = self._as_batch(x)
        up = np.asarray(upstream_gradient, dtype=float)
        if single and up.ndim == 1:
            up = up[None, :]
        if up.shape != (xb.shape[0], self.output_dim):
            raise DimensionError(
                f"upstream gradient shape {up.shape} does not match output "
                f"({xb.shape[0]}, {self.output_dim})"
            )

        inputs = []  # input to each layer
        pre = []     # pre-activations
        post = []    # activations
        h = xb
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.weights.T + layer.bias
            a = _act(layer.activation, z)
            pre.append(z)
            post.append(a)
            h = a

        grads: list[np.ndarray] = []
        delta = up
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            delta = delta * _act_grad(layer.activation, pre[i], post[i])
            dw = delta.T @ inputs[i]
            db = delta.sum(axis=0)
            grads.insert(0, db)
            grads.insert(0, dw)
            delta = delta @ layer.weights
        return grads, (delta[0] if single else delta)

    def input_gradient(self, x: np.ndarray, upstream_gradient: np.ndarray) -> np.ndarray:
        return self.backward(x, upstream_gradient)[1]

    # -- parameters -------------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.bias)
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != 2 * len(self.layers):
            raise DimensionError("parameter list length mismatch")
        for i, layer in enumerate(self.layers):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.bias.shape:
                raise DimensionError(f"parameter shape mismatch at layer {i}")
            layer.weights = np.array(w, dtype=float)
            layer.bias = np.array(b, dtype=float)

    def copy(self) -> "Mlp":
        return Mlp(
            [
                Layer(layer.weights.copy(), layer.bias.copy(), layer.activation)
                for layer in self.layers
            ]
        )

    # -- serialization ------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": NETWORK_FORMAT,
            "version": NETWORK_VERSION,
            "layers": [
                {
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Mlp":
        if doc.get("format") != NETWORK_FORMAT:
            raise ConfigError(f"not a network file (format={doc.get('format')!r})")
        if doc.get("version") != NETWORK_VERSION:
            raise ConfigError(f"unsupported network version {doc.get('version')!r}")
        return cls(
            [
                Layer(
                    weights=np.array(item["weights"], dtype=float),
                    bias=np.array(item["bias"], dtype=float),
                    activation=item["activation"],
                )
                for item in doc["layers"]
            ]
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Mlp":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


class Adam:
    """Adaptive-moment optimizer with bias correction; state per parameter."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        if len(params) != len(grads):
            raise DimensionError("params/grads length mismatch")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(self.m) != len(params):
            raise DimensionError("optimizer state does not match parameter count")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape or p.shape != self.m[i].shape:
                raise DimensionError(f"shape mismatch for parameter {i}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon))
        return out


def bce_loss_and_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. pred."""
    pred = np.clip(pred, 1e-12, 1.0 - 1e-12)
    n = pred.size
    loss = float(-np.mean(target * np.log(pred) + (1.0 - target) * np.log(1.0 - pred)))
    grad = (pred - target) / (pred * (1.0 - pred)) / n
    return loss, grad
