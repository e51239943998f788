"""Small fully-connected networks with hand-written backprop and Adam.

Parameters of a network live in one contiguous float64 buffer; the per-layer
weight matrices and bias vectors are views into it. That keeps the optimizer
and target-network blending to a single kernel call per network.
"""

from __future__ import annotations

import json
import math
from typing import Sequence

import numpy as np

from edgesched import _kernels

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CLIP_NORM = 10.0


def softmax(logits):
    """Row-wise softmax with max shift; accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class Mlp:
    """ReLU hidden layers, identity output.

    Weight ``k`` has shape ``(layer_dims[k], layer_dims[k+1])`` so that a
    batch is mapped as ``x @ W + b``.
    """

    def __init__(self, layer_dims: Sequence[int], seed: int = 0, zero: bool = False):
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"invalid layer_dims {layer_dims!r}")
        self.layer_dims = dims
        self.seed = int(seed)
        sizes = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            sizes += [fan_in * fan_out, fan_out]
        self.n_params = sum(sizes)
        self.params = np.zeros(self.n_params)
        self.adam_m = np.zeros(self.n_params)
        self.adam_v = np.zeros(self.n_params)
        self.step = 0
        self.weights, self.biases = self._views(self.params)
        if not zero:
            rng = np.random.default_rng(self.seed)
            for W in self.weights:
                limit = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
                W[...] = rng.uniform(-limit, limit, size=W.shape)

    def _views(self, flat):
        weights, biases = [], []
        off = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            weights.append(flat[off:off + fan_in * fan_out].reshape(fan_in, fan_out))
            off += fan_in * fan_out
            biases.append(flat[off:off + fan_out])
            off += fan_out
        return weights, biases

    @property
    def n_in(self) -> int:
        return self.layer_dims[0]

    @property
    def n_out(self) -> int:
        return self.layer_dims[-1]

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.n_in}")
        return x

    def forward(self, x):
        x = self._check_input(x)
        h = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    __call__ = forward

    def forward_cache(self, x):
        """Forward pass on a batch, keeping the layer inputs for ``backward``."""
        x = np.atleast_2d(self._check_input(x))
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W + b
            if k < last:
                h = np.maximum(h, 0.0)
                acts.append(h)
        return h, acts

    def backward(self, acts, grad_out):
        """Flat parameter gradient given dLoss/dOutput for the cached batch."""
        grad = np.zeros(self.n_params)
        gW, gb = self._views(grad)
        delta = np.asarray(grad_out, dtype=np.float64)
        for k in range(len(self.weights) - 1, -1, -1):
            gW[k][...] = acts[k].T @ delta
            gb[k][...] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (acts[k] > 0.0)
        return grad

    def apply_gradient(self, grad, lr: float) -> float:
        """Clip to global norm ``CLIP_NORM`` and take one Adam step.

        Returns the pre-clip gradient norm.
        """
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        grad = np.ascontiguousarray(grad, dtype=np.float64)
        if grad.shape != (self.n_params,):
            raise ValueError(f"gradient has shape {grad.shape}, expected ({self.n_params},)")
        norm = math.sqrt(float(np.dot(grad, grad)))
        if not math.isfinite(norm):
            raise FloatingPointError("non-finite gradient")
        if norm > CLIP_NORM:
            grad = grad * (CLIP_NORM / norm)
        self.step += 1
        _kernels.adam_update(self.params, grad, self.adam_m, self.adam_v, float(lr),
                             ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
                             1.0 - ADAM_BETA1 ** self.step, 1.0 - ADAM_BETA2 ** self.step)
        return norm

    def copy(self) -> "Mlp":
        twin = Mlp(self.layer_dims, seed=self.seed, zero=True)
        twin.params[:] = self.params
        twin.adam_m[:] = self.adam_m
        twin.adam_v[:] = self.adam_v
        twin.step = self.step
        return twin

    def blend_from(self, source: "Mlp", tau: float) -> None:
        """Polyak-average ``source`` into this network's parameters."""
        if source.layer_dims != self.layer_dims:
            raise ValueError("cannot blend networks of different shapes")
        _kernels.polyak_update(self.params, source.params, float(tau))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.params)))

    def to_dict(self) -> dict:
        return {
            "layer_dims": list(self.layer_dims),
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "adam_m": self.adam_m.tolist(),
            "adam_v": self.adam_v.tolist(),
            "step": self.step,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls(d["layer_dims"], seed=d.get("seed", 0), zero=True)
        for W, flat in zip(net.weights, d["weights"]):
            W[...] = np.asarray(flat, dtype=np.float64).reshape(W.shape)
        for b, flat in zip(net.biases, d["biases"]):
            b[...] = flat
        net.adam_m[:] = d["adam_m"]
        net.adam_v[:] = d["adam_v"]
        net.step = int(d["step"])
        return net

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "Mlp":
        return cls.from_dict(json.loads(text))


def forward(net: Mlp, x):
    return net.forward(x)


def backward_step(net: Mlp, batch_x, loss_grad, lr: float) -> Mlp:
    """Backpropagate an output gradient through ``net`` and apply Adam in place."""
    _, acts = net.forward_cache(batch_x)
    loss_grad = np.atleast_2d(np.asarray(loss_grad, dtype=np.float64))
    if loss_grad.shape != (acts[0].shape[0], net.n_out):
        raise ValueError(f"loss gradient shape {loss_grad.shape} does not match output")
    if not np.all(np.isfinite(loss_grad)):
        raise FloatingPointError("non-finite gradient")
    net.apply_gradient(net.backward(acts, loss_grad), lr)
    return net
