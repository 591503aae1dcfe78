"""Mixture-of-experts gating: alpha(x) = softmax(Linear(x)) or softmax(GELU(Linear(x)))."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf, softmax

from .errors import QubitIndexError

LINEAR_SOFTMAX = "LINEAR_SOFTMAX"
GELU_SOFTMAX = "GELU_SOFTMAX"


def gelu(z):
    return 0.5 * z * (1 + erf(z / math.sqrt(2)))


def gelu_grad(z):
    return 0.5 * (1 + erf(z / math.sqrt(2))) + z * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def softmax_backward(alpha, d_alpha):
    """Vector-Jacobian product of softmax along the last axis."""
    return alpha * (d_alpha - np.sum(alpha * d_alpha, axis=-1, keepdims=True))


class GatingNetwork:
    """Dense gating network with weights (in_dim, K) and bias (K,)."""

    def __init__(self, weights, bias=None, variant: str = LINEAR_SOFTMAX):
        self.weights = np.asarray(weights, dtype=float)
        k = self.weights.shape[1]
        self.bias = np.zeros(k) if bias is None else np.asarray(bias, dtype=float)
        if variant not in (LINEAR_SOFTMAX, GELU_SOFTMAX):
            raise ValueError(f"unknown variant {variant}")
        self.variant = variant

    @classmethod
    def init(cls, in_dim: int, k: int, rng, variant: str = LINEAR_SOFTMAX, scale: float | None = None):
        bound = 1 / math.sqrt(in_dim) if scale is None else scale
        w = rng.uniform(-bound, bound, (in_dim, k))
        b = rng.uniform(-bound, bound, k)
        return cls(w, b, variant)

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def k(self):
        return self.weights.shape[1]

    @property
    def n_params(self):
        return self.weights.size + self.bias.size

    def flat(self):
        return np.concatenate([self.weights.ravel(), self.bias])

    def set_flat(self, v):
        v = np.asarray(v, dtype=float)
        self.weights = v[:self.weights.size].reshape(self.weights.shape).copy()
        self.bias = v[self.weights.size:].copy()

    def copy(self):
        return GatingNetwork(self.weights.copy(), self.bias.copy(), self.variant)

    def to_dict(self):
        return {"weights": self.weights.tolist(), "bias": self.bias.tolist(), "variant": self.variant}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["bias"], d["variant"])

    def _pre(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise QubitIndexError(f"gating expects {self.in_dim} inputs, got {x.shape[-1]}")
        return x, x @ self.weights + self.bias


def gate_forward(g: GatingNetwork, x) -> np.ndarray:
    """alpha(x), a probability vector per row of x."""
    _, z = g._pre(x)
    if g.variant == GELU_SOFTMAX:
        z = gelu(z)
    return softmax(z, axis=-1)


def gate_backward(g: GatingNetwork, x, d_alpha):
    """Chain rule through softmax (and GELU); returns (dW, db, dx).

    Batched inputs sum parameter gradients over rows.
    """
    x, z = g._pre(x)
    a = softmax(gelu(z) if g.variant == GELU_SOFTMAX else z, axis=-1)
    dz = softmax_backward(a, np.asarray(d_alpha, dtype=float))
    if g.variant == GELU_SOFTMAX:
        dz = dz * gelu_grad(z)
    if x.ndim == 1:
        return np.outer(x, dz), dz, g.weights @ dz
    return x.T @ dz, dz.sum(axis=0), dz @ g.weights.T


def expert_utilization(g: GatingNetwork, features) -> np.ndarray:
    """Mean alpha over a dataset, one entry per expert."""
    return gate_forward(g, features).mean(axis=0)
