"""Small dense-network building blocks and gradient update rules.

Both the material autoencoder and the design reparameterization networks
are plain affine chains over the autodiff engine. Weights live as numpy
arrays owned by their model; each training iteration wraps them in tape
variables, runs forward/backward, and applies one of the update rules
below to the raw arrays.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Fan-based uniform weight initialization, U(-a, a) with
    a = sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_affine(rng: np.random.Generator, fan_in: int, fan_out: int):
    """One affine layer as a (weights, bias) pair; biases start at zero."""
    return [glorot_uniform(rng, fan_in, fan_out), np.zeros(fan_out)]


def init_chain(rng: np.random.Generator, sizes) -> list:
    """Affine layers joining consecutive entries of ``sizes``."""
    return [init_affine(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def affine(x, weights, bias):
    """x @ W + b for a Variable (or array) input."""
    return ad.matmul(x, weights) + bias


def chain_parameters(layers) -> list:
    """Flat list of the arrays inside a layer chain (stable order)."""
    return [array for layer in layers for array in layer]


class Adam:
    """Adam update rule with bias correction.

    Parameters are registered once and updated in place; ``step`` takes
    gradients in registration order.
    """

    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            m_hat = self.m[i] / (1.0 - b1**self.t)
            v_hat = self.v[i] / (1.0 - b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Adagrad:
    """Adagrad update rule with per-entry accumulated curvature."""

    def __init__(self, params, lr: float, eps: float = 1e-10):
        self.params = list(params)
        self.lr = lr
        self.eps = eps
        self.accum = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> float:
        """Apply one update; returns the norm of the full weight step."""
        squared = 0.0
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.accum[i] += g * g
            delta = self.lr * g / (np.sqrt(self.accum[i]) + self.eps)
            p -= delta
            squared += float(np.sum(delta * delta))
        return float(np.sqrt(squared))
