"""Gated recurrent cells built on the autodiff primitives.

Each cell keeps its parameters as named Tensors and exposes both a taped
step() for training and a pure-numpy step_np() mirror for decoding and
scoring, computing the same update rule.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, add, matmul, mul, sigmoid, slice_axis, tanh

INIT_RANGE = 0.08


def uniform_param(rng, shape) -> Tensor:
    return Tensor(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape),
                  requires_grad=True)


def zero_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class GRUCell:
    def __init__(self, input_dim: int, hidden_dim: int, rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.wx = uniform_param(rng, (input_dim, 3 * hidden_dim))
        self.wh = uniform_param(rng, (hidden_dim, 3 * hidden_dim))
        self.b = zero_param((3 * hidden_dim,))

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.wx": self.wx, f"{prefix}.wh": self.wh,
                f"{prefix}.b": self.b}

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        hd = self.hidden_dim
        px = add(matmul(x, self.wx), self.b)
        ph = matmul(h, self.wh)
        z = sigmoid(add(slice_axis(px, 1, 0, hd), slice_axis(ph, 1, 0, hd)))
        r = sigmoid(add(slice_axis(px, 1, hd, 2 * hd),
                        slice_axis(ph, 1, hd, 2 * hd)))
        n = tanh(add(slice_axis(px, 1, 2 * hd, 3 * hd),
                     mul(r, slice_axis(ph, 1, 2 * hd, 3 * hd))))
        one_minus_z = add(mul(z, -1.0), 1.0)
        return add(mul(z, h), mul(one_minus_z, n))

    def step_np(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        hd = self.hidden_dim
        px = x @ self.wx.values + self.b.values
        ph = h @ self.wh.values
        z = _sigmoid_np(px[:, :hd] + ph[:, :hd])
        r = _sigmoid_np(px[:, hd:2 * hd] + ph[:, hd:2 * hd])
        n = np.tanh(px[:, 2 * hd:] + r * ph[:, 2 * hd:])
        return z * h + (1.0 - z) * n


class LSTMCell:
    def __init__(self, input_dim: int, hidden_dim: int, rng):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.wx = uniform_param(rng, (input_dim, 4 * hidden_dim))
        self.wh = uniform_param(rng, (hidden_dim, 4 * hidden_dim))
        self.b = zero_param((4 * hidden_dim,))

    def params(self, prefix: str) -> dict:
        return {f"{prefix}.wx": self.wx, f"{prefix}.wh": self.wh,
                f"{prefix}.b": self.b}

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        hd = self.hidden_dim
        pre = add(add(matmul(x, self.wx), matmul(h, self.wh)), self.b)
        i = sigmoid(slice_axis(pre, 1, 0, hd))
        f = sigmoid(slice_axis(pre, 1, hd, 2 * hd))
        o = sigmoid(slice_axis(pre, 1, 2 * hd, 3 * hd))
        g = tanh(slice_axis(pre, 1, 3 * hd, 4 * hd))
        c_new = add(mul(f, c), mul(i, g))
        h_new = mul(o, tanh(c_new))
        return h_new, c_new

    def step_np(self, x, h, c):
        hd = self.hidden_dim
        pre = x @ self.wx.values + h @ self.wh.values + self.b.values
        i = _sigmoid_np(pre[:, :hd])
        f = _sigmoid_np(pre[:, hd:2 * hd])
        o = _sigmoid_np(pre[:, 2 * hd:3 * hd])
        g = np.tanh(pre[:, 3 * hd:])
        c_new = f * c + i * g
        return o * np.tanh(c_new), c_new
