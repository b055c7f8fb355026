"""Parameter initialisers. All take an explicit generator so model builds are seeded."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)), requires_grad=True)


def he_conv(rng: np.random.Generator, cout: int, cin: int, kh: int = 3, kw: int = 3) -> Tensor:
    std = np.sqrt(2.0 / (cin * kh * kw))
    return Tensor(rng.normal(scale=std, size=(cout, cin, kh, kw)), requires_grad=True)


def zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def gru(rng: np.random.Generator, d_in: int, d_h: int) -> tuple[Tensor, Tensor, Tensor]:
    W = glorot(rng, d_in, d_h, shape=(d_in, 3 * d_h))
    U = Tensor(np.concatenate([np.linalg.qr(rng.normal(size=(d_h, d_h)))[0] for _ in range(3)], axis=1),
               requires_grad=True)
    return W, U, zeros(3 * d_h)
