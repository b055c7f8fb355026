"""Finite-difference audit of every differentiable op and of the full training objective.

Each registry entry builds a scalar function and its inputs from a seeded
generator.  Non-scalar ops are reduced with a fixed random projection so
every output coordinate contributes to the checked gradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .corpus import CorpusItem, generate_items, make_batch
from .losses import gram, style_loss
from .tensor import Tensor, grad_check

N_POINTS = 10
TOLERANCE = 1e-4

Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]
REGISTRY: dict[str, Case] = {}


def case(name: str):
    def deco(fn: Case) -> Case:
        REGISTRY[name] = fn
        return fn
    return deco


def _t(rng, *shape, scale=1.0, offset=0.0):
    return Tensor(offset + scale * rng.normal(size=shape), requires_grad=True)


def _away_from_zero(rng, *shape):
    # keeps elementwise kinks (relu) further than eps from every probe
    v = rng.normal(size=shape)
    return Tensor(np.sign(v) * (0.1 + np.abs(v)), requires_grad=True)


def _unary(op):
    def build(rng):
        x = _t(rng, 3, 4)
        seed = int(rng.integers(2 ** 32))

        def f(a):
            out = op(a)
            proj = np.random.default_rng(seed).normal(size=out.shape)
            return T.sum_all(T.mul(out, Tensor(proj)))
        return f, [x]
    return build


case("tanh")(_unary(T.tanh))
case("sigmoid")(_unary(T.sigmoid))
case("neg")(_unary(T.neg))
case("scale")(_unary(lambda a: T.scale(a, -1.7)))
case("transpose")(_unary(T.transpose))
case("reshape")(_unary(lambda a: T.reshape(a, (2, 6))))
case("sum_all")(_unary(T.sum_all))
case("mean_all")(_unary(T.mean_all))
case("take")(_unary(lambda a: T.take(a, (slice(1, 3), slice(None, None, 2)))))
case("repeat_rows")(_unary(lambda a: T.repeat_rows(a, 3)))


@case("relu")
def _relu(rng):
    x = _away_from_zero(rng, 3, 4)
    proj = rng.normal(size=(3, 4))
    return (lambda a: T.sum_all(T.mul(T.relu(a), Tensor(proj)))), [x]


@case("dropout")
def _dropout(rng):
    x = _t(rng, 4, 5)
    seed = int(rng.integers(2 ** 32))
    proj = rng.normal(size=(4, 5))
    # fresh generator per call: the same mask on every probe
    return (lambda a: T.sum_all(T.mul(T.dropout(a, 0.5, np.random.default_rng(seed)), Tensor(proj)))), [x]


@case("add")
def _add(rng):
    a, b, proj = _t(rng, 3, 4), _t(rng, 3, 4), rng.normal(size=(3, 4))
    return (lambda x, y: T.sum_all(T.mul(T.add(x, y), Tensor(proj)))), [a, b]


@case("sub")
def _sub(rng):
    a, b, proj = _t(rng, 3, 4), _t(rng, 3, 4), rng.normal(size=(3, 4))
    return (lambda x, y: T.sum_all(T.mul(T.sub(x, y), Tensor(proj)))), [a, b]


@case("mul")
def _mul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    return (lambda x, y: T.sum_all(T.mul(x, y))), [a, b]


@case("matmul")
def _matmul(rng):
    a, b, proj = _t(rng, 3, 5), _t(rng, 5, 2), rng.normal(size=(3, 2))
    return (lambda x, y: T.sum_all(T.mul(T.matmul(x, y), Tensor(proj)))), [a, b]


@case("permute")
def _permute(rng):
    a, proj = _t(rng, 2, 3, 4), rng.normal(size=(4, 2, 3))
    return (lambda x: T.sum_all(T.mul(T.permute(x, (2, 0, 1)), Tensor(proj)))), [a]


@case("concat")
def _concat(rng):
    a, b, proj = _t(rng, 2, 3), _t(rng, 2, 4), rng.normal(size=(2, 7))
    return (lambda x, y: T.sum_all(T.mul(T.concat([x, y], axis=1), Tensor(proj)))), [a, b]


@case("stack")
def _stack(rng):
    a, b, proj = _t(rng, 2, 3), _t(rng, 2, 3), rng.normal(size=(2, 2, 3))
    return (lambda x, y: T.sum_all(T.mul(T.stack([x, y], axis=1), Tensor(proj)))), [a, b]


@case("fully_connected")
def _fc(rng):
    x, W, b, proj = _t(rng, 2, 3, 4), _t(rng, 4, 5), _t(rng, 5), rng.normal(size=(2, 3, 5))
    return (lambda x_, W_, b_: T.sum_all(T.mul(T.fully_connected(x_, W_, b_), Tensor(proj)))), [x, W, b]


@case("embedding")
def _embedding(rng):
    table, idx = _t(rng, 6, 3), rng.integers(0, 6, size=(2, 5))
    proj = rng.normal(size=(2, 5, 3))
    return (lambda tb: T.sum_all(T.mul(T.embedding(tb, idx), Tensor(proj)))), [table]


@case("conv2d")
def _conv(rng):
    x, k, b = _t(rng, 2, 7, 6), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    proj = rng.normal(size=(3, 4, 3))
    return (lambda x_, k_, b_: T.sum_all(T.mul(T.conv2d(x_, k_, stride=2, pad=1, bias=b_), Tensor(proj)))), [x, k, b]


@case("channel_norm")
def _cnorm(rng):
    x, proj = _t(rng, 4, 3, 5, scale=2.0, offset=0.5), rng.normal(size=(4, 3, 5))
    return (lambda a: T.sum_all(T.mul(T.channel_norm(a), Tensor(proj)))), [x]


@case("gru_cell")
def _gru(rng):
    x, h = _t(rng, 2, 4), _t(rng, 2, 3, scale=0.5)
    W, U, b = _t(rng, 4, 9, scale=0.5), _t(rng, 3, 9, scale=0.5), _t(rng, 9, scale=0.1)
    proj = rng.normal(size=(2, 3))
    return (lambda *a: T.sum_all(T.mul(T.gru_cell(*a), Tensor(proj)))), [x, h, W, U, b]


@case("masked_blend")
def _blend(rng):
    new, old, mask = _t(rng, 4, 3), _t(rng, 4, 3), np.array([True, False, True, False])
    proj = rng.normal(size=(4, 3))
    return (lambda a, b: T.sum_all(T.mul(T.masked_blend(a, b, mask), Tensor(proj)))), [new, old]


@case("additive_attention")
def _attention(rng):
    q, keys, v, values = _t(rng, 2, 3), _t(rng, 2, 5, 3), _t(rng, 3), _t(rng, 2, 5, 4)
    mask = np.ones((2, 5), dtype=bool)
    mask[1, 3:] = False
    proj = rng.normal(size=(2, 4))
    return (lambda *a: T.sum_all(T.mul(T.additive_attention(*a, mask)[0], Tensor(proj)))), [q, keys, v, values]


@case("softmax_cross_entropy")
def _xent(rng):
    logits, label = _t(rng, 7, scale=2.0), int(rng.integers(7))
    return (lambda z: T.softmax_cross_entropy(z, label)), [logits]


@case("bce_with_logits")
def _bce(rng):
    logits, target = _t(rng, 9, scale=2.0), (rng.random(9) < 0.3).astype(float)
    return (lambda z: T.bce_with_logits(z, target)), [logits]


@case("mse")
def _mse(rng):
    a, b = _t(rng, 5, 4), rng.normal(size=(5, 4))
    return (lambda x: T.mse(x, b)), [a]


@case("gram")
def _gram(rng):
    R, proj = _t(rng, 6, 4), rng.normal(size=(4, 4))
    return (lambda x: T.sum_all(T.mul(gram(x), Tensor(proj)))), [R]


@case("style_loss")
def _style(rng):
    R, S = _t(rng, 8, 16), _t(rng, 8, 16)
    return (lambda r, s: style_loss(r, s)), [R, S]


# ---------------------------------------------------------------- composite

# probed parameters: one from every part of the model
COMPOSITE_PARAMS = (
    "synth.embedding", "synth.enc_fwd.U", "synth.dec_pre1.W", "synth.att.v", "synth.dec1.W",
    "synth.dec2.U", "synth.frame.W", "synth.stop.b",
    "embed.conv0.kernel", "embed.conv5.bias", "embed.gru.U", "embed.cls2.W", "embed.head.W",
    "aux.conv2.kernel", "aux.proj.W", "aux.head.b",
)


def composite_case(seed: int, n_coords: int = 3):
    """The summed four-term objective of a tiny model on a two-utterance batch."""
    from .training import EmotionalTTS, ModelConfig, batch_objective
    cfg = ModelConfig.tiny()
    model = EmotionalTTS(cfg, seed=seed)
    n_mels = cfg.synth.n_mels
    items = generate_items(seed, 10, neutral_factor=1, text_len=(3, 5))
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(items), size=2, replace=False)
    chosen = [CorpusItem(items[i].id, items[i].chars, items[i].mel[:70, :n_mels], items[i].label, 1.0)
              for i in pick]
    batch = make_batch(chosen)
    params = model.parameters()
    probe = [params[name] for name in COMPOSITE_PARAMS]
    drop_seed = int(rng.integers(2 ** 32))

    def f(*_):
        return batch_objective(model, batch, rng=np.random.default_rng(drop_seed)).total

    return f, probe, n_coords


@dataclass
class CheckResult:
    name: str
    errors: list[float]
    seconds: float

    @property
    def worst(self) -> float:
        return max(self.errors)

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


def check_op(name: str, n_points: int = N_POINTS, base_seed: int = 0) -> CheckResult:
    start = time.perf_counter()
    errs = []
    for k in range(n_points):
        f, xs = REGISTRY[name](np.random.default_rng([base_seed, k]))
        errs.append(grad_check(f, xs))
    return CheckResult(name, errs, time.perf_counter() - start)


def check_composite(n_points: int = N_POINTS, base_seed: int = 0, n_coords: int = 3) -> CheckResult:
    start = time.perf_counter()
    errs = []
    for k in range(n_points):
        f, probe, nc = composite_case(base_seed + k, n_coords)
        errs.append(grad_check(f, probe, n_coords=nc, seed=k))
    return CheckResult("composite_loss", errs, time.perf_counter() - start)


def run_all(n_points: int = N_POINTS, base_seed: int = 0) -> list[CheckResult]:
    results = [check_op(name, n_points, base_seed) for name in REGISTRY]
    results.append(check_composite(n_points, base_seed))
    return results
