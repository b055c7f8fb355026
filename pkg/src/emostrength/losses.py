"""Gram-matrix style loss and the four-term training objective."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor

TERMS = ("l_tac", "l_sty", "l_cls_src", "l_cls_tgt")


def gram(feature_map: Tensor) -> Tensor:
    """Channel-correlation matrix RᵀR of a (T, C) feature map; independent of frame order."""
    if feature_map.ndim != 2 or feature_map.data.size == 0:
        raise ValueError(f"gram needs a non-empty (T, C) map, got shape {feature_map.shape}")
    # canonical frame order: the accumulation then runs identically for every
    # permutation of the frames, making order invariance exact in floating point
    order = np.lexsort(feature_map.data.T[::-1])
    R = T.take(feature_map, order)
    return T.matmul(T.transpose(R), R)


def style_loss(R: Tensor, S: Tensor, normalization: str = "feature_map") -> Tensor:
    """Squared Frobenius distance between Gram matrices, scaled by 1 / (2NM)².

    With ``normalization="feature_map"`` N is the channel count and M the
    frame count of the synthesized map ``S``; ``"gram"`` takes both from
    the square Gram matrix instead (N = M = C).
    """
    if R.ndim != 2 or S.ndim != 2 or R.shape[1] != S.shape[1]:
        raise DimensionError(f"style_loss: channel dims differ, R {R.shape} vs S {S.shape}")
    channels, frames = S.shape[1], S.shape[0]
    if normalization == "feature_map":
        n, m = channels, frames
    elif normalization == "gram":
        n = m = channels
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    diff = T.sub(gram(S), gram(R))
    return T.scale(T.sum_all(T.mul(diff, diff)), 1.0 / (2.0 * n * m) ** 2)


@dataclass
class LossBreakdown:
    l_tac: float
    l_sty: float
    l_cls_src: float
    l_cls_tgt: float
    l_total: float
    l_stop: float = 0.0
    total: Tensor | None = field(default=None, repr=False, compare=False)

    def record(self, step: int) -> dict:
        return {"step": step, "l_tac": self.l_tac, "l_sty": self.l_sty, "l_cls_src": self.l_cls_src,
                "l_cls_tgt": self.l_cls_tgt, "l_total": self.l_total, "l_stop": self.l_stop}

    def to_json(self, step: int) -> str:
        return json.dumps(self.record(step), sort_keys=True)


def combine(terms: dict[str, Tensor | None], weights: dict[str, float] | None = None,
            stop: Tensor | None = None) -> LossBreakdown:
    """Sum the enabled terms in fixed order.

    ``terms`` maps each of TERMS to a scalar tensor, or None when that term is
    disabled.  A disabled term contributes nothing (it is not added as zero),
    so the total is bit-identical to the sub-sum of enabled terms.
    """
    weights = weights or {}
    total = None
    values = {}
    for name in TERMS:
        term = terms.get(name)
        if term is None:
            values[name] = 0.0
            continue
        values[name] = term.item()
        w = weights.get(name, 1.0)
        weighted = term if w == 1.0 else T.scale(term, w)
        total = weighted if total is None else T.add(total, weighted)
    if total is None:
        raise ValueError("every loss term is disabled")
    return LossBreakdown(values["l_tac"], values["l_sty"], values["l_cls_src"], values["l_cls_tgt"],
                         total.item(), 0.0 if stop is None else stop.item(), total)


def total_loss(pred_mel: Tensor, target_mel, R: Tensor, S: Tensor, logits_src: Tensor,
               logits_tgt: Tensor, label: int, weights: dict[str, float] | None = None,
               stop_logits: Tensor | None = None, stop_target: np.ndarray | None = None,
               normalization: str = "feature_map") -> LossBreakdown:
    """Objective for one utterance: l_tac + l_sty + l_cls_src + l_cls_tgt.

    The stop-token BCE, when given, is folded into l_tac and also reported
    on its own as ``l_stop``.
    """
    l_tac = T.mse(pred_mel, target_mel)
    stop = None
    if stop_logits is not None:
        stop = T.bce_with_logits(stop_logits, stop_target)
        l_tac = T.add(l_tac, stop)
    terms = {
        "l_tac": l_tac,
        "l_sty": style_loss(R, S, normalization),
        "l_cls_src": T.softmax_cross_entropy(logits_src, label),
        "l_cls_tgt": T.softmax_cross_entropy(logits_tgt, label),
    }
    return combine(terms, weights, stop)
