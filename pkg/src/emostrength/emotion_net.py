"""Reference encoder + emotion classifier.

The same architecture serves twice: as the emotion embedding network on a
reference mel, and as the auxiliary network on the decoder's predicted mel.
Each instance owns its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import init
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class EmotionNetConfig:
    n_mels: int = 80
    conv_channels: tuple[int, ...] = (32, 32, 64, 64, 128, 128)
    gru_hidden: int = 128
    ref_dim: int = 128
    hidden: int = 256
    n_classes: int = 7

    @property
    def downsample(self) -> int:
        return 2 ** len(self.conv_channels)

    @property
    def freq_out(self) -> int:
        f = self.n_mels
        for _ in self.conv_channels:
            f = (f + 1) // 2
        return f

    @property
    def feature_dim(self) -> int:
        return self.conv_channels[-1] * self.freq_out


@dataclass
class EmotionEncodingOutput:
    embedding: Tensor            # (hidden,) second classifier hidden layer, post-ReLU
    feature_map: Tensor          # (T', C) last conv layer, time-major
    logits: Tensor | None        # (n_classes,); None when the head was skipped
    reference_embedding: Tensor  # (ref_dim,)


class EmotionNet:
    def __init__(self, config: EmotionNetConfig, rng: np.random.Generator):
        self.config = config
        p: dict[str, Tensor] = {}
        cin = 1
        for i, cout in enumerate(config.conv_channels):
            p[f"conv{i}.kernel"] = init.he_conv(rng, cout, cin)
            p[f"conv{i}.bias"] = init.zeros(cout)
            cin = cout
        p["gru.W"], p["gru.U"], p["gru.b"] = init.gru(rng, config.feature_dim, config.gru_hidden)
        p["proj.W"] = init.glorot(rng, config.gru_hidden, config.ref_dim)
        p["proj.b"] = init.zeros(config.ref_dim)
        p["cls1.W"] = init.glorot(rng, config.ref_dim, config.hidden)
        p["cls1.b"] = init.zeros(config.hidden)
        p["cls2.W"] = init.glorot(rng, config.hidden, config.hidden)
        p["cls2.b"] = init.zeros(config.hidden)
        p["head.W"] = init.glorot(rng, config.hidden, config.n_classes)
        p["head.b"] = init.zeros(config.n_classes)
        self.params = p
        self.head_calls = 0  # instrumentation for the ablation contract

    def feature_map(self, mel) -> Tensor:
        """Six stride-2 conv blocks; returns the last block's output as (T', C)."""
        mel = mel if isinstance(mel, Tensor) else Tensor(mel)
        n_frames, n_mels = mel.shape
        cfg = self.config
        if n_mels != cfg.n_mels:
            raise ValueError(f"mel has {n_mels} bands, network expects {cfg.n_mels}")
        if n_frames < cfg.downsample:
            raise ValueError(
                f"mel has {n_frames} frames; pad it to at least {cfg.downsample} before encoding")
        x = T.reshape(mel, (1, n_frames, n_mels))
        for i in range(len(cfg.conv_channels)):
            x = T.conv2d(x, self.params[f"conv{i}.kernel"], stride=2, pad=1,
                         bias=self.params[f"conv{i}.bias"])
            x = T.relu(T.channel_norm(x))
        c, t_out, f_out = x.shape
        return T.reshape(T.permute(x, (1, 0, 2)), (t_out, c * f_out))

    def encode(self, mel, with_logits: bool = True) -> EmotionEncodingOutput:
        p = self.params
        fmap = self.feature_map(mel)
        h = Tensor(np.zeros(self.config.gru_hidden))
        for t in range(fmap.shape[0]):
            h = T.gru_cell(T.take(fmap, t), h, p["gru.W"], p["gru.U"], p["gru.b"], step=t)
        ref = T.tanh(T.fully_connected(h, p["proj.W"], p["proj.b"]))
        hidden = T.relu(T.fully_connected(ref, p["cls1.W"], p["cls1.b"]))
        emb = T.relu(T.fully_connected(hidden, p["cls2.W"], p["cls2.b"]))
        logits = None
        if with_logits:
            self.head_calls += 1
            logits = T.fully_connected(emb, p["head.W"], p["head.b"])
        return EmotionEncodingOutput(emb, fmap, logits, ref)


def classify(logits) -> tuple[int, np.ndarray]:
    """Argmax class (lowest index wins ties) and the softmax probabilities."""
    v = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    probs = T.softmax(v)
    return int(np.argmax(v)), probs
