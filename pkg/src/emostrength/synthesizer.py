"""Desk-scale seq2seq acoustic model conditioned on an emotion embedding.

Character embedding -> two-layer pre-net -> bidirectional GRU encoder.  The
emotion embedding is concatenated onto every encoder timestep.  The decoder
is a two-layer residual GRU stack with additive attention; each step emits
``frames_per_step`` mel frames and one stop logit per frame, and is fed the
last frame of the previous step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import init
from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class SynthesizerConfig:
    vocab_size: int = 32
    n_mels: int = 80
    char_dim: int = 64
    prenet_dim: int = 128
    encoder_hidden: int = 128  # per direction
    emotion_dim: int = 256
    attention_dim: int = 128
    decoder_hidden: int = 256
    decoder_prenet_dim: int = 128
    decoder_prenet_dropout: float = 0.5
    frames_per_step: int = 2
    go_value: float = 0.0

    @property
    def memory_dim(self) -> int:
        return 2 * self.encoder_hidden + self.emotion_dim


@dataclass
class SynthesisResult:
    mel: Tensor               # (B, T, n_mels) or (T, n_mels) for single items
    alignment: np.ndarray     # (B, T, L)
    stop_logits: Tensor       # (B, T)
    truncated: np.ndarray | bool = False

    @property
    def stop_probs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-np.clip(self.stop_logits.data, -40, 40)))


class Synthesizer:
    def __init__(self, config: SynthesizerConfig, rng: np.random.Generator):
        self.config = c = config
        p: dict[str, Tensor] = {}
        p["embedding"] = Tensor(rng.normal(scale=0.3, size=(c.vocab_size, c.char_dim)), requires_grad=True)
        p["enc_pre1.W"] = init.glorot(rng, c.char_dim, c.prenet_dim)
        p["enc_pre1.b"] = init.zeros(c.prenet_dim)
        p["enc_pre2.W"] = init.glorot(rng, c.prenet_dim, c.prenet_dim)
        p["enc_pre2.b"] = init.zeros(c.prenet_dim)
        for d in ("fwd", "bwd"):
            p[f"enc_{d}.W"], p[f"enc_{d}.U"], p[f"enc_{d}.b"] = init.gru(rng, c.prenet_dim, c.encoder_hidden)
        p["dec_pre1.W"] = init.glorot(rng, c.n_mels, c.decoder_prenet_dim)
        p["dec_pre1.b"] = init.zeros(c.decoder_prenet_dim)
        p["dec_pre2.W"] = init.glorot(rng, c.decoder_prenet_dim, c.decoder_prenet_dim)
        p["dec_pre2.b"] = init.zeros(c.decoder_prenet_dim)
        p["att.key"] = init.glorot(rng, c.memory_dim, c.attention_dim)
        p["att.query"] = init.glorot(rng, c.decoder_hidden, c.attention_dim)
        p["att.v"] = Tensor(rng.uniform(-0.1, 0.1, size=c.attention_dim), requires_grad=True)
        p["dec1.W"], p["dec1.U"], p["dec1.b"] = init.gru(
            rng, c.decoder_prenet_dim + c.memory_dim, c.decoder_hidden)
        p["dec2.W"], p["dec2.U"], p["dec2.b"] = init.gru(rng, c.decoder_hidden + c.memory_dim, c.decoder_hidden)
        r = c.frames_per_step
        p["frame.W"] = init.glorot(rng, c.decoder_hidden + c.memory_dim, c.n_mels, shape=(
            c.decoder_hidden + c.memory_dim, r * c.n_mels))
        p["frame.b"] = init.zeros(r * c.n_mels)
        p["stop.W"] = init.glorot(rng, c.decoder_hidden + c.memory_dim, r)
        p["stop.b"] = init.zeros(r)
        self.params = p

    # ------------------------------------------------------------ encoder

    def encode_text(self, chars: np.ndarray, char_mask: np.ndarray, e_scaled: Tensor) -> Tensor:
        """Memory ``(B, L, 2*enc + emotion)``; ``e_scaled`` is ``(B, emotion_dim)``."""
        p, c = self.params, self.config
        chars = np.asarray(chars)
        if chars.size == 0 or chars.shape[-1] == 0:
            raise ValueError("empty character sequence")
        if chars.min() < 0 or chars.max() >= c.vocab_size:
            bad = sorted(set(chars[(chars < 0) | (chars >= c.vocab_size)].tolist()))
            raise IndexError(f"character indices {bad} are outside the {c.vocab_size}-symbol vocabulary")
        if e_scaled.shape != (chars.shape[0], c.emotion_dim):
            raise T.DimensionError(f"emotion embedding {e_scaled.shape}, expected {(chars.shape[0], c.emotion_dim)}")
        B, L = chars.shape
        x = T.embedding(p["embedding"], chars)
        x = T.relu(T.fully_connected(x, p["enc_pre1.W"], p["enc_pre1.b"]))
        x = T.relu(T.fully_connected(x, p["enc_pre2.W"], p["enc_pre2.b"]))
        outputs = {}
        for d, steps in (("fwd", range(L)), ("bwd", range(L - 1, -1, -1))):
            h = Tensor(np.zeros((B, c.encoder_hidden)))
            seq = [None] * L
            for t in steps:
                new = T.gru_cell(T.take(x, (slice(None), t)), h, p[f"enc_{d}.W"], p[f"enc_{d}.U"],
                                 p[f"enc_{d}.b"], step=t)
                h = T.masked_blend(new, h, char_mask[:, t])
                seq[t] = h
            outputs[d] = T.stack(seq, axis=1)
        return T.concat([outputs["fwd"], outputs["bwd"], T.repeat_rows(e_scaled, L)], axis=-1)

    # ------------------------------------------------------------ decoder

    def _prenet(self, frames: Tensor, rng: np.random.Generator | None) -> Tensor:
        p, c = self.params, self.config
        h = T.relu(T.fully_connected(frames, p["dec_pre1.W"], p["dec_pre1.b"]))
        h = T.dropout(h, c.decoder_prenet_dropout, rng)
        h = T.relu(T.fully_connected(h, p["dec_pre2.W"], p["dec_pre2.b"]))
        return T.dropout(h, c.decoder_prenet_dropout, rng)

    def _step(self, pre_t: Tensor, state, memory: Tensor, keys: Tensor, char_mask, t: int):
        p = self.params
        h1, h2, ctx = state
        h1 = T.gru_cell(T.concat([pre_t, ctx]), h1, p["dec1.W"], p["dec1.U"], p["dec1.b"], step=t)
        query = T.fully_connected(h1, p["att.query"])
        ctx, weights = T.additive_attention(query, keys, p["att.v"], memory, char_mask)
        h2 = T.gru_cell(T.concat([h1, ctx]), h2, p["dec2.W"], p["dec2.U"], p["dec2.b"], step=t)
        out = T.add(h1, h2)
        return (h1, h2, ctx), out, weights

    def _initial_state(self, B: int):
        c = self.config
        return (Tensor(np.zeros((B, c.decoder_hidden))), Tensor(np.zeros((B, c.decoder_hidden))),
                Tensor(np.zeros((B, c.memory_dim))))

    def _project(self, outs: Tensor, ctxs: Tensor) -> tuple[Tensor, Tensor]:
        """Decoder outputs ``(B, S, D)`` -> frames ``(B, S*r, n_mels)`` and stop logits ``(B, S*r)``."""
        p, c = self.params, self.config
        B, S = outs.shape[:2]
        feats = T.concat([outs, ctxs], axis=-1)
        mel = T.fully_connected(feats, p["frame.W"], p["frame.b"])
        stop = T.fully_connected(feats, p["stop.W"], p["stop.b"])
        r = c.frames_per_step
        return T.reshape(mel, (B, S * r, c.n_mels)), T.reshape(stop, (B, S * r))

    def forward_teacher_forced(self, chars, char_mask, target_mel: np.ndarray, e_scaled: Tensor,
                               rng: np.random.Generator | None = None) -> SynthesisResult:
        """One output frame per target frame; frame t sees ground-truth frame t-1."""
        c = self.config
        target_mel = np.asarray(target_mel, dtype=np.float64)
        B, n_frames, _ = target_mel.shape
        if n_frames < 1:
            raise ValueError("target mel has no frames")
        r = c.frames_per_step
        n_steps = -(-n_frames // r)
        memory = self.encode_text(chars, char_mask, e_scaled)
        keys = T.fully_connected(memory, self.params["att.key"])
        # step j is fed frame j*r - 1, the last frame of the previous step
        prev = np.concatenate([np.full((B, 1, c.n_mels), c.go_value),
                               target_mel[:, r - 1:(n_steps - 1) * r:r]], axis=1)
        pre = self._prenet(Tensor(prev), rng)
        state = self._initial_state(B)
        outs, ctxs, align = [], [], []
        for t in range(n_steps):
            state, out, w = self._step(T.take(pre, (slice(None), t)), state, memory, keys, char_mask, t)
            outs.append(out)
            ctxs.append(state[2])
            align.append(w)
        mel, stop = self._project(T.stack(outs, axis=1), T.stack(ctxs, axis=1))
        if n_steps * r != n_frames:
            mel = T.take(mel, (slice(None), slice(0, n_frames)))
            stop = T.take(stop, (slice(None), slice(0, n_frames)))
        alignment = np.repeat(np.stack(align, axis=1), r, axis=1)[:, :n_frames]
        return SynthesisResult(mel, alignment, stop)

    def synthesize(self, chars, e_scaled: Tensor, max_frames: int = 1000,
                   char_mask: np.ndarray | None = None, stop_threshold: float = 0.5) -> list[SynthesisResult]:
        """Greedy autoregressive decoding, one result per batch row, no graph recorded."""
        c, p = self.config, self.params
        chars = np.atleast_2d(np.asarray(chars))
        if char_mask is None:
            char_mask = np.ones(chars.shape, dtype=bool)
        B = chars.shape[0]
        with T.no_grad():
            memory = self.encode_text(chars, char_mask, e_scaled)
            keys = T.fully_connected(memory, p["att.key"])
            frame = Tensor(np.full((B, c.n_mels), c.go_value))
            state = self._initial_state(B)
            mels, stops, align = [], [], []
            done = np.zeros(B, dtype=bool)
            ends = np.full(B, max_frames)
            r = c.frames_per_step
            for t in range(-(-max_frames // r)):
                state, out, w = self._step(self._prenet(frame, None), state, memory, keys, char_mask, t)
                mel_t, stop_t = self._project(T.reshape(out, (B, 1, -1)), T.reshape(state[2], (B, 1, -1)))
                mels.append(mel_t.data)
                stops.append(stop_t.data)
                align.append(np.repeat(w[:, None], r, axis=1))
                for k in range(r):
                    frame_idx = t * r + k
                    if frame_idx >= max_frames:
                        break
                    fire = (1.0 / (1.0 + np.exp(-np.clip(stop_t.data[:, k], -40, 40)))) > stop_threshold
                    newly = fire & ~done
                    ends[newly] = frame_idx + 1
                    done |= fire
                if done.all():
                    break
                frame = Tensor(mel_t.data[:, -1])
        mels = np.concatenate(mels, axis=1)
        stops = np.concatenate(stops, axis=1)
        align = np.concatenate(align, axis=1)
        return [SynthesisResult(Tensor(mels[i, :ends[i]]), align[i, :ends[i]], Tensor(stops[i, :ends[i]]),
                                truncated=not done[i])
                for i in range(B)]
