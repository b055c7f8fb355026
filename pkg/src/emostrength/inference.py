"""Emotion transfer with a strength scalar: encode a reference, scale its embedding, decode."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import audio
from . import tensor as T
from .corpus import CorpusItem, encode_text
from .emotion_net import EmotionEncodingOutput
from .synthesizer import SynthesisResult
from .tensor import Tensor
from .training import EmotionalTTS, load_checkpoint

log = logging.getLogger(__name__)

WARN_ALPHA = 3.0
SWEEP_ALPHAS = (0.5, 1.5, 2.5)


class StrengthWarning(UserWarning):
    """Emitted when the strength scalar is large enough to over-drive the emotion."""


@dataclass
class StrengthRequest:
    reference: object  # (T, n_mels) array, corpus item id, or path to a 16 kHz WAV
    text: str | np.ndarray
    alpha: float = 1.0
    checkpoint: str | Path | None = None

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0:
            raise ValueError(f"alpha must be a positive finite number, got {self.alpha}")


@dataclass
class TransferResult:
    synthesis: SynthesisResult
    encoding: EmotionEncodingOutput
    e_scaled: np.ndarray
    alpha: float
    warnings: list = field(default_factory=list)

    @property
    def mel(self) -> np.ndarray:
        return self.synthesis.mel.data


_MODEL_CACHE: dict[str, EmotionalTTS] = {}


def load_model(path) -> EmotionalTTS:
    key = str(Path(path).resolve())
    if key not in _MODEL_CACHE:
        _MODEL_CACHE[key] = load_checkpoint(path).model
    return _MODEL_CACHE[key]


def resolve_reference(reference, items: Sequence[CorpusItem] | None = None) -> np.ndarray:
    if isinstance(reference, CorpusItem):
        return reference.mel
    if isinstance(reference, np.ndarray):
        return reference
    ref = str(reference)
    if items is not None:
        for it in items:
            if it.id == ref:
                return it.mel
    if ref.lower().endswith(".wav") and Path(ref).exists():
        samples, sr = audio.read_wav(ref)
        return audio.mel_spectrogram(samples, sr).frames
    raise KeyError(f"reference {ref!r} is neither a corpus item id nor a readable WAV file")


def _chars(text) -> np.ndarray:
    return encode_text(text) if isinstance(text, str) else np.asarray(text, dtype=np.int64)


def transfer(request: StrengthRequest, model: EmotionalTTS | None = None,
             items: Sequence[CorpusItem] | None = None, max_frames: int = 1000) -> TransferResult:
    """Synthesize ``request.text`` conditioned on ``alpha * e(reference)``."""
    if model is None:
        if request.checkpoint is None:
            raise ValueError("transfer needs a model or a checkpoint path")
        model = load_model(request.checkpoint)
    records = []
    if request.alpha > WARN_ALPHA:
        rec = {"event": "strength_above_threshold", "alpha": float(request.alpha), "threshold": WARN_ALPHA}
        records.append(rec)
        warnings.warn(json.dumps(rec, sort_keys=True), StrengthWarning, stacklevel=2)
    mel = resolve_reference(request.reference, items)
    with T.no_grad():
        enc = model.embed_net.encode(mel)
    e = enc.embedding.data
    e_scaled = e if request.alpha == 1.0 else request.alpha * e
    chars = _chars(request.text)
    result = model.synth.synthesize(chars[None, :], Tensor(e_scaled[None, :]), max_frames=max_frames)[0]
    return TransferResult(result, enc, e_scaled, float(request.alpha), records)


# ---------------------------------------------------------------- sweep features

def band_centroid(mel: np.ndarray) -> np.ndarray:
    """Per-frame centre of mass of band energy, in band units; the pitch proxy for mels."""
    energy = np.exp(np.asarray(mel) - np.max(mel, axis=1, keepdims=True))
    return energy @ np.arange(mel.shape[1]) / energy.sum(axis=1)


def mel_features(mel: np.ndarray) -> dict:
    mel = np.asarray(mel)
    if len(mel) == 0:
        return {"frames": 0, "energy": float("nan"), "pitch_mean": float("nan"), "pitch_range": float("nan")}
    pitch = band_centroid(mel)
    return {"frames": int(len(mel)), "energy": float(mel.mean()),
            "pitch_mean": float(pitch.mean()), "pitch_range": float(pitch.max() - pitch.min())}


@dataclass
class SweepResult:
    results: list[TransferResult]
    table: list[dict]


def strength_sweep(reference, text, alphas: Sequence[float] = SWEEP_ALPHAS, model: EmotionalTTS | None = None,
                   checkpoint=None, items: Sequence[CorpusItem] | None = None,
                   max_frames: int = 1000) -> SweepResult:
    results, table = [], []
    for a in alphas:
        res = transfer(StrengthRequest(reference, text, a, checkpoint), model, items, max_frames)
        results.append(res)
        row = {"alpha": float(a), **mel_features(res.mel), "truncated": bool(res.synthesis.truncated)}
        table.append(row)
    return SweepResult(results, table)


def write_features_csv(rows: Sequence[dict], path) -> None:
    cols = ["alpha", "frames", "energy", "pitch_mean", "pitch_range", "truncated"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
