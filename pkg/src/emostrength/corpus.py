"""Synthetic emotional corpus with known ground truth.

Each utterance is a neutral "spoken" base pattern determined by its
character string, plus ``strength * signature(emotion)``, plus a little
seeded noise.  Character patterns are zero-mean over their own duration and
every non-static signature component is zero-mean over the utterance, so
the time-averaged spectrum of a clean item is exactly
``BASE_LEVEL + strength * profile(emotion)`` whatever the text.  The
oracle classifier and strength regressor lean on that.

On-disk layout::

    <dir>/manifest.jsonl   one JSON object per item, sorted keys
    <dir>/vocab.txt        one symbol per line, index = line number
    <dir>/mels/<id>.f32    u32 T, u32 B (little-endian), then T*B float32
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EMOTIONS = ("neutral", "happy", "surprise", "angry", "disgust", "fear", "sad")
ALPHABET = "abcdefghijklmnopqrstuvwxyz .,!?'"
N_MELS = 80
BASE_LEVEL = -2.0
FLOOR = -4.0  # padding value; below anything the generator emits
NOISE_STD = 0.05
MIN_FRAMES, MAX_FRAMES = 64, 512
STOP_TAIL = 4  # trailing silent frames, flagged as stop targets
_LANGUAGE_SEED = 20200924  # fixes the alphabet's acoustic patterns across corpora


class CorpusCorruptionError(RuntimeError):
    pass


@dataclass(frozen=True)
class EmotionSignature:
    bump_center: float      # mel band of the emphasised "pitch" region
    tilt: float             # spectral slope across the band axis
    mod_rate: float         # cycles per frame of the bump's amplitude modulation
    envelope: str           # energy envelope over normalised time
    bump_amp: float = 1.0
    bump_width: float = 3.0
    mod_depth: float = 0.5
    env_amp: float = 0.4


SIGNATURES = {
    "happy": EmotionSignature(58, 0.4, 0.08, "rise"),
    "surprise": EmotionSignature(70, 0.6, 0.12, "late_peak"),
    "angry": EmotionSignature(40, 0.8, 0.16, "early_peak"),
    "disgust": EmotionSignature(24, -0.4, 0.05, "fall"),
    "fear": EmotionSignature(48, 0.2, 0.22, "tremble"),
    "sad": EmotionSignature(12, -0.8, 0.03, "fall"),
}


def _envelope(kind: str, u: np.ndarray) -> np.ndarray:
    if kind == "rise":
        return u
    if kind == "fall":
        return 1.0 - u
    if kind == "late_peak":
        return np.exp(-((u - 0.75) / 0.15) ** 2)
    if kind == "early_peak":
        return np.exp(-((u - 0.25) / 0.15) ** 2)
    if kind == "tremble":
        return np.abs(np.sin(6 * np.pi * u))
    raise ValueError(f"unknown envelope {kind!r}")


_BANDS = np.arange(N_MELS, dtype=np.float64)
_RAMP = _BANDS / (N_MELS - 1) - 0.5


def _bump(center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((_BANDS - center) / width) ** 2)


def signature_profile(label: int) -> np.ndarray:
    """Time-mean of ``signature(label)`` at strength 1 (zero vector for neutral)."""
    name = EMOTIONS[label]
    if name == "neutral":
        return np.zeros(N_MELS)
    s = SIGNATURES[name]
    return s.bump_amp * _bump(s.bump_center, s.bump_width) + s.tilt * _RAMP


def signature(label: int, n_frames: int) -> np.ndarray:
    """Strength-1 emotion pattern over ``n_frames`` frames, shape ``(T, N_MELS)``."""
    name = EMOTIONS[label]
    if name == "neutral":
        return np.zeros((n_frames, N_MELS))
    s = SIGNATURES[name]
    t = np.arange(n_frames, dtype=np.float64)
    u = t / max(n_frames - 1, 1)
    mod = np.sin(2 * np.pi * s.mod_rate * t)
    mod -= mod.mean()
    env = _envelope(s.envelope, u)
    env -= env.mean()
    bump = s.bump_amp * _bump(s.bump_center, s.bump_width)
    return (signature_profile(label)[None, :]
            + s.mod_depth * mod[:, None] * bump[None, :]
            + s.env_amp * env[:, None])


@dataclass(frozen=True)
class _Phone:
    duration: int
    pattern: np.ndarray  # (N_MELS,) peak spectral shape


def _phone_inventory() -> list[_Phone]:
    rng = np.random.default_rng(_LANGUAGE_SEED)
    phones = []
    for sym in ALPHABET:
        dur = int(rng.integers(5, 9))
        if sym.isalpha():
            shape = sum(rng.uniform(1.0, 2.0) * _bump(rng.uniform(4, 76), rng.uniform(2, 4))
                        for _ in range(2))
        else:
            shape = 0.3 * _bump(rng.uniform(4, 76), 6.0)
        phones.append(_Phone(dur, shape))
    return phones


_PHONES = _phone_inventory()


def encode_text(text: str) -> np.ndarray:
    try:
        return np.array([ALPHABET.index(c) for c in text], dtype=np.int64)
    except ValueError:
        bad = sorted({c for c in text if c not in ALPHABET})
        raise ValueError(f"characters outside the vocabulary: {bad}") from None


def decode_text(chars: Sequence[int]) -> str:
    return "".join(ALPHABET[i] for i in chars)


def neutral_base(chars: Sequence[int]) -> np.ndarray:
    """Text-determined base pattern (T, N_MELS); each symbol is a rise-and-fall of its shape."""
    blocks = []
    for c in chars:
        ph = _PHONES[int(c)]
        t = np.arange(ph.duration)
        gate = np.cos(2 * np.pi * (t + 0.5) / ph.duration)  # sums to zero over the symbol
        blocks.append(gate[:, None] * ph.pattern[None, :])
    speech = np.concatenate(blocks) if blocks else np.zeros((0, N_MELS))
    tail = max(STOP_TAIL, MIN_FRAMES - len(speech))
    return BASE_LEVEL + np.concatenate([speech, np.zeros((tail, N_MELS))])


def render_mel(chars: Sequence[int], label: int, strength: float,
               noise_rng: np.random.Generator | None = None) -> np.ndarray:
    base = neutral_base(chars)
    mel = base + strength * signature(label, len(base))
    if noise_rng is not None:
        mel = mel + noise_rng.normal(scale=NOISE_STD, size=mel.shape)
    return mel


@dataclass
class CorpusItem:
    id: str
    chars: np.ndarray
    mel: np.ndarray
    label: int
    strength: float

    @property
    def emotion(self) -> str:
        return EMOTIONS[self.label]

    @property
    def text(self) -> str:
        return decode_text(self.chars)


# ---------------------------------------------------------------- generation

def parse_strength_distribution(spec: str) -> tuple[str, float, float]:
    """``"uniform:LO,HI"`` or ``"fixed:S"``."""
    kind, _, args = spec.partition(":")
    vals = [float(v) for v in args.split(",") if v]
    if kind == "uniform" and len(vals) == 2 and 0 < vals[0] <= vals[1] <= 3:
        return kind, vals[0], vals[1]
    if kind == "fixed" and len(vals) == 1 and 0 < vals[0] <= 3:
        return kind, vals[0], vals[0]
    raise ValueError(f"bad strength distribution {spec!r}; use uniform:LO,HI or fixed:S within (0, 3]")


def generate_items(seed: int, n_per_emotion: int, strength_distribution: str = "uniform:1.0,2.0",
                   neutral_factor: int = 10, noise: bool = True,
                   text_len: tuple[int, int] = (10, 16)) -> list[CorpusItem]:
    if n_per_emotion < 10:
        raise ValueError(f"n_per_emotion must be >= 10, got {n_per_emotion}")
    _, lo, hi = parse_strength_distribution(strength_distribution)
    rng = np.random.default_rng(seed)
    letters = np.array([i for i, c in enumerate(ALPHABET) if c.isalpha()])
    items = []
    for label, name in enumerate(EMOTIONS):
        count = n_per_emotion * (neutral_factor if name == "neutral" else 1)
        for k in range(count):
            n = int(rng.integers(text_len[0], text_len[1] + 1))
            chars = rng.choice(letters, size=n)
            chars[rng.random(n) < 0.12] = ALPHABET.index(" ")
            chars[0] = rng.choice(letters)
            strength = float(rng.uniform(lo, hi))
            mel = render_mel(chars, label, strength, rng if noise else None)
            mel = mel[:MAX_FRAMES]
            items.append(CorpusItem(f"{name}_{k:04d}", chars.astype(np.int64), mel, label, strength))
    return items


def _mel_bytes(mel: np.ndarray) -> bytes:
    t, b = mel.shape
    return struct.pack("<II", t, b) + np.ascontiguousarray(mel, dtype="<f4").tobytes()


def write_mel(path, mel: np.ndarray) -> None:
    Path(path).write_bytes(_mel_bytes(mel))


def read_mel(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise CorpusCorruptionError(f"{path}: mel header truncated")
    t, b = struct.unpack_from("<II", raw)
    if len(raw) != 8 + 4 * t * b:
        raise CorpusCorruptionError(f"{path}: expected {8 + 4 * t * b} bytes for {t}x{b}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4", offset=8).reshape(t, b).astype(np.float64)


def write_vocab(path) -> None:
    Path(path).write_text("".join(f"{c}\n" for c in ALPHABET), encoding="utf-8")


def read_vocab(path) -> list[str]:
    return [line[:-1] if line.endswith("\n") else line
            for line in Path(path).read_text(encoding="utf-8").splitlines(keepends=True)]


def write_corpus(items: Iterable[CorpusItem], out_dir) -> Path:
    out = Path(out_dir)
    (out / "mels").mkdir(parents=True, exist_ok=True)
    write_vocab(out / "vocab.txt")
    lines = []
    for item in items:
        payload = _mel_bytes(item.mel)
        rel = f"mels/{item.id}.f32"
        (out / rel).write_bytes(payload)
        lines.append(json.dumps({
            "id": item.id, "label": item.label, "emotion": item.emotion,
            "strength": item.strength, "text": item.text, "mel": rel,
            "frames": int(item.mel.shape[0]), "sha256": hashlib.sha256(payload).hexdigest(),
        }, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def generate_corpus(seed: int, n_per_emotion: int, out_dir, strength_distribution: str = "uniform:1.0,2.0",
                    neutral_factor: int = 10) -> Path:
    items = generate_items(seed, n_per_emotion, strength_distribution, neutral_factor)
    return write_corpus(items, out_dir)


def load_corpus(path) -> list[CorpusItem]:
    root = Path(path)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest at {manifest}")
    items = []
    for n, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rel, digest = rec["mel"], rec["sha256"]
            label = int(rec["label"])
        except (ValueError, KeyError) as err:
            raise CorpusCorruptionError(f"manifest line {n}: {err}") from err
        if not 0 <= label < len(EMOTIONS):
            raise CorpusCorruptionError(f"manifest line {n}: label {label} out of range")
        payload = (root / rel).read_bytes()
        if hashlib.sha256(payload).hexdigest() != digest:
            raise CorpusCorruptionError(f"{rel}: content hash does not match manifest")
        items.append(CorpusItem(rec["id"], encode_text(rec["text"]), read_mel(root / rel),
                                label, float(rec["strength"])))
    return items


# ---------------------------------------------------------------- batching

@dataclass
class Batch:
    chars: np.ndarray        # (B, L) int, 0 where padded
    char_mask: np.ndarray    # (B, L) bool
    mel: np.ndarray          # (B, T, N) padded with FLOOR
    frame_mask: np.ndarray   # (B, T) bool
    stop: np.ndarray         # (B, T) 1.0 on each item's trailing STOP_TAIL frames
    labels: np.ndarray       # (B,)
    lengths: np.ndarray = field(default=None)
    char_lengths: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.labels)


def make_batch(items: Sequence[CorpusItem], pad_to: int | None = None, pad_value: float = FLOOR) -> Batch:
    """Pad to the longest item (or ``pad_to``) with ``pad_value``; masks mark real frames."""
    lengths = np.array([len(it.mel) for it in items])
    char_lengths = np.array([len(it.chars) for it in items])
    t_max = max(lengths.max(), pad_to or 0)
    l_max = char_lengths.max()
    n_mels = items[0].mel.shape[1]
    mel = np.full((len(items), t_max, n_mels), pad_value)
    chars = np.zeros((len(items), l_max), dtype=np.int64)
    stop = np.zeros((len(items), t_max))
    for i, it in enumerate(items):
        mel[i, :lengths[i]] = it.mel
        chars[i, :char_lengths[i]] = it.chars
        stop[i, max(lengths[i] - STOP_TAIL, 0):lengths[i]] = 1.0
    frame_mask = np.arange(t_max)[None, :] < lengths[:, None]
    char_mask = np.arange(l_max)[None, :] < char_lengths[:, None]
    return Batch(chars, char_mask, mel, frame_mask, stop,
                 np.array([it.label for it in items]), lengths, char_lengths)


# ---------------------------------------------------------------- oracles

def mel_profile(mel: np.ndarray) -> np.ndarray:
    return np.asarray(mel).mean(axis=0)


class CentroidOracle:
    """Nearest-centroid emotion classifier over time-averaged spectra.

    Centroids come from clean generator draws at the centre of the training
    strength range, so it needs no trained model and no human labels.
    """

    def __init__(self, centroids: np.ndarray):
        self.centroids = np.asarray(centroids)

    @classmethod
    def from_signatures(cls, strength: float = 1.5, n_draws: int = 8, seed: int = 0) -> "CentroidOracle":
        rng = np.random.default_rng(seed)
        letters = np.array([i for i, c in enumerate(ALPHABET) if c.isalpha()])
        cents = []
        for label in range(len(EMOTIONS)):
            prof = [mel_profile(render_mel(rng.choice(letters, size=12), label, strength))
                    for _ in range(n_draws)]
            cents.append(np.mean(prof, axis=0))
        return cls(np.array(cents))

    @property
    def neutral(self) -> np.ndarray:
        return self.centroids[0]

    def distances(self, mel: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.centroids - mel_profile(mel)[None, :], axis=1)

    def classify(self, mel: np.ndarray) -> int:
        return int(np.argmin(self.distances(mel)))

    def neutral_distance(self, mel: np.ndarray) -> float:
        return float(np.linalg.norm(mel_profile(mel) - self.neutral))


class StrengthRegressor:
    """Projects a mel's average deviation from neutral onto an emotion's signature profile."""

    def __init__(self, neutral_level: np.ndarray | None = None):
        self.neutral_level = np.full(N_MELS, BASE_LEVEL) if neutral_level is None else neutral_level

    def predict(self, mel: np.ndarray, label: int) -> float:
        p = signature_profile(label)
        denom = p @ p
        if denom == 0.0:
            return 0.0
        return float((mel_profile(mel) - self.neutral_level) @ p / denom)

    def rank(self, mels: Sequence[np.ndarray], label: int) -> np.ndarray:
        """Rank (0 = weakest) of each mel; ties keep input order."""
        scores = np.array([self.predict(m, label) for m in mels])
        order = np.argsort(scores, kind="stable")
        ranks = np.empty(len(mels), dtype=np.int64)
        ranks[order] = np.arange(len(mels))
        return ranks
