"""WAV I/O, log-mel spectrograms and an autocorrelation pitch tracker.

Only 16-bit mono PCM at 16 kHz is supported; anything else is rejected
rather than silently converted.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-5


class WavFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # T x n_mels, natural-log energies
    sample_rate: int = SAMPLE_RATE
    hop: int = 200

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class PitchContour:
    f0: np.ndarray  # Hz per frame, 0 where unvoiced
    sample_rate: int = SAMPLE_RATE
    hop: int = 200

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0


# ---------------------------------------------------------------- WAV

def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit PCM mono RIFF/WAVE file into floats in [-1, 1)."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise WavFormatError("RIFF header: file shorter than 12 bytes")
    if raw[0:4] != b"RIFF":
        raise WavFormatError(f"RIFF magic: expected b'RIFF', found {raw[0:4]!r}")
    if raw[8:12] != b"WAVE":
        raise WavFormatError(f"WAVE id: expected b'WAVE', found {raw[8:12]!r}")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"fmt chunk: {len(body)} bytes, need 16")
            fmt = struct.unpack_from("<HHIIHH", body)
        elif cid == b"data":
            if len(body) < size:
                raise WavFormatError(f"data chunk: header says {size} bytes, file has {len(body)}")
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise WavFormatError("fmt chunk: missing")
    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise WavFormatError(f"format tag: expected 1 (PCM), found {tag}")
    if channels != 1:
        raise WavFormatError(f"channels: expected 1 (mono), found {channels}")
    if bits != 16:
        raise WavFormatError(f"bits per sample: expected 16, found {bits}")
    if data is None:
        raise WavFormatError("data chunk: missing")
    samples = np.frombuffer(data[:len(data) - len(data) % 2], dtype="<i2").astype(np.float64)
    return samples / 32768.0, rate


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2").tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(pcm), b"WAVE", b"fmt ", 16,
                         1, 1, sample_rate, sample_rate * 2, 2, 16, b"data", len(pcm))
    Path(path).write_bytes(header + pcm)


# ---------------------------------------------------------------- mel

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels: int = 80, fmin: float = 40.0, fmax: float = 7600.0) -> np.ndarray:
    """``n_mels + 2`` edge frequencies; band i peaks at edge i + 1."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))


def mel_band_centers(n_mels: int = 80, fmin: float = 40.0, fmax: float = 7600.0) -> np.ndarray:
    return mel_band_edges(n_mels, fmin, fmax)[1:-1]


def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = 1024, n_mels: int = 80,
                   fmin: float = 40.0, fmax: float = 7600.0) -> np.ndarray:
    """Triangular filters, shape ``(n_fft // 2 + 1, n_mels)``."""
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = mel_band_edges(n_mels, fmin, fmax)
    lo, mid, hi = edges[:-2], edges[1:-1], edges[2:]
    up = (freqs[:, None] - lo) / (mid - lo)
    down = (hi - freqs[:, None]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def _frames(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    n = 1 + (len(samples) - win) // hop
    return np.lib.stride_tricks.sliding_window_view(samples, win)[::hop][:n]


def mel_spectrogram(samples, sample_rate: int = SAMPLE_RATE, win: int = 800, hop: int = 200,
                    n_fft: int = 1024, n_mels: int = 80, fmin: float = 40.0,
                    fmax: float = 7600.0) -> MelSpectrogram:
    samples = np.asarray(samples, dtype=np.float64)
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz input, got {sample_rate} Hz (resample first)")
    if len(samples) < win:
        raise ValueError(f"signal of {len(samples)} samples is shorter than one {win}-sample window")
    frames = _frames(samples, win, hop) * np.hanning(win + 1)[:-1]
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    mel = mag @ mel_filterbank(sample_rate, n_fft, n_mels, fmin, fmax)
    return MelSpectrogram(np.log(np.maximum(mel, LOG_FLOOR)), sample_rate, hop)


# ---------------------------------------------------------------- pitch

def pitch_contour(samples, sample_rate: int = SAMPLE_RATE, hop: int = 200, win: int = 800,
                  fmin: float = 50.0, fmax: float = 600.0, threshold: float = 0.3) -> PitchContour:
    """Per-frame f0 from the normalized autocorrelation peak in the [fmin, fmax] lag range.

    The first local maximum within 90% of the best peak is taken, which
    avoids locking onto multiples of the period.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz input, got {sample_rate} Hz (resample first)")
    if len(samples) < win:
        raise ValueError(f"signal of {len(samples)} samples is shorter than one {win}-sample window")
    lag_lo = int(np.floor(sample_rate / fmax))
    lag_hi = min(int(np.ceil(sample_rate / fmin)), win - 2)
    f0 = np.zeros(1 + (len(samples) - win) // hop)
    for i, frame in enumerate(_frames(samples, win, hop)):
        frame = frame - frame.mean()
        energy = np.cumsum(frame * frame)
        if energy[-1] <= 1e-12:
            continue
        lags = np.arange(lag_lo - 1, lag_hi + 2)
        r = np.empty(len(lags))
        for j, lag in enumerate(lags):
            a, b = frame[:-lag], frame[lag:]
            denom = np.sqrt(energy[win - lag - 1] * (energy[-1] - energy[lag - 1]))
            r[j] = a @ b / denom if denom > 0 else 0.0
        inner = r[1:-1]
        best = inner.max()
        if best <= threshold:
            continue
        peaks = [k for k in range(len(inner))
                 if inner[k] >= r[k] and inner[k] >= r[k + 2] and inner[k] >= 0.9 * best]
        k = peaks[0] if peaks else int(inner.argmax())
        y0, y1, y2 = r[k], r[k + 1], r[k + 2]
        curv = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / curv if curv < 0 else 0.0
        f = sample_rate / (lags[k + 1] + shift)
        if fmin <= f <= fmax:
            f0[i] = f
    return PitchContour(f0, sample_rate, hop)
