"""WAV file I/O: PCM 16-bit signed little-endian, mono only."""

import wave

import numpy as np

from .dsp import Waveform
from .errors import ShapeMismatch


def read_wav(path) -> Waveform:
    """Read a mono PCM16 WAV file; samples are mapped to [-1, 1)."""
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ShapeMismatch(
                f"{path}: expected mono, got {f.getnchannels()} channels"
            )
        if f.getsampwidth() != 2:
            raise ShapeMismatch(
                f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit"
            )
        raw = f.readframes(f.getnframes())
        rate = f.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write a mono PCM16 WAV file; samples outside [-1, 1) are clipped."""
    scaled = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate_hz)
        f.writeframes(scaled.tobytes())
