"""WAV reading and writing (PCM16 and IEEE float32, mono)."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import Signal


def read_wav(path) -> Signal:
    """Load a WAV file as float64 in [-1, 1].

    PCM16 and float32 formats are accepted. Multichannel files collapse to
    channel 0 with a warning. Non-finite samples are rejected.
    """
    path = Path(path)
    rate, data = wavfile.read(path)
    if data.ndim == 2:
        warnings.warn(f"{path.name}: {data.shape[1]} channels, keeping channel 0")
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(
            f"{path.name}: unsupported sample format {data.dtype}; "
            "expected PCM16 or float32")
    if not np.isfinite(samples).all():
        raise ValueError(f"{path.name}: non-finite samples")
    return Signal(samples, int(rate))


def write_wav(path, sig: Signal, fmt: str = "pcm16") -> None:
    """Write a mono WAV. ``fmt`` is ``pcm16`` (clipped) or ``float32``."""
    path = Path(path)
    if fmt == "pcm16":
        clipped = np.clip(sig.samples, -1.0, 1.0)
        data = np.round(clipped * 32767.0).astype(np.int16)
    elif fmt == "float32":
        data = sig.samples.astype(np.float32)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, sig.rate, data)
