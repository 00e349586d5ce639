"""Amplification processors: the trainable six-gain FIR and NAL-R.

The trainable processor is a linear-phase FIR filter built by frequency
sampling: six gains in dB at the audiometric frequencies are interpolated
linearly in log-frequency across the FFT bin grid (constant extension below
250 Hz and above 6 kHz), converted to linear amplitude, brought to the time
domain with a zero-phase inverse FFT, centered by a circular shift, and
shaped with a Hann window. Because every step after the dB-to-linear map is
a fixed linear transform, the whole design collapses to ``taps = M @ 10**(W
@ gains / 20)`` with precomputed matrices, which is also the form the
gradient engine differentiates through.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .auditory import AUDIOGRAM_FREQS, Audiogram
from .dsp import Signal, fir_convolve

GAIN_MIN_DB = -20.0
GAIN_MAX_DB = 80.0
PROCESSOR_TAPS = 1024
PROCESSOR_RATE = 24000

# NAL-R frequency constants at [250, 500, 1000, 2000, 4000, 6000] Hz
# (Byrne & Dillon 1986).
_NALR_K = np.array([-17.0, -8.0, 1.0, -1.0, -2.0, -2.0])

GAIN_SOURCES = ("trained", "prescribed", "identity")


@dataclass(frozen=True)
class GainParams:
    """Six gains in dB at the audiometric frequencies.

    Values are clamped to [-20, +80] dB at construction (with a warning when
    the clamp actually engages -- a saturated trained gain is worth noticing).
    """

    gains: np.ndarray
    label: str = ""
    source: str = "trained"

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=np.float64)
        if g.shape != (len(AUDIOGRAM_FREQS),):
            raise ValueError(f"expected {len(AUDIOGRAM_FREQS)} gains, got {g.shape}")
        if not np.isfinite(g).all():
            raise ValueError("gains must be finite")
        if self.source not in GAIN_SOURCES:
            raise ValueError(f"unknown gain source {self.source!r}")
        clipped = np.clip(g, GAIN_MIN_DB, GAIN_MAX_DB)
        if not np.array_equal(clipped, g):
            warnings.warn(f"gains {self.label!r} clamped to "
                          f"[{GAIN_MIN_DB}, {GAIN_MAX_DB}] dB")
        object.__setattr__(self, "gains", clipped)

    @property
    def frequencies(self) -> np.ndarray:
        return AUDIOGRAM_FREQS

    @classmethod
    def from_json(cls, path) -> "GainParams":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(np.asarray(doc["gains_db"], dtype=np.float64),
                   label=doc.get("label", Path(path).stem),
                   source=doc.get("source", "trained"))

    def to_json(self, path) -> None:
        doc = {"label": self.label,
               "frequencies_hz": AUDIOGRAM_FREQS.tolist(),
               "gains_db": self.gains.tolist(),
               "source": self.source}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


@dataclass(frozen=True)
class ProcessorFilter:
    """FIR amplification filter plus the delay to compensate on application."""

    taps: np.ndarray
    delay: int
    rate: int
    source: str = "trained"

    def __post_init__(self):
        object.__setattr__(self, "taps",
                           np.asarray(self.taps, dtype=np.float64))

    def response_db(self, freqs, n_fft: int = 1 << 16) -> np.ndarray:
        """Magnitude response in dB at the given frequencies."""
        spectrum = np.abs(np.fft.rfft(self.taps, n_fft))
        grid = np.arange(len(spectrum)) * self.rate / n_fft
        mag = np.interp(np.asarray(freqs, dtype=np.float64), grid, spectrum)
        return 20.0 * np.log10(np.maximum(mag, 1e-12))


@lru_cache(maxsize=4)
def design_matrices(taps: int = PROCESSOR_TAPS,
                    rate: int = PROCESSOR_RATE) -> tuple[np.ndarray, np.ndarray]:
    """(W, M) such that taps = M @ 10**(W @ gains / 20).

    W interpolates the six anchor gains onto the rfft bin grid (linear in
    log-frequency, constant past the ends); M folds together the zero-phase
    inverse FFT, the centering shift, and the Hann window.
    """
    n_bins = taps // 2 + 1
    freqs = np.arange(n_bins) * rate / taps
    log_anchor = np.log10(AUDIOGRAM_FREQS)
    w = np.zeros((n_bins, len(AUDIOGRAM_FREQS)))
    for k, f in enumerate(freqs):
        lf = np.log10(f) if f > 0 else -np.inf
        if lf <= log_anchor[0]:
            w[k, 0] = 1.0
        elif lf >= log_anchor[-1]:
            w[k, -1] = 1.0
        else:
            j = int(np.searchsorted(log_anchor, lf)) - 1
            frac = (lf - log_anchor[j]) / (log_anchor[j + 1] - log_anchor[j])
            w[k, j] = 1.0 - frac
            w[k, j + 1] = frac

    irfft_mat = np.column_stack([np.fft.irfft(col, taps)
                                 for col in np.eye(n_bins)])
    shifted = np.roll(irfft_mat, taps // 2, axis=0)
    # Periodic Hann: symmetric about taps//2, matching the center of the
    # circularly shifted impulse response, so the product is exactly
    # linear-phase. A symmetric window (center at (taps-1)/2) would leave a
    # ~1e-5 asymmetry.
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(taps) / taps)
    m = window[:, None] * shifted
    return w, m


def gains_to_fir(gains, taps: int = PROCESSOR_TAPS, rate: int = PROCESSOR_RATE,
                 source: str = "trained"):
    """Design the linear-phase amplification FIR for six anchor gains.

    Accepts a GainParams, an ndarray, or an autodiff Var; with a Var input
    the returned taps stay on the tape (no ProcessorFilter wrapper).
    """
    w, m = design_matrices(taps, rate)
    if isinstance(gains, GainParams):
        g = gains.gains
    else:
        g = gains
    tap_values = ad.matmul_const(m, ad.db_to_linear(ad.matmul_const(w, g)))
    if isinstance(tap_values, ad.Var):
        return tap_values
    return ProcessorFilter(taps=tap_values, delay=taps // 2, rate=rate,
                           source=source)


def identity_filter(rate: int = PROCESSOR_RATE) -> ProcessorFilter:
    """Exact pass-through (single unit tap, zero delay)."""
    return ProcessorFilter(taps=np.array([1.0]), delay=0, rate=rate,
                           source="identity")


def apply_processor(sig: Signal, proc: ProcessorFilter) -> Signal:
    """Filter a signal, compensating the linear-phase delay.

    Output has the same length and rate as the input; the signal must
    already be at the processor rate.
    """
    if sig.rate != proc.rate:
        raise ValueError(f"signal rate {sig.rate} != processor rate {proc.rate}")
    return Signal(fir_convolve(sig.samples, proc.taps, delay=proc.delay),
                  sig.rate)


def nalr_gains(audiogram: Audiogram) -> GainParams:
    """NAL-R prescription gains for an audiogram.

    X = 0.05 * (H500 + H1000 + H2000); gain(f) = X + 0.31 H(f) + k(f),
    clamped below at 0 dB.
    """
    h = audiogram.thresholds
    x = 0.05 * (h[1] + h[2] + h[3])
    gains = np.maximum(x + 0.31 * h + _NALR_K, 0.0)
    return GainParams(gains, label=f"nalr-{audiogram.label}",
                      source="prescribed")
