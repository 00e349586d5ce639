"""Gammatone auditory model with outer/inner hair-cell loss and compression.

The model mirrors the standard physiological intelligibility front end:
32 fourth-order gammatone bands on a mel-spaced grid (80 Hz - 8 kHz) at
24 kHz, a wide control path that drives per-sample dynamic-range compression,
hearing loss split into outer (attn_o, bandwidth broadening + gain loss) and
inner (attn_i, level attenuation) components, and 16 ms Hann frame smoothing
of the dB envelopes.

Filter shapes follow Patterson's gammatone, h(t) = A t^3 exp(-2 pi b t)
cos(2 pi f t), with the quadrature (sin) twin used for envelope extraction.
Bandwidths ride the ERB scale of Glasberg & Moore (1990).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import autodiff as ad
from . import dsp
from .dsp import DegenerateSignalError, FramedEnvelope, Signal

MODEL_RATE = 24000
N_BANDS = 32
BAND_LO_HZ = 80.0
BAND_HI_HZ = 8000.0
GAMMATONE_TAPS = 2048

AUDIOGRAM_FREQS = np.array([250.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0])

# Compression schedule endpoints, linear in band index.
CR_RANGE = (1.25, 3.5)
MAX_OHC_RANGE = (14.0, 50.0)
THETA_HIGH = 100.0
THETA_LOW_OFFSET = 30.0

# Control path: shifted centers, bandwidth broadened as for maximal OHC loss.
CONTROL_SHIFT = 0.02
CONTROL_MAX_ATTN = 50.0

_NORM_NFFT = 1 << 16


def mel_center_frequencies(n_bands: int = N_BANDS,
                           f_lo: float = BAND_LO_HZ,
                           f_hi: float = BAND_HI_HZ) -> np.ndarray:
    """Band centers equally spaced on the mel scale, endpoints included."""
    if n_bands < 2 or f_lo <= 0 or f_hi <= f_lo:
        raise ValueError("need n_bands >= 2 and 0 < f_lo < f_hi")
    mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    grid = np.linspace(mel(f_lo), mel(f_hi), n_bands)
    return 700.0 * (10.0 ** (grid / 2595.0) - 1.0)


def erb_bandwidth(freq_hz):
    """Equivalent rectangular bandwidth: 24.7 * (4.37 f/1000 + 1) Hz."""
    freq_hz = np.asarray(freq_hz, dtype=np.float64)
    if np.any(freq_hz <= 0):
        raise ValueError("frequency must be positive")
    return 24.7 * (4.37 * freq_hz / 1000.0 + 1.0)


def impaired_bandwidth(attn_o_db, base_bw_hz):
    """Bandwidth broadening with OHC attenuation.

    Factor (1 + a/50 + 2 (a/50)^6): unity at 0 dB, x4 at 50 dB.
    """
    attn_o_db = np.asarray(attn_o_db, dtype=np.float64)
    if np.any(attn_o_db < 0) or np.any(attn_o_db > 50.0):
        raise ValueError("OHC attenuation must lie in [0, 50] dB")
    r = attn_o_db / 50.0
    return (1.0 + r + 2.0 * r ** 6) * np.asarray(base_bw_hz, dtype=np.float64)


def control_center_freq(analysis_freq_hz):
    """Control-path center, shifted basal-ward along the cochlear map.

    f_c = 165.4 * (10 ** ((1 + s) log10(1 + f_a / 165.4)) - 1), s = 0.02.
    """
    f = np.asarray(analysis_freq_hz, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    return 165.4 * (10.0 ** ((1.0 + CONTROL_SHIFT)
                             * np.log10(1.0 + f / 165.4)) - 1.0)


def split_ohc_ihc(total_loss_db, max_ohc_db):
    """Split total hearing loss into outer and inner hair-cell parts.

    80% of the loss is attributed to OHC damage up to the per-band cap;
    past the cap (total > 1.25 * max_ohc) the OHC share saturates at the cap
    and the remainder moves to the IHC component. Continuous at the switch.
    """
    total = np.asarray(total_loss_db, dtype=np.float64)
    cap = np.asarray(max_ohc_db, dtype=np.float64)
    if np.any(total < 0):
        raise ValueError("hearing loss must be non-negative")
    over = total > 1.25 * cap
    attn_o = np.where(over, cap, 0.8 * total)
    attn_i = np.where(over, total - cap, 0.2 * total)
    return attn_o, attn_i


def compression_gain(env_db, attn_o, cr, theta_low, theta_high=THETA_HIGH):
    """Per-sample compression gain in dB from the control envelope.

    G = -attn_o - (1 - 1/CR) * (theta_low - clamp(env, theta_low, theta_high)).
    Linear below the lower knee (gain pinned at -attn_o), compressive in
    between, saturated above theta_high. Accepts autodiff Vars for env_db.
    """
    cr = np.asarray(cr, dtype=np.float64)
    if np.any(cr < 1.0):
        raise ValueError("compression ratio must be >= 1")
    if np.any(np.asarray(theta_low) >= np.asarray(theta_high)):
        raise ValueError("theta_low must be below theta_high")
    slope = 1.0 - 1.0 / cr
    e_hat = ad.clamp(env_db, theta_low, theta_high)
    return ad.sub(ad.mul(ad.sub(e_hat, theta_low), slope), attn_o)


@dataclass(frozen=True)
class Audiogram:
    """Hearing thresholds (dB HL) at the six audiometric frequencies."""

    label: str
    thresholds: np.ndarray

    def __post_init__(self):
        thr = np.asarray(self.thresholds, dtype=np.float64)
        if thr.shape != AUDIOGRAM_FREQS.shape:
            raise ValueError(f"expected {len(AUDIOGRAM_FREQS)} thresholds, got {thr.shape}")
        if np.any(thr < 0.0) or np.any(thr > 100.0):
            warnings.warn(f"audiogram {self.label!r}: thresholds clamped to [0, 100] dB")
            thr = np.clip(thr, 0.0, 100.0)
        object.__setattr__(self, "thresholds", thr)

    @property
    def frequencies(self) -> np.ndarray:
        return AUDIOGRAM_FREQS

    def is_flat_zero(self) -> bool:
        return bool(np.all(self.thresholds == 0.0))

    @classmethod
    def zero(cls) -> "Audiogram":
        return cls("normal", np.zeros(len(AUDIOGRAM_FREQS)))

    @classmethod
    def from_json(cls, path) -> "Audiogram":
        with open(path) as fh:
            doc = json.load(fh)
        freqs = doc.get("frequencies_hz")
        if freqs is not None and not np.array_equal(np.asarray(freqs, float),
                                                    AUDIOGRAM_FREQS):
            raise ValueError(f"{path}: audiogram frequencies must be "
                             f"{AUDIOGRAM_FREQS.tolist()} Hz")
        return cls(doc.get("label", Path(path).stem), doc["thresholds_db_hl"])

    def to_json(self, path) -> None:
        doc = {"label": self.label,
               "frequencies_hz": AUDIOGRAM_FREQS.tolist(),
               "thresholds_db_hl": self.thresholds.tolist()}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


@lru_cache(maxsize=1)
def standard_audiograms() -> dict:
    """Bundled standard profiles N1-N7 (flat/moderate) and S1-S3 (sloping)."""
    text = resources.files("hafit.data").joinpath("standard_audiograms.json").read_text()
    doc = json.loads(text)
    return {label: Audiogram(label, thr) for label, thr in doc["profiles"].items()}


def interpolate_audiogram(audiogram: Audiogram, freqs) -> np.ndarray:
    """Thresholds at arbitrary frequencies: linear in log-frequency,
    constant extension outside [250, 6000] Hz."""
    freqs = np.asarray(freqs, dtype=np.float64)
    if np.any(freqs <= 0):
        raise ValueError("frequency must be positive")
    return np.interp(np.log10(freqs), np.log10(AUDIOGRAM_FREQS),
                     audiogram.thresholds)


@dataclass(frozen=True)
class BandLoss:
    """Per-band hearing loss decomposition in dB."""

    total: np.ndarray
    attn_o: np.ndarray
    attn_i: np.ndarray


@dataclass(frozen=True)
class CompressionSchedule:
    """Per-band compression parameters (dB domain)."""

    cr: np.ndarray
    max_ohc: np.ndarray
    theta_low: np.ndarray
    theta_high: float


@dataclass(frozen=True)
class GammatoneFilter:
    """Quadrature gammatone FIR pair.

    The magnitude response of the pair is defined as the envelope gain for
    tones, |FFT(cos_taps + i sin_taps)| / 2; normalization puts its peak at
    unity, so a steady tone at the passband peak comes through the envelope
    detector at its own amplitude. ``envelope_delay`` is the tap-envelope
    argmax in samples, used for cross-band time alignment.
    """

    fc: float
    bw: float
    rate: int
    cos_taps: np.ndarray
    sin_taps: np.ndarray
    peak_freq: float
    envelope_delay: int

    def quadrature_response(self, n_fft: int = _NORM_NFFT):
        """(freqs, magnitude) of the pair response on an FFT grid."""
        z = self.cos_taps + 1j * self.sin_taps
        spec = np.fft.fft(z, n_fft)
        half = n_fft // 2 + 1
        freqs = np.arange(half) * self.rate / n_fft
        return freqs, np.abs(spec[:half]) / 2.0


def _gammatone_envelope(bw: float, rate: int, taps: int) -> np.ndarray:
    t = np.arange(taps) / rate
    return t ** 3 * np.exp(-2.0 * np.pi * bw * t)


def make_gammatone(fc: float, bw: float, rate: int = MODEL_RATE,
                   taps: int = GAMMATONE_TAPS) -> GammatoneFilter:
    """Build a fourth-order gammatone quadrature pair, peak-normalized."""
    if not 0 < fc < rate / 2:
        raise ValueError(f"center frequency {fc} outside (0, {rate / 2})")
    if bw <= 0:
        raise ValueError("bandwidth must be positive")
    t = np.arange(taps) / rate
    env = _gammatone_envelope(bw, rate, taps)
    z = env * np.exp(2j * np.pi * fc * t)
    spec = np.abs(np.fft.fft(z, _NORM_NFFT))
    peak_bin = int(np.argmax(spec))
    amplitude = 2.0 / spec[peak_bin]
    peak_freq = peak_bin * rate / _NORM_NFFT
    z *= amplitude
    return GammatoneFilter(fc=float(fc), bw=float(bw), rate=rate,
                           cos_taps=np.ascontiguousarray(z.real),
                           sin_taps=np.ascontiguousarray(z.imag),
                           peak_freq=float(peak_freq),
                           envelope_delay=int(np.argmax(env)))


def band_envelope(x: np.ndarray, filt: GammatoneFilter) -> np.ndarray:
    """Envelope of one band: modulus of the quadrature filter outputs."""
    x = np.asarray(x, dtype=np.float64)
    yc = sps.fftconvolve(x, filt.cos_taps)[:len(x)]
    ys = sps.fftconvolve(x, filt.sin_taps)[:len(x)]
    return np.hypot(yc, ys)


class AuditoryModel:
    """Fixed-audiogram auditory front end producing framed dB envelopes.

    Building the filterbank costs about a second; keep one instance per
    audiogram and feed it many signals. A ``None`` / all-zero audiogram is
    the normal-hearing reference model; the hearing-impaired model with the
    zero audiogram is bit-identical to it by construction.
    """

    def __init__(self, audiogram: Audiogram | None = None,
                 rate: int = MODEL_RATE, n_bands: int = N_BANDS,
                 taps: int = GAMMATONE_TAPS):
        self.audiogram = audiogram if audiogram is not None else Audiogram.zero()
        self.rate = rate
        self.n_bands = n_bands
        self.taps = taps

        self.centers = mel_center_frequencies(n_bands)
        idx = np.arange(n_bands) / (n_bands - 1)
        cr = CR_RANGE[0] + (CR_RANGE[1] - CR_RANGE[0]) * idx
        max_ohc = MAX_OHC_RANGE[0] + (MAX_OHC_RANGE[1] - MAX_OHC_RANGE[0]) * idx

        total = interpolate_audiogram(self.audiogram, self.centers)
        attn_o, attn_i = split_ohc_ihc(total, max_ohc)
        self.band_loss = BandLoss(total=total, attn_o=attn_o, attn_i=attn_i)
        self.schedule = CompressionSchedule(
            cr=cr, max_ohc=max_ohc,
            theta_low=attn_o + THETA_LOW_OFFSET, theta_high=THETA_HIGH)

        nh_bw = erb_bandwidth(self.centers)
        self.analysis_bw = impaired_bandwidth(attn_o, nh_bw)
        ctrl_centers = control_center_freq(self.centers)
        self.control_bw = impaired_bandwidth(CONTROL_MAX_ATTN,
                                             erb_bandwidth(ctrl_centers))
        self.control_centers = ctrl_centers

        self.analysis_filters = [make_gammatone(f, b, rate, taps)
                                 for f, b in zip(self.centers, self.analysis_bw)]
        self.control_filters = [make_gammatone(f, b, rate, taps)
                                for f, b in zip(ctrl_centers, self.control_bw)]

        # Cross-band alignment uses the normal-hearing filter delays for both
        # the reference and impaired paths, so the two stay comparable.
        self.delays = np.array([int(np.argmax(_gammatone_envelope(b, rate, taps)))
                                for b in nh_bw])
        self._spectra: dict[int, np.ndarray] = {}

    def _bank_spectra(self, n_fft: int) -> np.ndarray:
        spectra = self._spectra.get(n_fft)
        if spectra is None:
            rows = ([f.cos_taps for f in self.analysis_filters]
                    + [f.sin_taps for f in self.analysis_filters]
                    + [f.cos_taps for f in self.control_filters]
                    + [f.sin_taps for f in self.control_filters])
            spectra = np.fft.rfft(np.vstack(rows), n_fft, axis=-1)
            self._spectra[n_fft] = spectra
        return spectra

    def frame_rate(self) -> float:
        _, hop = dsp.frame_params(self.rate)
        return self.rate / hop

    def process_values(self, x):
        """Framed dB envelopes for raw samples at the model rate.

        Accepts an ndarray or an autodiff Var (the trainable path); returns
        the same kind. Output rows are bands, columns frames.
        """
        xv = ad.value(x)
        n = xv.shape[-1]
        recording = isinstance(x, ad.Var)
        max_delay = int(self.delays.max())
        win, _ = dsp.frame_params(self.rate)
        if n - max_delay < win:
            raise DegenerateSignalError(
                f"need at least {max_delay + win} samples at {self.rate} Hz, got {n}")

        n_fft = dsp.fft_length(n + self.taps - 1)
        bands = ad.fir_bank(x, self._bank_spectra(n_fft), n_fft, n)
        if recording:
            ad.check_finite(bands, "gammatone filterbank")

        nb = self.n_bands
        env_a = ad.hypot_safe(ad.slice0(bands, 0, nb), ad.slice0(bands, nb, 2 * nb))
        env_c = ad.hypot_safe(ad.slice0(bands, 2 * nb, 3 * nb),
                              ad.slice0(bands, 3 * nb, 4 * nb))

        control_db = dsp.to_db_spl(env_c)
        gain_db = compression_gain(control_db,
                                   self.band_loss.attn_o[:, None],
                                   self.schedule.cr[:, None],
                                   self.schedule.theta_low[:, None],
                                   self.schedule.theta_high)
        if recording:
            ad.check_finite(gain_db, "compression gain")
        compressed = ad.mul(env_a, ad.db_to_linear(gain_db))

        aligned = ad.shift_rows(compressed, self.delays, n - max_delay)
        level_db = ad.sub(dsp.to_db_spl(aligned), self.band_loss.attn_i[:, None])
        if recording:
            ad.check_finite(level_db, "envelope level")

        frames = dsp.frame_smooth(level_db, self.rate)
        if not np.isfinite(ad.value(frames)).all():
            raise ad.NonFiniteStageError("frame smoothing")
        return frames

    def process(self, sig: Signal) -> FramedEnvelope:
        """Full pipeline for a Signal (resampled to the model rate first)."""
        sig = dsp.resample(sig, self.rate)
        values = self.process_values(sig.samples)
        return FramedEnvelope(values=values, frame_rate=self.frame_rate())


def auditory_process(sig: Signal, audiogram: Audiogram | None = None) -> FramedEnvelope:
    """One-shot convenience wrapper; builds a model and processes ``sig``."""
    return AuditoryModel(audiogram).process(sig)
