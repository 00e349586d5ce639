"""Intelligibility objective: cepstral correlation plus an energy penalty.

The framed dB envelopes of the reference (normal-hearing) and processed
(impaired) paths are projected onto a small cosine basis across bands; the
match of the resulting cepstral sequences over time, averaged over
coefficients 2..6, is the intelligibility proxy. A one-sided energy term
penalizes processed band levels that exceed the reference, keeping the
optimizer from buying correlation with runaway amplification. The combined
training loss is ``-correlation + alpha * energy``.

For reporting, the cepstral correlation maps to an intelligibility score
through the standard logistic combination with the basilar-membrane term
(which this package does not model; callers choose a policy for it).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

N_COEFFS = 6
ENERGY_ALPHA = 5e-5

# Logistic combination weights: cepstral, basilar-membrane, bias.
_COMBINE_CEPSTRAL = 14.817
_COMBINE_BM = 4.616
_COMBINE_BIAS = -9.047


@dataclass(frozen=True)
class LossBreakdown:
    """Training loss split into its additive parts."""

    cepstral_term: float
    energy_term: float
    alpha: float
    total: float


def cepstral_basis(n_bands: int, n_coeffs: int = N_COEFFS) -> np.ndarray:
    """Cosine basis over band index: b_j(i) = cos((j-1) pi i / (I-1)).

    Rows are j = 1..n_coeffs (so row 0 is the all-ones DC row), columns are
    the zero-based band index i = 0..n_bands-1.
    """
    if n_bands < 2 or n_coeffs < 1:
        raise ValueError("need n_bands >= 2 and n_coeffs >= 1")
    j = np.arange(n_coeffs)[:, None]
    i = np.arange(n_bands)[None, :]
    return np.cos(j * np.pi * i / (n_bands - 1))


def cepstral_sequences(frames, basis: np.ndarray):
    """Project band-by-frame envelopes onto the basis: (n_coeffs, n_frames)."""
    return ad.matmul_const(basis, frames)


def _center_rows(rows):
    n = ad.value(rows).shape[-1]
    mean = ad.mul(ad.sum_last(rows), 1.0 / n)
    return ad.sub(rows, ad.reshape(mean, ad.value(mean).shape + (1,)))


def _row_correlations(ref_rows: np.ndarray, proc_rows, centered: bool):
    """Normalized correlation per row; degenerate rows give 0 with a warning.

    ``ref_rows`` must be a plain ndarray (the cached reference); ``proc_rows``
    may be a Var. Degenerate rows are masked out of the graph entirely, so
    they contribute zero value and zero gradient.
    """
    ref = np.asarray(ref_rows, dtype=np.float64)
    if centered:
        ref = ref - ref.mean(axis=-1, keepdims=True)
        proc_rows = _center_rows(proc_rows)
    ref_norm = np.sqrt((ref * ref).sum(axis=-1))
    num = ad.sum_last(ad.mul(proc_rows, ref))
    den = ad.sqrt(ad.sum_last(ad.square(proc_rows)))
    mask = (ad.value(den) > 0.0) & (ref_norm > 0.0)
    if not mask.all():
        warnings.warn("degenerate cepstral sequence; correlation set to 0")
    den_safe = ad.add(ad.mul(den, ref_norm), (~mask).astype(np.float64))
    return ad.mul(ad.div(num, den_safe), mask.astype(np.float64))


def normalized_correlation(x: np.ndarray, y, centered: bool = False):
    """Correlation of two sequences without mean removal (unless asked).

    R = sum(x y) / (||x|| ||y||). Raises ValueError when either sequence has
    zero norm. ``y`` may be a Var.
    """
    x = np.asarray(x, dtype=np.float64)
    yv = ad.value(y)
    if x.shape != yv.shape or x.ndim != 1:
        raise ValueError("expected two 1-D sequences of equal length")
    if centered:
        xc = x - x.mean()
        yn = ad.value(y) - yv.mean()
    else:
        xc, yn = x, yv
    if (xc * xc).sum() == 0.0 or (yn * yn).sum() == 0.0:
        raise ValueError("correlation undefined for an all-zero sequence")
    r = _row_correlations(xc[None, :], ad.reshape(y, (1, len(yv))), centered)
    out = ad.vsum(r)
    return out if isinstance(out, ad.Var) else float(out)


def cepstral_correlation(ref_frames: np.ndarray, proc_frames,
                         n_coeffs: int = N_COEFFS, centered: bool = True):
    """(mean correlation over coefficients 2..n, per-coefficient array).

    The DC coefficient (j = 1) is computed for diagnostics but excluded from
    the mean. ``proc_frames`` may be a Var; the mean is then a Var as well.

    By default each cepstral sequence has its time mean removed before
    correlating, the convention of the intelligibility literature this
    metric comes from. ``centered=False`` gives the raw inner-product form;
    it is measurably worse as a fitting target — constant level offsets
    leak into the odd coefficients and reward under-amplification.
    """
    ref_frames = np.asarray(ref_frames, dtype=np.float64)
    if ad.value(proc_frames).shape != ref_frames.shape:
        raise ValueError("reference and processed envelopes must have "
                         "matching shapes")
    basis = cepstral_basis(ref_frames.shape[0], n_coeffs)
    ref_seq = np.asarray(cepstral_sequences(ref_frames, basis))
    proc_seq = cepstral_sequences(proc_frames, basis)
    r = _row_correlations(ref_seq, proc_seq, centered)
    mean = ad.mul(ad.vsum(ad.slice0(r, 1, n_coeffs)), 1.0 / (n_coeffs - 1))
    if isinstance(mean, ad.Var):
        return mean, r
    return float(mean), np.asarray(r)


def energy_control_loss(ref_frames: np.ndarray, proc_frames):
    """One-sided level excess: sum over cells of max(proc - ref, 0) dB.

    Zero exactly when the processed envelopes never exceed the reference;
    the tie (equal levels) contributes neither value nor gradient.
    """
    ref_frames = np.asarray(ref_frames, dtype=np.float64)
    if ad.value(proc_frames).shape != ref_frames.shape:
        raise ValueError("reference and processed envelopes must have "
                         "matching shapes")
    out = ad.vsum(ad.relu(ad.sub(proc_frames, ref_frames)))
    return out if isinstance(out, ad.Var) else float(out)


def total_loss(ref_frames: np.ndarray, proc_frames, alpha: float = ENERGY_ALPHA,
               n_coeffs: int = N_COEFFS, centered: bool = True):
    """Training loss ``-cepstral_correlation + alpha * energy``.

    Returns (loss, LossBreakdown); the loss is a Var when ``proc_frames``
    is one.
    """
    mean_r, _ = cepstral_correlation(ref_frames, proc_frames, n_coeffs, centered)
    energy = energy_control_loss(ref_frames, proc_frames)
    loss = ad.add(ad.mul(mean_r, -1.0), ad.mul(energy, alpha))
    breakdown = LossBreakdown(
        cepstral_term=-float(ad.value(mean_r)),
        energy_term=float(ad.value(energy)),
        alpha=alpha,
        total=float(ad.value(loss)))
    return loss, breakdown


def haspi_combine(cepstral_corr: float, bm_corr: float = 0.0) -> float:
    """Logistic combination of the cepstral and basilar-membrane terms."""
    z = (_COMBINE_CEPSTRAL * cepstral_corr + _COMBINE_BM * bm_corr
         + _COMBINE_BIAS)
    return float(1.0 / (1.0 + np.exp(-z)))
