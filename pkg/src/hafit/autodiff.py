"""Reverse-mode differentiation for the fitting pipeline.

A small tape engine over float64 numpy arrays. Every operation below has two
paths: given plain ndarrays it just computes (no recording), given a
:class:`Var` it records the forward value plus a vector-Jacobian closure on
the owning :class:`Tape`. Model code is therefore written once and serves
both the reference path (arrays) and the trainable path (Vars).

This is not a general autodiff system; the op set is exactly what the
gain-fitting graph needs (FFT filtering, envelope extraction, compression,
framing, cepstral projection). Subgradient conventions at the non-smooth
points are pinned where each op is defined:

* ``clamp`` / ``db_floor``: pass-through derivative on boundary ties,
* ``relu``: derivative 0 at the tie,
* ``hypot_safe``: derivative 0 where the modulus is exactly 0.

Gradient accumulation happens in reverse recording order with plain ``+=``,
so two backward passes over identical inputs agree bitwise.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class NonFiniteStageError(FloatingPointError):
    """A named pipeline stage produced a NaN or infinity."""

    def __init__(self, stage: str):
        super().__init__(f"non-finite values produced at stage '{stage}'")
        self.stage = stage


class Tape:
    """Recorded computation; replayed in reverse by :meth:`backward`."""

    def __init__(self):
        self._nodes: list[Var] = []

    def var(self, value) -> "Var":
        """Wrap a root value (a leaf the gradient is taken with respect to)."""
        return self._record(np.asarray(value, dtype=np.float64), ())

    def _record(self, value: np.ndarray, parents) -> "Var":
        v = Var(value, self, parents)
        self._nodes.append(v)
        return v

    def backward(self, out: "Var") -> None:
        """Fill ``.grad`` on every node that ``out`` depends on.

        Single-shot: the recorded graph is dismantled while it is walked
        (vjp closures pin large forward intermediates, and the tape<->node
        cycle would otherwise wait for the cycle collector, which does not
        feel numpy memory pressure). Values and gradients survive on the
        Var objects the caller holds.
        """
        if out._tape is not self:
            raise ValueError("output does not belong to this tape")
        for node in self._nodes:
            node.grad = None
            node._grad_owned = False
        out.grad = np.ones_like(out.value)
        out._grad_owned = True
        for node in reversed(self._nodes):
            g = node.grad
            if g is None:
                node._parents = ()
                continue
            for parent, vjp in node._parents:
                # First contribution is adopted as-is; a second one forces a
                # fresh buffer so pass-through vjps can safely alias `g`.
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib
                elif parent._grad_owned:
                    parent.grad += contrib
                else:
                    parent.grad = parent.grad + contrib
                    parent._grad_owned = True
            node._parents = ()
        self._nodes.clear()


class Var:
    """A tape-recorded array value."""

    __slots__ = ("value", "grad", "_tape", "_parents", "_grad_owned")

    def __init__(self, value: np.ndarray, tape: Tape, parents):
        self.value = value
        self.grad: np.ndarray | None = None
        self._tape = tape
        self._parents = tuple(parents)
        self._grad_owned = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def value(x) -> np.ndarray:
    """Underlying ndarray of a Var, or the input coerced to float64."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x._tape
            elif tape is not x._tape:
                raise ValueError("operands recorded on different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _parents_for(out_shape, *pairs):
    """Filter (operand, raw_vjp) pairs down to Vars, adding unbroadcast."""
    parents = []
    for x, raw in pairs:
        if isinstance(x, Var):
            shape = x.value.shape
            parents.append((x, (lambda g, raw=raw, shape=shape:
                                _unbroadcast(raw(g), shape))))
    return parents


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape, (a, lambda g: g), (b, lambda g: g)))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape, (a, lambda g: g), (b, lambda g: -g)))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape, (a, lambda g: g * bv), (b, lambda g: g * av)))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape,
        (a, lambda g: g / bv),
        (b, lambda g: -g * av / (bv * bv))))


_LN10_OVER_20 = np.log(10.0) / 20.0


def db_to_linear(x):
    """10**(x/20), elementwise."""
    xv = value(x)
    out = np.exp(_LN10_OVER_20 * xv)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g * (out * _LN10_OVER_20))))


def db_floor(x, ref_db: float, eps: float):
    """ref_db + 20*log10(max(x, eps)).

    Derivative is the pass-through branch for x >= eps (ties included) and
    0 below the floor.
    """
    xv = value(x)
    out = ref_db + 20.0 * np.log10(np.maximum(xv, eps))
    tape = _tape_of(x)
    if tape is None:
        return out
    active = xv >= eps
    denom = np.where(active, xv, 1.0)
    k = 20.0 / np.log(10.0)
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g * (k * active / denom))))


def clamp(x, lo, hi):
    """Clip to [lo, hi]; derivative passes through on boundary ties."""
    xv = value(x)
    out = np.clip(xv, lo, hi)
    tape = _tape_of(x)
    if tape is None:
        return out
    active = (xv >= lo) & (xv <= hi)
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g * active)))


def relu(x):
    """max(x, 0); derivative 0 at the tie x == 0."""
    xv = value(x)
    out = np.maximum(xv, 0.0)
    tape = _tape_of(x)
    if tape is None:
        return out
    active = xv > 0.0
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g * active)))


def hypot_safe(a, b):
    """sqrt(a**2 + b**2) with derivative 0 where the result is exactly 0.

    Computed directly (not via np.hypot): operands are bounded envelope
    values, so the rescaling np.hypot pays for cannot be needed.
    """
    av, bv = value(a), value(b)
    out = np.sqrt(av * av + bv * bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    denom = np.where(out > 0.0, out, 1.0)
    return tape._record(out, _parents_for(
        out.shape,
        (a, lambda g: g * (av / denom)),
        (b, lambda g: g * (bv / denom))))


def square(x):
    xv = value(x)
    out = xv * xv
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g * (2.0 * xv))))


def sqrt(x):
    """Elementwise square root; derivative 0 where x == 0."""
    xv = value(x)
    out = np.sqrt(xv)
    tape = _tape_of(x)
    if tape is None:
        return out
    denom = np.where(out > 0.0, out, 1.0)
    active = out > 0.0
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g * (0.5 * active / denom))))


def vsum(x):
    """Sum of all entries (0-d result)."""
    xv = value(x)
    out = np.asarray(xv.sum())
    tape = _tape_of(x)
    if tape is None:
        return out
    shape = xv.shape
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: np.broadcast_to(g, shape))))


def sum_last(x):
    """Sum over the last axis."""
    xv = value(x)
    out = xv.sum(axis=-1)
    tape = _tape_of(x)
    if tape is None:
        return out
    n = xv.shape[-1]
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: np.broadcast_to(g[..., None], g.shape + (n,)))))


def matmul_const(w: np.ndarray, x):
    """w @ x for a constant matrix w (1-D or 2-D right operand)."""
    xv = value(x)
    out = w @ xv
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: w.T @ g)))


def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)
    tape = _tape_of(x)
    if tape is None:
        return out
    orig = xv.shape
    return tape._record(out, _parents_for(
        out.shape, (x, lambda g: g.reshape(orig))))


def slice0(x, start: int, stop: int):
    """Slice along the first axis; adjoint scatters back into zeros."""
    xv = value(x)
    out = xv[start:stop]
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        z = np.zeros_like(xv)
        z[start:stop] = g
        return z

    return tape._record(out, _parents_for(out.shape, (x, vjp)))


def frame_average(x, weights: np.ndarray, hop: int):
    """Weighted moving average over the last axis.

    out[..., m] = sum_k x[..., m*hop + k] * weights[k], for every frame that
    fits entirely inside the signal.
    """
    xv = value(x)
    win = len(weights)
    length = xv.shape[-1]
    n_frames = (length - win) // hop + 1
    if n_frames < 1:
        raise ValueError(f"signal of length {length} shorter than one window ({win})")
    windows = np.lib.stride_tricks.sliding_window_view(xv, win, axis=-1)
    out = np.einsum("...mk,k->...m", windows[..., ::hop, :], weights)
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        z = np.zeros_like(xv)
        for m in range(n_frames):
            z[..., m * hop:m * hop + win] += g[..., m, None] * weights
        return z

    return tape._record(out, _parents_for(out.shape, (x, vjp)))


def shift_rows(x, starts: np.ndarray, out_len: int):
    """Per-row crop x[r, starts[r] : starts[r] + out_len] (first axis = rows)."""
    xv = value(x)
    rows = xv.shape[0]
    out = np.empty(xv.shape[:-1] + (out_len,), dtype=np.float64)
    for r in range(rows):
        out[r] = xv[r, ..., starts[r]:starts[r] + out_len]
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        z = np.zeros_like(xv)
        for r in range(rows):
            z[r, ..., starts[r]:starts[r] + out_len] = g[r]
        return z

    return tape._record(out, _parents_for(out.shape, (x, vjp)))


def fir_bank(x, spectra: np.ndarray, n_fft: int, out_len: int):
    """Filter one signal through a bank of constant FIR filters via the FFT.

    ``spectra`` holds rfft(h_r, n_fft) per row; n_fft must cover the full
    linear convolution so the circular product is exact. Returns the first
    ``out_len`` samples of each row (natural, causal timing).
    """
    xv = value(x)
    n = xv.shape[-1]
    X = np.fft.rfft(xv, n_fft)
    out = np.fft.irfft(X[..., None, :] * spectra, n_fft)[..., :out_len]
    tape = _tape_of(x)
    if tape is None:
        return out

    def vjp(g):
        G = np.fft.rfft(g, n_fft)
        S = (G * np.conj(spectra)).sum(axis=-2)
        return np.fft.irfft(S, n_fft)[..., :n]

    return tape._record(out, _parents_for(out.shape, (x, vjp)))


def kernel_conv(x: np.ndarray, h, n_fft: int, delay: int, out_len: int):
    """Convolve a constant signal with a variable kernel, delay-compensated.

    Returns (x * h)[delay : delay + out_len] of the full linear convolution.
    Gradient flows to the kernel only.
    """
    hv = value(h)
    taps = hv.shape[-1]
    X = np.fft.rfft(x, n_fft)
    out = np.fft.irfft(X * np.fft.rfft(hv, n_fft), n_fft)[delay:delay + out_len]
    tape = _tape_of(h)
    if tape is None:
        return out

    def vjp(g):
        gz = np.zeros(n_fft)
        gz[delay:delay + out_len] = g
        return np.fft.irfft(np.fft.rfft(gz) * np.conj(X), n_fft)[:taps]

    return tape._record(out, _parents_for(out.shape, (h, vjp)))


def check_finite(x, stage: str):
    """Raise :class:`NonFiniteStageError` naming ``stage`` on NaN/inf."""
    if not np.isfinite(value(x)).all():
        raise NonFiniteStageError(stage)
    return x
