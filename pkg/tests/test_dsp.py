import numpy as np
import pytest
import scipy.fft

from hafit import dsp


def tone(freq, rate, seconds=0.5, amp=1.0):
    t = np.arange(int(seconds * rate)) / rate
    return dsp.Signal(amp * np.sin(2 * np.pi * freq * t), rate)


def test_signal_validates_shape_and_rate():
    with pytest.raises(ValueError, match="mono"):
        dsp.Signal(np.zeros((2, 100)), 16000)
    with pytest.raises(ValueError, match="rate"):
        dsp.Signal(np.zeros(100), 0)
    sig = dsp.Signal(np.zeros(8000, dtype=np.float32), 16000)
    assert sig.samples.dtype == np.float64
    assert len(sig) == 8000
    assert sig.duration == 0.5


def test_resample_preserves_tone_amplitude():
    for freq in (100.0, 440.0, 1000.0, 7000.0):
        out = dsp.resample(tone(freq, 16000, seconds=1.0), 24000)
        assert out.rate == 24000
        assert len(out) == 24000
        # interior RMS (away from filter edge ringing)
        mid = out.samples[2400:-2400]
        rms = np.sqrt(np.mean(mid**2))
        db_err = abs(20 * np.log10(rms * np.sqrt(2)))
        assert db_err < 0.1, f"{freq} Hz amplitude off by {db_err:.3f} dB"


def test_resample_identity_and_validation():
    sig = tone(440.0, 24000)
    assert dsp.resample(sig, 24000) is sig
    with pytest.raises(ValueError):
        dsp.resample(sig, -8)


def test_rms_normalize():
    sig = tone(500.0, 16000, amp=0.123)
    out = dsp.rms_normalize(sig)
    assert np.isclose(np.sqrt(np.mean(out.samples**2)), 1.0)
    with pytest.raises(dsp.DegenerateSignalError):
        dsp.rms_normalize(dsp.Signal(np.zeros(100), 16000))


def test_fir_convolve_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=200)
    h = rng.normal(size=31)
    np.testing.assert_allclose(dsp.fir_convolve(x, h, delay=0),
                               np.convolve(x, h)[:200], atol=1e-12)
    np.testing.assert_allclose(dsp.fir_convolve(x, h, delay=15),
                               np.convolve(x, h)[15:215], atol=1e-12)


def test_fir_convolve_single_tap_is_exact():
    x = np.random.default_rng(1).normal(size=64)
    out = dsp.fir_convolve(x, np.array([1.0]), delay=0)
    np.testing.assert_array_equal(out, x)


def test_fir_convolve_rejects_bad_delay():
    with pytest.raises(ValueError):
        dsp.fir_convolve(np.zeros(10), np.ones(3), delay=13)
    with pytest.raises(ValueError):
        dsp.fir_convolve(np.zeros(10), np.ones(3), delay=-1)


def test_frame_params_16ms_half_overlap():
    assert dsp.frame_params(24000) == (384, 192)
    assert dsp.frame_params(16000) == (256, 128)


def test_frame_smooth_matches_direct_average():
    rng = np.random.default_rng(2)
    env = rng.normal(size=(3, 1000))
    win, hop = dsp.frame_params(24000)
    weights = np.hanning(win)
    weights = weights / weights.sum()
    out = dsp.frame_smooth(env, 24000)
    n_frames = (1000 - win) // hop + 1
    assert out.shape == (3, n_frames)
    for m in range(n_frames):
        np.testing.assert_allclose(out[:, m],
                                   env[:, m * hop:m * hop + win] @ weights)


def test_frame_smooth_too_short_raises():
    with pytest.raises(dsp.DegenerateSignalError):
        dsp.frame_smooth(np.zeros((2, 100)), 24000)


def test_to_db_spl_convention():
    env = np.array([1.0, 1e-3, 1e-6, 1e-9, 0.0])
    out = dsp.to_db_spl(env)
    np.testing.assert_allclose(out, [65.0, 5.0, -55.0, -55.0, -55.0])


def test_fft_length_is_fast_and_sufficient():
    for n in (100, 12287, 13000, 16385):
        m = dsp.fft_length(n)
        assert m >= n
        assert m == scipy.fft.next_fast_len(n, real=True)


def test_framed_envelope_shape_properties():
    fe = dsp.FramedEnvelope(np.zeros((32, 60)), 125.0)
    assert fe.n_bands == 32
    assert fe.n_frames == 60
