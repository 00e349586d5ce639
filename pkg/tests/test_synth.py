"""Tests for the deterministic speech-like corpus generator.

The downstream contract is what matters here: every half-second window of
every file must carry usable signal (segment sampling never degenerates),
files must contain no digital silence, and regeneration from the same seed
must reproduce the corpus byte for byte.
"""

import numpy as np

from hafit.audio_io import read_wav
from hafit.synth import CORPUS_RATE, NOISE_FLOOR_DB, generate_utterance, write_corpus


def test_write_corpus_names_count_duration(tmp_path):
    paths = write_corpus(tmp_path, n_files=4, seconds=1.5, seed=3)
    assert [p.name for p in paths] == [
        "utt000.wav", "utt001.wav", "utt002.wav", "utt003.wav"]
    for p in paths:
        sig = read_wav(p)
        assert sig.rate == CORPUS_RATE
        assert len(sig.samples) == int(1.5 * CORPUS_RATE)


def test_write_corpus_bitwise_deterministic(tmp_path):
    a = write_corpus(tmp_path / "a", n_files=3, seconds=1.5, seed=5)
    b = write_corpus(tmp_path / "b", n_files=3, seconds=1.5, seed=5)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_write_corpus_seed_changes_content(tmp_path):
    a = write_corpus(tmp_path / "a", n_files=1, seconds=1.0, seed=0)
    b = write_corpus(tmp_path / "b", n_files=1, seconds=1.0, seed=1)
    assert a[0].read_bytes() != b[0].read_bytes()


def test_files_differ_within_corpus(tmp_path):
    # Each file gets its own spawned stream; identical files would mean the
    # corpus is 60 copies of one utterance.
    paths = write_corpus(tmp_path, n_files=3, seconds=1.0, seed=2)
    blobs = {p.read_bytes() for p in paths}
    assert len(blobs) == 3


def test_every_half_second_window_is_nonsilent(tmp_path):
    # Pauses are capped well under 0.5 s, so any training segment drawn from
    # any position contains voiced material. RMS floor 1e-3 is ~36 dB above
    # the room-tone floor and far below observed minima (~0.06).
    paths = write_corpus(tmp_path, n_files=3, seconds=3.0, seed=9)
    win = CORPUS_RATE // 2
    hop = CORPUS_RATE // 8
    for p in paths:
        x = read_wav(p).samples
        for start in range(0, len(x) - win + 1, hop):
            rms = np.sqrt(np.mean(x[start:start + win] ** 2))
            assert rms > 1e-3


def test_no_digital_silence_runs(tmp_path):
    # The additive room-tone floor keeps pauses off exact zero; after PCM16
    # quantization isolated zero samples remain but never sustained runs.
    paths = write_corpus(tmp_path, n_files=2, seconds=3.0, seed=4)
    for p in paths:
        x = read_wav(p).samples
        longest = cur = 0
        for is_zero in x == 0.0:
            cur = cur + 1 if is_zero else 0
            longest = max(longest, cur)
        assert longest < 80  # < 5 ms


def test_peak_normalized_to_half(tmp_path):
    paths = write_corpus(tmp_path, n_files=2, seconds=1.0, seed=6)
    for p in paths:
        x = read_wav(p).samples
        assert abs(np.abs(x).max() - 0.5) < 1e-4


def test_generate_utterance_shape_and_range():
    rng = np.random.default_rng(0)
    x = generate_utterance(rng, 1.25)
    assert x.shape == (int(1.25 * CORPUS_RATE),)
    assert np.abs(x).max() <= 0.5 + 1e-12


def test_noise_floor_level():
    # With the glottal synthesis silenced the additive floor should sit at
    # NOISE_FLOOR_DB relative to utterance RMS. Measure it in a pause: take
    # the quietest 5% of 10 ms frames and compare against full-signal RMS.
    rng = np.random.default_rng(12)
    x = generate_utterance(rng, 8.0)
    frame = CORPUS_RATE // 100
    n_frames = len(x) // frame
    frame_rms = np.sqrt(
        np.mean(x[: n_frames * frame].reshape(n_frames, frame) ** 2, axis=1))
    quiet = np.sort(frame_rms)[: max(n_frames // 20, 1)]
    floor_db = 20.0 * np.log10(np.mean(quiet) / np.sqrt(np.mean(x ** 2)))
    # Quiet frames contain the noise floor plus resonator tails, so the
    # measured level sits at or somewhat above the configured floor.
    assert NOISE_FLOOR_DB - 3.0 < floor_db < NOISE_FLOOR_DB + 15.0
