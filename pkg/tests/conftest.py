import os
from pathlib import Path

import numpy as np
import pytest

from hafit import synth, training

# The synthesized corpus stands in for recorded speech.  Point HAFIT_CORPUS
# at a directory of 16 kHz WAV files to run the corpus-dependent tests
# (including acceptance) against real recordings instead.


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory) -> Path:
    override = os.environ.get("HAFIT_CORPUS")
    if override:
        return Path(override)
    root = tmp_path_factory.mktemp("corpus")
    synth.write_corpus(root, n_files=60, seconds=12.0, seed=0)
    return root


@pytest.fixture(scope="session")
def corpus_index(corpus_dir) -> training.CorpusIndex:
    """The desk-scale split: 36 train / 12 validation / 12 test files."""
    return training.load_corpus(corpus_dir, split="6/2/2")


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory) -> Path:
    """Ten 2-second files; enough for fast CLI and sampling tests."""
    root = tmp_path_factory.mktemp("mini")
    synth.write_corpus(root, n_files=10, seconds=2.0, seed=7)
    return root


@pytest.fixture(scope="session")
def speech_segment(corpus_index) -> np.ndarray:
    """One deterministic nonsilent 0.5 s training segment at 24 kHz."""
    cfg = training.TrainingConfig()
    rng = np.random.default_rng(np.random.SeedSequence(1234))
    return training.sample_segment(corpus_index, cfg, rng, split="train").samples
