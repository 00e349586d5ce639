"""hafit: differentiable hearing-aid fitting against an auditory model.

A six-band amplification filter is optimized by gradient descent so that a
hearing-impaired auditory model of the processed signal matches a
normal-hearing model of the original, under an envelope-energy constraint.
Ships with an NAL-R prescription baseline, a physiological auditory model,
a purpose-built reverse-mode gradient engine, and a CLI for fitting,
prescribing, evaluation, and gradient verification.
"""

__version__ = "0.1.0"

from .auditory import (AUDIOGRAM_FREQS, Audiogram, AuditoryModel,
                       auditory_process, standard_audiograms)
from .dsp import DegenerateSignalError, FramedEnvelope, Signal
from .objective import cepstral_correlation, haspi_combine, total_loss
from .pipeline import FitObjective, finite_difference_check, gradient
from .processors import (GainParams, ProcessorFilter, apply_processor,
                         gains_to_fir, identity_filter, nalr_gains)
from .training import (CorpusIndex, TrainingConfig, adam_step, evaluate,
                       load_corpus, sample_segment, train)

__all__ = [
    "__version__",
    "AUDIOGRAM_FREQS", "Audiogram", "AuditoryModel", "auditory_process",
    "standard_audiograms",
    "DegenerateSignalError", "FramedEnvelope", "Signal",
    "cepstral_correlation", "haspi_combine", "total_loss",
    "FitObjective", "finite_difference_check", "gradient",
    "GainParams", "ProcessorFilter", "apply_processor", "gains_to_fir",
    "identity_filter", "nalr_gains",
    "CorpusIndex", "TrainingConfig", "adam_step", "evaluate", "load_corpus",
    "sample_segment", "train",
]
